"""Per-round research tree.

One tree per research round: the root wraps the sampled parent solution, each
child node is a refined hypothesis with its own evaluated record. Traversal is
greedy (best pending leaf first), truncation keeps only improving children
once past the grace window near the root, and a node with no improving
children becomes terminal. The round ends when no pending leaf remains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .canvas import RunConfig
from .soldb import SolutionId, SolutionRecord


class UnknownNode(Exception):
    pass


class NodeNotPending(Exception):
    pass


class BudgetExceeded(Exception):
    pass


class NoParents(Exception):
    pass


class NodeState(str, Enum):
    PENDING = "pending"
    EXPANDED_IMPROVED = "expanded_improved"
    TERMINAL = "terminal"


_GLYPHS = {
    NodeState.EXPANDED_IMPROVED: "⊕",
    NodeState.PENDING: "○",
    NodeState.TERMINAL: "✓",
}


@dataclass
class TreeNode:
    node_id: int
    solution_id: SolutionId
    idea: str
    score: float
    valid: bool
    state: NodeState = NodeState.PENDING
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    depth: int = 0


@dataclass
class ResearchTree:
    nodes: list[TreeNode]
    round: int
    lead: int
    max_children: int
    max_depth: int
    elite_extra_children: int
    improvement_grace_depth: int
    root_is_elite: bool = False
    parent_ideas: list[str] = field(default_factory=list)  # both ideas on crossover roots

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def node(self, node_id: int) -> TreeNode:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNode(f"no node {node_id}")
        return self.nodes[node_id]

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if not n.children]


def init_round(
    parents: list[SolutionRecord],
    config: RunConfig,
    *,
    round: int = 1,
    lead: int = 1,
    root_is_elite: bool = False,
    max_depth_override: int | None = None,
) -> ResearchTree:
    """Start a round from 1 or 2 sampled parents.

    The root takes the best parent's idea and score; with two parents both
    ideas are kept on the tree so the first expansion can ask for a
    combination of them. `max_depth_override` supports fast-exploration
    crossover rounds with a shallower tree.
    """
    if not parents:
        raise NoParents("a round needs at least one parent solution")
    if len(parents) > 2:
        raise NoParents(f"a round takes at most 2 parents, got {len(parents)}")
    best = max(parents, key=lambda r: r.score)
    root = TreeNode(
        node_id=0,
        solution_id=best.id,
        idea=best.idea,
        score=best.score,
        valid=best.valid,
    )
    return ResearchTree(
        nodes=[root],
        round=round,
        lead=lead,
        max_children=config.max_children,
        max_depth=max_depth_override if max_depth_override is not None else config.max_depth,
        elite_extra_children=config.elite_extra_children,
        improvement_grace_depth=config.improvement_grace_depth,
        root_is_elite=root_is_elite,
        parent_ideas=[p.idea for p in parents],
    )


def select_best_unfinished_leaf(tree: ResearchTree) -> int | None:
    """Highest-scoring pending leaf; ties go to the lowest node id."""
    best: TreeNode | None = None
    for node in tree.nodes:
        if node.children or node.state is not NodeState.PENDING:
            continue
        if best is None or node.score > best.score:
            best = node
    return best.node_id if best is not None else None


def child_budget(tree: ResearchTree, node_id: int, parent_is_elite: bool = False) -> int:
    """How many children this node may receive; 0 once the depth cap bites.

    The elite bonus applies only to the root: an elite parent earns a wider
    first expansion, not a wider tree everywhere.
    """
    node = tree.node(node_id)
    if node.depth + 1 > tree.max_depth:
        return 0
    budget = tree.max_children
    if parent_is_elite and node.node_id == 0:
        budget += tree.elite_extra_children
    return budget


def mark_terminal(tree: ResearchTree, node_id: int) -> None:
    node = tree.node(node_id)
    if node.state is not NodeState.PENDING:
        raise NodeNotPending(f"node {node_id} is {node.state.value}")
    node.state = NodeState.TERMINAL


def attach_children(
    tree: ResearchTree,
    node_id: int,
    evaluated: list[tuple[str, SolutionRecord]],
) -> list[int]:
    """Attach the retained children of one expansion and settle the node's state.

    Within the grace window near the root (child depth <= grace) every valid
    child is retained even if it regresses; deeper, only strict improvements
    over the expanded node survive. Invalid children are never attached. The
    node becomes expanded_improved iff at least one retained child improves
    it, terminal otherwise. Records for dropped children stay in the database.
    """
    node = tree.node(node_id)
    if node.state is not NodeState.PENDING:
        raise NodeNotPending(f"node {node_id} is {node.state.value}")
    budget = child_budget(tree, node_id, tree.root_is_elite)
    if len(evaluated) > budget:
        raise BudgetExceeded(f"{len(evaluated)} children for budget {budget}")

    child_depth = node.depth + 1
    lenient = child_depth <= tree.improvement_grace_depth
    attached: list[int] = []
    improved = False
    for idea, record in evaluated:
        if not record.valid:
            continue
        improves = record.score > node.score
        if not (lenient or improves):
            continue
        child = TreeNode(
            node_id=len(tree.nodes),
            solution_id=record.id,
            idea=idea,
            score=record.score,
            valid=record.valid,
            parent=node.node_id,
            children=[],
            depth=child_depth,
        )
        tree.nodes.append(child)
        node.children.append(child.node_id)
        attached.append(child.node_id)
        improved = improved or improves
    node.state = NodeState.EXPANDED_IMPROVED if improved else NodeState.TERMINAL
    return attached


def round_finished(tree: ResearchTree) -> bool:
    return select_best_unfinished_leaf(tree) is None


RENDER_RULE = "=" * 40
RENDER_HEADER = (
    "Format: Node <ID> (<score>): '<idea>'\n"
    "Legend:\n"
    "  ⊕ = solution expanded with improved children solution(s)\n"
    "  ○ = solution pending expansion\n"
    "  ✓ = terminal solution (approximate local optimum, no improvement found)\n"
)


def _node_text(node: TreeNode, width: int, with_glyph: bool) -> str:
    idea = node.idea
    if len(idea) > width:
        idea = idea[:width] + "..."
    text = f"Node {node.node_id} ({node.score:.2f}): {idea}"
    if with_glyph:
        text = f"{_GLYPHS[node.state]} {text}"
    return text


def render_tree(tree: ResearchTree, idea_width: int = 60) -> str:
    """Exact textual serialization of the tree, as embedded in prompts.

    The root of an in-progress tree is the round's starting solution, so an
    expanded root is drawn bare and excluded from the expanded count; every
    other node carries its state glyph.
    """
    lines = [RENDER_HEADER + RENDER_RULE]
    root = tree.root
    root_glyph = root.state is not NodeState.EXPANDED_IMPROVED
    lines.append("  " + _node_text(root, idea_width, with_glyph=root_glyph))

    def walk(node: TreeNode, prefix: str) -> None:
        for i, child_id in enumerate(node.children):
            child = tree.nodes[child_id]
            last = i == len(node.children) - 1
            connector = "└── " if last else "├── "
            lines.append(prefix + connector + _node_text(child, idea_width, with_glyph=True))
            walk(child, prefix + ("    " if last else "│   "))

    walk(root, "    ")
    lines.append(RENDER_RULE)

    expanded = sum(
        1 for n in tree.nodes if n.node_id != 0 and n.state is NodeState.EXPANDED_IMPROVED
    )
    pending = sum(1 for n in tree.nodes if not n.children and n.state is NodeState.PENDING)
    terminal = sum(1 for n in tree.nodes if not n.children and n.state is NodeState.TERMINAL)
    lines.append(
        f"Total expanded solutions: {expanded} | "
        f"Total pending leaves: {pending} | "
        f"Total terminal leaves: {terminal}"
    )
    return "\n".join(lines)


def _artifact_section(node: TreeNode, record: SolutionRecord | None) -> str:
    parts = [f"Node {node.node_id} (score {node.score:.4f})", f"Idea: {node.idea}"]
    if record is not None and record.experiment_summary:
        parts.append("Experiment summary:")
        parts.append(record.experiment_summary)
    return "\n".join(parts)


def build_context(
    tree: ResearchTree,
    node_id: int,
    scope: str,
    get_record: Callable[[SolutionId], SolutionRecord | None],
) -> str:
    """Assemble the expansion context for one node at the configured scope.

    parent_only: just the immediate parent (empty section at the root).
    ancestry:    the root-to-node chain, in order.
    full_tree:   the rendered tree plus the focus node's full artifact.
    """
    node = tree.node(node_id)
    focus_record = get_record(node.solution_id)
    sections: list[str] = []

    if scope == "parent_only":
        sections.append("## Parent solution")
        if node.parent is not None:
            parent = tree.nodes[node.parent]
            sections.append(_artifact_section(parent, get_record(parent.solution_id)))
    elif scope == "ancestry":
        sections.append("## Ancestry (root to current node)")
        chain: list[TreeNode] = []
        cursor: TreeNode | None = node
        while cursor is not None:
            chain.append(cursor)
            cursor = tree.nodes[cursor.parent] if cursor.parent is not None else None
        for ancestor in reversed(chain):
            sections.append(_artifact_section(ancestor, get_record(ancestor.solution_id)))
    elif scope == "full_tree":
        sections.append("## Research tree so far")
        sections.append(render_tree(tree))
    else:
        raise ValueError(f"unknown context scope: {scope!r}")

    sections.append("## Current node under expansion")
    sections.append(_artifact_section(node, focus_record))
    if focus_record is not None:
        sections.append("Current implementation:")
        sections.append(focus_record.code)
    return "\n\n".join(sections)
