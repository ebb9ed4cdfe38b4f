import random

import pytest

from helpers import make_record
from helpers.tree_oracle import OracleTree
from ora.canvas import RunConfig
from ora.flowgraph import (
    BudgetExceeded,
    NodeNotPending,
    NodeState,
    NoParents,
    ResearchTree,
    TreeNode,
    UnknownNode,
    attach_children,
    build_context,
    child_budget,
    init_round,
    mark_terminal,
    render_tree,
    round_finished,
    select_best_unfinished_leaf,
)
from ora.soldb import SolutionId


def config(**kwargs):
    defaults = dict(max_children=3, max_depth=4, elite_extra_children=1,
                    improvement_grace_depth=1)
    defaults.update(kwargs)
    return RunConfig(**defaults)


def grown_tree(cfg=None, scores_by_expansion=None):
    """Small helper: grow a tree by expanding best leaves with given scores."""
    cfg = cfg or config()
    tree = init_round([make_record(0, score=0.5)], cfg)
    serial = 100
    for scores in scores_by_expansion or []:
        leaf = select_best_unfinished_leaf(tree)
        if leaf is None:
            break
        evaluated = []
        for s in scores:
            evaluated.append((f"idea {serial}", make_record(serial, score=s)))
            serial += 1
        attach_children(tree, leaf, evaluated)
    return tree


class TestInitRound:
    def test_single_parent_becomes_pending_root(self):
        tree = init_round([make_record(0, score=0.80)], config())
        assert tree.root.score == 0.80
        assert tree.root.state is NodeState.PENDING
        assert tree.root.depth == 0

    def test_two_parents_root_takes_best(self):
        tree = init_round(
            [make_record(0, score=0.6), make_record(1, score=0.8)], config()
        )
        assert tree.root.score == 0.8
        assert len(tree.parent_ideas) == 2

    def test_zero_parents_rejected(self):
        with pytest.raises(NoParents):
            init_round([], config())

    def test_three_parents_rejected(self):
        with pytest.raises(NoParents):
            init_round([make_record(i) for i in range(3)], config())


class TestSelectBestUnfinishedLeaf:
    def test_figure_tree_selects_the_pending_leaf(self):
        tree = grown_tree(
            config(max_children=2),
            scores_by_expansion=[[0.9, 0.7]],
        )
        # both children pending; 0.9 is selected
        selected = select_best_unfinished_leaf(tree)
        assert tree.node(selected).score == 0.9

    def test_all_terminal_returns_none(self):
        tree = init_round([make_record(0, score=0.5)], config())
        mark_terminal(tree, 0)
        assert select_best_unfinished_leaf(tree) is None

    def test_tie_breaks_to_lower_node_id(self):
        rng = random.Random(0)
        for _ in range(200):
            tree = grown_tree(config(max_children=3), [[0.75, 0.75, rng.random() * 0.7]])
            selected = select_best_unfinished_leaf(tree)
            candidates = [
                n.node_id
                for n in tree.nodes
                if not n.children and n.state is NodeState.PENDING and n.score == 0.75
            ]
            assert selected == min(candidates)

    def test_matches_brute_force_on_random_trees(self):
        rng = random.Random(1)
        for _ in range(500):
            tree = init_round([make_record(0, score=rng.random())], config(max_children=3))
            serial = 10
            for _ in range(rng.randint(0, 6)):
                pending = [n.node_id for n in tree.nodes
                           if not n.children and n.state is NodeState.PENDING
                           and child_budget(tree, n.node_id) > 0]
                if not pending:
                    break
                node_id = rng.choice(pending)
                children = []
                for _ in range(rng.randint(0, 3)):
                    children.append((f"i{serial}", make_record(serial, score=rng.random())))
                    serial += 1
                attach_children(tree, node_id, children)
            # brute force reference
            best = None
            for n in tree.nodes:
                if n.children or n.state is not NodeState.PENDING:
                    continue
                if best is None or n.score > best.score or (n.score == best.score and n.node_id < best.node_id):
                    best = n
            expected = best.node_id if best else None
            assert select_best_unfinished_leaf(tree) == expected


class TestChildBudget:
    def test_plain_root(self):
        tree = init_round([make_record(0)], config(max_children=3))
        assert child_budget(tree, 0, parent_is_elite=False) == 3

    def test_elite_root_gets_bonus(self):
        tree = init_round([make_record(0)], config(max_children=3, elite_extra_children=1))
        assert child_budget(tree, 0, parent_is_elite=True) == 4

    def test_elite_bonus_only_at_root(self):
        tree = grown_tree(config(max_children=3), [[0.9]])
        assert child_budget(tree, 1, parent_is_elite=True) == 3

    def test_depth_cap_gives_zero(self):
        cfg = config(max_children=1, max_depth=2, improvement_grace_depth=0)
        tree = grown_tree(cfg, [[0.9], [0.95]])
        deepest = tree.nodes[-1]
        assert deepest.depth == 2
        assert child_budget(tree, deepest.node_id) == 0

    def test_unknown_node(self):
        tree = init_round([make_record(0)], config())
        with pytest.raises(UnknownNode):
            child_budget(tree, 99)


class TestAttachChildren:
    def test_improving_child_attached_node_expanded(self):
        tree = grown_tree(config(), [[0.9]])  # root 0.5 -> child 0.9
        leaf = select_best_unfinished_leaf(tree)
        attached = attach_children(tree, leaf, [("better", make_record(50, score=0.95))])
        assert len(attached) == 1
        assert tree.node(leaf).state is NodeState.EXPANDED_IMPROVED

    def test_regressions_beyond_grace_dropped_node_terminal(self):
        cfg = config(improvement_grace_depth=1)
        tree = grown_tree(cfg, [[0.9]])
        leaf = select_best_unfinished_leaf(tree)  # depth 1, children at depth 2 > grace
        attached = attach_children(
            tree, leaf,
            [("worse a", make_record(50, score=0.85)), ("worse b", make_record(51, score=0.80))],
        )
        assert attached == []
        assert tree.node(leaf).state is NodeState.TERMINAL

    def test_regression_within_grace_retained(self):
        cfg = config(improvement_grace_depth=1)
        tree = init_round([make_record(0, score=0.5)], cfg)
        attached = attach_children(tree, 0, [("worse", make_record(50, score=0.4))])
        assert len(attached) == 1
        # retained but nothing improved: the node is a local optimum so far
        assert tree.node(0).state is NodeState.TERMINAL
        assert tree.node(attached[0]).state is NodeState.PENDING

    def test_invalid_children_never_attached(self):
        tree = init_round([make_record(0, score=0.5)], config())
        attached = attach_children(
            tree, 0, [("broken", make_record(50, score=0.0, valid=False))]
        )
        assert attached == []
        assert tree.node(0).state is NodeState.TERMINAL

    def test_budget_enforced(self):
        cfg = config(max_children=1)
        tree = init_round([make_record(0)], cfg)
        with pytest.raises(BudgetExceeded):
            attach_children(tree, 0, [
                ("a", make_record(50, score=0.9)), ("b", make_record(51, score=0.8)),
            ])

    def test_non_pending_node_rejected(self):
        tree = grown_tree(config(), [[0.9]])
        with pytest.raises(NodeNotPending):
            attach_children(tree, 0, [("late", make_record(60, score=1.0))])


class TestRoundFinished:
    def test_fresh_tree_not_finished(self):
        tree = init_round([make_record(0)], config())
        assert not round_finished(tree)

    def test_figure_like_tree_not_finished(self):
        tree = grown_tree(config(max_children=2), [[0.9, 0.7]])
        assert not round_finished(tree)

    def test_finished_after_all_leaves_terminal(self):
        tree = grown_tree(config(max_children=1, improvement_grace_depth=0), [[0.9]])
        leaf = select_best_unfinished_leaf(tree)
        attach_children(tree, leaf, [("worse", make_record(50, score=0.1))])
        assert round_finished(tree)


def sid(n):
    return SolutionId(1, 1, n, n)


def figure_tree():
    nodes = [
        TreeNode(0, sid(0), "Implement a look-ahead nearest neighbor...", 0.80, True,
                 NodeState.EXPANDED_IMPROVED, None, [1, 2], 0),
        TreeNode(1, sid(1), "Design lightweight structural proxies...", 0.90, True,
                 NodeState.EXPANDED_IMPROVED, 0, [3], 1),
        TreeNode(2, sid(2), "Leverage graph Laplacian structure...", 0.70, True,
                 NodeState.EXPANDED_IMPROVED, 0, [4], 1),
        TreeNode(3, sid(3), "Construct normalized distance-to-demand ratio matrix...", 0.85, True,
                 NodeState.TERMINAL, 1, [], 2),
        TreeNode(4, sid(4), "Use min-max demand normalization...", 0.75, True,
                 NodeState.PENDING, 2, [], 2),
    ]
    return ResearchTree(nodes=nodes, round=1, lead=1, max_children=3, max_depth=4,
                        elite_extra_children=1, improvement_grace_depth=1)


FIGURE_TEXT = """Format: Node <ID> (<score>): '<idea>'
Legend:
  ⊕ = solution expanded with improved children solution(s)
  ○ = solution pending expansion
  ✓ = terminal solution (approximate local optimum, no improvement found)
========================================
  Node 0 (0.80): Implement a look-ahead nearest neighbor...
    ├── ⊕ Node 1 (0.90): Design lightweight structural proxies...
    │   └── ✓ Node 3 (0.85): Construct normalized distance-to-demand ratio matrix...
    └── ⊕ Node 2 (0.70): Leverage graph Laplacian structure...
        └── ○ Node 4 (0.75): Use min-max demand normalization...
========================================
Total expanded solutions: 2 | Total pending leaves: 1 | Total terminal leaves: 1"""


class TestRenderTree:
    def test_reference_figure_byte_exact(self):
        assert render_tree(figure_tree()) == FIGURE_TEXT

    def test_single_pending_root(self):
        tree = init_round([make_record(0, score=0.5, idea="idea")], config())
        text = render_tree(tree)
        assert "  ○ Node 0 (0.50): idea" in text
        assert text.endswith(
            "Total expanded solutions: 0 | Total pending leaves: 1 | Total terminal leaves: 0"
        )

    def test_chain_of_depth_three(self):
        cfg = config(max_children=1, max_depth=3)
        tree = grown_tree(cfg, [[0.6], [0.7]])
        text = render_tree(tree)
        lines = text.splitlines()
        node_lines = [l for l in lines if "Node " in l and "Format" not in l]
        assert len(node_lines) == 3
        assert node_lines[1].startswith("    └── ")
        assert node_lines[2].startswith("        └── ")

    def test_idea_truncation(self):
        tree = init_round([make_record(0, score=0.5, idea="x" * 80)], config())
        text = render_tree(tree, idea_width=60)
        assert "x" * 60 + "..." in text
        assert "x" * 61 not in text

    def test_distinct_trees_render_distinctly(self):
        """Injectivity up to idea truncation: different shape/score/state
        always gives different text."""
        rng = random.Random(13)
        seen = {}
        for i in range(300):
            expansions = []
            for _ in range(rng.randint(0, 3)):
                expansions.append([round(rng.random(), 2) for _ in range(rng.randint(1, 3))])
            tree = grown_tree(config(), expansions)
            key = tuple(
                (n.node_id, n.parent, round(n.score, 2), n.state.value) for n in tree.nodes
            )
            text = render_tree(tree)
            if key in seen:
                assert seen[key] == text
            else:
                assert text not in set(seen.values())
                seen[key] = text


class TestReferenceTreeSemantics:
    def test_only_pending_leaf_is_selected(self):
        assert select_best_unfinished_leaf(figure_tree()) == 4

    def test_not_finished_while_a_leaf_is_pending(self):
        assert not round_finished(figure_tree())

    def test_ancestry_of_node_three_is_chain_in_order(self):
        text = build_context(figure_tree(), 3, "ancestry", lambda s: None)
        positions = [text.index(f"Node {i} ") for i in (0, 1, 3)]
        assert positions == sorted(positions)
        assert "Node 2 " not in text.split("## Current node")[0]
        assert "Node 4 " not in text


class TestBuildContext:
    def records_lookup(self):
        store = {}

        def get(solution_id):
            return store.get(solution_id)

        return store, get

    def test_parent_only_at_root_has_empty_parent_section(self):
        tree = init_round([make_record(0, score=0.5)], config())
        store, get = self.records_lookup()
        text = build_context(tree, 0, "parent_only", get)
        section = text.split("## Current node")[0]
        assert "## Parent solution" in section
        assert "Node " not in section  # nothing between header and focus

    def test_ancestry_lists_chain_in_order(self):
        tree = grown_tree(config(max_children=2), [[0.9, 0.7], [0.95]])
        store, get = self.records_lookup()
        deepest = tree.nodes[-1]
        text = build_context(tree, deepest.node_id, "ancestry", get)
        first = text.index("Node 0 ")
        middle = text.index(f"Node {deepest.parent} ")
        last = text.index(f"Node {deepest.node_id} ")
        assert first < middle < last

    def test_full_tree_embeds_exact_render(self):
        tree = grown_tree(config(max_children=2), [[0.9, 0.7]])
        store, get = self.records_lookup()
        text = build_context(tree, 1, "full_tree", get)
        assert render_tree(tree) in text

    def test_unknown_scope(self):
        tree = init_round([make_record(0)], config())
        with pytest.raises(ValueError):
            build_context(tree, 0, "bogus", lambda s: None)


class TestInvariantsUnderRandomOps:
    def test_random_op_sequences_keep_invariants(self):
        rng = random.Random(21)
        for _ in range(400):
            cfg = config(
                max_children=rng.randint(1, 3),
                max_depth=rng.randint(1, 3),
                improvement_grace_depth=rng.randint(0, 1),
            )
            tree = init_round([make_record(0, score=rng.random())], cfg)
            serial = 10
            frontier = tree.root.score
            while not round_finished(tree):
                leaf = select_best_unfinished_leaf(tree)
                budget = child_budget(tree, leaf)
                if budget == 0:
                    mark_terminal(tree, leaf)
                    continue
                children = []
                for _ in range(rng.randint(0, budget)):
                    children.append(
                        (f"i{serial}", make_record(
                            serial, score=rng.random(), valid=rng.random() < 0.8))
                    )
                    serial += 1
                attach_children(tree, leaf, children)

                best = max(n.score for n in tree.nodes)
                assert best >= frontier  # monotone frontier
                frontier = best
                for n in tree.nodes:
                    assert n.depth <= tree.max_depth
                    assert len(n.children) <= child_budget(tree, n.node_id, True) or n.children
                    if n.state is NodeState.EXPANDED_IMPROVED:
                        assert n.children
                        assert any(tree.nodes[c].score > n.score for c in n.children)
                    if n.state is NodeState.TERMINAL and n.children:
                        assert all(tree.nodes[c].score <= n.score for c in n.children)

    def test_mirrors_independent_oracle(self):
        rng = random.Random(22)
        for _ in range(500):
            cfg = config(
                max_children=rng.randint(1, 3),
                max_depth=rng.randint(1, 3),
                improvement_grace_depth=rng.randint(0, 2),
            )
            if cfg.improvement_grace_depth > cfg.max_depth:
                continue
            root_score = rng.random()
            tree = init_round([make_record(0, score=root_score)], cfg)
            oracle = OracleTree(root_score, cfg.max_children, cfg.max_depth,
                                cfg.improvement_grace_depth)
            serial = 10
            while True:
                got, expected = select_best_unfinished_leaf(tree), oracle.select()
                assert got == expected
                if got is None:
                    break
                budget = child_budget(tree, got)
                assert budget == oracle.budget(expected)
                if budget == 0:
                    mark_terminal(tree, got)
                    oracle.mark_terminal(expected)
                    continue
                batch = [(rng.random(), rng.random() < 0.85)
                         for _ in range(rng.randint(0, budget))]
                evaluated = []
                for score, valid in batch:
                    evaluated.append(
                        (f"i{serial}", make_record(serial, score=score, valid=valid))
                    )
                    serial += 1
                attached = attach_children(tree, got, evaluated)
                oracle_ids = oracle.attach(expected, batch)
                assert attached == oracle_ids
            nodes, pending, terminal = oracle.counts()
            assert len(tree.nodes) == nodes
            assert round_finished(tree) == oracle.finished()
