"""Lead/idea/code agent logic: coordinated idea generation, idea-to-code
synthesis with debug retries, and the round loop that drives the research
tree until every leaf is terminal or a budget runs out.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import explab, flowgraph, reflect
from .canvas import ProblemSpec, RunConfig
from .flowgraph import ResearchTree
from .modelgate import (
    CODE_TEMPERATURE,
    IDEA_TEMPERATURE,
    BudgetExhausted,
    BudgetLedger,
    ModelGateway,
    user_request,
)
from .prompts import render
from .soldb import SolutionDatabase, SolutionId, SolutionRecord

IDEA_SYSTEM = (
    "You are the idea agent of an automated research system. You study the "
    "research tree, prior evidence, and accumulated guidance, then propose "
    "sets of distinct, complementary research directions."
)
CODE_SYSTEM = (
    "You are the code agent of an automated research system. You turn research "
    "ideas into clean, executable implementations of the target function, with "
    "comments that explain the design rationale."
)


class NoParseableIdeas(Exception):
    pass


@dataclass(frozen=True)
class IdeaSet:
    ideas: tuple[str, ...]
    parent_node: int


@dataclass
class RoundReport:
    round: int
    lead: int
    tree: ResearchTree
    new_records: list[SolutionId]
    best_score: float
    long_term_reflection: str
    budget_exhausted: bool = False


_ITEM_RE = re.compile(r"^\s*(\d+)\.\s*(.*)$")


def parse_numbered_ideas(text: str) -> list[str]:
    """Parse a `1. ... 2. ...` list; continuation lines join their item.
    Duplicates (after whitespace normalization) collapse to the first."""
    items: list[list[str]] = []
    for line in text.splitlines():
        m = _ITEM_RE.match(line)
        if m:
            items.append([m.group(2).strip()])
        elif items and line.strip():
            items[-1].append(line.strip())
    ideas: list[str] = []
    seen: set[str] = set()
    for parts in items:
        idea = " ".join(p for p in parts if p).strip()
        if not idea:
            continue
        key = " ".join(idea.split())
        if key in seen:
            continue
        seen.add(key)
        ideas.append(idea)
    return ideas


def generate_ideas(
    gateway: ModelGateway,
    spec: ProblemSpec,
    context: str,
    n: int,
    reflections: str,
    prompts: dict[str, str],
    parent_node: int,
    crossover_ideas: list[str] | None = None,
) -> IdeaSet:
    """One coordinated model call for all n child ideas of a node."""
    if crossover_ideas and len(crossover_ideas) >= 2:
        prompt = render(
            prompts["idea_crossover"],
            problem_description=spec.problem_description,
            function_description=spec.function_description,
            context=context,
            parent_idea_a=crossover_ideas[0],
            parent_idea_b=crossover_ideas[1],
            long_term=reflections or "(none yet)",
            n=n,
        )
    else:
        prompt = render(
            prompts["idea"],
            problem_description=spec.problem_description,
            function_description=spec.function_description,
            context=context,
            long_term=reflections or "(none yet)",
            n=n,
        )
    response = gateway.complete(
        user_request(IDEA_SYSTEM, prompt, tag="idea_gen", temperature=IDEA_TEMPERATURE)
    )
    ideas = parse_numbered_ideas(response.text)
    if not ideas:
        raise NoParseableIdeas("model response contained no numbered ideas")
    return IdeaSet(ideas=tuple(ideas[:n]), parent_node=parent_node)


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)


def extract_code(text: str) -> str:
    """Take the largest fenced block if any, else the raw text."""
    blocks = _FENCE_RE.findall(text)
    if blocks:
        return max(blocks, key=len).strip("\n") + "\n"
    return text.strip("\n") + "\n"


def implement_idea(
    gateway: ModelGateway,
    idea: str,
    spec: ProblemSpec,
    parent_code: str | None,
    prompts: dict[str, str],
    max_repairs: int = 2,
) -> str:
    """Synthesize code for an idea; up to `max_repairs` fix-up calls when the
    evaluator's dry-parse check rejects it. The last attempt is returned
    either way; evaluation decides validity."""
    prompt = render(
        prompts["code"],
        problem_description=spec.problem_description,
        function_description=spec.function_description,
        idea=idea,
        parent_code=parent_code or "(none)",
    )
    response = gateway.complete(
        user_request(CODE_SYSTEM, prompt, tag="code_gen", temperature=CODE_TEMPERATURE)
    )
    code = extract_code(response.text)
    for _ in range(max_repairs):
        ok, check_output = explab.run_check(spec, code)
        if ok:
            break
        repair_prompt = render(prompts["code_repair"], code=code, check_output=check_output)
        response = gateway.complete(
            user_request(CODE_SYSTEM, repair_prompt, tag="code_repair", temperature=CODE_TEMPERATURE)
        )
        code = extract_code(response.text)
    return code


@dataclass
class RoundRunner:
    """Runs research rounds for one lead agent over the shared database."""

    db: SolutionDatabase
    spec: ProblemSpec
    config: RunConfig
    gateway: ModelGateway
    ledger: BudgetLedger
    prompts: dict[str, str]
    store: reflect.ReflectionStore
    lead: int = 1
    rng: random.Random = field(default_factory=random.Random)
    artifacts_dir: Path | None = None
    use_memory_snapshots: bool = False
    progress_hook: object = None  # callable(record) after each insert

    def _snapshots_for(self, solution_id: SolutionId):
        if self.use_memory_snapshots:
            return explab.MemorySnapshots()
        return explab.DirectorySnapshots(self.db.snapshot_dir(solution_id))

    def _write_tree(self, tree: ResearchTree) -> None:
        if self.artifacts_dir is None:
            return
        path = self.artifacts_dir / f"lead{tree.lead}_round{tree.round}_tree.txt"
        path.write_text(flowgraph.render_tree(tree) + "\n")

    def _insert(self, record: SolutionRecord) -> None:
        self.db.insert(record)
        if self.progress_hook is not None:
            self.progress_hook(record)

    def bootstrap_seed(self, round: int = 0) -> SolutionRecord:
        """Create the first database record: evaluate the canvas seed, or a
        model-proposed baseline when the canvas has none."""
        if self.spec.seed_solution is not None:
            idea = self.spec.seed_solution.idea
            code = self.spec.seed_solution.code
        else:
            response = self.gateway.complete(
                user_request(
                    IDEA_SYSTEM,
                    render(
                        self.prompts["seed_idea"],
                        problem_description=self.spec.problem_description,
                        function_description=self.spec.function_description,
                    ),
                    tag="seed_idea",
                    temperature=IDEA_TEMPERATURE,
                )
            )
            idea = response.text.strip()
            code = implement_idea(self.gateway, idea, self.spec, None, self.prompts)
        solution_id = self.db.next_id(self.lead, round, 0)
        if not self.ledger.charge_evaluation():
            raise BudgetExhausted("no evaluation budget for the seed solution")
        result = explab.run_evaluation(self.spec, code, None, self.config.eval_timeout)
        snapshots = self._snapshots_for(solution_id)
        snapshots.save("attempt1/candidate.py", code)
        record = SolutionRecord(
            id=solution_id,
            idea=idea,
            code=code,
            experiment_summary="Seed solution evaluated once, no refinement.",
            metrics=result.metrics or {},
            features=result.features if result.features is not None else (),
            score=result.score if result.ok else float("-inf"),
            parent_ids=(),
            valid=result.ok,
            round=round,
            lead=self.lead,
        )
        self._insert(record)
        return record

    def _evaluate_idea(
        self,
        idea: str,
        parent_record: SolutionRecord,
        parent_is_elite: bool,
        round: int,
        count: int,
        base_repeats_override: int | None,
    ) -> SolutionRecord:
        code = implement_idea(self.gateway, idea, self.spec, parent_record.code, self.prompts)
        solution_id = self.db.next_id(self.lead, round, count)
        candidate = explab.Candidate(
            solution_id=solution_id,
            idea=idea,
            code=code,
            parent_score=parent_record.score if parent_record.valid else None,
            parent_is_elite=parent_is_elite,
        )
        final_code, trace, final_result = explab.run_experiments(
            candidate,
            self.spec,
            self.config,
            self.ledger,
            self.gateway,
            self.prompts,
            self._snapshots_for(solution_id),
            long_term=self.store.long_term,
            base_repeats_override=base_repeats_override,
        )
        record = SolutionRecord(
            id=solution_id,
            idea=idea,
            code=final_code,
            experiment_summary=trace.final_summary,
            metrics=final_result.metrics or {},
            features=final_result.features if final_result.features is not None else (),
            score=final_result.score if final_result.ok else float("-inf"),
            parent_ids=(parent_record.id,),
            valid=final_result.ok,
            round=round,
            lead=self.lead,
        )
        self._insert(record)
        try:
            reflect.update_long_term(self.gateway, self.store, [trace.final_summary], self.prompts)
        except BudgetExhausted:
            pass  # reflection is best-effort once the call budget is gone
        return record

    def run_round(self, round: int) -> RoundReport:
        """One full research round: sample parents, grow the tree greedily,
        keep improving children, stop when every leaf is terminal."""
        self.store.start_round()
        crossover = (
            self.rng.random() < self.config.crossover_rate
            and len(self.db.cell_bests()) >= 2
        )
        k = 2 if crossover else 1
        temperature = self.config.sampling_temperature
        parents = self.db.sample_parents(k, temperature, self.rng)
        elite = self.db.current_elite()
        best_parent = max(parents, key=lambda r: r.score)
        parent_is_elite = best_parent.id == elite.id

        # Crossover probes a new combination cheaply: shallower tree, fewer
        # experiment repeats.
        depth_override = None
        repeats_override = None
        if crossover:
            depth_override = max(1, self.config.max_depth // 2)
            repeats_override = max(1, self.config.base_experiment_repeats // 2)

        tree = flowgraph.init_round(
            parents,
            self.config,
            round=round,
            lead=self.lead,
            root_is_elite=parent_is_elite,
            max_depth_override=depth_override,
        )
        new_records: list[SolutionId] = []
        exhausted = False
        count = 0

        while True:
            leaf_id = flowgraph.select_best_unfinished_leaf(tree)
            if leaf_id is None:
                break
            budget = flowgraph.child_budget(tree, leaf_id, parent_is_elite)
            if budget == 0:
                flowgraph.mark_terminal(tree, leaf_id)
                self._write_tree(tree)
                continue
            node = tree.node(leaf_id)
            context = flowgraph.build_context(
                tree, leaf_id, self.config.context_scope,
                lambda sid: self.db.get(sid) if sid in self.db else None,
            )
            try:
                idea_set = self._ideas_with_retry(context, budget, leaf_id, tree)
            except BudgetExhausted:
                exhausted = True
                break
            if idea_set is None:
                flowgraph.mark_terminal(tree, leaf_id)
                self._write_tree(tree)
                continue

            parent_record = self.db.get(node.solution_id)
            evaluated: list[tuple[str, SolutionRecord]] = []
            try:
                for idea in idea_set.ideas:
                    record = self._evaluate_idea(
                        idea, parent_record, parent_is_elite and leaf_id == 0,
                        round, count, repeats_override,
                    )
                    count += 1
                    new_records.append(record.id)
                    evaluated.append((idea, record))
            except BudgetExhausted:
                exhausted = True
            if evaluated or not exhausted:
                flowgraph.attach_children(tree, leaf_id, evaluated)
                self._write_tree(tree)
            if exhausted:
                break

        valid_scores = [
            self.db.get(rid).score for rid in new_records if self.db.get(rid).valid
        ]
        best_score = max([p.score for p in parents] + valid_scores)
        self._append_ltm_log(round)
        return RoundReport(
            round=round,
            lead=self.lead,
            tree=tree,
            new_records=new_records,
            best_score=best_score,
            long_term_reflection=self.store.long_term,
            budget_exhausted=exhausted,
        )

    def _ideas_with_retry(self, context, budget, leaf_id, tree) -> IdeaSet | None:
        crossover_ideas = tree.parent_ideas if leaf_id == 0 and len(tree.parent_ideas) == 2 else None
        for attempt in range(2):
            try:
                return generate_ideas(
                    self.gateway, self.spec, context, budget,
                    self.store.long_term, self.prompts, leaf_id,
                    crossover_ideas=crossover_ideas,
                )
            except NoParseableIdeas:
                if attempt == 1:
                    return None
        return None

    def _append_ltm_log(self, round: int) -> None:
        if self.artifacts_dir is None or not self.store.long_term:
            return
        path = self.artifacts_dir / f"lead{self.lead}_ltm.txt"
        with path.open("a") as fh:
            fh.write(f"== round {round} ==\n{self.store.long_term}\n\n")
