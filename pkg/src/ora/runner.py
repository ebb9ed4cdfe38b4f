"""Whole-run orchestration: directories, manifest, lead-agent concurrency.

A run owns one directory under the output root:

    runs/<run>/
      manifest.json        run metadata, final budgets, best solution
      db/records.log       the solution database (append-only)
      db/snapshots/<id>/   per-solution code snapshots
      lead<L>_round<R>_tree.txt
      lead<L>_ltm.txt
      progress.jsonl       (llm_calls, evaluations, best score) after each insert
"""

from __future__ import annotations

import json
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import agents, reflect
from .canvas import ProblemSpec, RunConfig
from .modelgate import BudgetExhausted, BudgetLedger, ModelGateway
from .soldb import EmptyDatabase, SolutionDatabase


@dataclass
class RunManifest:
    run_id: str
    spec_path: str
    config_path: str
    backend: str
    rounds: int
    seed: int
    started_at: str
    finished_at: str = ""
    llm_calls_used: int = 0
    evaluations_used: int = 0
    best_solution_id: str = ""
    best_score: float | None = None
    interrupted: bool = False

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


class RunDirectory:
    def __init__(self, out_root: str | Path, run_id: str):
        self.path = Path(out_root) / run_id
        self.path.mkdir(parents=True, exist_ok=True)

    @property
    def db_dir(self) -> Path:
        return self.path / "db"

    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest.json"

    @property
    def progress_path(self) -> Path:
        return self.path / "progress.jsonl"

    def tree_path(self, lead: int, round: int) -> Path:
        return self.path / f"lead{lead}_round{round}_tree.txt"


def execute_run(
    spec: ProblemSpec,
    config: RunConfig,
    backend,
    backend_name: str,
    out_root: str | Path,
    run_id: str,
    rounds: int,
    seed: int = 0,
    spec_path: str = "",
    config_path: str = "",
    prompts_dir: str | Path | None = None,
) -> tuple[RunManifest, RunDirectory, SolutionDatabase]:
    """Execute `rounds` research rounds per lead agent and write all artifacts."""
    from .prompts import load_prompts

    run_dir = RunDirectory(out_root, run_id)
    db = SolutionDatabase(run_dir.db_dir)
    ledger = BudgetLedger(config.budget_llm_calls, config.budget_evaluations)
    gateway = ModelGateway(backend, ledger)
    prompts = load_prompts(prompts_dir)

    manifest = RunManifest(
        run_id=run_id,
        spec_path=str(spec_path),
        config_path=str(config_path),
        backend=backend_name,
        rounds=rounds,
        seed=seed,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )

    progress_lock = threading.Lock()

    def progress_hook(record) -> None:
        llm_used, evals_used = ledger.snapshot()
        try:
            best = db.current_elite().score
        except EmptyDatabase:
            best = None
        line = json.dumps(
            {
                "llm_calls": llm_used,
                "evaluations": evals_used,
                "solution_id": str(record.id),
                "score": None if not record.valid else record.score,
                "best_score": best,
            },
            sort_keys=True,
        )
        with progress_lock:
            with run_dir.progress_path.open("a") as fh:
                fh.write(line + "\n")

    def make_runner(lead: int) -> agents.RoundRunner:
        store = reflect.ReflectionStore(
            word_budget=config.ltm_word_budget,
            persist_across_rounds=config.ltm_persist_across_rounds,
            ltm_refresh_interval=config.ltm_refresh_interval,
        )
        return agents.RoundRunner(
            db=db,
            spec=spec,
            config=config,
            gateway=gateway,
            ledger=ledger,
            prompts=prompts,
            store=store,
            lead=lead,
            rng=random.Random(seed * 1_000_003 + lead),
            artifacts_dir=run_dir.path,
            progress_hook=progress_hook,
        )

    interrupted = False
    try:
        if not db.valid_records():
            make_runner(lead=1).bootstrap_seed(round=0)

        def lead_loop(lead: int) -> None:
            runner = make_runner(lead)
            for round_number in range(1, rounds + 1):
                try:
                    report = runner.run_round(round_number)
                except (BudgetExhausted, EmptyDatabase):
                    return
                if report.budget_exhausted:
                    return

        if config.num_lead_agents == 1:
            lead_loop(1)
        else:
            with ThreadPoolExecutor(max_workers=config.num_lead_agents) as pool:
                futures = [
                    pool.submit(lead_loop, lead)
                    for lead in range(1, config.num_lead_agents + 1)
                ]
                for future in futures:
                    future.result()
    except KeyboardInterrupt:
        interrupted = True
    except BudgetExhausted:
        pass

    llm_used, evals_used = ledger.snapshot()
    manifest.llm_calls_used = llm_used
    manifest.evaluations_used = evals_used
    manifest.interrupted = interrupted
    try:
        elite = db.current_elite()
        manifest.best_solution_id = str(elite.id)
        manifest.best_score = elite.score
    except EmptyDatabase:
        pass
    manifest.finished_at = time.strftime("%Y-%m-%dT%H:%M:%S")
    run_dir.manifest_path.write_text(manifest.to_json() + "\n")
    return manifest, run_dir, db
