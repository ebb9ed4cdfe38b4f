"""Shared test utilities: record factories, canvas builders, playbooks."""

from __future__ import annotations

import sys
from pathlib import Path

from ora.canvas import ProblemSpec
from ora.soldb import SolutionId, SolutionRecord

HELPERS_DIR = Path(__file__).parent
ECHO_EVAL = HELPERS_DIR / "echo_eval.py"
SPAWN_EVAL = HELPERS_DIR / "spawn_eval.py"


def echo_spec(log_lines: int = 3, seed: str = "SCORE = 0.5\n") -> ProblemSpec:
    """ProblemSpec wired to the toy evaluator, with a trivial seed solution."""
    from ora.canvas import SolutionSeed

    return ProblemSpec(
        problem_description="Maximize the objective reported by the toy evaluator.",
        function_description="A module defining SCORE = <float>.",
        evaluation_command=f"{sys.executable} {ECHO_EVAL} --log-lines {log_lines} --code {{code}}",
        evaluation_description="Echoes the SCORE constant found in the candidate.",
        seed_solution=SolutionSeed(idea="baseline constant", code=seed),
    )


def make_id(serial: int, lead: int = 1, round: int = 1, count: int = 0) -> SolutionId:
    return SolutionId(lead=lead, round=round, count=count, serial=serial)


def make_record(
    serial: int,
    score: float = 0.5,
    features: tuple = (0,),
    valid: bool = True,
    idea: str | None = None,
    code: str | None = None,
    parent_ids: tuple = (),
    lead: int = 1,
    round: int = 1,
) -> SolutionRecord:
    return SolutionRecord(
        id=make_id(serial, lead=lead, round=round),
        idea=idea if idea is not None else f"idea {serial}",
        code=code if code is not None else f"SCORE = {score}\n# variant {serial}\n",
        experiment_summary=f"summary {serial}",
        metrics={"objective": score if valid else 0.0},
        features=features,
        score=score if valid else float("-inf"),
        parent_ids=parent_ids,
        valid=valid,
        round=round,
        lead=lead,
    )


def idea_list(*ideas: str) -> str:
    return "\n".join(f"{i}. {idea}" for i, idea in enumerate(ideas, start=1))


def entry(tag: str, response: str, match: str | None = None) -> dict:
    e = {"tag": tag, "response": response}
    if match is not None:
        e["match"] = match
    return e


def terminate_entry(match: str | None = None, reason: str = "good enough") -> dict:
    return entry(
        "experiment_step",
        f"<thinking>plateaued</thinking>\nACTION: terminate {reason}",
        match,
    )


def summary_entry(match: str | None = None, text: str = "Trends stable; no open issues.") -> dict:
    return entry("experiment_summary", text, match)


def code_entry(idea_substring: str, score: float) -> dict:
    """Playbook entry mapping an idea (matched in the code prompt) to a
    candidate whose toy-evaluator score is `score`."""
    return entry(
        "code_gen",
        f"```python\nSCORE = {score}\n# for: {idea_substring}\n```",
        match=idea_substring,
    )
