"""Experiment loop and everything physical about evaluation.

A candidate is evaluated by running the canvas's evaluation command in a
throwaway directory as an isolated process group. The evaluator prints
free-form logs and then one machine-readable result block:

    [[ORA_RESULT]]
    {"metrics": {...}, "features": [...], "score": ...}
    [[/ORA_RESULT]]

`features` and `score` may be omitted when the metrics carry the standard
driving indicators; the engine then derives them from the scoring formulas.
Failures (timeout, crash, missing block) are statuses on the result, never
exceptions: failed runs are data the agent learns from.

On top of a single evaluation sits the refinement loop: evaluate, reflect,
apply a bounded action (patch the code, rewrite the callbacks, or stop),
snapshot every attempt, and finally hard-revert to the best-scoring snapshot
if the last edits made things worse.
"""

from __future__ import annotations

import json
import math
import os
import re
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import reflect, scorelab
from .canvas import CALLBACKS_PLACEHOLDER, CODE_PLACEHOLDER, ProblemSpec, RunConfig
from .modelgate import (
    CODE_TEMPERATURE,
    BudgetExhausted,
    BudgetLedger,
    ModelGateway,
    user_request,
)
from .prompts import render
from .soldb import SolutionId

RESULT_BEGIN = "[[ORA_RESULT]]"
RESULT_END = "[[/ORA_RESULT]]"

DEFAULT_CALLBACKS = (
    "class Callbacks:\n"
    "    def on_step_end(self, **kwargs):\n"
    "        pass\n"
)

EXPERIMENT_SYSTEM = (
    "You are the experiment agent. You run candidate implementations against "
    "the evaluator, diagnose the outcomes, and make bounded refinements: "
    "debugging fixes, parameter tuning, and small logic adjustments. Major "
    "redesigns belong in new research ideas, not here."
)


class PatchError(Exception):
    pass


class MalformedPatch(PatchError):
    pass


class SearchNotFound(PatchError):
    def __init__(self, block: int):
        super().__init__(f"block {block}: SEARCH text not found")
        self.block = block


class AmbiguousSearch(PatchError):
    def __init__(self, block: int, occurrences: int):
        super().__init__(f"block {block}: SEARCH text occurs {occurrences} times")
        self.block = block
        self.occurrences = occurrences


class EvalStatus(str, Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    NO_END_MARKER = "no_end_marker"
    NONZERO_EXIT = "nonzero_exit"
    PARSE_ERROR = "parse_error"


@dataclass(frozen=True)
class EvalResult:
    status: EvalStatus
    raw_log: str
    duration: float
    metrics: dict | None = None
    features: tuple | None = None
    score: float | None = None

    @property
    def ok(self) -> bool:
        return self.status is EvalStatus.OK


@dataclass(frozen=True)
class ExperimentAction:
    kind: str  # update_code | update_callbacks | terminate
    patch: str = ""
    callbacks_text: str = ""
    reason: str = ""


@dataclass
class Attempt:
    code_snapshot_id: str
    callbacks_snapshot_id: str | None
    result: EvalResult
    reflection: str = ""
    action: ExperimentAction | None = None


@dataclass
class ExperimentTrace:
    attempts: list[Attempt] = field(default_factory=list)
    best_index: int | None = None  # earliest max-score ok attempt
    progressive_summaries: list[str] = field(default_factory=list)
    final_summary: str = ""
    reverted: bool = False
    stop_reason: str = ""


@dataclass(frozen=True)
class Candidate:
    """What the refinement loop needs to know about the solution it is
    polishing: the hypothesis, the starting code, and what it must beat."""

    solution_id: SolutionId
    idea: str
    code: str
    parent_score: float | None = None
    parent_is_elite: bool = False


class MemorySnapshots:
    """In-memory snapshot store; same interface as DirectorySnapshots."""

    def __init__(self):
        self._data: dict[str, str] = {}

    def save(self, name: str, text: str) -> str:
        self._data[name] = text
        return name

    def load(self, name: str) -> str:
        return self._data[name]

    def names(self) -> list[str]:
        return sorted(self._data)


class DirectorySnapshots:
    """Snapshots as plain files under one solution's snapshot directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def save(self, name: str, text: str) -> str:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return name

    def load(self, name: str) -> str:
        return (self.root / name).read_text()

    def names(self) -> list[str]:
        return sorted(
            str(p.relative_to(self.root)) for p in self.root.rglob("*") if p.is_file()
        )


def truncate_log(log: str, head: int, tail: int) -> str:
    """Head+tail retention: keep the first `head` and last `tail` lines and
    say how much was dropped. Short logs pass through untouched."""
    lines = log.splitlines()
    if len(lines) <= head + tail:
        return log
    marker = (
        f"[Output truncated: {len(lines)} total lines, "
        f"showing first {head} and last {tail} lines]"
    )
    return "\n".join(lines[:head] + [marker] + lines[-tail:])


_SEARCH_MARK = "<<<<<<< SEARCH"
_DIVIDER_MARK = "======="
_REPLACE_MARK = ">>>>>>> REPLACE"


def parse_patch_blocks(patch: str) -> list[tuple[str, str]]:
    blocks: list[tuple[str, str]] = []
    lines = patch.splitlines()
    i = 0
    while i < len(lines):
        if lines[i].strip() != _SEARCH_MARK:
            i += 1
            continue
        j = i + 1
        old: list[str] = []
        while j < len(lines) and lines[j].strip() != _DIVIDER_MARK:
            old.append(lines[j])
            j += 1
        if j >= len(lines):
            raise MalformedPatch("SEARCH block missing ======= divider")
        k = j + 1
        new: list[str] = []
        while k < len(lines) and lines[k].strip() != _REPLACE_MARK:
            new.append(lines[k])
            k += 1
        if k >= len(lines):
            raise MalformedPatch("SEARCH block missing REPLACE terminator")
        blocks.append(("\n".join(old), "\n".join(new)))
        i = k + 1
    return blocks


def apply_patch(code: str, patch: str) -> str:
    """Apply SEARCH/REPLACE blocks in order; each SEARCH text must occur
    exactly once in the current code."""
    blocks = parse_patch_blocks(patch)
    if not blocks:
        raise MalformedPatch("no SEARCH/REPLACE blocks found")
    for number, (old, new) in enumerate(blocks, start=1):
        if not old:
            raise MalformedPatch(f"block {number}: empty SEARCH text")
        occurrences = code.count(old)
        if occurrences == 0:
            raise SearchNotFound(number)
        if occurrences > 1:
            raise AmbiguousSearch(number, occurrences)
        code = code.replace(old, new)
    return code


def invert_patch(patch: str) -> str:
    """Swap every block's SEARCH and REPLACE sides."""
    blocks = parse_patch_blocks(patch)
    out = []
    for old, new in blocks:
        out.append(_SEARCH_MARK)
        if new:
            out.append(new)
        out.append(_DIVIDER_MARK)
        if old:
            out.append(old)
        out.append(_REPLACE_MARK)
    return "\n".join(out)


def allocate_repeats(base: int, delta: float, parent_is_elite: bool) -> int:
    """Dynamic experiment budget: promising first results earn more attempts,
    regressions earn fewer, elite lineages get a small bonus."""
    repeats = base
    if delta > 0:
        repeats = math.ceil(1.5 * base)
    elif delta < 0:
        repeats = max(2, math.floor(0.5 * base))
    if parent_is_elite:
        repeats += 2
    return max(2, min(repeats, 3 * base))


def update_callbacks(current: str | None, new_text: str) -> str:
    """Callbacks are rewritten whole, never patched."""
    del current  # full replacement by design
    text = _strip_fences(new_text)
    if not text.strip():
        raise ValueError("callbacks replacement must be non-empty")
    return text


def _strip_fences(text: str) -> str:
    m = re.search(r"```[a-zA-Z0-9_+-]*\n(.*?)```", text, re.DOTALL)
    return m.group(1) if m else text


def _build_argv(command: str, code_path: Path, callbacks_path: Path | None,
                extra_args: tuple[str, ...]) -> list[str]:
    import shlex

    argv = []
    for token in shlex.split(command):
        token = token.replace(CODE_PLACEHOLDER, str(code_path))
        if callbacks_path is not None:
            token = token.replace(CALLBACKS_PLACEHOLDER, str(callbacks_path))
        # The evaluation runs from a scratch directory; command tokens naming
        # files relative to the launch directory must survive that move.
        candidate = Path(token)
        if not candidate.is_absolute() and candidate.exists() and candidate.is_file():
            token = str(candidate.resolve())
        argv.append(token)
    argv.extend(extra_args)
    return argv


def _coerce_features(raw) -> tuple | None:
    if raw is None:
        return None
    if not isinstance(raw, (list, tuple)):
        raise ValueError("features must be a list")
    out = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
            raise ValueError("features must be integers")
        out.append(int(v))
    return tuple(out)


def parse_result_block(log: str) -> tuple[EvalStatus, dict | None, tuple | None, float | None]:
    begin = log.rfind(RESULT_BEGIN)
    if begin == -1:
        return EvalStatus.NO_END_MARKER, None, None, None
    end = log.find(RESULT_END, begin)
    if end == -1:
        return EvalStatus.NO_END_MARKER, None, None, None
    body = log[begin + len(RESULT_BEGIN): end].strip()
    try:
        data = json.loads(body)
        if not isinstance(data, dict) or not isinstance(data.get("metrics"), dict):
            raise ValueError("result object must carry a metrics map")
        metrics = {}
        for key, value in data["metrics"].items():
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"metric {key} is not finite")
            metrics[str(key)] = value
        features = _coerce_features(data.get("features"))
        score = data.get("score")
        if score is not None:
            score = float(score)
            if not math.isfinite(score):
                raise ValueError("score is not finite")
    except (ValueError, TypeError, json.JSONDecodeError):
        return EvalStatus.PARSE_ERROR, None, None, None

    # Engine-side completion: driving-style metrics can be scored and
    # discretized without the evaluator doing it.
    if score is None or features is None:
        if scorelab.can_score_driving(metrics):
            if score is None:
                score = scorelab.combined_score(metrics)
            if features is None:
                features = scorelab.behavioral_signature(metrics)
        elif score is None:
            return EvalStatus.PARSE_ERROR, None, None, None
        else:
            features = ()
    return EvalStatus.OK, metrics, features, score


def run_evaluation(
    spec: ProblemSpec,
    code: str,
    callbacks: str | None,
    timeout: float,
    extra_args: tuple[str, ...] = (),
) -> EvalResult:
    """One sandboxed evaluator run: fresh temp dir, process-group isolation,
    hard kill at the timeout, combined stdout+stderr captured as the log."""
    tmpdir = Path(tempfile.mkdtemp(prefix="ora_eval_"))
    try:
        code_path = tmpdir / "candidate.py"
        code_path.write_text(code)
        callbacks_path = None
        if callbacks is not None or spec.uses_callbacks:
            callbacks_path = tmpdir / "callbacks.py"
            callbacks_path.write_text(callbacks if callbacks is not None else DEFAULT_CALLBACKS)
        argv = _build_argv(spec.evaluation_command, code_path, callbacks_path, extra_args)

        start = time.monotonic()
        proc = subprocess.Popen(
            argv,
            cwd=tmpdir,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            errors="replace",
            start_new_session=True,
        )
        timed_out = False
        try:
            out, _ = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
            except ProcessLookupError:
                pass
            out, _ = proc.communicate()
        duration = time.monotonic() - start
        log = out or ""

        if timed_out:
            return EvalResult(EvalStatus.TIMEOUT, log, duration)
        if proc.returncode != 0:
            return EvalResult(EvalStatus.NONZERO_EXIT, log, duration)
        status, metrics, features, score = parse_result_block(log)
        return EvalResult(status, log, duration, metrics=metrics, features=features, score=score)
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)


def run_check(spec: ProblemSpec, code: str, timeout: float = 60.0) -> tuple[bool, str]:
    """Evaluator dry-parse mode: `--check` compiles the candidate without
    executing it. Used as the syntax pre-check during code synthesis."""
    result = run_evaluation(spec, code, None, timeout, extra_args=("--check",))
    return result.status in (EvalStatus.OK, EvalStatus.NO_END_MARKER), result.raw_log


_ACTION_RE = re.compile(r"^\s*ACTION:\s*(update_code|update_callbacks|terminate)\b[ \t]*(.*)$", re.MULTILINE)


def parse_action(text: str) -> ExperimentAction | None:
    """Extract the first action directive; None means unparseable."""
    m = _ACTION_RE.search(text)
    if not m:
        return None
    kind = m.group(1)
    inline = m.group(2).strip()
    payload = text[m.end():]
    if kind == "terminate":
        return ExperimentAction("terminate", reason=inline or payload.strip() or "agent chose to stop")
    if kind == "update_code":
        try:
            if not parse_patch_blocks(payload):
                return None
        except MalformedPatch:
            return None
        return ExperimentAction("update_code", patch=payload)
    body = _strip_fences(payload)
    if not body.strip():
        return None
    return ExperimentAction("update_callbacks", callbacks_text=body)


def _score_digest(trace: ExperimentTrace) -> str:
    parts = []
    for i, attempt in enumerate(trace.attempts, start=1):
        r = attempt.result
        shown = f"{r.score}" if r.ok else f"({r.status.value})"
        parts.append(f"#{i}: {shown}")
    return ", ".join(parts)


def _request_action(
    gateway: ModelGateway,
    prompts: dict[str, str],
    candidate: Candidate,
    code: str,
    result: EvalResult,
    trace: ExperimentTrace,
    attempt_number: int,
    allocated: int,
    config: RunConfig,
    long_term: str,
    next_is_final: bool,
) -> tuple[str, ExperimentAction]:
    history = trace.progressive_summaries[-1] if trace.progressive_summaries else ""
    prior = trace.attempts[-2].reflection if len(trace.attempts) >= 2 else ""
    final_note = ""
    if next_is_final:
        final_note = (
            "Important: this is the final attempt to improve the solution. "
            "You may revert to a previous version of the solution code or "
            "parameter configuration if the latest attempt is unsatisfactory. "
            "Ensure the final solution code is executable."
        )
    prompt = render(
        prompts["experiment_step"],
        idea=candidate.idea,
        code=code,
        attempt=attempt_number,
        allocated=allocated,
        status=result.status.value,
        score="None" if result.score is None else result.score,
        metrics=json.dumps(result.metrics, sort_keys=True) if result.metrics else "{}",
        parent_score="None" if candidate.parent_score is None else candidate.parent_score,
        log=truncate_log(result.raw_log, config.log_head_lines, config.log_tail_lines),
        score_history=_score_digest(trace),
        progressive_summary=history,
        prior_reflection=prior,
        long_term=long_term,
        final_note=final_note,
    )
    response = gateway.complete(
        user_request(EXPERIMENT_SYSTEM, prompt, tag="experiment_step",
                     temperature=CODE_TEMPERATURE)
    )
    action = parse_action(response.text)
    if action is None:
        retry = gateway.complete(
            user_request(
                EXPERIMENT_SYSTEM,
                prompt + "\n\nYour previous reply had no parseable ACTION directive. "
                "Reply again with exactly one ACTION line and its payload.",
                tag="experiment_step",
                temperature=CODE_TEMPERATURE,
            )
        )
        response = retry
        action = parse_action(retry.text)
    if action is None:
        action = ExperimentAction("terminate", reason="unparseable action")
    return response.text, action


def _fallback_summary(candidate: Candidate, trace: ExperimentTrace) -> str:
    lines = [
        f"Experiment series for: {candidate.idea}",
        f"Attempts: {len(trace.attempts)}; scores: {_score_digest(trace)}",
        f"Stopped because: {trace.stop_reason}",
    ]
    if trace.reverted and trace.best_index is not None:
        best = trace.attempts[trace.best_index].result.score
        lines.append(f"Final code hard-reverted to the best snapshot (score {best}).")
    return "\n".join(lines)


def _final_summary(
    gateway: ModelGateway,
    prompts: dict[str, str],
    candidate: Candidate,
    trace: ExperimentTrace,
    config: RunConfig,
) -> str:
    revert_note = "no reversion was needed"
    if trace.reverted and trace.best_index is not None:
        best = trace.attempts[trace.best_index].result
        final = trace.attempts[-1].result
        final_shown = final.score if final.ok else f"invalid ({final.status.value})"
        revert_note = (
            f"the code was hard-reverted to the attempt {trace.best_index + 1} snapshot; "
            f"score reverted from {final_shown} to {best.score}"
        )
    reflections = "\n".join(
        f"Experiment #{i}: {a.reflection}" for i, a in enumerate(trace.attempts, 1) if a.reflection
    )
    prompt = render(
        prompts["experiment_summary"],
        idea=candidate.idea,
        attempts=len(trace.attempts),
        score_history=_score_digest(trace),
        revert_note=revert_note,
        progressive_summaries="\n\n".join(trace.progressive_summaries),
        reflections=truncate_log(reflections, config.log_head_lines, config.log_tail_lines),
        stop_reason=trace.stop_reason,
    )
    try:
        response = gateway.complete(
            user_request(EXPERIMENT_SYSTEM, prompt, tag="experiment_summary",
                         temperature=CODE_TEMPERATURE)
        )
        return response.text
    except BudgetExhausted:
        return _fallback_summary(candidate, trace)


def run_experiments(
    candidate: Candidate,
    spec: ProblemSpec,
    config: RunConfig,
    ledger: BudgetLedger,
    gateway: ModelGateway,
    prompts: dict[str, str],
    snapshots,
    long_term: str = "",
    base_repeats_override: int | None = None,
) -> tuple[str, ExperimentTrace, EvalResult]:
    """Run the bounded refine-evaluate loop for one candidate solution.

    Stops on the agent's terminate action, the dynamically allocated repeat
    budget, three consecutive non-improving valid attempts, or budget
    exhaustion. Always finishes with hard reversion to the best snapshot and
    a final summary, even when every attempt failed.
    """
    base = base_repeats_override if base_repeats_override is not None else config.base_experiment_repeats
    code = candidate.code
    callbacks: str | None = None
    trace = ExperimentTrace()
    allocated = max(1, base)
    consecutive_no_improve = 0

    while True:
        if not ledger.charge_evaluation():
            trace.stop_reason = "evaluation budget exhausted"
            break
        result = run_evaluation(
            spec, code, callbacks, config.eval_timeout
        )
        attempt_number = len(trace.attempts) + 1
        code_snap = snapshots.save(f"attempt{attempt_number}/candidate.py", code)
        cb_snap = None
        if callbacks is not None or spec.uses_callbacks:
            cb_snap = snapshots.save(
                f"attempt{attempt_number}/callbacks.py",
                callbacks if callbacks is not None else DEFAULT_CALLBACKS,
            )
        attempt = Attempt(code_snapshot_id=code_snap, callbacks_snapshot_id=cb_snap, result=result)
        trace.attempts.append(attempt)

        if result.ok:
            if trace.best_index is None or result.score > trace.attempts[trace.best_index].result.score:
                trace.best_index = len(trace.attempts) - 1
                consecutive_no_improve = 0
            else:
                consecutive_no_improve += 1
        else:
            consecutive_no_improve = 0  # failures are diagnosed, not counted as plateau

        if attempt_number == 1 and candidate.parent_score is not None:
            delta = (result.score - candidate.parent_score) if result.ok else -1.0
            allocated = allocate_repeats(base, delta, candidate.parent_is_elite)

        if attempt_number % config.summary_interval == 0:
            try:
                summary = reflect.progressive_summary(
                    gateway, trace, upto=attempt_number,
                    interval=config.summary_interval, prompts=prompts,
                )
                trace.progressive_summaries.append(summary)
            except BudgetExhausted:
                trace.stop_reason = "LLM budget exhausted"
                break

        if attempt_number >= allocated:
            trace.stop_reason = "allocated experiment repeats reached"
            break
        if consecutive_no_improve >= 3:
            trace.stop_reason = "three consecutive attempts without improvement"
            break

        try:
            reflection, action = _request_action(
                gateway, prompts, candidate, code, result, trace,
                attempt_number, allocated, config, long_term,
                next_is_final=(attempt_number == allocated - 1),
            )
        except BudgetExhausted:
            trace.stop_reason = "LLM budget exhausted"
            break
        attempt.reflection = reflection
        attempt.action = action

        if action.kind == "terminate":
            trace.stop_reason = f"terminated by agent: {action.reason}"
            break
        if action.kind == "update_code":
            try:
                code = apply_patch(code, action.patch)
            except PatchError as exc:
                attempt.reflection += f"\n[engine] patch not applied: {exc}"
        elif action.kind == "update_callbacks":
            callbacks = update_callbacks(callbacks, action.callbacks_text)

    if not trace.attempts:
        raise BudgetExhausted("no evaluation budget left for this candidate")

    final_result = trace.attempts[-1].result
    if trace.best_index is not None:
        best_attempt = trace.attempts[trace.best_index]
        worse = (not final_result.ok) or final_result.score < best_attempt.result.score
        if worse:
            code = snapshots.load(best_attempt.code_snapshot_id)
            trace.reverted = True
            final_result = best_attempt.result

    trace.final_summary = _final_summary(gateway, prompts, candidate, trace, config)
    return code, trace, final_result
