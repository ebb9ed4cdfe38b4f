"""Hierarchical reflection: progressive summaries, long-term reflection, and
word-budget compression.

Step reflections live on the experiment trace where they are produced; this
module owns the two aggregated layers. Progressive summaries bound prompt
growth inside one experiment series; the long-term reflection distills
regularities across solution summaries for a whole round (or run, when it
persists across rounds).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .modelgate import IDEA_TEMPERATURE, ModelGateway, user_request
from .prompts import render

if TYPE_CHECKING:  # only for type hints; explab imports this module at runtime
    from .explab import ExperimentTrace

REFLECT_SYSTEM = (
    "You distill experimental evidence into compact, actionable guidance for "
    "an automated research process. Be specific about what worked, what "
    "failed, and what to try next."
)


@dataclass
class ReflectionStore:
    """Per-lead reflection state across one run."""

    word_budget: int | None = None  # None = unlimited
    persist_across_rounds: bool = True
    ltm_refresh_interval: int = 3
    summaries: list[str] = field(default_factory=list)
    long_term: str = ""
    summaries_since_refresh: int = 0

    def start_round(self) -> None:
        if not self.persist_across_rounds:
            self.long_term = ""
            self.summaries.clear()
            self.summaries_since_refresh = 0


def word_count(text: str) -> int:
    return len(text.split())


def truncate_words(text: str, budget: int) -> str:
    words = text.split()
    if len(words) <= budget:
        return text
    return " ".join(words[:budget])


def compress(gateway: ModelGateway, text: str, word_budget: int | None,
             prompts: dict[str, str]) -> str:
    """Compress to the word budget; identity when unlimited or already within.
    The model is asked first, then hard-truncated so the bound always holds."""
    if word_budget is None or word_count(text) <= word_budget:
        return text
    response = gateway.complete(
        user_request(
            REFLECT_SYSTEM,
            render(prompts["compress"], text=text, word_budget=word_budget),
            tag="compress",
            temperature=IDEA_TEMPERATURE,
        )
    )
    return truncate_words(response.text.strip(), word_budget)


def _fmt_score(value: float | None) -> str:
    return "None" if value is None else str(value)


_HEADERISH_RE = re.compile(
    r"^\s*(Progressive Summary for experiments|-\s*(Initial|Current|Best) score)", re.IGNORECASE
)


def progressive_summary(
    gateway: ModelGateway,
    trace: "ExperimentTrace",
    upto: int,
    interval: int,
    prompts: dict[str, str],
) -> str:
    """Summarize the last `interval` experiments, ending at attempt `upto`.

    The header numbers (initial/current/best score) are computed by the
    engine from the trace and override anything the model writes, so the
    summary can never misstate the scoreboard.
    """
    attempts = trace.attempts[:upto]
    ok_scores = [a.result.score for a in attempts if a.result.ok]
    initial = attempts[0].result.score if attempts and attempts[0].result.ok else None
    current = attempts[-1].result.score if attempts and attempts[-1].result.ok else None
    best = max(ok_scores) if ok_scores else None
    start = max(1, upto - interval + 1)
    header = (
        f"Progressive Summary for experiments #{start} ~ #{upto}:\n"
        f"- Initial score: {_fmt_score(initial)}\n"
        f"- Current score: {_fmt_score(current)}\n"
        f"- Best score so far: {_fmt_score(best)}"
    )

    digest = []
    for i, attempt in enumerate(attempts[start - 1:], start=start):
        r = attempt.result
        shown = r.score if r.ok else f"invalid ({r.status.value})"
        digest.append(f"Experiment #{i}: score {shown}")
        if attempt.reflection:
            digest.append(attempt.reflection)
    response = gateway.complete(
        user_request(
            REFLECT_SYSTEM,
            render(prompts["progressive_summary"], start=start, upto=upto,
                   history="\n".join(digest)),
            tag="progressive_summary",
            temperature=IDEA_TEMPERATURE,
        )
    )
    body = "\n".join(
        line for line in response.text.strip().splitlines() if not _HEADERISH_RE.match(line)
    ).strip()
    return f"{header}\n\n{body}" if body else header


def update_long_term(
    gateway: ModelGateway,
    store: ReflectionStore,
    new_summaries: list[str],
    prompts: dict[str, str],
) -> str:
    """Fold new solution summaries into the long-term reflection.

    Below the refresh interval this only accumulates; at or past it, one
    model call merges everything and the result is compressed to the word
    budget. Returns the (possibly unchanged) long-term text.
    """
    store.summaries.extend(new_summaries)
    store.summaries_since_refresh += len(new_summaries)
    if store.summaries_since_refresh < store.ltm_refresh_interval:
        return store.long_term
    recent = store.summaries[-store.summaries_since_refresh:]
    response = gateway.complete(
        user_request(
            REFLECT_SYSTEM,
            render(
                prompts["long_term"],
                previous=store.long_term or "(none yet)",
                summaries="\n\n".join(recent),
            ),
            tag="long_term",
            temperature=IDEA_TEMPERATURE,
        )
    )
    store.long_term = compress(gateway, response.text.strip(), store.word_budget, prompts)
    store.summaries_since_refresh = 0
    return store.long_term
