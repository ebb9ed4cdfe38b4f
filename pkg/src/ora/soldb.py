"""Persistent solution database.

Every evaluated solution lands here, valid or not. Records append to a
line-delimited log (`db/records.log`) and an in-memory index is rebuilt on
load, so a crash between operations loses at most the record being written.

Diversity bookkeeping follows the archive-of-cells idea: each record carries a
small discretized feature signature, and each distinct signature keeps its own
best-scoring valid record. Parent sampling draws from those cell bests, which
is what stops one seemingly good lineage from flooding the population.
"""

from __future__ import annotations

import json
import math
import random
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

INVALID_SCORE = float("-inf")

_ID_RE = re.compile(r"^lead(\d+)_round(\d+)_count(\d+)_id(\d+)$")


class DuplicateId(Exception):
    def __init__(self, solution_id: "SolutionId"):
        super().__init__(f"id already present: {solution_id}")
        self.solution_id = solution_id


class StorageFailure(Exception):
    pass


class EmptyDatabase(Exception):
    pass


class KTooLarge(Exception):
    def __init__(self, k: int, available: int):
        super().__init__(f"requested {k} parents but only {available} candidates")
        self.k = k
        self.available = available


class UnknownParent(Exception):
    def __init__(self, solution_id: "SolutionId"):
        super().__init__(f"parent not in database: {solution_id}")
        self.solution_id = solution_id


@dataclass(frozen=True, order=True)
class SolutionId:
    lead: int
    round: int
    count: int
    serial: int

    def __str__(self) -> str:
        return f"lead{self.lead}_round{self.round}_count{self.count}_id{self.serial}"

    @classmethod
    def parse(cls, text: str) -> "SolutionId":
        m = _ID_RE.match(text)
        if not m:
            raise ValueError(f"not a solution id: {text!r}")
        return cls(*(int(g) for g in m.groups()))


@dataclass(frozen=True)
class SolutionRecord:
    """One complete research artifact: the idea, its implementation, what the
    experiments concluded, and how it scored."""

    id: SolutionId
    idea: str
    code: str
    experiment_summary: str
    metrics: dict
    features: tuple
    score: float
    parent_ids: tuple
    valid: bool
    round: int
    lead: int

    def to_json(self) -> str:
        payload = {
            "id": str(self.id),
            "idea": self.idea,
            "code": self.code,
            "experiment_summary": self.experiment_summary,
            "metrics": self.metrics,
            "features": list(self.features),
            "score": None if self.score == INVALID_SCORE else self.score,
            "parent_ids": [str(p) for p in self.parent_ids],
            "valid": self.valid,
            "round": self.round,
            "lead": self.lead,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SolutionRecord":
        data = json.loads(line)
        return cls(
            id=SolutionId.parse(data["id"]),
            idea=data["idea"],
            code=data["code"],
            experiment_summary=data["experiment_summary"],
            metrics=data["metrics"],
            features=tuple(data["features"]),
            score=INVALID_SCORE if data["score"] is None else float(data["score"]),
            parent_ids=tuple(SolutionId.parse(p) for p in data["parent_ids"]),
            valid=data["valid"],
            round=data["round"],
            lead=data["lead"],
        )


class InsertOutcome(str, Enum):
    ACCEPTED_AS_CELL_BEST = "accepted_as_cell_best"
    ARCHIVED = "archived"
    REJECTED_DUPLICATE = "rejected_duplicate"


def _code_fingerprint(code: str) -> str:
    # Trailing whitespace per line is formatting noise, not behavior.
    return "\n".join(line.rstrip() for line in code.strip().splitlines())


class SolutionDatabase:
    """Append-only record store with cell bests and temperature sampling.

    Thread safety: a single lock serializes inserts and makes each read a
    consistent snapshot, which is all the concurrent lead agents need.
    Pass ``root=None`` for a memory-only database (tests, dry runs).
    """

    def __init__(self, root: str | Path | None):
        self._lock = threading.RLock()
        self._records: list[SolutionRecord] = []
        self._by_id: dict[SolutionId, int] = {}
        self._cells: dict[tuple, int] = {}  # features -> index of best record
        self._fingerprints: set[str] = set()
        self._next_serial = 0
        self._root = Path(root) if root is not None else None
        self._log_path = self._root / "records.log" if self._root else None
        if self._root is not None:
            self._root.mkdir(parents=True, exist_ok=True)
            (self._root / "snapshots").mkdir(exist_ok=True)
            if self._log_path.exists():
                self._replay_log()

    def _replay_log(self) -> None:
        for line in self._log_path.read_text().splitlines():
            if not line.strip():
                continue
            record = SolutionRecord.from_json(line)
            self._index(record)

    def _index(self, record: SolutionRecord) -> InsertOutcome:
        idx = len(self._records)
        self._records.append(record)
        self._by_id[record.id] = idx
        self._next_serial = max(self._next_serial, record.id.serial + 1)
        fingerprint = _code_fingerprint(record.code)
        if fingerprint in self._fingerprints:
            return InsertOutcome.REJECTED_DUPLICATE
        self._fingerprints.add(fingerprint)
        if not record.valid:
            return InsertOutcome.ARCHIVED
        incumbent = self._cells.get(record.features)
        if incumbent is None or record.score > self._records[incumbent].score:
            self._cells[record.features] = idx
            return InsertOutcome.ACCEPTED_AS_CELL_BEST
        return InsertOutcome.ARCHIVED

    def insert(self, record: SolutionRecord) -> InsertOutcome:
        """Persist a record and update the cell bests.

        Invalid records are stored (failures are data) but never become cell
        bests. A record whose code duplicates an already-stored one is kept
        retrievable but adds nothing to the archive cells.
        """
        if not record.valid and record.score != INVALID_SCORE:
            record = replace(record, score=INVALID_SCORE)
        with self._lock:
            if record.id in self._by_id:
                raise DuplicateId(record.id)
            for parent in record.parent_ids:
                if parent not in self._by_id:
                    raise UnknownParent(parent)
            outcome = self._index(record)
            if self._log_path is not None:
                try:
                    with self._log_path.open("a") as fh:
                        fh.write(record.to_json() + "\n")
                        fh.flush()
                except OSError as exc:
                    raise StorageFailure(f"cannot append to {self._log_path}: {exc}") from exc
            return outcome

    def get(self, solution_id: SolutionId) -> SolutionRecord:
        with self._lock:
            return self._records[self._by_id[solution_id]]

    def __contains__(self, solution_id: SolutionId) -> bool:
        with self._lock:
            return solution_id in self._by_id

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[SolutionRecord]:
        with self._lock:
            return list(self._records)

    def valid_records(self) -> list[SolutionRecord]:
        with self._lock:
            return [r for r in self._records if r.valid]

    def cell_bests(self) -> dict[tuple, SolutionRecord]:
        with self._lock:
            return {features: self._records[idx] for features, idx in self._cells.items()}

    def current_elite(self) -> SolutionRecord:
        """Best valid record; ties go to the most recently inserted."""
        with self._lock:
            best = None
            for record in self._records:
                if record.valid and (best is None or record.score >= best.score):
                    best = record
            if best is None:
                raise EmptyDatabase("no valid records")
            return best

    def _ranked_candidates(self) -> list[SolutionRecord]:
        ranked = sorted(
            ((self._records[idx], idx) for idx in self._cells.values()),
            key=lambda pair: (-pair[0].score, -pair[1]),
        )
        return [record for record, _ in ranked]

    def sample_parents(
        self,
        k: int,
        temperature: float,
        rng: random.Random | None = None,
    ) -> list[SolutionRecord]:
        """Draw k distinct cell-best records, biased toward high scores.

        Selection weight is exp(-rank / temperature) over the score ranking
        (rank 0 = best, ties broken newer-first), so temperature interpolates
        between deterministic best-first (tau -> 0) and uniform
        (tau = UNIFORM_TEMPERATURE). Re-ranked after each draw.
        """
        rng = rng or random.Random()
        with self._lock:
            candidates = self._ranked_candidates()
            if not candidates:
                raise EmptyDatabase("no valid records to sample")
            if k > len(candidates):
                raise KTooLarge(k, len(candidates))
            chosen: list[SolutionRecord] = []
            while len(chosen) < k:
                if math.isinf(temperature):
                    weights = [1.0] * len(candidates)
                else:
                    weights = [math.exp(-rank / temperature) for rank in range(len(candidates))]
                total = sum(weights)
                pick = rng.random() * total
                acc = 0.0
                index = len(candidates) - 1
                for i, w in enumerate(weights):
                    acc += w
                    if pick < acc:
                        index = i
                        break
                chosen.append(candidates.pop(index))
            return chosen

    def next_id(self, lead: int, round: int, count: int) -> SolutionId:
        """Mint an id with the database-wide monotone serial. `count` is the
        caller's per-round expansion counter."""
        with self._lock:
            serial = self._next_serial
            self._next_serial += 1
            return SolutionId(lead=lead, round=round, count=count, serial=serial)

    def snapshot_dir(self, solution_id: SolutionId) -> Path:
        if self._root is None:
            raise StorageFailure("memory-only database has no snapshot directory")
        return self._root / "snapshots" / str(solution_id)
