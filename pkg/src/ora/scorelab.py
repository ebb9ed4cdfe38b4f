"""Scoring mathematics.

Covers three things: the cooperative-driving fitness (safety/speed/smoothness
sub-scores and their weighted combination), the discretized behavioral
signature used as the diversity-cell key, and cross-algorithm normalized
benchmark scores.

All functions are pure; metric maps go in, numbers come out.
"""

from __future__ import annotations

from dataclasses import dataclass

Metrics = dict  # metric name -> float


class MissingMetric(Exception):
    def __init__(self, name: str):
        super().__init__(f"required metric missing: {name}")
        self.name = name


@dataclass(frozen=True)
class ScoringConfig:
    target_speed: float = 13.89  # urban target, m/s
    weight_safety: float = 0.5
    weight_speed: float = 0.3
    weight_smoothness: float = 0.2
    penalty_collision: float = 50.0
    penalty_teleport: float = 30.0
    penalty_emergency_stop: float = 5.0
    penalty_emergency_braking: float = 2.0
    penalty_critical_ttc: float = 0.5
    # Speed score: 100 inside the full band, linear to 0 at the zero band.
    speed_full_deviation: float = 1.0
    speed_zero_deviation: float = 12.0
    # Smoothness score: same shape over speed variance.
    smooth_full_variance: float = 2.0
    smooth_zero_variance: float = 22.0
    # Signature bands. Safety (when collision/teleport free): level 1 if
    # criticalTTC or emergency events are high, level 2 if criticalTTC is
    # elevated, else 3. Speed/smoothness levels drop as the listed
    # thresholds are crossed.
    safety_weak_ttc: float = 100.0
    safety_weak_emergency: float = 5.0
    safety_good_ttc: float = 30.0
    speed_level_bands: tuple[float, float, float] = (1.0, 3.0, 6.0)
    smooth_level_bands: tuple[float, float, float] = (4.0, 9.0, 16.0)

    def __post_init__(self):
        total = self.weight_safety + self.weight_speed + self.weight_smoothness
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"score weights must sum to 1, got {total}")


DEFAULT_SCORING = ScoringConfig()

SAFETY_METRICS = (
    "collisions",
    "teleports",
    "emergencyStops",
    "emergencyBraking",
    "critical_ttc_count",
)


def _require(metrics: Metrics, name: str) -> float:
    if name not in metrics:
        raise MissingMetric(name)
    return float(metrics[name])


def safety_score(metrics: Metrics, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    """Baseline 100 with additive penalties. Deliberately not clamped: large
    negatives are meaningful signals."""
    return (
        100.0
        - cfg.penalty_collision * _require(metrics, "collisions")
        - cfg.penalty_teleport * _require(metrics, "teleports")
        - cfg.penalty_emergency_stop * _require(metrics, "emergencyStops")
        - cfg.penalty_emergency_braking * _require(metrics, "emergencyBraking")
        - cfg.penalty_critical_ttc * _require(metrics, "critical_ttc_count")
    )


def _piecewise_linear(x: float, full: float, zero: float) -> float:
    if x <= full:
        return 100.0
    if x >= zero:
        return 0.0
    return 100.0 * (zero - x) / (zero - full)


def speed_score(avg_speed: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    deviation = abs(avg_speed - cfg.target_speed)
    return _piecewise_linear(deviation, cfg.speed_full_deviation, cfg.speed_zero_deviation)


def smoothness_score(speed_variance: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    return _piecewise_linear(speed_variance, cfg.smooth_full_variance, cfg.smooth_zero_variance)


def combined_score(metrics: Metrics, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    s_safety = safety_score(metrics, cfg)
    s_speed = speed_score(_require(metrics, "avg_speed"), cfg)
    s_smooth = smoothness_score(_require(metrics, "speed_variance"), cfg)
    return cfg.weight_safety * s_safety + cfg.weight_speed * s_speed + cfg.weight_smoothness * s_smooth


def _banded_level(x: float, bands: tuple[float, float, float]) -> int:
    # bands are ascending thresholds for levels 3, 2, 1; beyond the last -> 0
    if x <= bands[0]:
        return 3
    if x <= bands[1]:
        return 2
    if x <= bands[2]:
        return 1
    return 0


def behavioral_signature(metrics: Metrics, cfg: ScoringConfig = DEFAULT_SCORING) -> tuple[int, int, int]:
    """(safety level, speed efficiency level, smoothness level), each in 0..3.

    Any collision or teleport pins the safety level at 0 regardless of the
    other indicators.
    """
    collisions = _require(metrics, "collisions")
    teleports = _require(metrics, "teleports")
    ttc = _require(metrics, "critical_ttc_count")
    emergencies = _require(metrics, "emergencyStops") + _require(metrics, "emergencyBraking")
    if collisions > 0 or teleports > 0:
        safety_level = 0
    elif ttc > cfg.safety_weak_ttc or emergencies > cfg.safety_weak_emergency:
        safety_level = 1
    elif ttc > cfg.safety_good_ttc:
        safety_level = 2
    else:
        safety_level = 3

    deviation = abs(_require(metrics, "avg_speed") - cfg.target_speed)
    speed_level = _banded_level(deviation, cfg.speed_level_bands)
    smooth_level = _banded_level(_require(metrics, "speed_variance"), cfg.smooth_level_bands)
    return (safety_level, speed_level, smooth_level)


def can_score_driving(metrics: Metrics) -> bool:
    """True when the metric map carries everything the driving formulas need."""
    needed = set(SAFETY_METRICS) | {"avg_speed", "speed_variance"}
    return needed.issubset(metrics.keys())


@dataclass(frozen=True)
class BenchmarkEntry:
    problem: str
    algorithm: str
    raw_score: float
    llm_calls: int = 0
    evaluations: int = 0

    def __post_init__(self):
        if self.llm_calls < 0 or self.evaluations < 0:
            raise ValueError("budgets must be non-negative")


def normalized_scores(entries: list[BenchmarkEntry], direction: str = "max") -> dict[str, float]:
    """Affine rescaling of one problem's raw scores to [0, 1].

    The direction-best algorithm maps to 1.0 and the worst to 0.0. A
    degenerate range (all raw scores equal) maps everything to 1.0.
    """
    if not entries:
        raise ValueError("no entries")
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    raws = [e.raw_score for e in entries]
    best = max(raws) if direction == "max" else min(raws)
    worst = min(raws) if direction == "max" else max(raws)
    span = abs(best - worst)
    if span == 0:
        return {e.algorithm: 1.0 for e in entries}
    return {e.algorithm: abs(e.raw_score - worst) / span for e in entries}
