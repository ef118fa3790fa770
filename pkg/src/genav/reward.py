"""Trajectory-level reward: peak, retention, efficiency and format statistics.

The default weights reproduce the reward used for the main experiments
(alpha=0.25, beta=0.025, gamma=0.1, T_max=3 on a 0-5 reviewer scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .core import SCORE_CEILING, Trajectory, TrajectoryError, score_sequence


class RewardVariant(str, Enum):
    PRE_GRPO = "PRE_GRPO"
    FINAL_ONLY = "FINAL_ONLY"
    BEST_ONLY = "BEST_ONLY"
    NO_PEAK = "NO_PEAK"
    NO_RETENTION = "NO_RETENTION"
    NO_EFFICIENCY = "NO_EFFICIENCY"


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.25
    beta: float = 0.025
    gamma: float = 0.1
    rho_max: float = SCORE_CEILING
    t_max: int = 3
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("reward weights must be non-negative")
        if self.rho_max <= 0 or self.epsilon <= 0:
            raise ValueError("rho_max and epsilon must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


@dataclass(frozen=True)
class TrajectoryStats:
    peak: float
    retention: float
    efficiency: float
    format_ok: float
    length: int

    @property
    def gap(self) -> float:
        """Quality lost between the best candidate and the last one."""
        return self.peak - self.retention


def _normalize(score: float, rho_max: float) -> float:
    return min(max(score / rho_max, 0.0), 1.0)


def efficiency_term(length: int, t_max: int) -> float:
    if t_max <= 1:
        return 0.0
    return (length - 1) / (t_max - 1)


def stats_from_scores(
    scores: Sequence[float], w: RewardWeights, format_ok: float = 1.0
) -> TrajectoryStats:
    if not scores:
        raise TrajectoryError("no generated candidates")
    if len(scores) > w.t_max:
        raise TrajectoryError(f"budget violation: {len(scores)} turns > t_max={w.t_max}")
    if any(s > w.rho_max for s in scores):
        raise TrajectoryError(f"score above rho_max={w.rho_max}")
    normed = [_normalize(s, w.rho_max) for s in scores]
    return TrajectoryStats(
        peak=max(normed),
        retention=normed[-1],
        efficiency=efficiency_term(len(scores), w.t_max),
        format_ok=float(format_ok),
        length=len(scores),
    )


def compute_stats(traj: Trajectory, w: RewardWeights) -> TrajectoryStats:
    fmt = 1.0 if all(t.action.well_formed for t in traj.turns) else 0.0
    return stats_from_scores(score_sequence(traj), w, fmt)


def pre_grpo_reward(stats: TrajectoryStats, w: RewardWeights) -> float:
    return stats.peak + w.alpha * stats.retention - w.beta * stats.efficiency + w.gamma * stats.format_ok


def variant_reward(stats: TrajectoryStats, w: RewardWeights, variant: RewardVariant) -> float:
    variant = RewardVariant(variant)
    fmt = w.gamma * stats.format_ok
    if variant is RewardVariant.PRE_GRPO:
        return pre_grpo_reward(stats, w)
    if variant is RewardVariant.FINAL_ONLY:
        return stats.retention + fmt
    if variant is RewardVariant.BEST_ONLY:
        return stats.peak + fmt
    if variant is RewardVariant.NO_PEAK:
        return w.alpha * stats.retention - w.beta * stats.efficiency + fmt
    if variant is RewardVariant.NO_RETENTION:
        return stats.peak - w.beta * stats.efficiency + fmt
    if variant is RewardVariant.NO_EFFICIENCY:
        return stats.peak + w.alpha * stats.retention + fmt
    raise ValueError(f"unknown reward variant {variant!r}")


def reward_variant(traj: Trajectory, w: RewardWeights, variant: RewardVariant) -> float:
    return variant_reward(compute_stats(traj, w), w, variant)


def group_advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> list[float]:
    """Standardize rewards within a rollout group (population std)."""
    k = len(rewards)
    if k < 2:
        raise ValueError("degenerate group: need at least 2 rewards")
    mean = math.fsum(rewards) / k
    var = math.fsum((r - mean) ** 2 for r in rewards) / k
    denom = math.sqrt(var) + epsilon
    return [(r - mean) / denom for r in rewards]
