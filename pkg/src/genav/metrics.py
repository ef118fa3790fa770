"""Diagnostics over trajectory logs: action mix, per-turn scores, turn counts,
best-vs-final selection, reviewer/human agreement and latency accounting."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import ACTIONS, Choice, Termination, Trajectory, score_sequence


def action_counts(logs: Iterable[Trajectory]) -> dict[Choice, int]:
    """Counts of decisions at turns >= 2 (the forced turn-1 generation is excluded)."""
    counts = Counter({a: 0 for a in ACTIONS})
    for traj in logs:
        for turn in traj.turns:
            if turn.turn_index >= 2:
                counts[turn.action.choice] += 1
    return dict(counts)


def shares_from_counts(counts: dict[Choice, int]) -> dict[Choice, float]:
    total = sum(counts.values())
    if total == 0:
        return {a: 0.0 for a in ACTIONS}
    return {a: counts.get(a, 0) / total for a in ACTIONS}


def action_distribution(logs: Iterable[Trajectory]) -> dict[Choice, float]:
    """Shares of STOP/REFINE/REGENERATE among decision turns; all zero if there are none."""
    return shares_from_counts(action_counts(logs))


def per_turn_curve(logs: Iterable[Trajectory]) -> dict[int, float]:
    """Mean reviewer score at each turn index over the trajectories that reached it."""
    sums: dict[int, float] = defaultdict(float)
    counts: dict[int, int] = defaultdict(int)
    for traj in logs:
        for t, s in enumerate(score_sequence(traj), start=1):
            sums[t] += s
            counts[t] += 1
    return {t: sums[t] / counts[t] for t in sorted(counts)}


def avg_turns(logs: Iterable[Trajectory]) -> float:
    lengths = [traj.length for traj in logs]
    if not lengths:
        raise ValueError("no trajectories")
    return sum(lengths) / len(lengths)


@dataclass(frozen=True)
class BestVsFinal:
    mean_best: float
    mean_final: float

    @property
    def delta(self) -> float:
        return self.mean_best - self.mean_final


def best_vs_final(logs: Iterable[Trajectory]) -> BestVsFinal:
    best, final = [], []
    for traj in logs:
        scores = score_sequence(traj)
        best.append(max(scores))
        final.append(scores[-1])
    if not best:
        raise ValueError("no trajectories")
    return BestVsFinal(math.fsum(best) / len(best), math.fsum(final) / len(final))


def reviewer_preference(rho_a: float, rho_b: float, tie_margin: float = 0.3) -> str:
    if abs(rho_a - rho_b) < tie_margin:
        return "TIE"
    return "A" if rho_a > rho_b else "B"


def reviewer_human_agreement(pairs: Sequence[tuple[float, float, str]], tie_margin: float = 0.3) -> float:
    """Fraction of reviewer-decisive pairs where the human picked the same image.

    ``pairs`` holds ``(rho_a, rho_b, human)`` with ``human`` in {"A", "B", "TIE"}.
    Pairs the reviewer scores within ``tie_margin`` are excluded; a human tie on a
    decisive pair counts as disagreement.
    """
    decisive = agreed = 0
    for rho_a, rho_b, human in pairs:
        pref = reviewer_preference(rho_a, rho_b, tie_margin)
        if pref == "TIE":
            continue
        decisive += 1
        agreed += pref == str(human).strip().upper()
    if decisive == 0:
        raise ValueError("no decisive comparisons")
    return agreed / decisive


@dataclass(frozen=True)
class CostModel:
    per_generation: float = 0.0
    per_review: float = 0.0
    per_decision: float = 0.0


@dataclass(frozen=True)
class LatencyReport:
    total: float
    per_trajectory: float
    per_turn: dict[int, float]


def latency_account(logs: Iterable[Trajectory], cost: CostModel) -> LatencyReport:
    """Seconds spent under a declarative cost model.

    A generating turn costs one decision (the navigator's rewrite), one generation
    and one review; a STOP turn costs a decision only.
    """
    per_turn: dict[int, float] = defaultdict(float)
    n = 0
    for traj in logs:
        n += 1
        for turn in traj.turns:
            c = cost.per_decision
            if not turn.is_stop:
                c += cost.per_generation + cost.per_review
            per_turn[turn.turn_index] += c
    total = math.fsum(per_turn.values())
    return LatencyReport(total, total / n if n else 0.0, dict(sorted(per_turn.items())))


def correct_stop_rate(logs: Iterable[Trajectory], threshold: float = 4.5) -> float:
    """Share of trajectories that stop exactly at the first turn reaching ``threshold``.

    Trajectories that never reach it count as correct when they use the whole budget.
    """
    n = correct = 0
    for traj in logs:
        n += 1
        scores = score_sequence(traj)
        first = next((t for t, s in enumerate(scores, start=1) if s >= threshold), None)
        if first is None:
            correct += traj.terminated_by is Termination.BUDGET_EXHAUSTED
        else:
            stopped_there = len(scores) == first and (
                traj.terminated_by is Termination.STOP_ACTION or first == traj.t_max
            )
            correct += stopped_there
    if n == 0:
        raise ValueError("no trajectories")
    return correct / n
