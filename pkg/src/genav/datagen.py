"""Branch-and-select trajectory construction, filtering and conversational export.

At every turn K candidate actions are expanded from the current selected
candidate, each result is reviewed and the best one (lowest branch index on
ties) is selected. Expansion stops when the selected score reaches the
threshold, when it fails to beat the best score so far, or at the turn budget,
checked in that order. A turn that stops on no-improvement stays in the tree
but is not appended to the selected path.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import (
    SCHEMA_VERSION,
    ActionRecord,
    Candidate,
    Choice,
    PromptSpec,
    ReviewerFeedback,
    Termination,
    Trajectory,
    TurnRecord,
)
from .policy import placeholder_prompt
from .rng import GENERATE, POLICY, REVIEW, Stream, as_stream

DEFAULT_RHO_THR = 4.5


class StopReason(str, Enum):
    THRESHOLD = "THRESHOLD"
    NO_IMPROVEMENT = "NO_IMPROVEMENT"
    BUDGET = "BUDGET"


class BranchError(RuntimeError):
    def __init__(self, message: str, turn: int, branch: int | None = None):
        super().__init__(message)
        self.turn = turn
        self.branch = branch


@dataclass(frozen=True)
class BranchEntry:
    branch: int
    action: ActionRecord
    candidate: Candidate
    feedback: ReviewerFeedback

    @property
    def score(self) -> float:
        return self.feedback.score

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "action": self.action.to_dict(),
            "candidate": self.candidate.to_dict(),
            "feedback": self.feedback.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BranchEntry:
        return cls(
            d["branch"],
            ActionRecord.from_dict(d["action"]),
            Candidate.from_dict(d["candidate"]),
            ReviewerFeedback.from_dict(d["feedback"]),
        )


def argmax_branch(entries: Sequence[BranchEntry]) -> int:
    """Position of the highest score; the first (lowest branch index) wins ties."""
    best = 0
    for i, e in enumerate(entries):
        if e.score > entries[best].score:
            best = i
    return best


@dataclass(frozen=True)
class ExpandedTurn:
    turn_index: int
    entries: tuple[BranchEntry, ...]
    selected: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError(f"turn {self.turn_index} has no branches")
        if self.selected != argmax_branch(self.entries):
            raise ValueError(f"turn {self.turn_index}: selected branch is not the argmax")

    @property
    def best(self) -> BranchEntry:
        return self.entries[self.selected]

    def to_dict(self) -> dict:
        return {"turn_index": self.turn_index, "entries": [e.to_dict() for e in self.entries], "selected": self.selected}

    @classmethod
    def from_dict(cls, d: dict) -> ExpandedTurn:
        return cls(d["turn_index"], tuple(BranchEntry.from_dict(e) for e in d["entries"]), d["selected"])


@dataclass(frozen=True)
class BranchLog:
    """Full expansion tree for one prompt plus the selected path through it."""

    prompt: PromptSpec
    k: int
    t_max: int
    rho_thr: float
    turns: tuple[ExpandedTurn, ...]
    stop_reason: StopReason

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "stop_reason", StopReason(self.stop_reason))
        if not self.turns or len(self.turns) > self.t_max:
            raise ValueError(f"{len(self.turns)} expanded turns outside [1, {self.t_max}]")
        for i, turn in enumerate(self.turns, start=1):
            if turn.turn_index != i:
                raise ValueError(f"expanded turn indices out of order at {i}")
            if len(turn.entries) != self.k:
                raise ValueError(f"turn {i} has {len(turn.entries)} branches, expected {self.k}")

    @property
    def selected_path(self) -> tuple[BranchEntry, ...]:
        path = tuple(t.best for t in self.turns)
        return path[:-1] if self.stop_reason is StopReason.NO_IMPROVEMENT else path

    @property
    def selected_scores(self) -> list[float]:
        return [e.score for e in self.selected_path]

    def to_trajectory(self) -> Trajectory:
        """Selected path as a navigator trajectory; a path that ends early closes with STOP."""
        turns = [TurnRecord(i, e.action, e.candidate, e.feedback) for i, e in enumerate(self.selected_path, start=1)]
        if len(turns) < self.t_max:
            turns.append(TurnRecord(len(turns) + 1, ActionRecord(Choice.STOP, None)))
            return Trajectory(self.prompt, tuple(turns), self.t_max, Termination.STOP_ACTION)
        return Trajectory(self.prompt, tuple(turns), self.t_max, Termination.BUDGET_EXHAUSTED)

    def to_dict(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "prompt": self.prompt.to_dict(),
            "k": self.k,
            "t_max": self.t_max,
            "rho_thr": self.rho_thr,
            "turns": [t.to_dict() for t in self.turns],
            "stop_reason": self.stop_reason.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BranchLog:
        if d.get("v") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('v')!r}")
        return cls(
            PromptSpec.from_dict(d["prompt"]),
            d["k"],
            d["t_max"],
            d["rho_thr"],
            tuple(ExpandedTurn.from_dict(t) for t in d["turns"]),
            StopReason(d["stop_reason"]),
        )


@dataclass(frozen=True)
class SimProposer:
    """Proposes K actions per turn: K regenerations at turn 1, then a REFINE/REGENERATE mix.

    Each later branch is REFINE with probability ``refine_share``. Every action
    gets a distinct placeholder rewrite tagged with its branch index.
    """

    refine_share: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.refine_share <= 1.0:
            raise ValueError("refine_share must lie in [0, 1]")

    def propose(
        self, prompt: PromptSpec, path: Sequence[BranchEntry], t: int, k: int, rng: np.random.Generator
    ) -> list[ActionRecord]:
        if t == 1:
            choices = [Choice.REGENERATE] * k
        else:
            draws = rng.random(k)
            choices = [Choice.REFINE if u < self.refine_share else Choice.REGENERATE for u in draws]
        return [ActionRecord(c, f"{placeholder_prompt(prompt.id, t, c)}/k{i}") for i, c in enumerate(choices)]


def branch_and_select(
    proposer,
    env,
    prompt: PromptSpec,
    k: int,
    t_max: int,
    rho_thr: float = DEFAULT_RHO_THR,
    rng: int | Stream = 0,
) -> BranchLog:
    if k < 1:
        raise ValueError("K must be >= 1")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if not 0.0 < rho_thr <= 5.0:
        raise ValueError("rho_thr must lie in (0, 5]")
    stream = as_stream(rng)
    path: list[BranchEntry] = []
    tree: list[ExpandedTurn] = []
    rho_best = -np.inf
    for t in range(1, t_max + 1):
        try:
            actions = list(proposer.propose(prompt, tuple(path), t, k, stream.generator(t, POLICY)))
        except Exception as exc:
            raise BranchError(f"prompt {prompt.id!r} turn {t}: proposer failed: {exc}", t) from exc
        if len(actions) != k:
            raise BranchError(f"prompt {prompt.id!r} turn {t}: proposer returned {len(actions)} actions, expected {k}", t)
        current = path[-1].candidate if path else None
        entries = []
        for b, action in enumerate(actions):
            if action.choice is Choice.STOP:
                raise BranchError(f"prompt {prompt.id!r} turn {t}: proposer returned STOP", t, b)
            cand_id = f"{prompt.id}:{stream.tag}:t{t}k{b}"
            try:
                if action.choice is Choice.REFINE and current is not None:
                    cand = env.refine(prompt, current, action.revised_prompt, stream.generator(t, b, GENERATE), cand_id)
                else:
                    cand = env.generate(prompt, action.revised_prompt, stream.generator(t, b, GENERATE), cand_id)
                fb = env.review(prompt, cand, stream.generator(t, b, REVIEW))
            except Exception as exc:
                raise BranchError(f"prompt {prompt.id!r} turn {t} branch {b}: {exc}", t, b) from exc
            entries.append(BranchEntry(b, action, cand, fb))
        turn = ExpandedTurn(t, tuple(entries), argmax_branch(entries))
        tree.append(turn)
        rho = turn.best.score
        if rho >= rho_thr:
            reason = StopReason.THRESHOLD
        elif rho <= rho_best:
            reason = StopReason.NO_IMPROVEMENT
        elif t == t_max:
            reason = StopReason.BUDGET
        else:
            rho_best = rho
            path.append(turn.best)
            continue
        return BranchLog(prompt, k, t_max, rho_thr, tuple(tree), reason)
    raise AssertionError("unreachable")


def _construct_one(args) -> BranchLog:
    proposer, env, prompt, k, t_max, rho_thr, seed, i = args
    return branch_and_select(proposer, env, prompt, k, t_max, rho_thr, Stream(seed, (i,)))


def construct_logs(
    proposer,
    env,
    prompts: Sequence[PromptSpec],
    k: int,
    t_max: int,
    rho_thr: float = DEFAULT_RHO_THR,
    seed: int = 0,
    workers: int = 1,
) -> list[BranchLog]:
    """Expand every prompt; prompt ``i`` draws from stream ``(seed, i)`` so results do not depend on ``workers``."""
    jobs = [(proposer, env, p, k, t_max, rho_thr, seed, i) for i, p in enumerate(prompts)]
    if workers <= 1 or len(jobs) < 2:
        return [_construct_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_construct_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


NON_MONOTONE = "non_monotone"
BELOW_THRESHOLD = "below_threshold"


def rejection_reasons(scores: Sequence[float], min_best: float = DEFAULT_RHO_THR) -> tuple[str, ...]:
    """Filter rules a selected-path score sequence violates; empty means keep."""
    reasons = []
    if any(b <= a for a, b in zip(scores, scores[1:])):
        reasons.append(NON_MONOTONE)
    if not scores or max(scores) <= min_best:
        reasons.append(BELOW_THRESHOLD)
    return tuple(reasons)


@dataclass(frozen=True)
class FilterResult:
    kept: list
    rejected: list  # (log, reasons)
    stats: dict = field(default_factory=dict)


def filter_trajectories(logs: Iterable[BranchLog], min_best: float = DEFAULT_RHO_THR) -> FilterResult:
    """Keep logs whose selected path strictly improves every turn and peaks above ``min_best``."""
    kept, rejected = [], []
    stats = {"total": 0, "kept": 0, NON_MONOTONE: 0, BELOW_THRESHOLD: 0}
    for log in logs:
        stats["total"] += 1
        reasons = rejection_reasons(log.selected_scores, min_best)
        if reasons:
            rejected.append((log, reasons))
            for r in reasons:
                stats[r] += 1
        else:
            kept.append(log)
            stats["kept"] += 1
    return FilterResult(kept, rejected, stats)


def _state_summary(path: Sequence[BranchEntry], t: int, t_max: int) -> dict:
    return {
        "turn": t,
        "turns_left": t_max - t + 1,
        "scores_so_far": [e.score for e in path],
        "best_so_far": max((e.score for e in path), default=None),
    }


def to_conversation(log: BranchLog) -> dict:
    """One training record: per turn, the state, the reviewer's last feedback and the target action."""
    path = log.selected_path
    turns = []
    for i in range(len(path) + 1):
        t = i + 1
        if i == len(path):
            if log.stop_reason is not StopReason.THRESHOLD:
                break
            target = {"decision": Choice.STOP.value, "revised_prompt": None}
        else:
            a = path[i].action
            target = {"decision": a.choice.value, "revised_prompt": a.revised_prompt}
        feedback = path[i - 1].feedback.to_dict() if i > 0 else None
        turns.append({"state": _state_summary(path[:i], t, log.t_max), "feedback": feedback, "target": target})
    return {
        "v": SCHEMA_VERSION,
        "prompt_id": log.prompt.id,
        "prompt": log.prompt.text,
        "turns": turns,
    }


def encode_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def decode_record(line: str) -> dict:
    record = json.loads(line)
    if record.get("v") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {record.get('v')!r}")
    return record


def export_conversational(logs: Iterable[BranchLog]) -> Iterator[str]:
    for log in logs:
        yield encode_record(to_conversation(log))


def write_jsonl(path, lines: Iterable[str]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
            n += 1
    return n


def read_branch_logs(path) -> Iterator[BranchLog]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield BranchLog.from_dict(json.loads(line))
