"""Domain types shared across the navigator loop, trainer, data pipeline and metrics.

All records are frozen dataclasses. Trajectories serialize to one JSON object per
line (schema ``v1``); ``encode(decode(line)) == line`` holds byte-for-byte for any
line produced by :func:`encode_trajectory`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

SCHEMA_VERSION = "v1"

VISUAL_WEIGHT = 0.3
INSTRUCTION_WEIGHT = 0.7
SCORE_CEILING = 5.0


class Choice(str, Enum):
    STOP = "STOP"
    REFINE = "REFINE"
    REGENERATE = "REGENERATE"


# Row order of the policy weight matrix.
ACTIONS: tuple[Choice, ...] = (Choice.STOP, Choice.REFINE, Choice.REGENERATE)


class Termination(str, Enum):
    STOP_ACTION = "STOP_ACTION"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"


class TrajectoryError(ValueError):
    """Raised when a record violates its structural invariants."""


def aggregate_score(visual: float, instruction: float) -> float:
    return VISUAL_WEIGHT * visual + INSTRUCTION_WEIGHT * instruction


@dataclass(frozen=True)
class PromptSpec:
    id: str
    text: str
    difficulty: float = 0.5
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text:
            raise TrajectoryError(f"prompt {self.id!r} has empty text")
        if not 0.0 <= self.difficulty <= 1.0:
            raise TrajectoryError(f"prompt {self.id!r} difficulty {self.difficulty} outside [0, 1]")
        object.__setattr__(self, "tags", tuple(self.tags))

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "difficulty": self.difficulty, "tags": list(self.tags)}

    @classmethod
    def from_dict(cls, d: dict) -> PromptSpec:
        return cls(id=d["id"], text=d["text"], difficulty=d["difficulty"], tags=tuple(d.get("tags", ())))


@dataclass(frozen=True)
class ActionRecord:
    """A navigator action: the discrete choice plus the revised prompt it carries."""

    choice: Choice
    revised_prompt: str | None = None
    well_formed: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "choice", Choice(self.choice))
        if self.well_formed and not presence_rule_holds(self.choice, self.revised_prompt):
            raise TrajectoryError(
                f"{self.choice.value} action marked well-formed but revised_prompt={self.revised_prompt!r}"
            )

    def to_dict(self) -> dict:
        return {"choice": self.choice.value, "revised_prompt": self.revised_prompt, "well_formed": self.well_formed}

    @classmethod
    def from_dict(cls, d: dict) -> ActionRecord:
        return cls(choice=Choice(d["choice"]), revised_prompt=d["revised_prompt"], well_formed=d["well_formed"])


def presence_rule_holds(choice: Choice, revised_prompt: str | None) -> bool:
    if choice is Choice.STOP:
        return revised_prompt is None
    return bool(revised_prompt)


def parse_action(raw: dict | str, fallback_prompt: str) -> ActionRecord:
    """Build an ActionRecord from raw navigator output.

    Accepts the navigator's JSON contract (``decision`` / ``revised_prompt``) as a
    dict or string. Unparseable output never raises: it becomes a REGENERATE of
    ``fallback_prompt`` (or of whatever prompt text was supplied) flagged
    ``well_formed=False`` so the format term can penalize it.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError:
            return ActionRecord(Choice.REGENERATE, fallback_prompt, well_formed=False)
    if not isinstance(raw, dict):
        return ActionRecord(Choice.REGENERATE, fallback_prompt, well_formed=False)

    decision = raw.get("decision", raw.get("choice"))
    prompt = raw.get("revised_prompt")
    if prompt is not None and not isinstance(prompt, str):
        prompt = str(prompt)
    try:
        choice = Choice(str(decision).strip().upper())
    except ValueError:
        return ActionRecord(Choice.REGENERATE, prompt or fallback_prompt, well_formed=False)

    if presence_rule_holds(choice, prompt):
        return ActionRecord(choice, prompt, well_formed=True)
    if choice is Choice.STOP:
        return ActionRecord(Choice.STOP, prompt, well_formed=False)
    return ActionRecord(choice, fallback_prompt, well_formed=False)


@dataclass(frozen=True)
class Candidate:
    """A generated artifact. ``latent_quality`` exists only in simulation (None live)."""

    id: str
    latent_quality: float | None
    payload_ref: str = ""

    def __post_init__(self) -> None:
        if self.latent_quality is not None and not 0.0 <= self.latent_quality <= 1.0:
            raise TrajectoryError(f"candidate {self.id!r} latent quality {self.latent_quality} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"id": self.id, "latent_quality": self.latent_quality, "payload_ref": self.payload_ref}

    @classmethod
    def from_dict(cls, d: dict) -> Candidate:
        return cls(id=d["id"], latent_quality=d["latent_quality"], payload_ref=d["payload_ref"])


@dataclass(frozen=True)
class ReviewerFeedback:
    visual: float
    instruction: float
    score: float
    diagnosis: str = ""

    def __post_init__(self) -> None:
        for name in ("visual", "instruction", "score"):
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= SCORE_CEILING):
                raise TrajectoryError(f"reviewer {name} score {value} outside [0, {SCORE_CEILING}]")
        if abs(self.score - aggregate_score(self.visual, self.instruction)) > 1e-9:
            raise TrajectoryError(
                f"score {self.score} != 0.3*{self.visual} + 0.7*{self.instruction}"
            )

    @classmethod
    def from_subscores(cls, visual: float, instruction: float, diagnosis: str = "") -> ReviewerFeedback:
        return cls(visual, instruction, aggregate_score(visual, instruction), diagnosis)

    def to_dict(self) -> dict:
        return {"visual": self.visual, "instruction": self.instruction, "score": self.score, "diagnosis": self.diagnosis}

    @classmethod
    def from_dict(cls, d: dict) -> ReviewerFeedback:
        return cls(visual=d["visual"], instruction=d["instruction"], score=d["score"], diagnosis=d["diagnosis"])


@dataclass(frozen=True)
class TurnRecord:
    turn_index: int
    action: ActionRecord
    candidate: Candidate | None = None
    feedback: ReviewerFeedback | None = None

    def __post_init__(self) -> None:
        if self.turn_index < 1:
            raise TrajectoryError(f"turn index {self.turn_index} < 1")
        if self.action.choice is Choice.STOP:
            if self.candidate is not None or self.feedback is not None:
                raise TrajectoryError("STOP turn must not carry a candidate or feedback")
        elif self.candidate is None or self.feedback is None:
            raise TrajectoryError(f"{self.action.choice.value} turn {self.turn_index} lacks candidate/feedback")

    @property
    def is_stop(self) -> bool:
        return self.action.choice is Choice.STOP

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "action": self.action.to_dict(),
            "candidate": None if self.candidate is None else self.candidate.to_dict(),
            "feedback": None if self.feedback is None else self.feedback.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TurnRecord:
        return cls(
            turn_index=d["turn_index"],
            action=ActionRecord.from_dict(d["action"]),
            candidate=None if d["candidate"] is None else Candidate.from_dict(d["candidate"]),
            feedback=None if d["feedback"] is None else ReviewerFeedback.from_dict(d["feedback"]),
        )


@dataclass(frozen=True)
class Trajectory:
    prompt: PromptSpec
    turns: tuple[TurnRecord, ...]
    t_max: int
    terminated_by: Termination

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "terminated_by", Termination(self.terminated_by))
        if self.t_max < 1:
            raise TrajectoryError(f"t_max {self.t_max} < 1")
        if not self.turns:
            raise TrajectoryError("no generated candidates")
        if self.turns[0].is_stop:
            raise TrajectoryError("turn 1 cannot be STOP")
        for i, turn in enumerate(self.turns, start=1):
            if turn.turn_index != i:
                raise TrajectoryError(f"turn indices out of order at position {i}")
            if turn.is_stop and i != len(self.turns):
                raise TrajectoryError("STOP may only appear as the final turn")
        n = self.length
        if n > self.t_max:
            raise TrajectoryError(f"{n} candidates exceed budget {self.t_max}")
        stopped = self.turns[-1].is_stop
        if stopped != (self.terminated_by is Termination.STOP_ACTION):
            raise TrajectoryError(f"terminated_by={self.terminated_by.value} inconsistent with final turn")
        if not stopped and n != self.t_max:
            raise TrajectoryError(f"budget exhausted after {n} of {self.t_max} turns")

    @property
    def generated(self) -> tuple[TurnRecord, ...]:
        return tuple(t for t in self.turns if not t.is_stop)

    @property
    def length(self) -> int:
        """Number of candidate-producing turns (T)."""
        return sum(1 for t in self.turns if not t.is_stop)

    def to_dict(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "prompt": self.prompt.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "t_max": self.t_max,
            "terminated_by": self.terminated_by.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Trajectory:
        if d.get("v") != SCHEMA_VERSION:
            raise TrajectoryError(f"unsupported schema version {d.get('v')!r}")
        return cls(
            prompt=PromptSpec.from_dict(d["prompt"]),
            turns=tuple(TurnRecord.from_dict(t) for t in d["turns"]),
            t_max=d["t_max"],
            terminated_by=Termination(d["terminated_by"]),
        )


@dataclass(frozen=True)
class RolloutGroup:
    """K trajectories sampled for one prompt.

    ``behavior_logprobs[i]`` holds the sampling policy's log-probability of each
    decision (turns >= 2) of trajectory ``i``; empty when the group did not come
    from a parametric policy.
    """

    prompt: PromptSpec
    trajectories: tuple[Trajectory, ...]
    behavior_logprobs: tuple[tuple[float, ...], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if len(self.trajectories) < 2:
            raise TrajectoryError("degenerate group: need K >= 2 trajectories")
        for traj in self.trajectories:
            if traj.prompt.id != self.prompt.id:
                raise TrajectoryError(f"trajectory for {traj.prompt.id!r} in group for {self.prompt.id!r}")
        if self.behavior_logprobs and len(self.behavior_logprobs) != len(self.trajectories):
            raise TrajectoryError("behavior_logprobs must align with trajectories")


def score_sequence(traj: Trajectory) -> list[float]:
    """Reviewer scores of the candidate-producing turns, in turn order."""
    scores = [t.feedback.score for t in traj.turns if t.feedback is not None]
    if not scores:
        raise TrajectoryError("no generated candidates")
    return scores


def select_output(traj: Trajectory) -> tuple[int, Candidate]:
    """Highest-scored candidate of the trajectory; ties go to the earliest turn."""
    best: TurnRecord | None = None
    for turn in traj.generated:
        if best is None or turn.feedback.score > best.feedback.score:
            best = turn
    if best is None:
        raise TrajectoryError("no generated candidates")
    return best.turn_index, best.candidate


def encode_trajectory(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict(), ensure_ascii=False, separators=(",", ":"))


def decode_trajectory(line: str) -> Trajectory:
    return Trajectory.from_dict(json.loads(line))


def write_trajectories(path, trajectories: Iterable[Trajectory]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(encode_trajectory(traj) + "\n")
            n += 1
    return n


def read_trajectories(path) -> Iterator[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield decode_trajectory(line)


def read_prompts(path) -> list[PromptSpec]:
    """Load a pre-scored prompt pool: one JSON object per line (id, text, difficulty, tags)."""
    prompts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                prompts.append(PromptSpec.from_dict(json.loads(line)))
    return prompts


def write_prompts(path, prompts: Iterable[PromptSpec]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")
