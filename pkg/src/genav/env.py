"""Generator/reviewer environments and the episode loop.

``SimEnv`` is a seeded stand-in for a text-to-image generator, an image editor
and an MLLM reviewer. Each candidate carries a latent quality q in [0, 1]:

* regenerate draws q fresh from Normal(base(d), regen_std), d = prompt difficulty;
* refine moves q by Normal(gain(q), refine_std), where ``gain`` is piecewise
  linear: positive for mid-quality images, negative past a degradation knee;
* the reviewer reports instruction = 5q and visual = 5(0.5 + 0.5q), each with
  Gaussian noise, clamped to [0, 5].

``LiveEnv`` speaks the JSON-over-HTTP contract for real services.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .core import (
    SCORE_CEILING,
    ActionRecord,
    Candidate,
    Choice,
    PromptSpec,
    ReviewerFeedback,
    Termination,
    Trajectory,
    TurnRecord,
)
from .policy import extract_features, initial_action
from .rng import GENERATE, POLICY, REVIEW, Stream, as_stream


class EnvError(RuntimeError):
    pass


class EpisodeError(RuntimeError):
    """An environment call failed mid-episode; ``partial`` holds the completed turns."""

    def __init__(self, message: str, turn: int, partial: tuple[TurnRecord, ...]):
        super().__init__(message)
        self.turn = turn
        self.partial = partial


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


@dataclass(frozen=True)
class SimEnvConfig:
    base_intercept: float = 0.9
    base_slope: float = 0.5
    regen_std: float = 0.12
    refine_knots: tuple[tuple[float, float], ...] = (
        (0.0, 0.05), (0.4, 0.15), (0.6, 0.2), (0.8, 0.0), (0.9, -0.4), (1.0, -0.8)
    )
    refine_std: float = 0.04
    reviewer_noise_std: float = 0.08
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.regen_std, self.refine_std, self.reviewer_noise_std) < 0:
            raise ValueError("standard deviations must be >= 0")
        knots = tuple((float(q), float(g)) for q, g in self.refine_knots)
        qs = [q for q, _ in knots]
        if len(knots) < 2 or qs != sorted(qs) or len(set(qs)) != len(qs):
            raise ValueError("refine_knots need >= 2 points with strictly increasing quality")
        object.__setattr__(self, "refine_knots", knots)

    def base_quality_mean(self, difficulty: float) -> float:
        return _clamp(self.base_intercept - self.base_slope * difficulty, 0.0, 1.0)

    def refine_gain(self, quality: float) -> float:
        qs, gs = zip(*self.refine_knots)
        return float(np.interp(quality, qs, gs))

    def to_dict(self) -> dict:
        return {
            "base_intercept": self.base_intercept,
            "base_slope": self.base_slope,
            "regen_std": self.regen_std,
            "refine_knots": [list(k) for k in self.refine_knots],
            "refine_std": self.refine_std,
            "reviewer_noise_std": self.reviewer_noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimEnvConfig:
        d = dict(d)
        if "refine_knots" in d:
            d["refine_knots"] = tuple(tuple(k) for k in d["refine_knots"])
        return cls(**d)


def generate(config: SimEnvConfig, prompt: PromptSpec, rng: np.random.Generator, cand_id: str = "c") -> Candidate:
    mean = config.base_quality_mean(prompt.difficulty)
    q = _clamp(mean + config.regen_std * rng.standard_normal(), 0.0, 1.0)
    return Candidate(cand_id, q, f"sim://{cand_id}")


def refine(
    config: SimEnvConfig, prompt: PromptSpec, current: Candidate, rng: np.random.Generator, cand_id: str = "c"
) -> Candidate:
    q = current.latent_quality
    q_new = _clamp(q + config.refine_gain(q) + config.refine_std * rng.standard_normal(), 0.0, 1.0)
    return Candidate(cand_id, q_new, f"sim://{cand_id}")


_DIAGNOSES = (
    (4.5, "All requested elements present; no notable flaws."),
    (3.5, "Main intent captured; minor attribute or detail errors."),
    (2.5, "Main subject present but several modifiers are wrong."),
    (1.5, "Key subjects missing or interacting incorrectly."),
    (0.0, "Image does not reflect the request."),
)


def _diagnose(instruction: float) -> str:
    for floor, text in _DIAGNOSES:
        if instruction >= floor:
            return text
    return _DIAGNOSES[-1][1]


def review(config: SimEnvConfig, candidate: Candidate, rng: np.random.Generator) -> ReviewerFeedback:
    q = candidate.latent_quality
    noise = config.reviewer_noise_std * rng.standard_normal(2)
    instruction = _clamp(SCORE_CEILING * q + noise[0], 0.0, SCORE_CEILING)
    visual = _clamp(SCORE_CEILING * (0.5 + 0.5 * q) + noise[1], 0.0, SCORE_CEILING)
    return ReviewerFeedback.from_subscores(visual, instruction, _diagnose(instruction))


@dataclass(frozen=True)
class SimEnv:
    config: SimEnvConfig = field(default_factory=SimEnvConfig)

    def generate(self, prompt: PromptSpec, text: str | None, rng: np.random.Generator, cand_id: str) -> Candidate:
        return generate(self.config, prompt, rng, cand_id)

    def refine(
        self, prompt: PromptSpec, current: Candidate, text: str | None, rng: np.random.Generator, cand_id: str
    ) -> Candidate:
        return refine(self.config, prompt, current, rng, cand_id)

    def review(self, prompt: PromptSpec, candidate: Candidate, rng: np.random.Generator) -> ReviewerFeedback:
        return review(self.config, candidate, rng)


class ScriptedEnv:
    """Replays fixed reviewer scores in call order; for tests and worked examples.

    The i-th generated or refined candidate receives ``scores[i]`` as both
    sub-scores, so its aggregate equals the scripted value.
    """

    def __init__(self, scores):
        self.scores = [float(x) for x in scores]
        self.calls = 0

    def _next(self, cand_id: str) -> Candidate:
        if self.calls >= len(self.scores):
            raise EnvError(f"script exhausted after {len(self.scores)} candidates")
        cand = Candidate(cand_id, None, f"script://{self.calls}")
        self.calls += 1
        return cand

    def generate(self, prompt: PromptSpec, text: str | None, rng, cand_id: str) -> Candidate:
        return self._next(cand_id)

    def refine(self, prompt: PromptSpec, current: Candidate, text: str | None, rng, cand_id: str) -> Candidate:
        return self._next(cand_id)

    def review(self, prompt: PromptSpec, candidate: Candidate, rng) -> ReviewerFeedback:
        s = self.scores[int(candidate.payload_ref.rsplit("/", 1)[-1])]
        return ReviewerFeedback(s, s, s, "scripted")


def load_asset(name: str) -> str:
    """Prompt templates shipped with the package (reviewer and navigator)."""
    return resources.files("genav.assets").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class LiveEnv:
    """HTTP adapter for external generator and reviewer services.

    Generator: POST ``{mode: "t2i"|"i2i", prompt, source_ref?}`` -> ``{payload_ref}``.
    Reviewer: POST ``{prompt, payload_ref}`` -> ``{visual, instruction, diagnosis}``;
    the reviewer template's nested ``evaluation`` object is accepted as well.
    """

    generator_url: str
    reviewer_url: str
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 1.0

    def _post(self, url: str, body: dict) -> dict:
        data = json.dumps(body).encode("utf-8")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError, OSError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise EnvError(f"POST {url} failed after {self.retries + 1} attempts: {last}")

    def generate(self, prompt: PromptSpec, text: str | None, rng, cand_id: str) -> Candidate:
        reply = self._post(self.generator_url, {"mode": "t2i", "prompt": text or prompt.text})
        return Candidate(cand_id, None, str(reply["payload_ref"]))

    def refine(self, prompt: PromptSpec, current: Candidate, text: str | None, rng, cand_id: str) -> Candidate:
        body = {"mode": "i2i", "prompt": text or prompt.text, "source_ref": current.payload_ref}
        reply = self._post(self.generator_url, body)
        return Candidate(cand_id, None, str(reply["payload_ref"]))

    def review(self, prompt: PromptSpec, candidate: Candidate, rng) -> ReviewerFeedback:
        reply = self._post(self.reviewer_url, {"prompt": prompt.text, "payload_ref": candidate.payload_ref})
        return parse_review(reply)


def parse_review(reply: dict) -> ReviewerFeedback:
    scores = reply.get("evaluation", reply)
    visual = scores.get("visual", scores.get("Visual_Quality"))
    instruction = scores.get("instruction", scores.get("Instruction_Comprehension"))
    if visual is None or instruction is None:
        raise EnvError(f"reviewer reply lacks scores: {reply!r}")
    visual = _clamp(float(visual), 0.0, SCORE_CEILING)
    instruction = _clamp(float(instruction), 0.0, SCORE_CEILING)
    return ReviewerFeedback.from_subscores(visual, instruction, str(reply.get("diagnosis", "")))


def _execute(env, prompt: PromptSpec, action: ActionRecord, current: Candidate | None, gen_rng, cand_id: str):
    if action.choice is Choice.REFINE and current is not None:
        return env.refine(prompt, current, action.revised_prompt, gen_rng, cand_id)
    return env.generate(prompt, action.revised_prompt, gen_rng, cand_id)


def run_episode(policy, env, prompt: PromptSpec, t_max: int, rng: int | Stream, rho_max: float = SCORE_CEILING) -> Trajectory:
    """Generate at turn 1, then follow the policy until STOP or the turn budget."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    stream = as_stream(rng)
    turns: list[TurnRecord] = []
    scores: list[float] = []
    current: Candidate | None = None
    for t in range(1, t_max + 1):
        if t == 1:
            action = initial_action(prompt)
        else:
            feat = extract_features(prompt, scores, t, t_max, rho_max)
            action = policy.decide(feat, t, prompt, stream.generator(t, POLICY))
            if action.choice is Choice.STOP:
                turns.append(TurnRecord(t, action))
                return Trajectory(prompt, tuple(turns), t_max, Termination.STOP_ACTION)
        try:
            cand = _execute(env, prompt, action, current, stream.generator(t, GENERATE), f"{prompt.id}:{stream.tag}:t{t}")
            fb = env.review(prompt, cand, stream.generator(t, REVIEW))
        except Exception as exc:
            raise EpisodeError(f"prompt {prompt.id!r} turn {t}: {exc}", t, tuple(turns)) from exc
        turns.append(TurnRecord(t, action, cand, fb))
        scores.append(fb.score)
        current = cand
    return Trajectory(prompt, tuple(turns), t_max, Termination.BUDGET_EXHAUSTED)


def synthetic_prompts(n: int, seed: int = 0, prefix: str = "p") -> list[PromptSpec]:
    """A pool of placeholder prompts with difficulty ~ Uniform(0, 1)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(7919,)))
    difficulties = rng.random(n)
    return [
        PromptSpec(f"{prefix}{i:05d}", f"synthetic prompt {i}", float(d), ("synthetic",))
        for i, d in enumerate(difficulties)
    ]
