"""Navigator policies.

The trainable policy is a softmax over linear logits of five state features. The
features are computed from the prompt and the reviewer scores seen so far, never
from a candidate's latent quality, so everything a policy conditions on is
observable in a live deployment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .core import (
    ACTIONS,
    SCORE_CEILING,
    ActionRecord,
    Choice,
    PromptSpec,
    Termination,
    Trajectory,
    TurnRecord,
)
from .rng import GENERATE, GENERATE_ALT, REVIEW, REVIEW_ALT, Stream, as_stream

FEATURE_NAMES = ("current_score_norm", "turn_frac", "score_delta", "prompt_difficulty", "bias")
N_ACTIONS = len(ACTIONS)
N_FEATURES = len(FEATURE_NAMES)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class StateFeatures:
    current_score_norm: float
    turn_frac: float
    score_delta: float
    prompt_difficulty: float
    bias: float = 1.0

    def __post_init__(self) -> None:
        vec = self.as_array()
        if not np.all(np.isfinite(vec)):
            raise PolicyError(f"non-finite state features {vec.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.current_score_norm, self.turn_frac, self.score_delta, self.prompt_difficulty, self.bias],
            dtype=float,
        )


def extract_features(
    prompt: PromptSpec,
    scores: Sequence[float],
    t: int,
    t_max: int,
    rho_max: float = SCORE_CEILING,
) -> StateFeatures:
    """Features for the decision at turn ``t`` given the reviewer scores of turns 1..t-1."""
    normed = [min(max(s / rho_max, 0.0), 1.0) for s in scores]
    current = normed[-1] if normed else 0.0
    delta = normed[-1] - normed[-2] if len(normed) >= 2 else 0.0
    return StateFeatures(
        current_score_norm=current,
        turn_frac=min(max((t - 1) / t_max, 0.0), 1.0),
        score_delta=delta,
        prompt_difficulty=prompt.difficulty,
    )


@dataclass(frozen=True)
class PolicyParams:
    """Weight matrix of the softmax-linear navigator (rows: STOP, REFINE, REGENERATE)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.shape != (N_ACTIONS, N_FEATURES):
            raise PolicyError(f"weights must be {N_ACTIONS}x{N_FEATURES}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise PolicyError("non-finite policy weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls) -> PolicyParams:
        return cls(np.zeros((N_ACTIONS, N_FEATURES)))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PolicyParams) and np.array_equal(self.weights, other.weights)

    def __hash__(self) -> int:
        return hash(self.weights.tobytes())

    def to_text(self) -> str:
        lines = [
            f"# genav-policy rows={N_ACTIONS} cols={N_FEATURES}",
            "# actions=" + ",".join(a.value for a in ACTIONS),
            "# features=" + ",".join(FEATURE_NAMES),
        ]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.weights]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> PolicyParams:
        rows = []
        header_seen = False
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "rows=" in line:
                    fields = dict(tok.split("=") for tok in line[1:].split() if "=" in tok)
                    if (int(fields["rows"]), int(fields["cols"])) != (N_ACTIONS, N_FEATURES):
                        raise PolicyError(f"unexpected policy shape in header: {line}")
                    header_seen = True
                continue
            rows.append([float(x) for x in line.split()])
        if not header_seen:
            raise PolicyError("missing policy header")
        return cls(np.array(rows))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> PolicyParams:
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _logits(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    return params.weights @ x


def action_distribution(params: PolicyParams, feat: StateFeatures, t: int) -> np.ndarray:
    """Probabilities over (STOP, REFINE, REGENERATE); turn 1 is always REGENERATE."""
    if t < 1:
        raise PolicyError(f"turn index {t} < 1")
    if t == 1:
        return np.array([0.0, 0.0, 1.0])
    z = _logits(params, feat.as_array())
    if not np.all(np.isfinite(z)):
        raise PolicyError("non-finite logits")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def placeholder_prompt(prompt_id: str, t: int, choice: Choice) -> str:
    return f"{prompt_id}#t{t}:{choice.value.lower()}"


def make_action(choice: Choice, prompt_id: str, t: int) -> ActionRecord:
    if choice is Choice.STOP:
        return ActionRecord(Choice.STOP, None)
    return ActionRecord(choice, placeholder_prompt(prompt_id, t, choice))


def sample_action(
    params: PolicyParams,
    feat: StateFeatures,
    t: int,
    rng_seed: int | np.random.Generator,
    prompt_id: str = "prompt",
) -> ActionRecord:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    probs = action_distribution(params, feat, t)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if idx >= N_ACTIONS:
        # cumsum fell short of 1 by rounding; take the last action with mass.
        idx = int(np.flatnonzero(probs)[-1])
    return make_action(ACTIONS[idx], prompt_id, t)


def log_prob(params: PolicyParams, feat: StateFeatures, t: int, choice: Choice) -> float:
    p = action_distribution(params, feat, t)[ACTION_INDEX[Choice(choice)]]
    return math.log(p) if p > 0 else -math.inf


def log_prob_gradient(params: PolicyParams, feat: StateFeatures, t: int, choice: Choice) -> np.ndarray:
    """d log pi(choice | feat) / d weights, shape (3, 5)."""
    k = ACTION_INDEX[Choice(choice)]
    probs = action_distribution(params, feat, t)
    if probs[k] == 0.0:
        raise PolicyError(f"{Choice(choice).value} is masked at turn {t}")
    if t == 1:
        return np.zeros((N_ACTIONS, N_FEATURES))
    onehot = np.zeros(N_ACTIONS)
    onehot[k] = 1.0
    return np.outer(onehot - probs, feat.as_array())


@dataclass(frozen=True)
class Thresholds:
    high: float = 4.5
    mid: float = 3.0
    rho_max: float = SCORE_CEILING


def heuristic_policy(
    feat: StateFeatures, thresholds: Thresholds = Thresholds(), prompt_id: str = "prompt", t: int = 2
) -> ActionRecord:
    score = feat.current_score_norm * thresholds.rho_max
    if score >= thresholds.high:
        choice = Choice.STOP
    elif score >= thresholds.mid:
        choice = Choice.REFINE
    else:
        choice = Choice.REGENERATE
    return make_action(choice, prompt_id, t)


# Policy objects share one method, decide(feat, t, prompt, rng) -> ActionRecord,
# which is what the episode runner calls for every turn t >= 2.


@dataclass(frozen=True)
class SoftmaxPolicy:
    params: PolicyParams

    def decide(self, feat: StateFeatures, t: int, prompt: PromptSpec, rng: np.random.Generator) -> ActionRecord:
        return sample_action(self.params, feat, t, rng, prompt.id)


@dataclass(frozen=True)
class HeuristicPolicy:
    thresholds: Thresholds = Thresholds()

    def decide(self, feat: StateFeatures, t: int, prompt: PromptSpec, rng: np.random.Generator) -> ActionRecord:
        return heuristic_policy(feat, self.thresholds, prompt.id, t)


@dataclass(frozen=True)
class FixedPolicy:
    """Fixed workflow: always the same choice (STOP gives one-shot generation)."""

    choice: Choice

    def decide(self, feat: StateFeatures, t: int, prompt: PromptSpec, rng: np.random.Generator) -> ActionRecord:
        return make_action(Choice(self.choice), prompt.id, t)


def fit_to_heuristic(
    thresholds: Thresholds = Thresholds(),
    t_max: int = 3,
    l2: float = 1e-5,
    grid: int = 101,
) -> PolicyParams:
    """Clone the heuristic into softmax-linear weights by maximum likelihood.

    Fits the heuristic's decisions over a grid of scores, decision turns, score
    deltas and difficulties by minimizing the L2-penalized cross-entropy
    (L-BFGS). Stands in for a supervised cold start.
    """
    xs, ks = [], []
    for score in np.linspace(0.0, thresholds.rho_max, grid):
        for t in range(2, max(t_max, 2) + 1):
            for delta in (-0.2, 0.0, 0.2):
                for diff in (0.0, 0.5, 1.0):
                    feat = StateFeatures(score / thresholds.rho_max, (t - 1) / max(t_max, 1), delta, diff)
                    xs.append(feat.as_array())
                    ks.append(ACTION_INDEX[heuristic_policy(feat, thresholds).choice])
    x = np.array(xs)
    y = np.eye(N_ACTIONS)[ks]

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        w = flat.reshape(N_ACTIONS, N_FEATURES)
        z = x @ w.T
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        nll = -(y * logp).sum() / len(x) + 0.5 * l2 * (w**2).sum()
        grad = -(y - np.exp(logp)).T @ x / len(x) + l2 * w
        return nll, grad.ravel()

    res = optimize.minimize(objective, np.zeros(N_ACTIONS * N_FEATURES), jac=True, method="L-BFGS-B")
    return PolicyParams(res.x.reshape(N_ACTIONS, N_FEATURES))


def initial_action(prompt: PromptSpec) -> ActionRecord:
    return make_action(Choice.REGENERATE, prompt.id, 1)


def preference_reference(
    env,
    prompt: PromptSpec,
    t_max: int,
    rng_seed: int | Stream,
    tie_margin: float = 0.0,
) -> tuple[Trajectory, list[str]]:
    """Greedy two-branch reference: run REFINE and REGENERATE each turn, keep the better.

    Returns the trajectory along the kept branches and one outcome per turn >= 2:
    ``"REFINE"`` or ``"REGENERATE"`` for the winner, ``"TIE"`` when the scores
    differ by less than ``tie_margin`` (or are exactly equal). Ties keep the
    refined candidate.
    """
    stream = as_stream(rng_seed)
    first = initial_action(prompt)
    cand = env.generate(prompt, first.revised_prompt, stream.generator(1, GENERATE), f"{prompt.id}:{stream.tag}:t1")
    fb = env.review(prompt, cand, stream.generator(1, REVIEW))
    turns = [TurnRecord(1, first, cand, fb)]
    outcomes: list[str] = []
    for t in range(2, t_max + 1):
        base = f"{prompt.id}:{stream.tag}:t{t}"
        refine_action = make_action(Choice.REFINE, prompt.id, t)
        regen_action = make_action(Choice.REGENERATE, prompt.id, t)
        cand_a = env.refine(prompt, cand, refine_action.revised_prompt, stream.generator(t, GENERATE), base + "a")
        fb_a = env.review(prompt, cand_a, stream.generator(t, REVIEW))
        cand_b = env.generate(prompt, regen_action.revised_prompt, stream.generator(t, GENERATE_ALT), base + "b")
        fb_b = env.review(prompt, cand_b, stream.generator(t, REVIEW_ALT))
        diff = fb_a.score - fb_b.score
        if diff == 0.0 or abs(diff) < tie_margin:
            outcomes.append("TIE")
            keep = (refine_action, cand_a, fb_a)
        elif diff > 0:
            outcomes.append("REFINE")
            keep = (refine_action, cand_a, fb_a)
        else:
            outcomes.append("REGENERATE")
            keep = (regen_action, cand_b, fb_b)
        turns.append(TurnRecord(t, *keep))
        cand = keep[1]
    return Trajectory(prompt, tuple(turns), t_max, Termination.BUDGET_EXHAUSTED), outcomes
