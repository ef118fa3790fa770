"""Group-rollout policy-gradient training of the softmax navigator.

Each step samples ``prompts_per_step`` prompts, rolls out ``K`` trajectories per
prompt, scores every trajectory with the configured reward variant, standardizes
the rewards within each group and broadcasts the trajectory's advantage to every
decision it made. The update maximizes the clipped ratio surrogate

    J = 1/|groups| sum_g 1/K sum_i 1/|o_i| sum_t clip_sur(r_it, A_i)

with one plain gradient-ascent step per training step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ACTIONS, SCORE_CEILING, Choice, PromptSpec, RolloutGroup, Trajectory
from .env import run_episode
from .metrics import action_counts, best_vs_final, per_turn_curve, shares_from_counts
from .policy import (
    ACTION_INDEX,
    PolicyParams,
    SoftmaxPolicy,
    StateFeatures,
    Thresholds,
    action_distribution,
    extract_features,
    fit_to_heuristic,
    log_prob,
)
from .reward import RewardVariant, RewardWeights, compute_stats, group_advantages, variant_reward
from .rng import Stream, substream

# Top-level stream keys; keep training and evaluation draws disjoint.
_TRAIN_KEY = 1
_EVAL_KEY = 2
_PROMPT_PICK_KEY = 3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 8
    steps: int = 300
    learning_rate: float = 5.0
    clip_epsilon: float = 0.2
    reward_variant: RewardVariant = RewardVariant.PRE_GRPO
    weights: RewardWeights = field(default_factory=RewardWeights)
    seed: int = 0
    prompts_per_step: int = 4
    inner_epochs: int = 1
    init: str = "heuristic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "reward_variant", RewardVariant(self.reward_variant))
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.steps < 0 or self.prompts_per_step < 1 or self.inner_epochs < 1:
            raise ValueError("steps >= 0, prompts_per_step >= 1 and inner_epochs >= 1 required")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.init not in ("zeros", "heuristic"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def t_max(self) -> int:
        return self.weights.t_max

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "group_size": self.group_size,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "clip_epsilon": self.clip_epsilon,
            "reward_variant": self.reward_variant.value,
            "weights": {
                "alpha": w.alpha, "beta": w.beta, "gamma": w.gamma,
                "rho_max": w.rho_max, "t_max": w.t_max, "epsilon": w.epsilon,
            },
            "seed": self.seed,
            "prompts_per_step": self.prompts_per_step,
            "inner_epochs": self.inner_epochs,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["weights"] = RewardWeights(**d.get("weights", {}))
        return cls(**d)


def initial_params(config: TrainConfig) -> PolicyParams:
    if config.init == "heuristic":
        return fit_to_heuristic(Thresholds(rho_max=config.weights.rho_max), config.t_max)
    return PolicyParams.zeros()


def decision_steps(traj: Trajectory, rho_max: float = SCORE_CEILING) -> list[tuple[StateFeatures, int, Choice]]:
    """(features, turn, choice) for every policy decision (turns >= 2) in the trajectory."""
    steps = []
    scores: list[float] = []
    for turn in traj.turns:
        if turn.turn_index >= 2:
            feat = extract_features(traj.prompt, scores, turn.turn_index, traj.t_max, rho_max)
            steps.append((feat, turn.turn_index, turn.action.choice))
        if turn.feedback is not None:
            scores.append(turn.feedback.score)
    return steps


def collect_group(
    params: PolicyParams, env, prompt: PromptSpec, k: int, t_max: int, rng: Stream, rho_max: float = SCORE_CEILING
) -> RolloutGroup:
    if k < 2:
        raise ValueError("degenerate group: K must be >= 2")
    policy = SoftmaxPolicy(params)
    trajs = [run_episode(policy, env, prompt, t_max, rng.child(i), rho_max) for i in range(k)]
    logps = tuple(
        tuple(log_prob(params, feat, t, choice) for feat, t, choice in decision_steps(tr, rho_max)) for tr in trajs
    )
    return RolloutGroup(prompt, tuple(trajs), logps)


@dataclass(frozen=True)
class StepDiagnostics:
    mean_reward: float
    clip_fraction: float
    mean_peak: float
    mean_retention: float
    mean_efficiency: float
    mean_format: float
    mean_length: float
    n_trajectories: int
    n_decisions: int

    @property
    def mean_gap(self) -> float:
        return self.mean_peak - self.mean_retention


def group_rewards(group: RolloutGroup, config: TrainConfig) -> tuple[list[float], list]:
    stats = [compute_stats(tr, config.weights) for tr in group.trajectories]
    return [variant_reward(s, config.weights, config.reward_variant) for s in stats], stats


def clipped_surrogate(ratio: float, advantage: float, clip_epsilon: float) -> tuple[float, float, bool]:
    """Per-decision surrogate value, d(value)/d(ratio), and whether clipping was active.

    Standard PPO clipping, plus a lower bound of (1 + eps) * A for negative
    advantages so that no single contribution exceeds (1 + eps) * |A|.
    """
    lo, hi = 1.0 - clip_epsilon, 1.0 + clip_epsilon
    unclipped = ratio * advantage
    clipped = min(max(ratio, lo), hi) * advantage
    if unclipped <= clipped:
        value, slope, active = unclipped, advantage, False
    else:
        value, slope, active = clipped, 0.0, True
    floor = hi * advantage
    if advantage < 0 and value < floor:
        value, slope, active = floor, 0.0, True
    return value, slope, active


def surrogate_gradient(
    params: PolicyParams, groups: Sequence[RolloutGroup], config: TrainConfig
) -> tuple[np.ndarray, float, list[list[float]]]:
    """Gradient of the batch surrogate; also returns the clip fraction and the advantages."""
    grad = np.zeros_like(params.weights)
    clipped = decisions = 0
    all_adv = []
    rho_max = config.weights.rho_max
    for group in groups:
        rewards, _ = group_rewards(group, config)
        adv = group_advantages(rewards, config.weights.epsilon)
        all_adv.append(adv)
        k = len(group.trajectories)
        for i, traj in enumerate(group.trajectories):
            steps = decision_steps(traj, rho_max)
            if not steps:
                continue
            old = group.behavior_logprobs[i] if group.behavior_logprobs else None
            scale = 1.0 / (len(groups) * k * len(steps))
            for j, (feat, t, choice) in enumerate(steps):
                probs = action_distribution(params, feat, t)
                a = ACTION_INDEX[choice]
                new_lp = math.log(probs[a])
                old_lp = old[j] if old is not None else new_lp
                ratio = math.exp(new_lp - old_lp)
                _, slope, active = clipped_surrogate(ratio, adv[i], config.clip_epsilon)
                decisions += 1
                clipped += active
                if slope == 0.0:
                    continue
                # d ratio / d W = ratio * d log pi / d W
                onehot = np.zeros(len(ACTIONS))
                onehot[a] = 1.0
                grad += scale * slope * ratio * np.outer(onehot - probs, feat.as_array())
    return grad, (clipped / decisions if decisions else 0.0), all_adv


def grpo_update(
    params: PolicyParams, group: RolloutGroup | Sequence[RolloutGroup], config: TrainConfig
) -> tuple[PolicyParams, StepDiagnostics]:
    groups = [group] if isinstance(group, RolloutGroup) else list(group)
    w = params
    clip_fracs = []
    for _ in range(config.inner_epochs):
        grad, clip_frac, _ = surrogate_gradient(w, groups, config)
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient; step aborted")
        clip_fracs.append(clip_frac)
        w = PolicyParams(w.weights + config.learning_rate * grad)

    rewards, stats = [], []
    for g in groups:
        r, s = group_rewards(g, config)
        rewards += r
        stats += s
    n = len(stats)
    diag = StepDiagnostics(
        mean_reward=math.fsum(rewards) / n,
        clip_fraction=sum(clip_fracs) / len(clip_fracs),
        mean_peak=math.fsum(s.peak for s in stats) / n,
        mean_retention=math.fsum(s.retention for s in stats) / n,
        mean_efficiency=math.fsum(s.efficiency for s in stats) / n,
        mean_format=math.fsum(s.format_ok for s in stats) / n,
        mean_length=sum(s.length for s in stats) / n,
        n_trajectories=n,
        n_decisions=sum(len(decision_steps(tr)) for g in groups for tr in g.trajectories),
    )
    return w, diag


def _pick_prompts(pool: Sequence[PromptSpec], config: TrainConfig, step: int) -> list[PromptSpec]:
    rng = substream(config.seed, _PROMPT_PICK_KEY, step)
    replace = config.prompts_per_step > len(pool)
    idx = rng.choice(len(pool), size=config.prompts_per_step, replace=replace)
    return [pool[int(i)] for i in idx]


def train(
    config: TrainConfig, env, prompts: Sequence[PromptSpec], params: PolicyParams | None = None, on_step=None
) -> tuple[PolicyParams, list[dict]]:
    """Run ``config.steps`` updates; returns final params and one curve record per step."""
    if not prompts:
        raise ValueError("empty prompt pool")
    params = initial_params(config) if params is None else params
    curve: list[dict] = []
    root = Stream(config.seed, (_TRAIN_KEY,))
    for step in range(config.steps):
        batch = _pick_prompts(prompts, config, step)
        groups = [
            collect_group(params, env, p, config.group_size, config.t_max, root.child(step, j), config.weights.rho_max)
            for j, p in enumerate(batch)
        ]
        params, diag = grpo_update(params, groups, config)
        trajs = [tr for g in groups for tr in g.trajectories]
        shares = shares_from_counts(action_counts(trajs))
        record = {
            "step": step,
            "mean_reward": diag.mean_reward,
            "clip_fraction": diag.clip_fraction,
            "mean_turns": diag.mean_length,
            "mean_peak": diag.mean_peak,
            "mean_gap": diag.mean_gap,
            "action_distribution": {a.value: shares[a] for a in ACTIONS},
        }
        curve.append(record)
        if on_step is not None:
            on_step(record, params)
    return params, curve


@dataclass(frozen=True)
class EvalReport:
    n_episodes: int
    mean_best: float
    mean_final: float
    best_final_delta: float
    mean_peak: float
    mean_gap: float
    avg_turns: float
    per_turn_curve: dict[int, float]
    action_distribution: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mean_best": self.mean_best,
            "mean_final": self.mean_final,
            "best_final_delta": self.best_final_delta,
            "mean_peak": self.mean_peak,
            "mean_gap": self.mean_gap,
            "avg_turns": self.avg_turns,
            "per_turn_curve": {str(t): v for t, v in self.per_turn_curve.items()},
            "action_distribution": dict(self.action_distribution),
        }


def rollout_many(policy, env, prompts: Sequence[PromptSpec], t_max: int, seeds: Sequence[int], rho_max: float = SCORE_CEILING) -> list[Trajectory]:
    return [
        run_episode(policy, env, p, t_max, Stream(seed, (_EVAL_KEY, i)), rho_max)
        for seed in seeds
        for i, p in enumerate(prompts)
    ]


def summarize(trajs: Sequence[Trajectory], rho_max: float = SCORE_CEILING) -> EvalReport:
    if not trajs:
        raise ValueError("no trajectories to summarize")
    bvf = best_vs_final(trajs)
    shares = shares_from_counts(action_counts(trajs))
    n = len(trajs)
    return EvalReport(
        n_episodes=n,
        mean_best=bvf.mean_best,
        mean_final=bvf.mean_final,
        best_final_delta=bvf.delta,
        mean_peak=bvf.mean_best / rho_max,
        mean_gap=bvf.delta / rho_max,
        avg_turns=sum(tr.length for tr in trajs) / n,
        per_turn_curve=per_turn_curve(trajs),
        action_distribution={a.value: shares[a] for a in ACTIONS},
    )


def evaluate(policy, env, prompts: Sequence[PromptSpec], t_max: int, seeds: Sequence[int], rho_max: float = SCORE_CEILING) -> EvalReport:
    """Roll the policy out on every prompt under every seed and summarize.

    ``policy`` is any object with ``decide``; a bare PolicyParams is wrapped.
    """
    if isinstance(policy, PolicyParams):
        policy = SoftmaxPolicy(policy)
    return summarize(rollout_many(policy, env, prompts, t_max, seeds, rho_max), rho_max)
