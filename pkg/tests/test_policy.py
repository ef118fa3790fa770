import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from genav.core import ACTIONS, Candidate, Choice, PromptSpec, ReviewerFeedback
from genav.env import SimEnv, SimEnvConfig, run_episode, synthetic_prompts
from genav.policy import (
    PolicyError,
    PolicyParams,
    SoftmaxPolicy,
    StateFeatures,
    Thresholds,
    action_distribution,
    extract_features,
    fit_to_heuristic,
    heuristic_policy,
    log_prob,
    log_prob_gradient,
    preference_reference,
    sample_action,
)

W = np.array([
    [1.0, -0.5, 0.2, 0.0, -0.3],
    [0.3, 0.4, -0.2, 0.1, 0.2],
    [-0.6, 0.1, 0.0, 0.5, 0.1],
])
FEAT = StateFeatures(0.7, 1 / 3, 0.1, 0.4)

feat_st = st.builds(
    StateFeatures,
    st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(0, 1),
)
weights_st = st.lists(st.floats(-20, 20), min_size=15, max_size=15).map(lambda v: PolicyParams(np.reshape(v, (3, 5))))


def test_zero_weights_uniform():
    assert action_distribution(PolicyParams.zeros(), FEAT, 2) == pytest.approx([1 / 3] * 3, abs=1e-15)


@given(weights_st, feat_st)
def test_turn_one_masked(params, feat):
    assert action_distribution(params, feat, 1).tolist() == [0.0, 0.0, 1.0]


@given(weights_st, feat_st, st.integers(2, 5))
def test_distribution_is_simplex(params, feat, t):
    p = action_distribution(params, feat, t)
    assert np.all(p >= 0) and abs(p.sum() - 1.0) <= 1e-12


def test_strong_stop_logit():
    w = np.zeros((3, 5))
    w[0, 0] = 10.0  # +10 logits for STOP at normalized score 1
    assert action_distribution(PolicyParams(w), StateFeatures(1.0, 0.5, 0.0, 0.5), 2)[0] > 0.99


def test_non_finite_features_rejected():
    with pytest.raises(PolicyError):
        StateFeatures(float("nan"), 0.0, 0.0, 0.0)


def test_sample_action_golden():
    # Archived from the first run; frequencies are checked separately below.
    params = PolicyParams(W)
    got = [[sample_action(params, FEAT, 2, s).choice.value for s in range(b * 5, b * 5 + 5)] for b in range(3)]
    assert got == [
        ["REFINE", "REFINE", "STOP", "STOP", "REGENERATE"],
        ["REGENERATE", "REFINE", "REFINE", "REFINE", "REGENERATE"],
        ["REGENERATE", "STOP", "STOP", "REGENERATE", "REGENERATE"],
    ]
    a = sample_action(params, FEAT, 2, 0, "pid")
    assert a.choice is Choice.REFINE and a.revised_prompt == "pid#t2:refine"


def test_sample_action_frequencies_chi_squared():
    params = PolicyParams(W)
    probs = action_distribution(params, FEAT, 2)
    n = 10_000
    counts = np.zeros(3)
    for seed in range(n):
        counts[ACTIONS.index(sample_action(params, FEAT, 2, seed).choice)] += 1
    assert stats.chisquare(counts, probs * n).pvalue > 1e-3


def _fd_gradient(params, feat, t, choice, h=1e-5):
    g = np.zeros_like(params.weights)
    for i in range(3):
        for j in range(5):
            up, dn = params.weights.copy(), params.weights.copy()
            up[i, j] += h
            dn[i, j] -= h
            g[i, j] = (log_prob(PolicyParams(up), feat, t, choice) - log_prob(PolicyParams(dn), feat, t, choice)) / (2 * h)
    return g


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(25):
        params = PolicyParams(rng.normal(0, 1.5, (3, 5)))
        feat = StateFeatures(rng.random(), rng.random(), rng.uniform(-1, 1), rng.random())
        choice = ACTIONS[rng.integers(3)]
        analytic = log_prob_gradient(params, feat, 2, choice)
        numeric = _fd_gradient(params, feat, 2, choice)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1e-8)


def test_gradient_structure():
    g = log_prob_gradient(PolicyParams.zeros(), FEAT, 2, Choice.STOP)
    assert g[:, 4] == pytest.approx([2 / 3, -1 / 3, -1 / 3])
    assert np.allclose(g, np.outer([2 / 3, -1 / 3, -1 / 3], FEAT.as_array()))
    bias_only = StateFeatures(0.0, 0.0, 0.0, 0.0)
    g = log_prob_gradient(PolicyParams(W), bias_only, 2, Choice.REFINE)
    assert np.all(g[:, :4] == 0) and np.any(g[:, 4] != 0)


def test_masked_action_gradient_raises():
    with pytest.raises(PolicyError):
        log_prob_gradient(PolicyParams(W), FEAT, 1, Choice.STOP)


@pytest.mark.parametrize("score,expected", [(4.7, Choice.STOP), (3.5, Choice.REFINE), (2.0, Choice.REGENERATE)])
def test_heuristic_rule(score, expected):
    feat = StateFeatures(score / 5.0, 1 / 3, 0.0, 0.5)
    assert heuristic_policy(feat, Thresholds(4.5, 3.0)).choice is expected


def test_heuristic_clone_agrees():
    params = fit_to_heuristic()
    agree = total = 0
    for score in np.linspace(0, 5, 51):
        for t in (2, 3):
            feat = StateFeatures(score / 5, (t - 1) / 3, 0.0, 0.5)
            total += 1
            agree += int(np.argmax(action_distribution(params, feat, t))) == ACTIONS.index(heuristic_policy(feat).choice)
    assert agree / total >= 0.95


def test_params_text_round_trip(tmp_path):
    p = PolicyParams(W / 3.0)
    assert PolicyParams.from_text(p.to_text()) == p
    p.save(tmp_path / "w.txt")
    assert PolicyParams.load(tmp_path / "w.txt") == p
    with pytest.raises(PolicyError):
        PolicyParams.from_text("1 2 3\n")


def test_features_from_history():
    prompt = PromptSpec("x", "t", 0.3)
    f = extract_features(prompt, [3.0, 4.0], 3, 3)
    assert f.as_array() == pytest.approx([0.8, 2 / 3, 0.2, 0.3, 1.0])
    f2 = extract_features(prompt, [4.0], 2, 3)
    assert f2.score_delta == 0.0


class _FixedReviewEnv:
    """Simulated generation with reviewer scores pinned regardless of latent quality."""

    def __init__(self, config, scores):
        self.inner = SimEnv(config)
        self.scores = scores
        self.n = 0

    def generate(self, prompt, text, rng, cand_id):
        return self.inner.generate(prompt, text, rng, cand_id)

    def refine(self, prompt, current, text, rng, cand_id):
        return self.inner.refine(prompt, current, text, rng, cand_id)

    def review(self, prompt, cand, rng):
        s = self.scores[self.n % len(self.scores)]
        self.n += 1
        return ReviewerFeedback(s, s, s, "")


def test_features_ignore_latent_quality():
    params = PolicyParams(W)
    prompt = PromptSpec("x", "t", 0.5)
    scores = [3.2, 3.9, 4.1]
    runs = []
    for intercept in (0.2, 0.95):
        env = _FixedReviewEnv(SimEnvConfig(base_intercept=intercept), scores)
        traj = run_episode(SoftmaxPolicy(params), env, prompt, 3, 11)
        runs.append(traj)
    a, b = runs
    assert [t.action for t in a.turns] == [t.action for t in b.turns]
    assert [t.candidate.latent_quality for t in a.generated] != [t.candidate.latent_quality for t in b.generated]


class _BranchEnv:
    def __init__(self, refine_score, regen_score):
        self.r, self.g = refine_score, regen_score

    def generate(self, prompt, text, rng, cand_id):
        return Candidate(cand_id, None, "g")

    def refine(self, prompt, current, text, rng, cand_id):
        return Candidate(cand_id, None, "r")

    def review(self, prompt, cand, rng):
        s = self.r if cand.payload_ref == "r" else self.g
        return ReviewerFeedback(s, s, s, "")


def test_reference_dominance_and_ties(prompt):
    traj, outcomes = preference_reference(_BranchEnv(4.0, 3.0), prompt, 3, 0)
    assert outcomes == ["REFINE", "REFINE"]
    assert [t.action.choice for t in traj.turns[1:]] == [Choice.REFINE, Choice.REFINE]
    _, ties = preference_reference(_BranchEnv(3.5, 3.5), prompt, 3, 0)
    assert ties == ["TIE", "TIE"]
    _, margin = preference_reference(_BranchEnv(3.6, 3.5), prompt, 3, 0, tie_margin=0.3)
    assert margin == ["TIE", "TIE"]


def test_reference_default_env_shares():
    seed = 7
    outcomes = []
    for i, p in enumerate(synthetic_prompts(500, seed)):
        outcomes += preference_reference(SimEnv(), p, 3, seed * 1000 + i)[1]
    shares = {k: outcomes.count(k) / len(outcomes) for k in ("REFINE", "REGENERATE", "TIE")}
    assert sum(shares.values()) == pytest.approx(1.0)
    assert shares["REFINE"] > 0 and shares["REGENERATE"] > 0
