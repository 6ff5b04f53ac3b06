import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from armor.data_io import Dataset, Transition, fit_loss, sample_dataset
from armor.errors import ParameterError
from armor.mdp_core import PolicyTable, TabularMDP, random_mdp, random_policy
from armor.version_space import (
    CALIBRATION_GRID,
    ModelClass,
    build_version_space,
    calibrate_alpha,
    calibrate_constant,
    load_class,
    mle_fit,
    perturbed_class,
    save_class,
    trial_seeds,
    true_model_gaps,
)


@pytest.fixture
def instance():
    rng = np.random.default_rng(31)
    M = random_mdp(rng, 3, 2, 0.9)
    mu = random_policy(rng, 3, 2)
    return M, mu, perturbed_class(M, 6, 0.3, seed=5)


def test_class_round_trip(tmp_path, instance):
    M, _, mc = instance
    save_class(mc, tmp_path / "c.json")
    back = load_class(tmp_path / "c.json", true_model=M)
    assert back.labels == mc.labels and back.true_index == 0 and back.realizable
    assert all(a.same_as(b) for a, b in zip(back.models, mc.models))


def test_empty_class_rejected():
    with pytest.raises(ParameterError):
        ModelClass([], [])


def test_mle_empty_dataset_tie_breaks_to_zero(instance):
    _, _, mc = instance
    assert mle_fit(mc, Dataset.from_transitions([])) == (0, 0.0)


def test_mle_true_model_attains_minimum_on_deterministic_data(two_state_chain):
    P = np.array(two_state_chain.transition)
    P[0, 0] = [0.3, 0.7]
    mc = ModelClass([two_state_chain.replace(transition=P), two_state_chain], ["soft", "true"])
    D = sample_dataset(two_state_chain, PolicyTable.uniform(2, 2), 100, 0)
    idx, loss = mle_fit(mc, D)
    assert loss == pytest.approx(fit_loss(D, two_state_chain))


def test_mle_handmade_two_models():
    P1 = np.zeros((2, 1, 2))
    P1[:, 0] = [[0.9, 0.1], [0.5, 0.5]]
    P2 = np.zeros((2, 1, 2))
    P2[:, 0] = [[0.2, 0.8], [0.5, 0.5]]
    R = np.array([[0.5], [0.5]])
    m1 = TabularMDP(P1, R, 0.5, np.array([1.0, 0.0]))
    m2 = TabularMDP(P2, R, 0.5, np.array([1.0, 0.0]))
    D = Dataset.from_transitions([Transition(0, 0, 0.5, 1)] * 3 + [Transition(0, 0, 0.5, 0), Transition(1, 0, 0.5, 0)])
    l1 = -3 * math.log(0.1) - math.log(0.9) - math.log(0.5)
    l2 = -3 * math.log(0.8) - math.log(0.2) - math.log(0.5)
    idx, loss = mle_fit(ModelClass([m1, m2], ["a", "b"]), D)
    assert idx == int(np.argmin([l1, l2])) == 1
    assert loss == pytest.approx(l2, abs=1e-12)


def test_alpha_zero_and_infinity(instance):
    M, mu, mc = instance
    D = sample_dataset(M, mu, 200, 1)
    losses = [fit_loss(D, m) for m in mc.models]
    vs0 = build_version_space(mc, D, 0.0)
    assert list(vs0.member_indices) == [i for i, l in enumerate(losses) if l == min(losses)]
    assert len(build_version_space(mc, D, math.inf)) == len(mc)
    with pytest.raises(ParameterError):
        build_version_space(mc, D, -0.1)


def test_nested_members_independent_scan(instance):
    M, mu, mc = instance
    D = sample_dataset(M, mu, 300, 4)
    losses = [fit_loss(D, m) for m in mc.models]
    lo = min(losses)
    previous = set()
    for alpha in (0.1, 1.0, 10.0):
        members = set(build_version_space(mc, D, alpha).member_indices)
        assert members == {i for i, l in enumerate(losses) if l - lo <= alpha}
        assert previous <= members
        previous = members


@given(st.integers(0, 10**6), st.floats(0, 50), st.floats(0, 50))
@settings(max_examples=40, deadline=None)
def test_monotone_and_mle_member(seed, a1, a2):
    rng = np.random.default_rng(seed)
    M = random_mdp(rng, 3, 2)
    mc = perturbed_class(M, 5, 0.4, seed)
    D = sample_dataset(M, random_policy(rng, 3, 2), 100, seed)
    lo, hi = sorted((a1, a2))
    small, big = build_version_space(mc, D, lo), build_version_space(mc, D, hi)
    assert set(small.member_indices) <= set(big.member_indices)
    assert mle_fit(mc, D)[0] in small


def test_calibration_singleton(instance):
    M, mu, _ = instance
    mc = ModelClass([M], ["true"])
    c, alpha = calibrate_constant(mc, M, mu, 200, 0.1, 100, 0)
    assert c == CALIBRATION_GRID[0]
    assert alpha == pytest.approx(CALIBRATION_GRID[0] * math.log(1 / 0.1))


def test_calibration_requires_enough_trials(instance):
    M, mu, mc = instance
    with pytest.raises(ParameterError):
        calibrate_alpha(mc, M, mu, 100, 0.1, 99, 0)


def test_calibration_rejects_foreign_truth(instance):
    M, mu, mc = instance
    other = random_mdp(np.random.default_rng(0), 3, 2, 0.9)
    with pytest.raises(ParameterError):
        calibrate_alpha(mc, other.replace(initial_dist=M.initial_dist), mu, 100, 0.1, 100, 0)


def test_duplicate_true_model_leaves_constant_unchanged(instance):
    M, mu, mc = instance
    dup = ModelClass(list(mc.models) + [M, M], list(mc.labels) + ["copy1", "copy2"], true_index=0)
    seeds = trial_seeds(3, 100)
    g1, _ = true_model_gaps(mc, 0, M, mu, 300, seeds)
    g2, _ = true_model_gaps(dup, 0, M, mu, 300, seeds)
    assert np.array_equal(g1, g2)
    assert calibrate_constant(mc, M, mu, 300, 0.1, 100, 3)[0] == calibrate_constant(dup, M, mu, 300, 0.1, 100, 3)[0]


def test_calibration_decreases_with_n():
    """Two clearly different models, delta = 0.5, 200 trials: alpha is non-increasing in n."""
    P = np.zeros((2, 1, 2))
    P[:, 0] = [[0.8, 0.2], [0.3, 0.7]]
    M = TabularMDP(P, np.array([[0.2], [0.7]]), 0.8, np.array([0.5, 0.5]))
    mc = ModelClass([M, M.replace(transition=P[:, :, ::-1].copy())], ["true", "flip"], true_index=0)
    mu = PolicyTable.uniform(2, 1)
    alphas = [calibrate_alpha(mc, M, mu, n, 0.5, 200, 11) for n in (10, 100, 1000)]
    assert alphas[0] >= alphas[1] >= alphas[2]
    assert alphas[2] == pytest.approx(CALIBRATION_GRID[0] * math.log(2 / 0.5))


def test_fit_gap_concentration(instance):
    """Over 200 fresh datasets at n=1000 the true model's gap stays below alpha in >= 1-delta of them."""
    M, mu, mc = instance
    alpha = calibrate_alpha(mc, M, mu, 1000, 0.1, 200, seed=21)
    gaps, _ = true_model_gaps(mc, 0, M, mu, 1000, trial_seeds(22, 200))
    assert np.mean(gaps <= alpha) >= 0.9 - 0.05


def test_wrong_model_shrinks():
    rng = np.random.default_rng(8)
    M = random_mdp(rng, 3, 2, 0.9)
    mu = random_policy(rng, 3, 2)
    mc = perturbed_class(M, 4, 0.2, 9)
    freq = []
    for n in (100, 1000, 10_000):
        _, losses = true_model_gaps(mc, 0, M, mu, n, trial_seeds(n, 100))
        member = losses - losses.min(axis=1, keepdims=True) <= 1.0
        freq.append(member[:, 1:].mean())
    assert freq[0] >= freq[1] >= freq[2] and freq[2] < freq[0]
