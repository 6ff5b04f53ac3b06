import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from armor.data_io import sample_dataset
from armor.errors import CapacityError, ParameterError
from armor.exact_game import (
    PolicySet,
    class_returns,
    concentrability,
    enumerate_policies,
    is_fixed_point,
    optimal_policy_index,
    optimistic_solution,
    performance_bound,
    regret_psi,
    relative_psi,
    solve_generalized_pessimism,
    solve_relative_pessimism,
    worst_case_model,
)
from armor.experiments import random_instance
from armor.mdp_core import PolicyTable, TabularMDP, evaluate_policy, occupancy, random_policy
from armor.toy_chain import ToyChainSpec, toy_chain, toy_chain_class
from armor.version_space import ModelClass, build_version_space, whole_class
from oracles import loop_return


def small_space(seed, size=4, S=3, alpha=math.inf):
    inst = random_instance(seed, S, 2, size, perturb_scale=0.4)
    D = sample_dataset(inst.M_true, inst.behavior, 100, seed)
    return inst, build_version_space(inst.model_class, D, alpha)


def test_enumeration_counts(rng):
    assert len(enumerate_policies(1, 2)) == 2
    assert len(enumerate_policies(2, 2)) == 4
    ref = random_policy(rng, 2, 2)
    Pi = enumerate_policies(2, 2, [ref], ["ref"])
    assert len(Pi) == 5 and Pi.policies[-1] is ref and Pi.labels[-1] == "ref"
    with pytest.raises(CapacityError):
        enumerate_policies(21, 2)


def test_worst_case_singleton_and_self():
    inst, vs = small_space(1)
    pi, ref = inst.behavior, inst.reference
    single = build_version_space(ModelClass([inst.M_true], ["t"]), sample_dataset(inst.M_true, pi, 10, 0), 0.0)
    idx, val = worst_case_model(single, pi, ref)
    assert idx == 0
    assert val == pytest.approx(evaluate_policy(inst.M_true, pi).expected_return
                                - evaluate_policy(inst.M_true, ref).expected_return, abs=1e-12)
    assert worst_case_model(vs, ref, ref) == (0, 0.0)


def test_worst_case_on_toy_chain_exhaustive_scan():
    M, left, right = toy_chain()
    mc = toy_chain_class()
    vs = whole_class(mc)
    idx, val = worst_case_model(vs, left, right)
    diffs = [loop_return(m, left) - loop_return(m, right) for m in mc.models]
    assert idx == int(np.argmin(diffs))
    assert val == pytest.approx(min(diffs), abs=1e-9)


def test_single_candidate_returns_reference():
    inst, vs = small_space(2)
    sol = solve_relative_pessimism(vs, PolicySet((inst.reference,), ("ref",)), inst.reference)
    assert sol.policy_index == 0 and sol.value == 0.0


def test_singleton_space_gives_optimal_policy():
    inst, _ = small_space(3)
    mc = ModelClass([inst.M_true], ["t"])
    vs = whole_class(mc)
    Pi = enumerate_policies(3, 2, [inst.reference], ["ref"])
    sol = solve_relative_pessimism(vs, Pi, inst.reference)
    J = [loop_return(inst.M_true, p) for p in Pi.policies]
    assert J[sol.policy_index] == pytest.approx(max(J), abs=1e-9)


def test_warns_when_reference_missing():
    inst, vs = small_space(4)
    with pytest.warns(UserWarning):
        solve_relative_pessimism(vs, enumerate_policies(3, 2), inst.reference)


def test_empty_policy_set_rejected():
    with pytest.raises(ParameterError):
        PolicySet((), ())


def test_toy_chain_mimics_reference():
    spec = ToyChainSpec()
    M, left, right = toy_chain(spec)
    D = sample_dataset(M, left, 500, 0)
    vs = build_version_space(toy_chain_class(spec), D, 1.0)
    Pi = enumerate_policies(5, 2, [right], ["ref"])
    sol = solve_relative_pessimism(vs, Pi, right)
    acts = Pi.policies[sol.policy_index].greedy_actions()
    assert list(acts[spec.center:]) == [1] * (spec.length - spec.center)
    assert loop_return(M, Pi.policies[sol.policy_index]) == pytest.approx(loop_return(M, right), abs=1e-8)


def test_relative_psi_equals_relative_solver():
    inst, vs = small_space(5, alpha=2.0)
    Pi = enumerate_policies(3, 2, [inst.reference], ["ref"])
    a = solve_relative_pessimism(vs, Pi, inst.reference)
    b = solve_generalized_pessimism(vs, Pi, relative_psi(vs, Pi, inst.reference))
    assert a.policy_index == b.policy_index
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_absolute_on_singleton_is_plain_max():
    inst, vs = small_space(6)
    Pi = enumerate_policies(3, 2)
    j = vs.member_indices[-1]
    sol = solve_generalized_pessimism(vs, Pi, {j: 0.0}, subset=[j])
    J = [loop_return(vs.class_ref.models[j], p) for p in Pi.policies]
    assert sol.policy_index == int(np.argmax(J))


def test_regret_matches_brute_force_three_members():
    inst, vs = small_space(7, size=3)
    Pi = enumerate_policies(3, 2)
    models = vs.members
    best = [max(loop_return(m, p) for p in Pi.policies) for m in models]
    brute = [min(loop_return(m, p) - b for m, b in zip(models, best)) for p in Pi.policies]
    sol = solve_generalized_pessimism(vs, Pi, regret_psi(vs, Pi))
    assert sol.policy_index == int(np.argmax(brute))
    assert sol.value == pytest.approx(max(brute), abs=1e-9)


def test_psi_must_cover_members():
    inst, vs = small_space(8)
    with pytest.raises(ParameterError):
        solve_generalized_pessimism(vs, enumerate_policies(3, 2), {0: 0.0})


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_value_nonnegative_and_monotone(seed):
    inst = random_instance(seed, 3, 2, 6, perturb_scale=0.3)
    D = sample_dataset(inst.M_true, inst.behavior, 150, seed)
    Pi = enumerate_policies(3, 2, [inst.reference], ["ref"])
    J = class_returns(inst.model_class, Pi)
    values = []
    for alpha in (0.0, 0.5, 2.0, 8.0, math.inf):
        vs = build_version_space(inst.model_class, D, alpha)
        sol = solve_relative_pessimism(vs, Pi, inst.reference, returns=J)
        assert sol.value >= -1e-12
        assert sol.value == pytest.approx(sol.per_policy_values.max(), abs=0)
        values.append(sol.value)
        if inst.model_class.true_index in vs:
            assert J[sol.policy_index, 0] >= J[-1, 0] - 1e-8
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- fixed points


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_corollary_constructions_are_fixed(seed):
    inst, vs = small_space(seed, size=5, alpha=3.0)
    Pi = enumerate_policies(3, 2, [inst.reference], ["ref"])
    members = list(vs.member_indices)
    cands = [
        solve_generalized_pessimism(vs, Pi, {m: 0.0 for m in members}).policy_index,
        solve_relative_pessimism(vs, Pi, inst.reference).policy_index,
        solve_generalized_pessimism(vs, Pi, regret_psi(vs, Pi)).policy_index,
        optimal_policy_index(vs, Pi, members[-1]),
        optimistic_solution(vs, Pi).policy_index,
    ]
    for i in cands:
        assert is_fixed_point(vs, Pi, Pi.policies[i])[0]


def test_dominated_policy_is_not_fixed():
    # two states, action 1 pays more everywhere in both models
    P = np.zeros((2, 2, 2))
    P[:, :, 0] = 0.5
    P[:, :, 1] = 0.5
    R1 = np.array([[0.1, 0.6], [0.2, 0.9]])
    R2 = np.array([[0.0, 0.3], [0.4, 0.5]])
    d0 = np.array([0.5, 0.5])
    mc = ModelClass([TabularMDP(P, R1, 0.9, d0), TabularMDP(P, R2, 0.9, d0)], ["a", "b"])
    vs = whole_class(mc)
    Pi = enumerate_policies(2, 2)
    J = class_returns(mc, Pi)
    dominated = Pi.index_of(PolicyTable.deterministic([0, 0], 2))
    assert np.all(J[Pi.index_of(PolicyTable.deterministic([1, 1], 2))] > J[dominated])
    fixed, value, witness = is_fixed_point(vs, Pi, Pi.policies[dominated])
    assert not fixed and value > 0
    assert np.all(J[witness] > J[dominated])


def test_fixed_point_appends_missing_policy(rng):
    inst, vs = small_space(9)
    pi = random_policy(rng, 3, 2)
    fixed, value, witness = is_fixed_point(vs, enumerate_policies(3, 2), pi)
    assert value >= -1e-12


# ---------------------------------------------------------------- concentrability and bound


def test_concentrability_behavior_is_one():
    inst, _ = small_space(10, size=6)
    mu_occ = occupancy(inst.M_true, inst.behavior)
    res = concentrability(inst.model_class, inst.M_true, inst.behavior, mu_occ)
    assert res.value == pytest.approx(1.0, abs=1e-12)


def test_concentrability_singleton_convention():
    inst, _ = small_space(11)
    res = concentrability(ModelClass([inst.M_true], ["t"]), inst.M_true, inst.reference,
                          occupancy(inst.M_true, inst.behavior))
    assert res.value == 1.0 and res.witness_model_index == -1


def test_concentrability_unsupported_is_infinite(two_state_chain):
    M = two_state_chain
    mu = PolicyTable.deterministic([0, 0], 2)
    R = np.array(M.reward)
    R[0, 1] = 0.5  # differs only where mu never acts
    mc = ModelClass([M, M.replace(reward=R)], ["t", "x"])
    res = concentrability(mc, M, PolicyTable.deterministic([1, 0], 2), occupancy(M, mu))
    assert res.value == math.inf and res.witness_model_index == 1


def test_concentrability_ratio_by_hand(two_state_chain):
    M = two_state_chain
    mu = PolicyTable.uniform(2, 2)
    R = np.array(M.reward)
    R[0, 1] = 0.5
    mc = ModelClass([M, M.replace(reward=R)], ["t", "x"])
    pi = PolicyTable.deterministic([1, 0], 2)
    d_pi, d_mu = occupancy(M, pi).dist, occupancy(M, mu).dist
    assert concentrability(mc, M, pi, occupancy(M, mu)).value == pytest.approx(d_pi[0, 1] / d_mu[0, 1], rel=1e-12)


def test_bound_formula():
    b = performance_bound(2.0, 1.0, 10.0, 0.9, 100, 10, 0.1, c_abs=0.5)
    assert b == pytest.approx(0.5 * (math.sqrt(2) + 1) * 100 * math.sqrt(math.log(100) / 100))
    assert performance_bound(2.0, 1.0, 10.0, 0.9, 200, 10, 0.1) == pytest.approx(
        performance_bound(2.0, 1.0, 10.0, 0.9, 100, 10, 0.1) / math.sqrt(2))
    assert performance_bound(0.0, 0.0, 10.0, 0.9, 100, 10, 0.1) == 0.0
    ratio = performance_bound(1, 1, 10, 0.9, 50, 100, 0.1) / performance_bound(1, 1, 10, 0.9, 50, 10, 0.1)
    assert ratio == pytest.approx(math.sqrt(math.log(1000) / math.log(100)))


@pytest.mark.parametrize("kwargs", [{"n": 0}, {"delta": 0.0}, {"delta": 1.0}, {"class_size": 0}, {"gamma": 1.0}])
def test_bound_rejects(kwargs):
    args = dict(c_comp=1.0, c_ref=1.0, vmax=10.0, gamma=0.9, n=10, class_size=5, delta=0.1)
    args.update(kwargs)
    with pytest.raises(ParameterError):
        performance_bound(**args)
