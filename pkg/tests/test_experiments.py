import numpy as np
import pytest

from armor.errors import CapacityError, ParameterError
from armor.experiments import (
    Instance,
    coverage_trial,
    objective_separation_search,
    random_instance,
    read_sweep_csv,
    rpi_sweep,
    toy_instance,
)
from armor.mdp_core import default_vmax, evaluate_policy
from armor.properties import iterate_rpi_random, toy_armor_sweep
from armor.toy_chain import ToyChainSpec, reference_reachable, toy_chain, toy_chain_class
from armor.version_space import ModelClass
from oracles import loop_return


def test_toy_chain_defaults():
    M, left, right = toy_chain()
    assert M.num_states == 5 and M.initial_dist[2] == 1.0
    assert loop_return(M, right) > loop_return(M, left)
    assert M.reward[0, 0] == 0.1 and M.reward[4, 1] == 1.0


def test_toy_chain_symmetric_rewards_tie():
    M, left, right = toy_chain(ToyChainSpec(reward_left=0.5, reward_right=0.5))
    assert evaluate_policy(M, left).expected_return == pytest.approx(evaluate_policy(M, right).expected_return,
                                                                     abs=1e-12)


def test_toy_chain_length_three():
    M, left, right = toy_chain(ToyChainSpec(length=3))
    assert M.transition[1, 0, 0] == 1.0 and M.transition[1, 1, 2] == 1.0
    assert reference_reachable(ToyChainSpec(length=3)) == [1, 2]


@pytest.mark.parametrize("length", [4, 1])
def test_toy_chain_rejects_bad_length(length):
    with pytest.raises(ParameterError):
        toy_chain(ToyChainSpec(length=length))


def test_toy_class_data_consistent_members():
    mc = toy_chain_class()
    M, left, _ = toy_chain()
    # every model except the two contradicting ones agrees with M on the pairs always-left visits
    for label, m in zip(mc.labels, mc.models):
        same = np.array_equal(m.transition[:3, 0], M.transition[:3, 0]) and np.array_equal(m.reward[:3, 0],
                                                                                             M.reward[:3, 0])
        assert same == (label not in ("broken-left", "left-reward"))


# ---------------------------------------------------------------- sweeps


def test_exact_sweep_on_toy_chain(tmp_path):
    res = rpi_sweep("exact_alpha", toy_instance(), [0.1, 1.0, 10.0], [0, 1, 2])
    assert len(res.rows) == 9
    assert all(r["true_in_vs"] for r in res.rows)
    assert all(r["J_learned"] >= r["J_ref"] - 1e-8 for r in res.rows)
    vmax = res.vmax
    for r in res.rows:
        for key in ("J_ref", "J_learned", "J_offlineRL_baseline"):
            assert -1e-9 <= r[key] <= vmax + 1e-9
    res.write_csv(tmp_path / "s.csv")
    res.write_svg(tmp_path / "s.svg")
    back = read_sweep_csv(tmp_path / "s.csv")
    assert back == res.rows
    assert (tmp_path / "s.svg").read_text().startswith("<svg")
    # a row's J is reproducible from its recorded seed
    again = rpi_sweep("exact_alpha", toy_instance(), [back[4]["param"]], [back[4]["seed"]])
    assert again.rows[0]["J_learned"] == back[4]["J_learned"]


def test_single_value_grid():
    assert len(rpi_sweep("exact_alpha", toy_instance(), [1.0], [0]).rows) == 1


def test_sweep_rejects():
    with pytest.raises(ParameterError):
        rpi_sweep("exact_alpha", toy_instance(), [], [0])
    with pytest.raises(ParameterError):
        rpi_sweep("bogus", toy_instance(), [1.0], [0])


def test_sweep_capacity_guard():
    inst = random_instance(0, 17, 2, 2)
    with pytest.raises(CapacityError):
        rpi_sweep("exact_alpha", inst, [1.0], [0])


def test_exact_sweep_random_instances():
    for seed in range(5):
        res = rpi_sweep("exact_alpha", random_instance(seed, 3, 2, 8), [0.5, 2.0, 8.0], [seed])
        assert all(r["J_learned"] >= r["J_ref"] - 1e-8 for r in res.rows if r["true_in_vs"])


@pytest.mark.slow
def test_iterative_sweep_on_toy_chain():
    inst = toy_instance()
    vmax = default_vmax(inst.M_true.discount)
    res = rpi_sweep("iterative_beta", inst, [0.01, 1.0, 100.0], [0], armor_overrides={"steps_K": 10_000})
    assert all(r["J_learned"] >= r["J_ref"] - 0.05 * vmax for r in res.rows)


# ---------------------------------------------------------------- coverage


def _singleton_instance():
    inst = random_instance(2, 3, 2, 1)
    return Instance(inst.M_true, inst.behavior, inst.reference, ModelClass([inst.M_true], ["true"], 0))


def test_coverage_singleton():
    table = coverage_trial(_singleton_instance(), [10, 100], 0.1, 100, seed=0, calib_n=100)
    assert all(r["true_freq"] == 1.0 for r in table.rows)


def test_coverage_empty_data():
    table = coverage_trial(random_instance(3, 3, 2, 5), [0], 0.1, 100, seed=0, calib_n=100)
    row = table.rows[0]
    assert row["true_freq"] == 1.0 and all(f == 1.0 for f in row["wrong_freqs"])


def test_coverage_guards():
    with pytest.raises(ParameterError):
        coverage_trial(random_instance(3), [10], 0.1, 50, 0)
    with pytest.raises(CapacityError):
        coverage_trial(random_instance(3), [10**6], 0.1, 100, 0)


def test_coverage_default_class_shrinks(tmp_path):
    table = coverage_trial(random_instance(0, 4, 2, 10, perturb_scale=0.1), [100, 1000], 0.1, 200, seed=1)
    assert table.rows[1]["median_wrong_freq"] < table.rows[0]["median_wrong_freq"]
    table.write_csv(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["n", "alpha", "true_in_vs_freq", "median_wrong_freq"] and len(header) == 4 + 9


# ---------------------------------------------------------------- separation


def test_separation_never_on_singleton_space():
    report = objective_separation_search(range(30), class_size=1)
    assert report == {"found": False, "seeds_tried": 30}


def test_separation_never_with_identical_members(monkeypatch):
    import armor.experiments as ex

    def clones(seed, *args, **kwargs):
        inst = random_instance(seed, 3, 2, 1)
        M = inst.M_true
        return Instance(M, inst.behavior, inst.reference, ModelClass([M] * 5, [f"c{i}" for i in range(5)], 0))

    monkeypatch.setattr(ex, "random_instance", clones)
    assert not ex.objective_separation_search(range(20))["found"]


def test_separation_search_500_seeds():
    report = objective_separation_search(range(500))
    assert report["found"]
    assert report["verified"]
    assert report["absolute_policy"] != report["regret_policy"]
    assert report["absolute_gap"] > 1e-6 and report["regret_gap"] > 1e-6
    assert len(report["model_class"]) == 5


# ---------------------------------------------------------------- iterative solver, random instances


@pytest.mark.slow
def test_iterate_rpi_on_random_instances():
    res = iterate_rpi_random(instances=20, betas=(0.1, 1.0, 10.0), steps=5000)
    assert res.passed, res.line()


def test_toy_sweep_helper_reports_all_betas():
    out = toy_armor_sweep((0.1, 10.0), steps=200)
    assert set(out) == {0.1, 10.0}
    assert all(0.0 <= r["p_right_start"] <= 1.0 for r in out.values())
