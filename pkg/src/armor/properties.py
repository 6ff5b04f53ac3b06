"""Invariant checks run by ``armor check-properties`` and the acceptance tests.

Each check returns a :class:`CheckResult`; sizes are arguments so the same
code runs at a quick scale from the CLI and at full scale in the tests.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .armor_iter import ArmorConfig, run_armor, mean_tv_on_buffer
from .data_io import sample_dataset
from .exact_game import (
    class_returns,
    concentrability,
    enumerate_policies,
    is_fixed_point,
    optimal_policy_index,
    optimistic_solution,
    performance_bound,
    regret_psi,
    solve_generalized_pessimism,
    solve_relative_pessimism,
)
from .experiments import BETA_GRID, TOY_ARMOR, brute_force_maximin, random_instance, toy_instance
from .mdp_core import default_vmax, evaluate_policy, occupancy, random_mdp, random_policy, simulation_gap
from .toy_chain import RIGHT, ToyChainSpec, reference_reachable
from .version_space import build_version_space, calibrate_constant, perturbed_class, trial_seeds

RPI_ALPHAS = (0.25, 1.0, 4.0, 16.0, 64.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        extras = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {extras}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list) and len(v) > 6:
        return f"[{len(v)} items]"
    return v


def _small_instance(seed: int, max_states: int = 4, max_class: int = 20, n: int = 200):
    """Random instance with 2..max_states states, 2 actions and a stochastic reference."""
    rng = np.random.default_rng([seed, 17])
    S = int(rng.integers(2, max_states + 1))
    size = int(rng.integers(2, max_class + 1))
    inst = random_instance(seed, S, 2, size, perturb_scale=float(rng.uniform(0.05, 0.5)))
    D = sample_dataset(inst.M_true, inst.behavior, n, seed)
    return inst, D


def toy_mimicry(spec: ToyChainSpec = ToyChainSpec(), n: int = 1000, seed: int = 0, alpha: float = 1.0) -> CheckResult:
    inst = toy_instance(spec)
    D = sample_dataset(inst.M_true, inst.behavior, n, seed)
    vs = build_version_space(inst.model_class, D, alpha)
    Pi = enumerate_policies(spec.length, 2, [inst.reference], ["reference"])
    sol = solve_relative_pessimism(vs, Pi, inst.reference)
    pi_hat = Pi.policies[sol.policy_index]
    acts = pi_hat.greedy_actions()
    states = reference_reachable(spec)
    match = pi_hat.is_deterministic and all(int(acts[s]) == RIGHT for s in states)
    J_hat = evaluate_policy(inst.M_true, pi_hat).expected_return
    J_ref = evaluate_policy(inst.M_true, inst.reference).expected_return
    return CheckResult("toy-chain mimicry", bool(match and abs(J_hat - J_ref) <= 1e-8),
                       {"policy": Pi.labels[sol.policy_index], "J_hat": J_hat, "J_ref": J_ref,
                        "members": len(vs)})


def rpi_exact(instances: int = 200, seed: int = 0, alphas=RPI_ALPHAS, tol: float = 1e-8) -> CheckResult:
    passed_cases, no_valid, worst = 0, 0, math.inf
    for k in range(instances):
        inst, D = _small_instance(seed * 100_003 + k)
        S = inst.M_true.num_states
        Pi = enumerate_policies(S, 2, [inst.reference], ["reference"])
        J = class_returns(inst.model_class, Pi)
        J_true = J[:, inst.model_class.true_index]
        J_ref = J_true[-1]
        full = build_version_space(inst.model_class, D, 0.0)
        ok, valid = True, 0
        for a in alphas:
            vs = full.restrict(a)
            if inst.model_class.true_index not in vs:
                continue
            valid += 1
            sol = solve_relative_pessimism(vs, Pi, inst.reference, returns=J)
            gap = J_true[sol.policy_index] - J_ref
            worst = min(worst, gap)
            ok &= gap >= -tol
        no_valid += valid == 0
        passed_cases += ok and valid > 0
    return CheckResult("RPI exactness", passed_cases == instances,
                       {"passed": passed_cases, "instances": instances, "no_valid_alpha": no_valid,
                        "worst_gap": worst})


def oracle_equivalence(instances: int = 100, seed: int = 1, tol: float = 1e-12) -> CheckResult:
    """Solver outputs vs. a per-pair evaluation double loop."""
    mismatches, max_err = 0, 0.0
    for k in range(instances):
        inst, D = _small_instance(seed * 100_003 + k, max_class=8)
        mc = inst.model_class
        S = inst.M_true.num_states
        Pi = enumerate_policies(S, 2, [inst.reference], ["reference"])
        vs = build_version_space(mc, D, float(np.random.default_rng(k).choice([0.5, 2.0, 1e9])))
        members = list(vs.member_indices)
        models = [mc.models[m] for m in members]
        sol = solve_relative_pessimism(vs, Pi, inst.reference)
        offsets = [-evaluate_policy(M, inst.reference).expected_return for M in models]
        bi, bv = brute_force_maximin(models, Pi.policies, offsets)
        psi_vals = np.random.default_rng([k, 3]).uniform(-5, 5, len(mc))
        gsol = solve_generalized_pessimism(vs, Pi, {m: float(psi_vals[m]) for m in members})
        gi, gv = brute_force_maximin(models, Pi.policies, [float(psi_vals[m]) for m in members])
        err = max(abs(sol.value - bv), abs(gsol.value - gv))
        max_err = max(max_err, err)
        if sol.policy_index != bi or gsol.policy_index != gi or err > tol:
            mismatches += 1
    return CheckResult("oracle equivalence", mismatches == 0,
                       {"mismatches": mismatches, "instances": instances, "max_value_err": max_err})


def fixed_points(instances: int = 100, seed: int = 2, tol: float = 1e-9) -> CheckResult:
    """Absolute, relative, regret and single-model solutions are all fixed points."""
    passed = total = 0
    failures = []
    for k in range(instances):
        inst, D = _small_instance(seed * 100_003 + k, max_class=10)
        S = inst.M_true.num_states
        Pi = enumerate_policies(S, 2, [inst.reference], ["reference"])
        J = class_returns(inst.model_class, Pi)
        vs = build_version_space(inst.model_class, D, 4.0)
        members = list(vs.member_indices)
        rng = np.random.default_rng([k, 5])
        ref_idx = int(rng.integers(len(Pi)))
        chosen = {
            "absolute": solve_generalized_pessimism(vs, Pi, {m: 0.0 for m in members}, returns=J).policy_index,
            "relative": solve_relative_pessimism(vs, Pi, Pi.policies[ref_idx], returns=J).policy_index,
            "regret": solve_generalized_pessimism(vs, Pi, regret_psi(vs, Pi, returns=J), returns=J).policy_index,
            "single-model": optimal_policy_index(vs, Pi, members[int(rng.integers(len(members)))], returns=J),
        }
        for name, idx in chosen.items():
            ok, value, _ = is_fixed_point(vs, Pi, Pi.policies[idx], tol=tol, returns=J)
            total += 1
            passed += ok
            if not ok:
                failures.append(f"{k}:{name}:{value:.3g}")
        # the optimistic policy is one particular single-model optimum
        opt = optimistic_solution(vs, Pi, returns=J).policy_index
        if not is_fixed_point(vs, Pi, Pi.policies[opt], tol=tol, returns=J)[0]:
            failures.append(f"{k}:optimistic")
    return CheckResult("fixed-point corollary", passed == total and not failures,
                       {"passed": passed, "checks": total, "failures": failures[:5]})


def simulation_lemma(triples: int = 1000, seed: int = 3, slack: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations, min_margin = 0, math.inf
    for _ in range(triples):
        S, A = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        gamma = float(rng.uniform(0.0, 0.99))
        M = random_mdp(rng, S, A, gamma)
        M2 = random_mdp(rng, S, A, gamma).replace(initial_dist=M.initial_dist)
        if rng.random() < 0.3:  # near-identical pair
            M2 = perturbed_class(M, 2, float(rng.uniform(0, 0.05)), int(rng.integers(2**31))).models[1]
        gap, bound = simulation_gap(M, M2, random_policy(rng, S, A))
        min_margin = min(min_margin, bound - gap)
        violations += gap > bound + slack
    return CheckResult("simulation lemma", violations == 0,
                       {"violations": violations, "triples": triples, "min_margin": min_margin})


def coverage_instance(seed: int = 0):
    return random_instance(seed, num_states=4, num_actions=2, class_size=10, perturb_scale=0.1)


def version_space_coverage(trials: int = 500, delta: float = 0.1, calib_n: int = 1000,
                           n_grid=(100, 1000, 10_000), seed: int = 4, instance_seed: int = 0) -> CheckResult:
    from .experiments import coverage_trial

    inst = coverage_instance(instance_seed)
    table = coverage_trial(inst, list(n_grid), delta, trials, seed, calib_n=calib_n)
    by_n = {r["n"]: r for r in table.rows}
    true_freq = by_n[calib_n]["true_freq"] if calib_n in by_n else math.nan
    wrong = [by_n[n]["median_wrong_freq"] for n in n_grid]
    shrinks = all(b < a for a, b in zip(wrong, wrong[1:]) if a > 0) and wrong[-1] < wrong[0]
    return CheckResult("version-space coverage", bool(true_freq >= 0.85 and shrinks),
                       {"alpha": table.alpha, "true_freq": true_freq, "median_wrong": wrong})


def _trend_observations(first_seed: int, seeds: int, n_grid, delta: float, calib_trials: int):
    """Per-n suboptimalities vs. the best covered comparator, and the bound with ``c_abs = 1``."""
    subopt = {n: [] for n in n_grid}
    unit = {n: [] for n in n_grid}
    for k in range(first_seed, first_seed + seeds):
        inst = random_instance(k, 4, 2, 10, perturb_scale=0.1, reference="behavior")
        M, mc, mu = inst.M_true, inst.model_class, inst.behavior
        vmax = default_vmax(M.discount)
        Pi = enumerate_policies(M.num_states, 2, [mu], ["behavior"])
        J = class_returns(mc, Pi)
        J_true = J[:, mc.true_index]
        mu_occ = occupancy(M, mu)
        conc = [concentrability(mc, M, p, mu_occ).value for p in Pi.policies]
        covered = [i for i, c in enumerate(conc) if math.isfinite(c)]
        comp = max(covered, key=lambda i: J_true[i])
        c_ref = conc[len(Pi) - 1]
        _, alpha = calibrate_constant(mc, M, mu, 1000, delta, calib_trials, k)
        for j, n in enumerate(n_grid):
            D = sample_dataset(M, mu, n, trial_seeds(k, j + 1)[j])
            vs = build_version_space(mc, D, alpha)
            sol = solve_relative_pessimism(vs, Pi, mu, returns=J)
            subopt[n].append(float(J_true[comp] - J_true[sol.policy_index]))
            unit[n].append(performance_bound(conc[comp], c_ref, vmax, M.discount, n, len(mc), delta))
    return subopt, unit


def performance_trend(seeds: int = 20, n_grid=(100, 1000, 10_000), delta: float = 0.1, seed: int = 5,
                      calib_trials: int = 100) -> CheckResult:
    """Suboptimality against the best covered comparator shrinks with n and sits under the bound.

    One ``c_abs`` is shared by every seed and every n: the smallest constant
    for which the bound covers all observations. The check requires the
    median trend and that this constant is at most 1.
    """
    subopt, unit = _trend_observations(seed * 100_000, seeds, n_grid, delta, calib_trials)
    medians = [statistics.median(subopt[n]) for n in n_grid]
    trend = all(b <= a for a, b in zip(medians, medians[1:]))
    c_abs = max(s / u for n in n_grid for s, u in zip(subopt[n], unit[n]))
    dominated = all(s <= c_abs * u + 1e-12 for n in n_grid for s, u in zip(subopt[n], unit[n]))
    return CheckResult("absolute-performance trend", bool(trend and dominated and c_abs <= 1.0),
                       {"median_subopt": medians, "mean_subopt": [statistics.fmean(subopt[n]) for n in n_grid],
                        "c_abs": c_abs, "dominated": dominated})


def gradient_check(configs: int = 50, seed: int = 6, h: float = 1e-5, tol: float = 1e-4) -> CheckResult:
    from .gradcheck import worst_relative_error

    worst = max(worst_relative_error(np.random.default_rng([seed, k]), h) for k in range(configs))
    return CheckResult("finite-difference gradients", worst <= tol, {"configs": configs, "worst_rel_err": worst})


def toy_armor_sweep(betas=BETA_GRID, steps: int = TOY_ARMOR["steps_K"], n: int = 1000, seed: int = 0,
                    lam: float = 1.0) -> dict:
    inst = toy_instance()
    M = inst.M_true
    D = sample_dataset(M, inst.behavior, n, seed)
    start = int(np.argmax(M.initial_dist))
    out = {}
    for beta in betas:
        cfg = ArmorConfig(**{**TOY_ARMOR, "steps_K": steps, "beta": float(beta), "lam": lam, "seed": seed})
        res = run_armor(M, D, inst.reference, cfg)
        out[beta] = {
            "J": evaluate_policy(M, res.final_policy).expected_return,
            "p_right_start": float(res.final_policy.probs[start, RIGHT]),
            "buffer_tv": mean_tv_on_buffer(res.state),
        }
    return out


def armor_fidelity(steps: int = TOY_ARMOR["steps_K"], betas=BETA_GRID, configs: int = 50) -> CheckResult:
    grad = gradient_check(configs)
    inst = toy_instance()
    J_ref = evaluate_policy(inst.M_true, inst.reference).expected_return
    vmax = default_vmax(inst.M_true.discount)
    sweep = toy_armor_sweep(betas, steps)
    reaches = any(r["p_right_start"] >= 0.9 for r in sweep.values())
    rpi = all(r["J"] >= J_ref - 0.05 * vmax for r in sweep.values())
    return CheckResult("iterative solver fidelity", bool(grad.passed and reaches and rpi),
                       {"worst_rel_err": grad.detail["worst_rel_err"],
                        "p_right": [round(r["p_right_start"], 6) for r in sweep.values()],
                        "J": [round(r["J"], 6) for r in sweep.values()], "J_ref": J_ref})


def imitation_case(steps: int = TOY_ARMOR["steps_K"]) -> CheckResult:
    res = toy_armor_sweep((1.0,), steps, lam=0.0)[1.0]
    return CheckResult("imitation special case", res["buffer_tv"] <= 0.1, {"buffer_tv": res["buffer_tv"]})


QUICK = {
    "toy_mimicry": {},
    "rpi_exact": {"instances": 20},
    "oracle_equivalence": {"instances": 10},
    "fixed_points": {"instances": 10},
    "simulation_lemma": {"triples": 100},
    "version_space_coverage": {"trials": 100, "n_grid": (100, 1000, 10_000)},
    "performance_trend": {"seeds": 5},
    "armor_fidelity": {"steps": 20_000, "betas": (0.1, 1.0, 10.0), "configs": 10},
    "imitation_case": {},
    "iterate_rpi_random": {"instances": 5, "steps": 3000},
}
FULL = {name: {} for name in QUICK}


def run_suite(scale: str = "quick") -> list[CheckResult]:
    table = QUICK if scale == "quick" else FULL
    return [globals()[name](**kwargs) for name, kwargs in table.items()]


def iterate_rpi_random(instances: int = 20, betas=(0.1, 1.0, 10.0), steps: int = 5000, n: int = 1000,
                       seed: int = 7) -> CheckResult:
    """Final iterate never falls more than 5% of Vmax below an expert-cloned reference."""
    worst, failures = math.inf, 0
    for k in range(instances):
        inst = random_instance(seed * 1000 + k, 4, 2, 10, reference="expert")
        M = inst.M_true
        D = sample_dataset(M, inst.behavior, n, k)
        J_ref = evaluate_policy(M, inst.reference).expected_return
        vmax = default_vmax(M.discount)
        for beta in betas:
            cfg = ArmorConfig(**{**TOY_ARMOR, "steps_K": steps, "beta": float(beta), "seed": k})
            J = evaluate_policy(M, run_armor(M, D, inst.reference, cfg).final_policy).expected_return
            gap = (J - J_ref) / vmax
            worst = min(worst, gap)
            failures += gap < -0.05
    return CheckResult("iterate-level RPI on random instances", failures == 0,
                       {"instances": instances, "failures": failures, "worst_gap_over_vmax": worst})
