"""Canonical instances, sweeps and Monte-Carlo checks that produce CSV/SVG output."""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import plotting
from .armor_iter import ArmorConfig, behavior_cloning, run_armor
from .data_io import sample_dataset
from .errors import CapacityError, ParameterError
from .exact_game import (
    enumerate_policies,
    regret_psi,
    solve_generalized_pessimism,
    solve_relative_pessimism,
    class_returns,
)
from .mdp_core import PolicyTable, TabularMDP, default_vmax, evaluate_policy, random_mdp, random_policy
from .toy_chain import ToyChainSpec, toy_chain, toy_chain_class
from .version_space import (
    ModelClass,
    build_version_space,
    calibrate_constant,
    perturbed_class,
    trial_seeds,
    whole_class,
)

BETA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
ALPHA_GRID = (0.1, 1.0, 10.0)
# tabular toy-scale replacement for the benchmark-scale rates and step counts
TOY_ARMOR = dict(eta_fast=5e-3, eta_slow=1e-3, steps_K=20_000, optimizer="adam", warmstart="bc",
                 horizon_H=10, batch_real=32, batch_model=32, buffer_cap=10_000, eval_period=1000)
MAX_SAMPLES = 5 * 10**7


@dataclass(frozen=True, eq=False)
class Instance:
    M_true: TabularMDP
    behavior: PolicyTable
    reference: PolicyTable
    model_class: ModelClass
    label: str = ""


def toy_instance(spec: ToyChainSpec = ToyChainSpec()) -> Instance:
    M, behavior, reference = toy_chain(spec)
    return Instance(M, behavior, reference, toy_chain_class(spec), "toy-chain")


def optimal_deterministic(M: TabularMDP) -> PolicyTable:
    """Exact optimal policy by enumerating deterministic policies (small S only)."""
    Pi = enumerate_policies(M.num_states, M.num_actions)
    J = class_returns(ModelClass([M], ["m"]), Pi)[:, 0]
    return Pi.policies[int(np.argmax(J))]


def random_instance(seed: int, num_states: int = 4, num_actions: int = 2, class_size: int = 10,
                    perturb_scale: float = 0.3, gamma: float = 0.9, reference: str = "random",
                    behavior_concentration: float = 1.0) -> Instance:
    """Random true MDP with a perturbed model class around it.

    ``reference="expert"`` clones 200 transitions of the optimal policy;
    ``"random"`` draws a stochastic policy; ``"behavior"`` reuses the
    behavior policy.
    """
    rng = np.random.default_rng(seed)
    M = random_mdp(rng, num_states, num_actions, gamma)
    p = rng.dirichlet(np.full(num_actions, behavior_concentration), size=num_states)
    p = np.maximum(p, 1e-3)
    behavior = PolicyTable(p / p.sum(axis=1, keepdims=True))
    class_seed, expert_seed = (int(x) for x in rng.integers(2**31, size=2))
    if reference == "expert":
        data = sample_dataset(M, optimal_deterministic(M), 200, expert_seed)
        ref = behavior_cloning(data, num_states, num_actions)
    elif reference == "random":
        ref = random_policy(rng, num_states, num_actions)
    elif reference == "behavior":
        ref = behavior
    else:
        raise ParameterError(f"unknown reference kind {reference!r}")
    mc = perturbed_class(M, class_size, perturb_scale, class_seed)
    return Instance(M, behavior, ref, mc, f"random-{seed}")


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    mode: str
    param_name: str
    rows: list = field(default_factory=list)
    vmax: float = 1.0

    COLUMNS = ("param", "seed", "J_ref", "J_learned", "J_offlineRL_baseline", "true_in_vs")

    def params(self) -> list:
        return sorted({r["param"] for r in self.rows})

    def summary(self) -> list[dict]:
        out = []
        for p in self.params():
            rows = [r for r in self.rows if r["param"] == p and r["true_in_vs"]]
            gaps = [r["J_learned"] - r["J_ref"] for r in rows]
            out.append({
                "param": p,
                "count": len(rows),
                "median_J_learned": statistics.median(r["J_learned"] for r in rows) if rows else math.nan,
                "median_J_ref": statistics.median(r["J_ref"] for r in rows) if rows else math.nan,
                "median_J_baseline": statistics.median(r["J_offlineRL_baseline"] for r in rows) if rows else math.nan,
                "min_improvement": min(gaps) if gaps else math.nan,
            })
        return out

    def min_improvement(self) -> float:
        gaps = [r["J_learned"] - r["J_ref"] for r in self.rows if r["true_in_vs"]]
        return min(gaps) if gaps else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(self.COLUMNS)
            for r in self.rows:
                out.writerow([repr(float(r["param"])), r["seed"], repr(r["J_ref"]), repr(r["J_learned"]),
                              repr(r["J_offlineRL_baseline"]), int(r["true_in_vs"])])

    def write_svg(self, path) -> None:
        summ = self.summary()
        xs = [s["param"] for s in summ]
        logx = all(x > 0 for x in xs) and len(xs) > 1
        plotting.line_chart(
            path, xs,
            {"learned (median)": [s["median_J_learned"] for s in summ],
             "reference": [s["median_J_ref"] for s in summ],
             "offline-RL baseline": [s["median_J_baseline"] for s in summ]},
            title=f"Return on true MDP vs {self.param_name}", xlabel=self.param_name, ylabel="J",
            logx=logx,
        )


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"param": float(r["param"]), "seed": int(r["seed"]), "J_ref": float(r["J_ref"]),
             "J_learned": float(r["J_learned"]), "J_offlineRL_baseline": float(r["J_offlineRL_baseline"]),
             "true_in_vs": bool(int(r["true_in_vs"]))}
            for r in csv.DictReader(fh)
        ]


def _exact_solution_return(inst: Instance, vs, Pi, ref: PolicyTable, J) -> float:
    sol = solve_relative_pessimism(vs, Pi, ref, returns=J)
    return evaluate_policy(inst.M_true, Pi.policies[sol.policy_index]).expected_return


def rpi_sweep(mode: str, inst: Instance, grid, seeds, n: int = 1000, baseline_alpha: float = 1.0,
              armor_overrides: dict | None = None) -> SweepResult:
    """Compare the learned policy with the reference on ``M_true`` across a grid.

    ``exact_alpha`` solves the maximin game for each alpha; ``iterative_beta``
    runs the iterative solver for each beta. The baseline column is the
    exact game with the behavior-cloned policy as reference (the usual
    offline-RL setting), at the row's alpha or at ``baseline_alpha``.
    """
    grid = list(grid)
    if not grid:
        raise ParameterError("grid must be nonempty")
    if mode not in ("exact_alpha", "iterative_beta"):
        raise ParameterError(f"unknown sweep mode {mode!r}")
    M = inst.M_true
    S, A = M.num_states, M.num_actions
    if A**S > 2**16:
        raise CapacityError("instance too large for exact enumeration")
    J_ref = evaluate_policy(M, inst.reference).expected_return
    result = SweepResult(mode, "alpha" if mode == "exact_alpha" else "beta", vmax=default_vmax(M.discount))
    for seed in seeds:
        D = sample_dataset(M, inst.behavior, n, seed)
        bc = behavior_cloning(D, S, A)
        Pi = enumerate_policies(S, A, [inst.reference, bc], ["reference", "bc"])
        J = class_returns(inst.model_class, Pi)
        full = build_version_space(inst.model_class, D, 0.0)
        true_idx = inst.model_class.true_index
        for p in grid:
            if mode == "exact_alpha":
                vs = full.restrict(p)
                learned = _exact_solution_return(inst, vs, Pi, inst.reference, J)
                baseline = _exact_solution_return(inst, vs, Pi, bc, J)
            else:
                vs = full.restrict(baseline_alpha)
                cfg = ArmorConfig(**{**TOY_ARMOR, **(armor_overrides or {}), "beta": float(p), "seed": int(seed)})
                learned = evaluate_policy(M, run_armor(M, D, inst.reference, cfg).final_policy).expected_return
                baseline = _exact_solution_return(inst, vs, Pi, bc, J)
            result.rows.append({
                "param": float(p), "seed": int(seed), "J_ref": J_ref, "J_learned": learned,
                "J_offlineRL_baseline": baseline,
                "true_in_vs": true_idx is None or true_idx in vs,
            })
    return result


# ---------------------------------------------------------------- coverage


@dataclass
class CoverageTable:
    alpha: float
    constant: float
    delta: float
    labels: list
    true_index: int
    rows: list = field(default_factory=list)  # dicts: n, true_freq, median_wrong_freq, wrong_freqs

    def write_csv(self, path) -> None:
        wrong = [l for i, l in enumerate(self.labels) if i != self.true_index]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["n", "alpha", "true_in_vs_freq", "median_wrong_freq"] + [f"freq_{l}" for l in wrong])
            for r in self.rows:
                out.writerow([r["n"], repr(self.alpha), repr(r["true_freq"]), repr(r["median_wrong_freq"])]
                             + [repr(v) for v in r["wrong_freqs"]])


def coverage_trial(inst: Instance, n_grid, delta: float, trials: int, seed: int, calib_n: int = 1000,
                   calib_trials: int | None = None) -> CoverageTable:
    """Calibrate alpha at ``calib_n`` then measure version-space membership on fresh data."""
    if trials < 10.0 / delta:
        raise ParameterError(f"need at least {math.ceil(10.0 / delta)} trials for delta={delta}")
    n_grid = list(n_grid)
    if trials * max(n_grid + [calib_n]) > MAX_SAMPLES:
        raise CapacityError("trials * n exceeds the sampling budget")
    mc, M, mu = inst.model_class, inst.M_true, inst.behavior
    t_idx = mc.index_of(M)
    if t_idx is None:
        raise ParameterError("true model must belong to the class")
    c, alpha = calibrate_constant(mc, M, mu, calib_n, delta, calib_trials or trials, seed)
    table = CoverageTable(alpha, c, delta, list(mc.labels), t_idx)
    wrong = [i for i in range(len(mc)) if i != t_idx]
    for k, n in enumerate(n_grid):
        member = np.zeros((trials, len(mc)), dtype=bool)
        for t, sd in enumerate(trial_seeds(seed + 7919 * (k + 1), trials)):
            vs = build_version_space(mc, sample_dataset(M, mu, n, sd), alpha)
            member[t, list(vs.member_indices)] = True
        freqs = member.mean(axis=0)
        wrong_freqs = [float(freqs[i]) for i in wrong]
        table.rows.append({
            "n": int(n),
            "true_freq": float(freqs[t_idx]),
            "median_wrong_freq": float(np.median(wrong_freqs)) if wrong_freqs else 0.0,
            "wrong_freqs": wrong_freqs,
        })
    return table


# ---------------------------------------------------------------- separation


def brute_force_maximin(models, policies, offsets) -> tuple[int, float]:
    """Plain double loop: ``argmax_i min_j J_j(pi_i) + offsets[j]``, first index on ties."""
    best_i, best_v = -1, -math.inf
    for i, pi in enumerate(policies):
        worst = math.inf
        for M, off in zip(models, offsets):
            worst = min(worst, evaluate_policy(M, pi).expected_return + off)
        if worst > best_v:
            best_i, best_v = i, worst
    return best_i, best_v


def objective_separation_search(seeds, num_states: int = 3, num_actions: int = 2, class_size: int = 5,
                                perturb_scale: float = 0.5, gamma: float = 0.9, gap_tol: float = 1e-6) -> dict:
    """Look for a version space where worst-case return and worst-case regret pick different policies.

    A witness needs each solution to beat the other by more than ``gap_tol``
    on its own objective, and is re-checked with :func:`brute_force_maximin`.
    """
    if num_actions**num_states > 4096:
        raise CapacityError("policy enumeration too large for the search")
    tried = 0
    for seed in seeds:
        tried += 1
        inst = random_instance(int(seed), num_states, num_actions, class_size, perturb_scale, gamma)
        vs = whole_class(inst.model_class)
        Pi = enumerate_policies(num_states, num_actions)
        J = class_returns(inst.model_class, Pi)
        members = list(vs.member_indices)
        psi_reg = regret_psi(vs, Pi, returns=J)
        abs_sol = solve_generalized_pessimism(vs, Pi, {m: 0.0 for m in members}, returns=J)
        reg_sol = solve_generalized_pessimism(vs, Pi, psi_reg, returns=J)
        if abs_sol.policy_index == reg_sol.policy_index:
            continue
        reg_vals = (J[:, members] + np.array([psi_reg[m] for m in members])).min(axis=1)
        abs_vals = J[:, members].min(axis=1)
        abs_gap = abs_vals[abs_sol.policy_index] - abs_vals[reg_sol.policy_index]
        reg_gap = reg_vals[reg_sol.policy_index] - reg_vals[abs_sol.policy_index]
        if abs_gap <= gap_tol or reg_gap <= gap_tol:
            continue
        models = [inst.model_class.models[m] for m in members]
        bf_abs = brute_force_maximin(models, Pi.policies, [0.0] * len(models))
        bf_reg = brute_force_maximin(models, Pi.policies, [psi_reg[m] for m in members])
        return {
            "found": True,
            "seed": int(seed),
            "seeds_tried": tried,
            "absolute_policy": Pi.labels[abs_sol.policy_index],
            "regret_policy": Pi.labels[reg_sol.policy_index],
            "absolute_gap": float(abs_gap),
            "regret_gap": float(reg_gap),
            "verified": bf_abs[0] == abs_sol.policy_index and bf_reg[0] == reg_sol.policy_index,
            "model_class": inst.model_class.to_list(),
        }
    return {"found": False, "seeds_tried": tried}
