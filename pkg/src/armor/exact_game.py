"""Exact maximin games over a finite policy set and a finite version space.

All argmax/argmin calls break ties toward the lowest index (numpy's
convention), so solutions are deterministic.
"""
from __future__ import annotations

import itertools
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DimensionError, ParameterError
from .mdp_core import (
    Occupancy,
    PolicyTable,
    TabularMDP,
    default_vmax,
    model_discrepancy,
    occupancy,
    return_matrix,
)
from .version_space import ModelClass, VersionSpace

MAX_ENUMERATION = 10**6
# occupancy-weighted discrepancies below this count as exactly zero
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class PolicySet:
    policies: tuple
    labels: tuple

    def __post_init__(self):
        if not self.policies:
            raise ParameterError("policy set must be nonempty")
        shape = self.policies[0].probs.shape
        if any(p.probs.shape != shape for p in self.policies):
            raise DimensionError("policies in a set must share shape")
        if len(self.labels) != len(self.policies):
            raise DimensionError("one label per policy required")

    def __len__(self) -> int:
        return len(self.policies)

    def index_of(self, pi: PolicyTable) -> int | None:
        for i, p in enumerate(self.policies):
            if p.same_as(pi):
                return i
        return None

    def with_policy(self, pi: PolicyTable, label: str = "extra") -> tuple["PolicySet", int]:
        """Return a set containing ``pi`` and its index there."""
        i = self.index_of(pi)
        if i is not None:
            return self, i
        return PolicySet(self.policies + (pi,), self.labels + (label,)), len(self.policies)


@dataclass(frozen=True)
class GameSolution:
    policy_index: int
    value: float
    worst_model_index: int
    per_policy_values: np.ndarray


@dataclass(frozen=True)
class ConcentrabilityResult:
    value: float
    witness_model_index: int  # -1 when every model was skipped


def enumerate_policies(num_states: int, num_actions: int, extras=(), extra_labels=None) -> PolicySet:
    """All ``A**S`` deterministic policies (one-hot), then ``extras`` in order."""
    count = num_actions**num_states
    if count > MAX_ENUMERATION:
        raise CapacityError(f"{num_actions}^{num_states} = {count} deterministic policies exceeds {MAX_ENUMERATION}")
    policies, labels = [], []
    for acts in itertools.product(range(num_actions), repeat=num_states):
        policies.append(PolicyTable.deterministic(acts, num_actions))
        labels.append("det:" + "".join(str(a) for a in acts))
    extras = list(extras)
    if extra_labels is None:
        extra_labels = [f"extra{i}" for i in range(len(extras))]
    for p in extras:
        if p.probs.shape != (num_states, num_actions):
            raise DimensionError("extra policy shape mismatch")
    return PolicySet(tuple(policies + extras), tuple(labels) + tuple(extra_labels))


def class_returns(mc: ModelClass, Pi: PolicySet) -> np.ndarray:
    """``J[i, j]`` for policy ``i`` of ``Pi`` on model ``j`` of the class."""
    return return_matrix(mc.models, Pi.policies)


def _returns(VS: VersionSpace, Pi: PolicySet, returns) -> np.ndarray:
    if returns is None:
        return class_returns(VS.class_ref, Pi)
    returns = np.asarray(returns)
    if returns.shape != (len(Pi), len(VS.class_ref)):
        raise DimensionError("precomputed returns must be [|Pi|, |class|]")
    return returns


def _reference_returns(VS: VersionSpace, Pi: PolicySet, pi_ref: PolicyTable, J: np.ndarray) -> np.ndarray:
    i = Pi.index_of(pi_ref)
    if i is not None:
        return J[i]
    return return_matrix(VS.class_ref.models, [pi_ref])[0]


def worst_case_model(VS: VersionSpace, pi: PolicyTable, pi_ref: PolicyTable) -> tuple[int, float]:
    """Member minimizing ``J_M(pi) - J_M(pi_ref)``; returns its class index."""
    members = list(VS.member_indices)
    models = [VS.class_ref.models[i] for i in members]
    J = return_matrix(models, [pi, pi_ref])
    diff = J[0] - J[1]
    k = int(np.argmin(diff))
    return members[k], float(diff[k])


def _solve(values: np.ndarray, members: list) -> GameSolution:
    inner = values.argmin(axis=1)
    per_policy = values[np.arange(len(values)), inner]
    best = int(np.argmax(per_policy))
    return GameSolution(best, float(per_policy[best]), members[inner[best]], per_policy)


def solve_relative_pessimism(VS: VersionSpace, Pi: PolicySet, pi_ref: PolicyTable, returns=None) -> GameSolution:
    """``argmax_pi min_{M in VS} J_M(pi) - J_M(pi_ref)`` by enumeration."""
    if len(Pi) == 0:
        raise ParameterError("empty policy set")
    if Pi.index_of(pi_ref) is None:
        warnings.warn("reference policy is not in the policy set; improvement over it is not guaranteed",
                      stacklevel=2)
    J = _returns(VS, Pi, returns)
    J_ref = _reference_returns(VS, Pi, pi_ref, J)
    members = list(VS.member_indices)
    return _solve(J[:, members] - J_ref[members], members)


def _psi_vector(psi, members) -> np.ndarray:
    out = np.empty(len(members))
    for k, m in enumerate(members):
        try:
            v = psi(m) if isinstance(psi, Callable) else psi[m]
        except (KeyError, IndexError):
            raise ParameterError(f"psi undefined on model {m}") from None
        if v is None or not np.isfinite(v):
            raise ParameterError(f"psi undefined on model {m}")
        out[k] = v
    return out


def solve_generalized_pessimism(VS: VersionSpace, Pi: PolicySet, psi, subset=None, returns=None) -> GameSolution:
    """``argmax_pi min_{M in subset} J_M(pi) + psi(M)``.

    ``psi`` maps class indices to offsets (mapping, sequence or callable).
    ``subset`` defaults to every member of ``VS``.
    """
    members = list(VS.member_indices) if subset is None else [int(i) for i in subset]
    if not members:
        raise ParameterError("subset must be nonempty")
    bad = [m for m in members if m not in VS]
    if bad:
        raise ParameterError(f"subset contains non-members {bad}")
    J = _returns(VS, Pi, returns)
    return _solve(J[:, members] + _psi_vector(psi, members), members)


def absolute_psi(VS: VersionSpace) -> dict:
    return {m: 0.0 for m in VS.member_indices}


def relative_psi(VS: VersionSpace, Pi: PolicySet, pi_ref: PolicyTable, returns=None) -> dict:
    J = _returns(VS, Pi, returns)
    J_ref = _reference_returns(VS, Pi, pi_ref, J)
    return {m: -float(J_ref[m]) for m in VS.member_indices}


def regret_psi(VS: VersionSpace, Pi: PolicySet, returns=None) -> dict:
    """Offsets ``-max_pi J_M(pi)`` turning the game into worst-case regret minimization."""
    J = _returns(VS, Pi, returns)
    return {m: -float(J[:, m].max()) for m in VS.member_indices}


def optimal_policy_index(VS: VersionSpace, Pi: PolicySet, model_index: int, returns=None) -> int:
    return solve_generalized_pessimism(VS, Pi, {model_index: 0.0}, subset=[model_index], returns=returns).policy_index


def optimistic_solution(VS: VersionSpace, Pi: PolicySet, returns=None) -> GameSolution:
    """``argmax_{pi, M in VS} J_M(pi)``: best singleton game over all members."""
    J = _returns(VS, Pi, returns)
    members = list(VS.member_indices)
    sub = J[:, members]
    best_per_policy = sub.max(axis=1)
    i = int(np.argmax(best_per_policy))
    return GameSolution(i, float(best_per_policy[i]), members[int(np.argmax(sub[i]))], best_per_policy)


def is_fixed_point(VS: VersionSpace, Pi: PolicySet, pi: PolicyTable, tol: float = 1e-9, returns=None):
    """Whether no policy in ``Pi`` improves on ``pi`` under every member.

    Returns ``(is_fixed, best_improvement, witness_policy_index)``; indices
    refer to ``Pi`` with ``pi`` appended when it was absent.
    """
    Pi2, _ = Pi.with_policy(pi, "candidate")
    if Pi2 is not Pi:
        returns = None
    sol = solve_relative_pessimism(VS, Pi2, pi, returns=returns)
    return sol.value <= tol, sol.value, sol.policy_index


def concentrability(mc: ModelClass, M_true: TabularMDP, pi: PolicyTable, mu_dist: Occupancy,
                    vmax: float | None = None) -> ConcentrabilityResult:
    """Sup over the class of ``E_{d^pi}[err(M)] / E_mu[err(M)]``.

    ``err`` is the squared-TV plus scaled squared-reward discrepancy to
    ``M_true``. Models with 0/0 are skipped; if all are skipped the value
    is 1. A positive numerator over a zero denominator gives ``inf``.
    """
    if len(mc) == 0:
        raise ParameterError("model class is empty")
    vmax = default_vmax(M_true.discount) if vmax is None else float(vmax)
    d_pi = occupancy(M_true, pi).dist
    mu = mu_dist.dist
    best, witness = -math.inf, -1
    for j, M in enumerate(mc.models):
        err = model_discrepancy(M, M_true, vmax)
        num = float(np.sum(d_pi * err))
        den = float(np.sum(mu * err))
        num_zero, den_zero = num <= ZERO_TOL, den <= ZERO_TOL
        if num_zero and den_zero:
            continue
        ratio = math.inf if den_zero else num / den
        if ratio > best:
            best, witness = ratio, j
            if ratio == math.inf:
                break
    if witness < 0:
        return ConcentrabilityResult(1.0, -1)
    return ConcentrabilityResult(best, witness)


def performance_bound(c_comp: float, c_ref: float, vmax: float, gamma: float, n: int, class_size: int,
                      delta: float, c_abs: float = 1.0) -> float:
    """``c_abs (sqrt(c_comp) + sqrt(c_ref)) vmax/(1-gamma) sqrt(log(|M|/delta)/n)``."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if class_size < 1:
        raise ParameterError("class_size must be at least 1")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError("gamma must lie in [0, 1)")
    if c_comp < 0 or c_ref < 0 or c_abs < 0 or vmax < 1:
        raise ParameterError("coverage terms and c_abs must be non-negative, vmax at least 1")
    coverage = math.sqrt(c_comp) + math.sqrt(c_ref)
    if coverage == 0.0 or c_abs == 0.0:
        return 0.0
    return c_abs * coverage * (vmax / (1.0 - gamma)) * math.sqrt(math.log(class_size / delta) / n)
