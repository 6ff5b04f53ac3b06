"""Finite discounted MDPs and exact policy evaluation.

Everything here is a pure function of immutable arrays: values come from a
dense linear solve of the Bellman system, occupancies from the transposed
flow equations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError

ROW_TOL = 1e-12
MAX_STATES = 64
# Policies evaluated per batched solve; bounds peak memory of the stacked systems.
_POLICY_CHUNK = 2048


def default_vmax(gamma: float) -> float:
    return 1.0 / (1.0 - gamma)


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_simplex(arr: np.ndarray, axis: int, what: str) -> None:
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ParameterError(f"{what} has negative or non-finite entries")
    err = np.max(np.abs(arr.sum(axis=axis) - 1.0), initial=0.0)
    if err > ROW_TOL:
        raise ParameterError(f"{what} rows must sum to 1 (max error {err:.3g})")


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP ``(P, R, gamma, d0)`` with rewards in ``[0, 1]``."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        d0 = _frozen(self.initial_dist)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_dist", d0)
        object.__setattr__(self, "discount", float(self.discount))
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition must be [S, A, S], got {P.shape}")
        S, A = P.shape[:2]
        if S < 1 or A < 1:
            raise DimensionError("need at least one state and one action")
        if S > MAX_STATES:
            raise DimensionError(f"at most {MAX_STATES} states supported, got {S}")
        if R.shape != (S, A):
            raise DimensionError(f"reward must be [{S}, {A}], got {R.shape}")
        if d0.shape != (S,):
            raise DimensionError(f"initial_dist must be [{S}], got {d0.shape}")
        if not 0.0 <= self.discount < 1.0:
            raise ParameterError(f"discount must lie in [0, 1), got {self.discount}")
        _check_simplex(P, 2, "transition")
        _check_simplex(d0, 0, "initial_dist")
        if np.any(R < 0.0) or np.any(R > 1.0):
            raise ParameterError("rewards must lie in [0, 1]")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def gamma(self) -> float:
        return self.discount

    def replace(self, **changes) -> "TabularMDP":
        fields = dict(
            transition=self.transition,
            reward=self.reward,
            discount=self.discount,
            initial_dist=self.initial_dist,
        )
        fields.update(changes)
        return TabularMDP(**fields)

    def same_as(self, other: "TabularMDP") -> bool:
        return (
            self.transition.shape == other.transition.shape
            and self.discount == other.discount
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.initial_dist, other.initial_dist)
        )

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMDP":
        mdp = cls(
            transition=doc["transition"],
            reward=doc["reward"],
            discount=doc["discount"],
            initial_dist=doc["initial_dist"],
        )
        if (doc.get("num_states", mdp.num_states), doc.get("num_actions", mdp.num_actions)) != (
            mdp.num_states,
            mdp.num_actions,
        ):
            raise DimensionError("num_states/num_actions disagree with the arrays")
        return mdp


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1) + "\n")


def load_mdp(path) -> TabularMDP:
    return TabularMDP.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Stochastic policy as an ``[S, A]`` table of action probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise DimensionError(f"policy table must be [S, A], got {p.shape}")
        _check_simplex(p, 1, "policy")
        object.__setattr__(self, "probs", p)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "PolicyTable":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "PolicyTable":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def greedy_actions(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    def same_as(self, other: "PolicyTable", atol: float = 0.0) -> bool:
        return self.probs.shape == other.probs.shape and bool(
            np.all(np.abs(self.probs - other.probs) <= atol)
        )


@dataclass(frozen=True)
class ValueResult:
    state_values: np.ndarray
    q_values: np.ndarray
    expected_return: float
    vmax: float


@dataclass(frozen=True)
class Occupancy:
    """Normalized discounted state-action visitation ``d(s, a)``."""

    dist: np.ndarray = field(repr=False)

    def state_marginal(self) -> np.ndarray:
        return self.dist.sum(axis=1)


def _check_pair(M: TabularMDP, pi: PolicyTable) -> None:
    if pi.probs.shape != (M.num_states, M.num_actions):
        raise DimensionError(
            f"policy shape {pi.probs.shape} does not match MDP "
            f"({M.num_states}, {M.num_actions})"
        )


def _check_models(M: TabularMDP, M2: TabularMDP) -> None:
    if M.transition.shape != M2.transition.shape:
        raise DimensionError(
            f"model shapes differ: {M.transition.shape} vs {M2.transition.shape}"
        )


def evaluate_policy(M: TabularMDP, pi: PolicyTable, vmax: float | None = None) -> ValueResult:
    """Solve ``(I - gamma P_pi) V = r_pi`` exactly and derive Q and J."""
    _check_pair(M, pi)
    P, R, g = M.transition, M.reward, M.discount
    P_pi = np.einsum("sa,sat->st", pi.probs, P)
    r_pi = np.einsum("sa,sa->s", pi.probs, R)
    V = np.linalg.solve(np.eye(M.num_states) - g * P_pi, r_pi)
    Q = R + g * P @ V
    return ValueResult(
        state_values=V,
        q_values=Q,
        expected_return=float(M.initial_dist @ V),
        vmax=default_vmax(g) if vmax is None else float(vmax),
    )


def occupancy(M: TabularMDP, pi: PolicyTable) -> Occupancy:
    _check_pair(M, pi)
    g = M.discount
    P_pi = np.einsum("sa,sat->st", pi.probs, M.transition)
    d_s = np.linalg.solve(np.eye(M.num_states) - g * P_pi.T, (1.0 - g) * M.initial_dist)
    # the solve can leave -1e-17 style residue on unreachable states
    d_s = np.clip(d_s, 0.0, None)
    return Occupancy(d_s[:, None] * pi.probs)


def tv_distance(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Total variation between matching next-state rows (last axis)."""
    return 0.5 * np.abs(P - Q).sum(axis=-1)


def model_discrepancy(M: TabularMDP, M_ref: TabularMDP, vmax: float) -> np.ndarray:
    """Squared TV of transitions plus squared reward error scaled by ``vmax**2``."""
    _check_models(M, M_ref)
    if vmax < 1.0:
        raise ParameterError(f"vmax must be at least 1, got {vmax}")
    tv = tv_distance(M.transition, M_ref.transition)
    return tv**2 + (M.reward - M_ref.reward) ** 2 / vmax**2


def simulation_gap(M: TabularMDP, M2: TabularMDP, pi: PolicyTable, vmax: float | None = None):
    """Return ``(|J_M(pi) - J_M2(pi)|, simulation-lemma upper bound)``.

    The bound weights transition TV and absolute reward error by the
    occupancy of ``pi`` in ``M``; it is valid whenever values of ``M2`` lie
    in ``[0, vmax]``.
    """
    _check_models(M, M2)
    _check_pair(M, pi)
    g = M.discount
    if M2.discount != g:
        raise ParameterError("models must share the discount factor")
    vmax = default_vmax(g) if vmax is None else float(vmax)
    d = occupancy(M, pi).dist
    gap = abs(evaluate_policy(M, pi).expected_return - evaluate_policy(M2, pi).expected_return)
    tv = tv_distance(M.transition, M2.transition)
    dr = np.abs(M.reward - M2.reward)
    bound = (vmax / (1.0 - g)) * float(np.sum(d * tv)) + float(np.sum(d * dr)) / (1.0 - g)
    return gap, bound


def stack_models(models) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    P = np.stack([m.transition for m in models])
    R = np.stack([m.reward for m in models])
    g = models[0].discount
    d0 = models[0].initial_dist
    for m in models[1:]:
        if m.transition.shape != P.shape[1:]:
            raise DimensionError("models in a batch must share S and A")
        if m.discount != g or not np.array_equal(m.initial_dist, d0):
            raise ParameterError("models in a batch must share discount and initial_dist")
    return P, R, g, d0


def return_matrix(models, policies) -> np.ndarray:
    """``J[i, j] = J_{models[j]}(policies[i])`` via batched linear solves.

    Models must share ``gamma`` and ``d0``.
    """
    P, R, g, d0 = stack_models(models)
    S = P.shape[1]
    pis = np.stack([p.probs for p in policies])
    if pis.shape[1:] != P.shape[1:3]:
        raise DimensionError("policy and model shapes disagree")
    eye = np.eye(S)
    out = np.empty((len(pis), len(P)))
    for lo in range(0, len(pis), _POLICY_CHUNK):
        chunk = pis[lo : lo + _POLICY_CHUNK]
        P_pi = np.einsum("ksa,msat->kmst", chunk, P)
        r_pi = np.einsum("ksa,msa->kms", chunk, R)
        V = np.linalg.solve(eye - g * P_pi, r_pi[..., None])[..., 0]
        out[lo : lo + len(chunk)] = V @ d0
    return out


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int, gamma: float = 0.9,
               branching: int | None = None) -> TabularMDP:
    """Garnet-style random MDP; ``branching`` limits the support of each row."""
    S, A = num_states, num_actions
    b = S if branching is None else min(branching, S)
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            support = rng.choice(S, size=b, replace=False)
            P[s, a, support] = rng.dirichlet(np.ones(b))
    P /= P.sum(axis=2, keepdims=True)
    d0 = rng.dirichlet(np.ones(S))
    return TabularMDP(P, rng.uniform(0.0, 1.0, size=(S, A)), gamma, d0 / d0.sum())


def random_policy(rng: np.random.Generator, num_states: int, num_actions: int) -> PolicyTable:
    p = rng.dirichlet(np.ones(num_actions), size=num_states)
    return PolicyTable(p / p.sum(axis=1, keepdims=True))
