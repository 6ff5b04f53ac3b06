"""One-dimensional chain where the behavior data only covers the left half.

Actions: 0 moves left, 1 moves right. The agent starts in the center cell;
both end cells absorb and pay their reward on every step spent there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .mdp_core import PolicyTable, TabularMDP
from .version_space import ModelClass

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ToyChainSpec:
    length: int = 5
    reward_left: float = 0.1
    reward_right: float = 1.0
    gamma: float = 0.95
    absorbing_ends: bool = True

    @property
    def center(self) -> int:
        return self.length // 2


def _validate(spec: ToyChainSpec) -> None:
    if spec.length < 3 or spec.length % 2 == 0:
        raise ParameterError(f"chain length must be odd and at least 3, got {spec.length}")
    if not (0.0 <= spec.reward_left <= 1.0 and 0.0 <= spec.reward_right <= 1.0):
        raise ParameterError("end rewards must lie in [0, 1]")


def _chain_arrays(spec: ToyChainSpec):
    L = spec.length
    P = np.zeros((L, 2, L))
    for s in range(L):
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, min(s + 1, L - 1)] = 1.0
    if spec.absorbing_ends:
        for end in (0, L - 1):
            P[end] = 0.0
            P[end, :, end] = 1.0
    R = np.zeros((L, 2))
    R[0, :] = spec.reward_left
    R[L - 1, :] = spec.reward_right
    return P, R


def toy_chain(spec: ToyChainSpec = ToyChainSpec()):
    """Return ``(M_true, behavior, reference)``: always-left data, always-right reference."""
    _validate(spec)
    P, R = _chain_arrays(spec)
    d0 = np.zeros(spec.length)
    d0[spec.center] = 1.0
    M = TabularMDP(P, R, spec.gamma, d0)
    behavior = PolicyTable.deterministic([LEFT] * spec.length, 2)
    reference = PolicyTable.deterministic([RIGHT] * spec.length, 2)
    return M, behavior, reference


def reference_reachable(spec: ToyChainSpec = ToyChainSpec()) -> list[int]:
    return list(range(spec.center, spec.length))


def toy_chain_class(spec: ToyChainSpec = ToyChainSpec()) -> ModelClass:
    """True chain plus rewirings of the unexplored right half.

    Data-consistent variants (differ only where always-left never goes):
    the center's right move stalls, interior right moves stall, or the
    right end leaks back under the left action; each crossed with the right
    end reward scaled by 1, 0.5 or 0. Two further variants contradict the
    data (a broken left move at the center, a different left-end reward)
    and drop out of the version space once enough data is seen.
    """
    M, _, _ = toy_chain(spec)
    L, c = spec.length, spec.center
    P0, R0 = M.transition, M.reward

    def stall_center(P):
        P[c, RIGHT] = 0.0
        P[c, RIGHT, c] = 1.0

    def stall_interior(P):
        for s in range(c + 1, L - 1):
            P[s, RIGHT] = 0.0
            P[s, RIGHT, s] = 1.0

    def leak_end(P):
        P[L - 1, LEFT] = 0.0
        P[L - 1, LEFT, L - 2] = 1.0

    dyn = [("true", None), ("stall-center", stall_center), ("stall-interior", stall_interior),
           ("leak-end", leak_end)]
    models, labels = [], []
    for dname, edit in dyn:
        for scale in (1.0, 0.5, 0.0):
            P = np.array(P0)
            if edit is not None:
                edit(P)
            R = np.array(R0)
            R[L - 1, :] = spec.reward_right * scale
            models.append(M.replace(transition=P, reward=R))
            labels.append(f"{dname}/r{scale:g}")

    P = np.array(P0)
    P[c, LEFT] = 0.0
    P[c, LEFT, c] = 1.0
    models.append(M.replace(transition=P))
    labels.append("broken-left")
    R = np.array(R0)
    R[0, :] = min(1.0, spec.reward_left + 0.4)
    models.append(M.replace(reward=R))
    labels.append("left-reward")
    return ModelClass(models, labels, true_index=0)
