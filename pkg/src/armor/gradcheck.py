"""Central finite-difference checks for the iterative solver's analytic gradients."""
from __future__ import annotations

import numpy as np

from .armor_iter import (
    ArmorConfig,
    ArmorState,
    ModelBatch,
    RealBatch,
    actor_objective_and_grad,
    adversary_gradients,
    adversary_loss,
)
from .mdp_core import random_policy

PARAMS = ("model_logits", "model_reward", "f1", "f2", "policy_logits")


def random_setup(rng: np.random.Generator, max_states: int = 5, max_actions: int = 3, batch: int = 8):
    """Random state, batches and config with every parameter away from its clipping bounds."""
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.uniform(0.5, 0.95))
    vmax = 1.0 / (1.0 - gamma)
    st = ArmorState.initial(S, A, random_policy(rng, S, A), 64)
    st.model_logits = rng.normal(size=(S, A, S))
    st.model_reward = rng.uniform(0.05, 0.95, size=(S, A))
    st.policy_logits = rng.normal(size=(S, A))
    for name in ("f1", "f2", "fbar1", "fbar2"):
        setattr(st, name, rng.uniform(0.05 * vmax, 0.95 * vmax, size=(S, A)))
    real = RealBatch(rng.integers(0, S, batch), rng.integers(0, A, batch), rng.uniform(size=batch),
                     rng.integers(0, S, batch))
    mb = ModelBatch(rng.integers(0, S, batch), rng.integers(0, A, batch))
    cfg = ArmorConfig(beta=float(rng.uniform(0.1, 10)), lam=float(rng.uniform(0, 2)), w=float(rng.uniform()),
                      gamma=gamma, vmax=vmax)
    return st, real, mb, cfg


def _objective(name: str, real: RealBatch, mb: ModelBatch, cfg: ArmorConfig):
    if name == "policy_logits":
        states = np.concatenate([real.s, mb.s])
        return lambda s: actor_objective_and_grad(s, states)[0]
    if name == "f1":
        return lambda s: adversary_loss(s, 1, real, mb, cfg)
    if name == "f2":
        return lambda s: adversary_loss(s, 2, real, mb, cfg)
    # the model descends the sum of both critics' losses
    return lambda s: adversary_loss(s, 1, real, mb, cfg) + adversary_loss(s, 2, real, mb, cfg)


def finite_difference(st: ArmorState, name: str, fn, h: float = 1e-5) -> np.ndarray:
    x = getattr(st, name)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        vals = []
        for step in (h, -h):
            probe = st.copy()
            moved = x.copy()
            moved[idx] += step
            setattr(probe, name, moved)
            vals.append(fn(probe))
        out[idx] = (vals[0] - vals[1]) / (2 * h)
    return out


def analytic(st: ArmorState, name: str, real: RealBatch, mb: ModelBatch, cfg: ArmorConfig) -> np.ndarray:
    if name == "policy_logits":
        return actor_objective_and_grad(st, np.concatenate([real.s, mb.s]))[1]
    return adversary_gradients(st, real, mb, cfg)[name]


def relative_errors(st, real, mb, cfg, h: float = 1e-5) -> dict:
    errs = {}
    for name in PARAMS:
        fd = finite_difference(st, name, _objective(name, real, mb, cfg), h)
        g = analytic(st, name, real, mb, cfg)
        scale = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-8)
        errs[name] = float(np.linalg.norm(fd - g) / scale)
    return errs


def worst_relative_error(rng: np.random.Generator, h: float = 1e-5) -> float:
    return max(relative_errors(*random_setup(rng), h=h).values())
