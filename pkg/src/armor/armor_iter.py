"""Adversarial model-based actor-critic over tabular softmax parameterizations.

The model is a softmax over next states per ``(s, a)`` plus a reward table,
the critics are ``[S, A]`` tables projected into ``[0, vmax]`` and the
policy is a softmax over actions. Every loss below has an exact analytic
gradient; expectations over the model's next state are computed in closed
form instead of sampled.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data_io import Dataset
from .errors import DimensionError, NumericalFailure, ParameterError
from .mdp_core import PolicyTable, TabularMDP, default_vmax, evaluate_policy

WARMSTARTS = ("ref", "bc", "none")
OPTIMIZERS = ("sgd", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# probability floor used when turning a (possibly deterministic) policy into logits
LOGIT_FLOOR = 1e-3
MAX_STATES = 16


@dataclass
class ArmorConfig:
    beta: float = 1.0
    lam: float = 1.0
    w: float = 0.5
    tau: float = 5e-3
    eta_fast: float = 5e-4
    eta_slow: float = 5e-7
    horizon_H: int = 10
    steps_K: int = 1000
    batch_real: int = 32
    batch_model: int = 32
    buffer_cap: int = 10_000
    vmax: float | None = None
    gamma: float | None = None
    seed: int = 0
    warmstart: str = "bc"
    warmstart_steps: int = 1000
    eta_warm: float = 0.5
    eval_period: int = 100
    optimizer: str = "adam"

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ParameterError("beta and lambda must be non-negative")
        if not 0.0 <= self.w <= 1.0 or not 0.0 <= self.tau <= 1.0:
            raise ParameterError("w and tau must lie in [0, 1]")
        if self.eta_fast <= 0 or self.eta_slow <= 0 or self.eta_warm <= 0:
            raise ParameterError("learning rates must be positive")
        if self.eta_slow > self.eta_fast:
            raise ParameterError("eta_slow must not exceed eta_fast")
        if self.horizon_H < 1 or self.steps_K < 0 or self.warmstart_steps < 0:
            raise ParameterError("horizon must be positive, step counts non-negative")
        if self.batch_real < 1 or self.batch_model < 0:
            raise ParameterError("batch sizes must be positive")
        if self.buffer_cap < self.batch_model or self.buffer_cap < 1:
            raise ParameterError("buffer_cap must be at least batch_model")
        if self.warmstart not in WARMSTARTS:
            raise ParameterError(f"warmstart must be one of {WARMSTARTS}")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"optimizer must be one of {OPTIMIZERS}")
        if self.eval_period < 1:
            raise ParameterError("eval_period must be positive")
        if self.vmax is not None and self.vmax < 1:
            raise ParameterError("vmax must be at least 1")

    def resolved(self, M: TabularMDP) -> "ArmorConfig":
        cfg = copy.copy(self)
        if cfg.gamma is None:
            cfg.gamma = M.discount
        if cfg.vmax is None:
            cfg.vmax = default_vmax(cfg.gamma)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


class RealBatch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    sp: np.ndarray


class ModelBatch(NamedTuple):
    s: np.ndarray
    a: np.ndarray


@dataclass
class ArmorState:
    model_logits: np.ndarray
    model_reward: np.ndarray
    policy_logits: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    fbar1: np.ndarray
    fbar2: np.ndarray
    pi_ref: np.ndarray
    buffer_s: np.ndarray
    buffer_a: np.ndarray
    buffer_len: int = 0
    buffer_pos: int = 0
    rollout_pi: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rollout_ref: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    step: int = 0
    last_losses: tuple = (math.nan, math.nan, math.nan)
    adam: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, num_states: int, num_actions: int, pi_ref: PolicyTable, buffer_cap: int) -> "ArmorState":
        S, A = num_states, num_actions
        zeros = np.zeros((S, A))
        return cls(
            model_logits=np.zeros((S, A, S)),
            model_reward=np.full((S, A), 0.5),
            policy_logits=zeros.copy(),
            f1=zeros.copy(),
            f2=zeros.copy(),
            fbar1=zeros.copy(),
            fbar2=zeros.copy(),
            pi_ref=np.array(pi_ref.probs),
            buffer_s=np.zeros(buffer_cap, dtype=np.int64),
            buffer_a=np.zeros(buffer_cap, dtype=np.int64),
        )

    @property
    def num_states(self) -> int:
        return self.policy_logits.shape[0]

    def model_probs(self) -> np.ndarray:
        return softmax(self.model_logits)

    def policy_probs(self) -> np.ndarray:
        return softmax(self.policy_logits)

    def policy(self) -> PolicyTable:
        p = self.policy_probs()
        return PolicyTable(p / p.sum(axis=1, keepdims=True))

    def model(self, template: TabularMDP) -> TabularMDP:
        P = self.model_probs()
        return template.replace(transition=P / P.sum(axis=2, keepdims=True), reward=self.model_reward)

    def buffer_pairs(self) -> ModelBatch:
        """Buffer contents, oldest first."""
        n, cap = self.buffer_len, self.buffer_s.size
        if n < cap:
            idx = np.arange(n)
        else:
            idx = (self.buffer_pos + np.arange(cap)) % cap
        return ModelBatch(self.buffer_s[idx], self.buffer_a[idx])

    def copy(self) -> "ArmorState":
        return copy.deepcopy(self)


@dataclass
class ArmorResult:
    final_policy: PolicyTable
    loss_trace: np.ndarray  # [K, 3]: pessimistic, bellman, model-fit
    eval_trace: list  # (step, J_true)
    state: ArmorState
    config: ArmorConfig

    def write_csv(self, path) -> None:
        evals = dict(self.eval_trace)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["step", "pess_loss", "bellman_loss", "model_loss", "J_true"])
            for k, (pl, bl, ml) in enumerate(self.loss_trace, start=1):
                j = evals.get(k)
                out.writerow([k, repr(float(pl)), repr(float(bl)), repr(float(ml)),
                              "" if j is None else repr(float(j))])


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Chain rule through softmax along the last axis."""
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))


def _as_states(batch) -> np.ndarray:
    arr = np.asarray(batch)
    if arr.ndim == 2:
        arr = arr[:, 0]
    return arr.astype(np.int64)


def _state_weights(states: np.ndarray, S: int) -> np.ndarray:
    return np.bincount(states, minlength=S) / states.size


def _pair_weights(s: np.ndarray, a: np.ndarray, S: int, A: int) -> np.ndarray:
    return np.bincount(s * A + a, minlength=S * A).reshape(S, A) / s.size


# ---------------------------------------------------------------- losses


def pessimistic_loss_and_grads(f, pi, pi_ref, states):
    """Mean over ``states`` of ``f(s, pi) - f(s, pi_ref)``.

    Returns the value, its gradient in ``f`` and its gradient in the
    action probabilities of ``pi``.
    """
    S = f.shape[0]
    ws = _state_weights(states, S)[:, None]
    diff = pi - pi_ref
    value = float(np.sum(ws * diff * f))
    return value, ws * diff, ws * f


def pessimistic_loss(f, pi, pi_ref, batch) -> float:
    states = _as_states(batch)
    if states.size == 0:
        raise ParameterError("pessimistic loss needs a nonempty batch")
    pi = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi)
    pi_ref = pi_ref.probs if isinstance(pi_ref, PolicyTable) else np.asarray(pi_ref)
    if f.shape != pi.shape or pi.shape != pi_ref.shape:
        raise DimensionError("critic and policy tables must share shape")
    return pessimistic_loss_and_grads(f, pi, pi_ref, states)[0]


def _td_and_grads(f, f_next, P, R, pi, wsa, gamma):
    """``sum_{s,a} wsa (f(s,a) - R(s,a) - gamma E_{s'~P} f_next(s', pi))^2`` and partials."""
    v_next = np.sum(pi * f_next, axis=1)
    delta = f - R - gamma * (P @ v_next)
    value = float(np.sum(wsa * delta**2))
    g_f = 2.0 * wsa * delta
    g_vnext = -gamma * np.einsum("sa,sat->t", g_f, P)
    g_fnext = pi * g_vnext[:, None]
    g_P = -gamma * g_f[:, :, None] * v_next[None, None, :]
    g_R = -g_f
    return value, g_f, g_fnext, g_P, g_R


def bellman_surrogate_and_grads(f, fbar, P, R, pi, s, a, w, gamma):
    """Double-Q residual loss ``(1-w) TD(f, f) + w TD(f, fbar)`` on pairs ``(s, a)``.

    Gradients are with respect to ``f`` (through both of its occurrences in
    the first term), the model's next-state probabilities and its reward.
    """
    S, A = f.shape
    wsa = _pair_weights(s, a, S, A)
    v1, gf1, gfn1, gP1, gR1 = _td_and_grads(f, f, P, R, pi, wsa, gamma)
    v2, gf2, _, gP2, gR2 = _td_and_grads(f, fbar, P, R, pi, wsa, gamma)
    value = (1.0 - w) * v1 + w * v2
    g_f = (1.0 - w) * (gf1 + gfn1) + w * gf2
    g_P = (1.0 - w) * gP1 + w * gP2
    g_R = (1.0 - w) * gR1 + w * gR2
    return value, g_f, g_P, g_R


def bellman_surrogate(f, fbar, model, pi, batch, w, gamma) -> float:
    """Value of the double-Q residual loss; ``model`` is a TabularMDP or ``(P, R)``."""
    P, R = (model.transition, model.reward) if isinstance(model, TabularMDP) else model
    pi = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi)
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if f.shape != fbar.shape or f.shape != pi.shape or P.shape[:2] != f.shape:
        raise DimensionError("critic, target, policy and model shapes disagree")
    return bellman_surrogate_and_grads(f, fbar, P, R, pi, batch[:, 0], batch[:, 1], w, gamma)[0]


def model_fit_and_grads(logits, R, batch: RealBatch, vmax):
    """Mean model-fitting loss on real transitions and gradients in logits and reward."""
    P = softmax(logits)
    S, A = R.shape
    n = batch.s.size
    p_obs = P[batch.s, batch.a, batch.sp]
    r_err = R[batch.s, batch.a] - batch.r
    value = float(np.mean(-np.log(p_obs) + r_err**2 / vmax**2))
    wsa = _pair_weights(batch.s, batch.a, S, A)
    counts = np.zeros((S, A, S))
    np.add.at(counts, (batch.s, batch.a, batch.sp), 1.0 / n)
    g_logits = wsa[:, :, None] * P - counts
    g_R = np.zeros((S, A))
    np.add.at(g_R, (batch.s, batch.a), 2.0 * r_err / (vmax**2 * n))
    return value, g_logits, g_R


def adversary_loss(state: ArmorState, critic: int, real: RealBatch, model_batch: ModelBatch, cfg: ArmorConfig):
    """``l_adv(f_i, M)`` evaluated at the current parameters (no update)."""
    return _adversary_terms(state, real, model_batch, cfg)[critic - 1]["loss"]


def _union(real: RealBatch, model_batch: ModelBatch):
    return np.concatenate([real.s, model_batch.s]), np.concatenate([real.a, model_batch.a])


def _adversary_terms(state: ArmorState, real: RealBatch, model_batch: ModelBatch, cfg: ArmorConfig):
    P = state.model_probs()
    pi = state.policy_probs()
    s_all, a_all = _union(real, model_batch)
    fit, g_fit_logits, g_fit_R = model_fit_and_grads(state.model_logits, state.model_reward, real, cfg.vmax)
    out = []
    for f, fbar in ((state.f1, state.fbar1), (state.f2, state.fbar2)):
        pess, g_pess_f, _ = pessimistic_loss_and_grads(f, pi, state.pi_ref, s_all)
        bell, g_bell_f, g_bell_P, g_bell_R = bellman_surrogate_and_grads(
            f, fbar, P, state.model_reward, pi, s_all, a_all, cfg.w, cfg.gamma)
        out.append({
            "loss": pess + cfg.beta * (bell + cfg.lam * fit),
            "pess": pess,
            "bellman": bell,
            "fit": fit,
            "g_f": g_pess_f + cfg.beta * g_bell_f,
            "g_logits": cfg.beta * (_softmax_backward(P, g_bell_P) + cfg.lam * g_fit_logits),
            "g_R": cfg.beta * (g_bell_R + cfg.lam * g_fit_R),
        })
    return out


def adversary_gradients(state: ArmorState, real: RealBatch, model_batch: ModelBatch, cfg: ArmorConfig) -> dict:
    """Analytic gradients used by one adversary step, keyed by parameter."""
    t1, t2 = _adversary_terms(state, real, model_batch, cfg)
    return {
        "f1": t1["g_f"],
        "f2": t2["g_f"],
        "model_logits": t1["g_logits"] + t2["g_logits"],
        "model_reward": t1["g_R"] + t2["g_R"],
        "terms": (t1, t2),
    }


def _check_finite(step: int, **arrays) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure(f"non-finite gradient in {name}", step)


def _descent_step(state: ArmorState, name: str, grad: np.ndarray, lr: float, cfg: ArmorConfig) -> np.ndarray:
    """Change to apply to parameter ``name`` for a descent step along ``grad``."""
    if cfg.optimizer == "sgd":
        return -lr * grad
    b1, b2 = ADAM_BETAS
    m, v, t = state.adam.get(name, (np.zeros_like(grad), np.zeros_like(grad), 0))
    t += 1
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad**2
    state.adam[name] = (m, v, t)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return -lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def adversary_update(state: ArmorState, real: RealBatch, model_batch: ModelBatch, cfg: ArmorConfig) -> ArmorState:
    """One simultaneous step on the model and both critics, then target averaging.

    Mutates and returns ``state``. The model descends the sum of both
    critics' adversary losses; each critic descends its own and is
    projected into ``[0, vmax]``.
    """
    g = adversary_gradients(state, real, model_batch, cfg)
    _check_finite(state.step, f1=g["f1"], f2=g["f2"], model_logits=g["model_logits"],
                  model_reward=g["model_reward"])
    eta = cfg.eta_fast
    steps = {name: _descent_step(state, name, g[name], eta, cfg)
             for name in ("model_logits", "model_reward", "f1", "f2")}
    state.model_logits = state.model_logits + steps["model_logits"]
    state.model_reward = np.clip(state.model_reward + steps["model_reward"], 0.0, 1.0)
    state.f1 = np.clip(state.f1 + steps["f1"], 0.0, cfg.vmax)
    state.f2 = np.clip(state.f2 + steps["f2"], 0.0, cfg.vmax)
    state.fbar1 = (1.0 - cfg.tau) * state.fbar1 + cfg.tau * state.f1
    state.fbar2 = (1.0 - cfg.tau) * state.fbar2 + cfg.tau * state.f2
    t1 = g["terms"][0]
    state.last_losses = (t1["pess"], t1["bellman"], t1["fit"])
    return state


def actor_objective_and_grad(state: ArmorState, states: np.ndarray):
    """``L(f1, pi, pi_ref)`` on ``states`` and its gradient in the policy logits (f1 held fixed)."""
    pi = state.policy_probs()
    value, _, g_pi = pessimistic_loss_and_grads(state.f1, pi, state.pi_ref, states)
    return value, _softmax_backward(pi, g_pi)


def actor_update(state: ArmorState, states, cfg: ArmorConfig) -> ArmorState:
    """Ascend the pessimistic objective of the first critic at rate ``eta_slow``."""
    states = _as_states(states)
    _, grad = actor_objective_and_grad(state, states)
    _check_finite(state.step, policy_logits=grad)
    # ascent on the objective == descent on its negation
    state.policy_logits = state.policy_logits + _descent_step(state, "policy_logits", -grad, cfg.eta_slow, cfg)
    return state


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[-1] - 1)


def _buffer_append(state: ArmorState, s: np.ndarray, a: np.ndarray) -> None:
    cap = state.buffer_s.size
    for lo in range(0, s.size, cap):
        chunk_s, chunk_a = s[lo:lo + cap], a[lo:lo + cap]
        idx = (state.buffer_pos + np.arange(chunk_s.size)) % cap
        state.buffer_s[idx] = chunk_s
        state.buffer_a[idx] = chunk_a
        state.buffer_pos = int((state.buffer_pos + chunk_s.size) % cap)
        state.buffer_len = min(cap, state.buffer_len + chunk_s.size)


def rollout_expand(state: ArmorState, real_states, cfg: ArmorConfig, rng: np.random.Generator) -> ArmorState:
    """Reset the rollout fronts every ``horizon_H`` steps, then take one model step from each.

    The visited ``(s, a)`` pairs of the learner front go into the buffer
    first, then those of the reference front. Next states are sampled from
    the current model probabilities as plain numbers.
    """
    if state.step % cfg.horizon_H == 0 or state.rollout_pi.size == 0:
        state.rollout_pi = _as_states(real_states).copy()
        state.rollout_ref = _as_states(real_states).copy()
    P = state.model_probs()
    pi = state.policy_probs()
    a_pi = _sample_rows(rng, pi[state.rollout_pi])
    a_ref = _sample_rows(rng, state.pi_ref[state.rollout_ref])
    _buffer_append(state, np.concatenate([state.rollout_pi, state.rollout_ref]), np.concatenate([a_pi, a_ref]))
    state.rollout_pi = _sample_rows(rng, P[state.rollout_pi, a_pi])
    state.rollout_ref = _sample_rows(rng, P[state.rollout_ref, a_ref])
    return state


def sample_real(rng: np.random.Generator, D: Dataset, size: int) -> RealBatch:
    idx = rng.integers(0, len(D), size=size)
    return RealBatch(D.s[idx], D.a[idx], D.r[idx], D.sp[idx])


def sample_model(rng: np.random.Generator, state: ArmorState, size: int) -> ModelBatch:
    if state.buffer_len == 0 or size == 0:
        return ModelBatch(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    idx = rng.integers(0, state.buffer_len, size=size)
    return ModelBatch(state.buffer_s[idx], state.buffer_a[idx])


# ---------------------------------------------------------------- warm start


def behavior_cloning(D: Dataset, num_states: int, num_actions: int) -> PolicyTable:
    """Add-one smoothed empirical action frequencies; unvisited states are uniform."""
    counts = np.ones((num_states, num_actions))
    np.add.at(counts, (D.s, D.a), 1.0)
    return PolicyTable(counts / counts.sum(axis=1, keepdims=True))


def _policy_logits(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOGIT_FLOOR))


def warm_start(state: ArmorState, D: Dataset, cfg: ArmorConfig, rng: np.random.Generator) -> ArmorState:
    """Initialize the policy, pre-train the model on the fitting loss and the critics by TD on ``D``."""
    S, A = state.policy_logits.shape
    if cfg.warmstart == "ref":
        state.policy_logits = _policy_logits(state.pi_ref)
    elif cfg.warmstart == "bc":
        state.policy_logits = _policy_logits(behavior_cloning(D, S, A).probs)
    pi = state.policy_probs()
    for _ in range(cfg.warmstart_steps if len(D) else 0):
        batch = sample_real(rng, D, cfg.batch_real)
        _, g_logits, g_R = model_fit_and_grads(state.model_logits, state.model_reward, batch, cfg.vmax)
        state.model_logits -= cfg.eta_warm * g_logits
        state.model_reward = np.clip(state.model_reward - cfg.eta_warm * g_R, 0.0, 1.0)
        for name in ("f1", "f2"):
            f = getattr(state, name)
            target = batch.r + cfg.gamma * np.sum(pi[batch.sp] * f[batch.sp], axis=1)
            g = np.zeros((S, A))
            np.add.at(g, (batch.s, batch.a), 2.0 * (f[batch.s, batch.a] - target) / batch.s.size)
            setattr(state, name, np.clip(f - cfg.eta_warm * g, 0.0, cfg.vmax))
    state.fbar1 = state.f1.copy()
    state.fbar2 = state.f2.copy()
    return state


# ---------------------------------------------------------------- main loop


def run_armor(M_true: TabularMDP, D: Dataset, pi_ref: PolicyTable, cfg: ArmorConfig) -> ArmorResult:
    """Warm start, then ``steps_K`` rounds of adversary, actor and rollout updates.

    ``M_true`` only supplies shapes and the periodic ``J`` evaluations in
    the trace; training never reads its dynamics.
    """
    S, A = M_true.num_states, M_true.num_actions
    if S > MAX_STATES:
        raise ParameterError(f"iterative solver supports at most {MAX_STATES} states")
    if pi_ref.probs.shape != (S, A):
        raise DimensionError("reference policy shape does not match the MDP")
    if len(D) == 0:
        raise ParameterError("dataset is empty")
    cfg = cfg.resolved(M_true)
    rng = np.random.default_rng(cfg.seed)
    state = warm_start(ArmorState.initial(S, A, pi_ref, cfg.buffer_cap), D, cfg, rng)
    losses = np.empty((cfg.steps_K, 3))
    evals = []
    for k in range(cfg.steps_K):
        state.step = k
        real = sample_real(rng, D, cfg.batch_real)
        mb = sample_model(rng, state, cfg.batch_model)
        adversary_update(state, real, mb, cfg)
        actor_update(state, _union(real, mb)[0], cfg)
        rollout_expand(state, real.s, cfg, rng)
        losses[k] = state.last_losses
        if (k + 1) % cfg.eval_period == 0 or k + 1 == cfg.steps_K:
            evals.append((k + 1, evaluate_policy(M_true, state.policy()).expected_return))
    state.step = cfg.steps_K
    return ArmorResult(state.policy(), losses, evals, state, cfg)


def mean_tv_on_buffer(state: ArmorState) -> float:
    """Mean over buffered states of TV between the learner and the reference."""
    pairs = state.buffer_pairs()
    if pairs.s.size == 0:
        return 0.0
    tv = 0.5 * np.abs(state.policy_probs() - state.pi_ref).sum(axis=1)
    return float(np.mean(tv[pairs.s]))
