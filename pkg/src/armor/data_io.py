"""Offline datasets: sampling from a behavior policy, model-fitting loss, JSONL I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, DatasetParseError, DimensionError, ParameterError
from .mdp_core import PolicyTable, TabularMDP, default_vmax

SCHEMES = ("occupancy_iid", "trajectory")
# -log of this replaces -log(0) so losses stay finite and thresholdable
LOG_FLOOR = 1e-300


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    sp: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-stored transitions ``(s, a, r, s')`` plus provenance metadata."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    sp: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = [np.asarray(self.s, dtype=np.int64), np.asarray(self.a, dtype=np.int64),
                np.asarray(self.r, dtype=np.float64), np.asarray(self.sp, dtype=np.int64)]
        n = cols[0].size
        if any(c.ndim != 1 or c.size != n for c in cols):
            raise DimensionError("dataset columns must be 1-d and equally long")
        for name, col in zip(("s", "a", "r", "sp"), cols):
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        meta = dict(self.meta)
        meta["n"] = n
        object.__setattr__(self, "meta", meta)

    def __len__(self) -> int:
        return self.s.size

    @property
    def transitions(self) -> list[Transition]:
        return [Transition(int(s), int(a), float(r), int(sp))
                for s, a, r, sp in zip(self.s, self.a, self.r, self.sp)]

    @classmethod
    def from_transitions(cls, transitions, meta=None) -> "Dataset":
        rows = list(transitions)
        cols = list(zip(*rows)) if rows else ([], [], [], [])
        return cls(*[np.array(c) for c in cols], meta=meta or {})

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.concatenate([self.s, other.s]),
            np.concatenate([self.a, other.a]),
            np.concatenate([self.r, other.r]),
            np.concatenate([self.sp, other.sp]),
            meta=dict(self.meta),
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.meta == other.meta
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.r, other.r)
            and np.array_equal(self.sp, other.sp)
        )


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_dataset(
    M_true: TabularMDP,
    mu: PolicyTable,
    n: int,
    seed: int,
    scheme: str = "occupancy_iid",
    reward_noise: float = 0.0,
    behavior_id: str = "mu",
    episode_len: int | None = None,
) -> Dataset:
    """Draw ``n`` transitions generated by ``mu`` on ``M_true``.

    ``occupancy_iid`` gives i.i.d. ``(s, a) ~ d^mu``: each draw rolls from
    ``d0`` and stops after every step with probability ``1 - gamma``.
    ``trajectory`` concatenates fixed-length episodes instead.
    """
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if n < 0:
        raise ParameterError("n must be non-negative")
    if reward_noise < 0:
        raise ParameterError("reward_noise must be non-negative")
    if mu.probs.shape != (M_true.num_states, M_true.num_actions):
        raise DimensionError("behavior policy shape does not match the MDP")
    rng = np.random.default_rng(seed)
    P, pi, g = M_true.transition, mu.probs, M_true.discount

    if scheme == "occupancy_iid":
        s_out = np.empty(n, dtype=np.int64)
        a_out = np.empty(n, dtype=np.int64)
        active = np.arange(n)
        state = _categorical(rng, np.broadcast_to(M_true.initial_dist, (n, M_true.num_states)))
        while active.size:
            act = _categorical(rng, pi[state])
            stop = rng.random(active.size) >= g
            s_out[active[stop]] = state[stop]
            a_out[active[stop]] = act[stop]
            keep = ~stop
            active = active[keep]
            state = _categorical(rng, P[state[keep], act[keep]])
    else:
        L = episode_len or max(1, int(round(1.0 / (1.0 - g))))
        s_list, a_list = [], []
        total = 0
        while total < n:
            s = _categorical(rng, M_true.initial_dist[None, :])[0]
            for _ in range(min(L, n - total)):
                a = _categorical(rng, pi[s][None, :])[0]
                s_list.append(s)
                a_list.append(a)
                s = _categorical(rng, P[s, a][None, :])[0]
                total += 1
        s_out = np.array(s_list, dtype=np.int64)
        a_out = np.array(a_list, dtype=np.int64)

    sp = _categorical(rng, P[s_out, a_out]) if n else np.empty(0, dtype=np.int64)
    r = M_true.reward[s_out, a_out]
    if reward_noise > 0 and n:
        r = r + rng.uniform(-reward_noise, reward_noise, size=n)
    meta = {"seed": int(seed), "scheme": scheme, "behavior_id": behavior_id, "n": int(n)}
    return Dataset(s_out, a_out, r, sp, meta=meta)


def _check_indices(D: Dataset, S: int, A: int) -> None:
    if len(D) == 0:
        return
    if D.s.min() < 0 or D.sp.min() < 0 or D.a.min() < 0:
        raise DataError("negative index in dataset")
    if D.s.max() >= S or D.sp.max() >= S or D.a.max() >= A:
        raise DataError(f"dataset index out of range for S={S}, A={A}")


def transition_counts(D: Dataset, num_states: int, num_actions: int) -> np.ndarray:
    _check_indices(D, num_states, num_actions)
    flat = (D.s * num_actions + D.a) * num_states + D.sp
    counts = np.bincount(flat, minlength=num_states * num_actions * num_states)
    return counts.reshape(num_states, num_actions, num_states).astype(np.float64)


def fit_loss(D: Dataset, M: TabularMDP, vmax: float | None = None) -> float:
    """Sum over ``D`` of ``-log P_M(s'|s,a) + (R_M(s,a) - r)^2 / vmax^2``."""
    vmax = default_vmax(M.discount) if vmax is None else float(vmax)
    counts = transition_counts(D, M.num_states, M.num_actions)
    nll = -np.sum(counts * np.log(np.maximum(M.transition, LOG_FLOOR)))
    sq = np.sum((M.reward[D.s, D.a] - D.r) ** 2) / vmax**2
    return float(nll + sq)


def fit_losses(models, D: Dataset, vmax: float | None = None) -> np.ndarray:
    """``fit_loss`` for every model, sharing the count table."""
    first = models[0]
    vmax = default_vmax(first.discount) if vmax is None else float(vmax)
    counts = transition_counts(D, first.num_states, first.num_actions)
    out = np.empty(len(models))
    for i, m in enumerate(models):
        nll = -np.sum(counts * np.log(np.maximum(m.transition, LOG_FLOOR)))
        out[i] = nll + np.sum((m.reward[D.s, D.a] - D.r) ** 2) / vmax**2
    return out


def save_dataset(D: Dataset, path) -> None:
    lines = [json.dumps({"meta": D.meta}, sort_keys=True)]
    for t in D.transitions:
        lines.append(json.dumps({"s": t.s, "a": t.a, "r": t.r, "sp": t.sp}))
    Path(path).write_text("\n".join(lines) + "\n")


def _int_field(rec: dict, key: str, lineno: int) -> int:
    if key not in rec:
        raise DatasetParseError(f"missing field {key!r}", lineno)
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise DatasetParseError(f"field {key!r} must be an integer", lineno)
    if v < 0:
        raise DatasetParseError(f"field {key!r} must be non-negative, got {v}", lineno)
    return v


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DatasetParseError("metadata line required", 1)
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"invalid JSON ({exc.msg})", 1) from None
    if not isinstance(head, dict) or not isinstance(head.get("meta"), dict):
        raise DatasetParseError("first line must be a {\"meta\": {...}} object", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise DatasetParseError("transition must be a JSON object", lineno)
        s = _int_field(rec, "s", lineno)
        a = _int_field(rec, "a", lineno)
        sp = _int_field(rec, "sp", lineno)
        r = rec.get("r")
        if isinstance(r, bool) or not isinstance(r, (int, float)):
            raise DatasetParseError("field 'r' must be a number", lineno)
        rows.append(Transition(s, a, float(r), sp))
    meta = dict(head["meta"])
    if "n" in meta and meta["n"] != len(rows):
        raise DatasetParseError(f"meta.n={meta['n']} but file holds {len(rows)} transitions", 1)
    return Dataset.from_transitions(rows, meta=meta)
