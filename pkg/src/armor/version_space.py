"""Finite model classes and the data-consistent version space around the MLE."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import Dataset, fit_losses, sample_dataset
from .errors import DimensionError, ParameterError
from .mdp_core import PolicyTable, TabularMDP, stack_models

# alpha = c * log(|class| / delta), c scanned over 2^-6 .. 2^8
CALIBRATION_GRID = tuple(2.0**k for k in range(-6, 9))


@dataclass(frozen=True, eq=False)
class ModelClass:
    models: tuple
    labels: tuple
    true_index: int | None = None

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ParameterError("model class must be nonempty")
        stack_models(models)
        labels = tuple(self.labels) if self.labels else tuple(f"m{i}" for i in range(len(models)))
        if len(labels) != len(models):
            raise DimensionError("one label per model required")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "labels", labels)
        if self.true_index is not None and not 0 <= self.true_index < len(models):
            raise ParameterError("true_index out of range")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def realizable(self) -> bool:
        return self.true_index is not None

    def index_of(self, M: TabularMDP) -> int | None:
        for i, m in enumerate(self.models):
            if m.same_as(M):
                return i
        return None

    def to_list(self) -> list:
        docs = []
        for label, m in zip(self.labels, self.models):
            doc = m.to_dict()
            doc["label"] = label
            docs.append(doc)
        return docs

    @classmethod
    def from_list(cls, docs, true_model: TabularMDP | None = None) -> "ModelClass":
        if not isinstance(docs, list) or not docs:
            raise ParameterError("model class document must be a nonempty JSON array")
        models = [TabularMDP.from_dict(d) for d in docs]
        labels = [d.get("label", f"m{i}") for i, d in enumerate(docs)]
        mc = cls(models, labels)
        if true_model is not None:
            mc = cls(models, labels, mc.index_of(true_model))
        return mc


def save_class(mc: ModelClass, path) -> None:
    Path(path).write_text(json.dumps(mc.to_list()) + "\n")


def load_class(path, true_model: TabularMDP | None = None) -> ModelClass:
    return ModelClass.from_list(json.loads(Path(path).read_text()), true_model)


def perturbed_class(M_true: TabularMDP, size: int, perturb_scale: float, seed: int) -> ModelClass:
    """``M_true`` at index 0 plus ``size - 1`` random perturbations of it.

    Each perturbed model mixes every transition row with a Dirichlet(1) row
    at weight ``rho ~ U(scale/2, scale)`` and shifts rewards by
    ``U(-scale, scale)``, clipped to ``[0, 1]``.
    """
    if size < 1:
        raise ParameterError("class size must be at least 1")
    if not 0.0 <= perturb_scale <= 1.0:
        raise ParameterError("perturb_scale must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    S, A = M_true.num_states, M_true.num_actions
    models, labels = [M_true], ["true"]
    for i in range(1, size):
        rho = rng.uniform(0.5 * perturb_scale, perturb_scale)
        noise = rng.dirichlet(np.ones(S), size=(S, A))
        P = (1.0 - rho) * M_true.transition + rho * noise
        P /= P.sum(axis=2, keepdims=True)
        R = np.clip(M_true.reward + rng.uniform(-perturb_scale, perturb_scale, size=(S, A)), 0.0, 1.0)
        models.append(M_true.replace(transition=P, reward=R))
        labels.append(f"perturb{i}")
    return ModelClass(models, labels, true_index=0)


@dataclass(frozen=True, eq=False)
class VersionSpace:
    class_ref: ModelClass
    losses: np.ndarray
    alpha: float
    member_indices: tuple

    @property
    def min_loss(self) -> float:
        return float(self.losses.min())

    @property
    def members(self) -> list:
        return [self.class_ref.models[i] for i in self.member_indices]

    def __contains__(self, index: int) -> bool:
        return index in self.member_indices

    def __len__(self) -> int:
        return len(self.member_indices)

    def restrict(self, alpha: float) -> "VersionSpace":
        """Same losses, different threshold."""
        return threshold(self.class_ref, self.losses, alpha)


def threshold(mc: ModelClass, losses: np.ndarray, alpha: float) -> VersionSpace:
    if alpha < 0 or math.isnan(alpha):
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    losses = np.asarray(losses, dtype=np.float64)
    members = tuple(int(i) for i in np.flatnonzero(losses - losses.min() <= alpha))
    return VersionSpace(mc, losses, float(alpha), members)


def mle_fit(mc: ModelClass, D: Dataset, vmax: float | None = None) -> tuple[int, float]:
    losses = fit_losses(mc.models, D, vmax)
    i = int(np.argmin(losses))
    return i, float(losses[i])


def build_version_space(mc: ModelClass, D: Dataset, alpha: float, vmax: float | None = None) -> VersionSpace:
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    return threshold(mc, fit_losses(mc.models, D, vmax), alpha)


def whole_class(mc: ModelClass) -> VersionSpace:
    """Version space containing every model (no data)."""
    return VersionSpace(mc, np.zeros(len(mc)), math.inf, tuple(range(len(mc))))


def trial_seeds(seed: int, trials: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(trials, dtype=np.uint32)]


def true_model_gaps(mc: ModelClass, true_index: int, M_true: TabularMDP, mu: PolicyTable,
                    n: int, seeds, vmax: float | None = None, scheme: str = "occupancy_iid"):
    """Per-dataset ``loss(M_true) - min loss`` and the full loss matrix."""
    all_losses = np.empty((len(seeds), len(mc)))
    for t, sd in enumerate(seeds):
        D = sample_dataset(M_true, mu, n, sd, scheme=scheme)
        all_losses[t] = fit_losses(mc.models, D, vmax)
    gaps = all_losses[:, true_index] - all_losses.min(axis=1)
    return gaps, all_losses


def calibrate_constant(mc: ModelClass, M_true: TabularMDP, mu: PolicyTable, n: int, delta: float,
                       trials: int, seed: int, vmax: float | None = None) -> tuple[float, float]:
    """Return ``(c, alpha)`` with the smallest grid ``c`` reaching ``1 - delta`` coverage."""
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if trials < 1 or trials < 10.0 / delta:
        raise ParameterError(f"need at least {math.ceil(10.0 / delta)} trials to resolve delta={delta}")
    true_index = mc.index_of(M_true)
    if true_index is None:
        raise ParameterError("M_true must belong to the model class")
    gaps, _ = true_model_gaps(mc, true_index, M_true, mu, n, trial_seeds(seed, trials), vmax)
    scale = math.log(len(mc) / delta)
    for c in CALIBRATION_GRID:
        alpha = c * scale
        if np.mean(gaps <= alpha) >= 1.0 - delta:
            return c, alpha
    raise ParameterError(
        f"calibration grid exhausted: largest gap {gaps.max():.3g} exceeds {CALIBRATION_GRID[-1]}*{scale:.3g}"
    )


def calibrate_alpha(mc: ModelClass, M_true: TabularMDP, mu: PolicyTable, n: int, delta: float,
                    trials: int, seed: int, vmax: float | None = None) -> float:
    return calibrate_constant(mc, M_true, mu, n, delta, trials, seed, vmax)[1]
