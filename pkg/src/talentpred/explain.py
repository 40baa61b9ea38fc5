"""Linear surrogate over the One-mode branch embeddings and its exact Shapley
attributions.

Each talent type gets its own logistic regression on the pre-concatenation
feature vector. For a linear logit ``w.x + b`` with independent features the
Shapley value of feature i is ``w_i * (x_i - E[x_i])``, so no sampling is
needed and the attributions add up to the logit minus the background logit.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .numerics import OptimizerState, ParamSet, adamw_step, bce_with_logits, sigmoid
from .talent import N_TYPES, TYPE_NAMES

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass
class SurrogateConfig:
    lr: float = 0.05
    max_iter: int = 3000
    tol: float = 1e-8
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SurrogateModel:
    weights: Array                      # (types, F)
    bias: Array                         # (types,)
    background_mean: Array              # (F,)
    feature_names: List[str]
    background_size: int
    iterations: int = 0
    losses: List[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[1])

    def logits(self, x) -> Array:
        x = _as_features(x, self.n_features)
        return x @ self.weights.T + self.bias

    def predict_proba(self, x) -> Array:
        return sigmoid(self.logits(x))

    def base_logits(self) -> Array:
        return self.weights @ self.background_mean + self.bias

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "background_mean": self.background_mean.tolist(),
            "background_size": self.background_size,
            "iterations": self.iterations,
        }


def _as_features(x, width: int) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"expected feature vectors of width {width}, got shape {x.shape}")
    return x


def _background_mean(x: Array) -> Array:
    # a float mean of a constant column can drift by an ulp; pin it so that
    # constant features get exactly zero attribution
    mean = x.mean(axis=0)
    const = x.min(axis=0) == x.max(axis=0)
    mean[const] = x[0, const]
    return mean


def surrogate_loss(values: Dict[str, Array], x: Array, y: Array):
    """Summed per-type mean BCE and gradients for ``{"W": (T, F), "b": (T,)}``.

    Summing the per-type means keeps the seven regressions independent: the
    gradient of each row only depends on its own column of labels.
    """
    z = x @ values["W"].T + values["b"]
    loss, dz = bce_with_logits(z, y)
    t = y.shape[1]
    # bce_with_logits averages over every cell; rescale to per-column means
    dz = dz * t
    return loss * t, {"W": dz.T @ x, "b": dz.sum(axis=0)}


def fit_logistic_surrogate(embeddings, labels, config: Optional[SurrogateConfig] = None,
                           seed: int = 0, feature_names: Optional[Sequence[str]] = None) -> SurrogateModel:
    """Fit one logistic regression per talent type by full-batch AdamW.

    Stops once no type's loss moves by more than ``config.tol`` between
    iterations, or after ``config.max_iter`` steps. The training embeddings
    double as the Shapley background.
    """
    cfg = config or SurrogateConfig()
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"embeddings {x.shape} and labels {y.shape} do not line up")
    if x.shape[0] == 0:
        raise DomainError("cannot fit a surrogate on an empty cohort")
    n, f = x.shape
    t = y.shape[1]
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(f)]
    if len(names) != f:
        raise DimensionError("feature_names length differs from embedding width")
    for j in range(t):
        if y[:, j].min() == y[:, j].max():
            label = TYPE_NAMES[j] if t == N_TYPES else str(j)
            log.warning("surrogate column %s is single-class; its weights only fit the bias", label)

    rng = np.random.default_rng(seed)
    params = ParamSet({"W": rng.normal(0.0, 0.01, size=(t, f)), "b": np.zeros(t)})
    state = OptimizerState.for_params(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                                      weight_decay=cfg.weight_decay)
    prev = None
    losses: List[float] = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        z = x @ params["W"].T + params["b"]
        per = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean(axis=0)
        losses.append(float(per.sum()))
        if prev is not None and np.max(np.abs(prev - per)) < cfg.tol:
            break
        prev = per
        _, grads = surrogate_loss(params.values, x, y)
        params.set_grads(grads)
        adamw_step(params, state, cfg.lr)
    return SurrogateModel(params["W"].copy(), params["b"].copy(), _background_mean(x), names, n,
                          iterations=it, losses=losses)


def shap_linear(model: SurrogateModel, x, background=None) -> Array:
    """Exact Shapley values on the logit scale.

    Returns an array of shape (types, F) for a single vector, or
    (rows, types, F) for a matrix. ``background`` overrides the stored mean.
    """
    single = np.asarray(x).ndim == 1
    xs = _as_features(x, model.n_features)
    if background is None:
        mean = model.background_mean
    else:
        mean = _background_mean(_as_features(background, model.n_features))
    phi = model.weights[None, :, :] * (xs - mean)[:, None, :]
    return phi[0] if single else phi


@dataclass
class ShapReport:
    student_ids: List[str]
    feature_names: List[str]
    type_names: List[str]
    values: Array            # (students, types, F)
    base: Array              # (types,) logit at the background mean
    output: Array            # (students, types) surrogate logits
    background_size: int

    def efficiency_error(self) -> float:
        """Largest |sum(phi) - (logit - base)| over the cohort."""
        gap = self.values.sum(axis=2) - (self.output - self.base[None, :])
        return float(np.max(np.abs(gap))) if gap.size else 0.0

    def to_json_dict(self) -> dict:
        prob = sigmoid(self.output)
        students = []
        for i, sid in enumerate(self.student_ids):
            per_type = {}
            for j, t in enumerate(self.type_names):
                per_type[t] = {
                    "logit": float(self.output[i, j]),
                    "probability": float(prob[i, j]),
                    "attributions": dict(zip(self.feature_names, self.values[i, j].tolist())),
                }
            students.append({"id": sid, "types": per_type})
        return {
            "feature_names": list(self.feature_names),
            "base_logit": dict(zip(self.type_names, self.base.tolist())),
            "base_probability": dict(zip(self.type_names, sigmoid(self.base).tolist())),
            "background_size": self.background_size,
            "efficiency_error": self.efficiency_error(),
            "students": students,
        }


def explain_cohort(model: SurrogateModel, embeddings, student_ids: Sequence[str],
                   background=None) -> ShapReport:
    x = _as_features(embeddings, model.n_features)
    if len(student_ids) != x.shape[0]:
        raise DimensionError("one student id per embedding row is required")
    if background is None:
        base = model.base_logits()
        size = model.background_size
    else:
        bg = _as_features(background, model.n_features)
        base = model.weights @ _background_mean(bg) + model.bias
        size = bg.shape[0]
    phi = shap_linear(model, x, background)
    t = model.weights.shape[0]
    types = list(TYPE_NAMES) if t == N_TYPES else [str(j) for j in range(t)]
    return ShapReport(list(student_ids), list(model.feature_names), types, phi, base,
                      model.logits(x), size)


@dataclass
class ImportanceRow:
    type: str
    feature: str
    mean_abs_shap: float
    rank: int


def feature_importance_report(report: ShapReport) -> List[ImportanceRow]:
    """Mean |phi| per feature and type, ranked within each type (1 = largest)."""
    if report.values.shape[0] == 0:
        raise DomainError("importance needs a nonempty cohort")
    mean_abs = np.abs(report.values).mean(axis=0)
    rows: List[ImportanceRow] = []
    for j, t in enumerate(report.type_names):
        order = np.argsort(-mean_abs[j], kind="stable")
        for rank, i in enumerate(order, 1):
            rows.append(ImportanceRow(t, report.feature_names[i], float(mean_abs[j, i]), rank))
    return rows


def importance_csv(rows: Sequence[ImportanceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["type", "feature", "mean_abs_shap", "rank"])
    for r in rows:
        w.writerow([r.type, r.feature, repr(r.mean_abs_shap), r.rank])
    return buf.getvalue()
