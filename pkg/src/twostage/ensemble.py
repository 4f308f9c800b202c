"""Prediction combination: weighted averaging, the composite model, and the
SVM-gated two-stage predictor with its truth-dependent oracle ceiling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import glm, logicreg, metrics, svm
from .dataset import Dataset, split_dataset
from .glm import LogisticModel, WeightSpec

SOURCES = ("existing", "genetic_logistic", "genetic_logic", "composite",
           "averaged", "two_stage_oracle", "two_stage_gated")

# A predictor maps a Dataset to per-sample probability (or 0/1) scores.
PredictorFn = Callable[[Dataset], np.ndarray]


class GateDegenerateError(RuntimeError):
    """Base model is perfect (or perfectly wrong) on its training data."""


@dataclass
class PredictionSet:
    ids: list[str]
    scores: np.ndarray
    source: list[str]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if len(self.ids) != len(self.scores) or len(self.source) != len(self.scores):
            raise ValueError("prediction arity mismatch")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("scores must lie in [0, 1]")

    def classes(self, threshold: float = 0.5) -> np.ndarray:
        return (self.scores >= threshold).astype(int)

    def to_csv(self, gate_decisions=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["id", "score", "source", "gate_decision"])
        for i, (sid, s, src) in enumerate(zip(self.ids, self.scores, self.source)):
            gd = "" if gate_decisions is None else str(int(gate_decisions[i]))
            w.writerow([sid, repr(float(s)), src, gd])
        return buf.getvalue()


def prediction_set(ds: Dataset, scores, source: str) -> PredictionSet:
    return PredictionSet(ids=list(ds.ids), scores=scores, source=[source] * ds.n)


# ---------------------------------------------------------------------------
# predictor adapters over the three covariate blocks

def logistic_predictor(model: LogisticModel, columns: str, source: str) -> PredictorFn:
    """columns: 'x' | 'z' | explicit behavior via model names resolved per call."""
    def run(ds: Dataset) -> np.ndarray:
        return glm.predict_prob(model, _design(ds, model.names))
    run.source = source  # type: ignore[attr-defined]
    return run


def logic_predictor(model: logicreg.LogicModel, source: str = "genetic_logic") -> PredictorFn:
    def run(ds: Dataset) -> np.ndarray:
        pred = logicreg.predict(model, ds.x)
        return np.clip(pred, 0.0, 1.0)
    run.source = source  # type: ignore[attr-defined]
    return run


def _design(ds: Dataset, names: list[str]) -> np.ndarray:
    cols = []
    for name in names:
        if name in ds.x_names:
            cols.append(ds.x[:, ds.x_names.index(name)].astype(float))
        elif name in ds.z_names:
            cols.append(ds.z[:, ds.z_names.index(name)])
        else:
            raise ValueError(f"covariate {name!r} not present in dataset")
    return np.column_stack(cols) if cols else np.empty((ds.n, 0))


def gate_feature_matrix(ds: Dataset, gate_features: str | list[str]) -> np.ndarray:
    """'x', 'z', 'xz', or an explicit column-name list."""
    if isinstance(gate_features, str):
        if gate_features == "x":
            return ds.x.astype(float)
        if gate_features == "z":
            return ds.z.copy()
        if gate_features == "xz":
            return np.column_stack([ds.x.astype(float), ds.z]) if ds.p and ds.p_prime \
                else (ds.x.astype(float) if ds.p else ds.z.copy())
        raise ValueError(f"unknown gate feature spec {gate_features!r}")
    return _design(ds, list(gate_features))


# ---------------------------------------------------------------------------
# weighted average (model mixing on the probability scale)

def weighted_average(yhat_e: PredictionSet, yhat_m: PredictionSet,
                     alpha: float) -> PredictionSet:
    if yhat_e.ids != yhat_m.ids:
        raise ValueError("prediction sets cover different samples")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must be in [0, 1]")
    mixed = alpha * yhat_e.scores + (1.0 - alpha) * yhat_m.scores
    return PredictionSet(ids=list(yhat_e.ids), scores=mixed,
                         source=["averaged"] * len(mixed))


@dataclass
class AlphaSelection:
    alpha: float
    grid: list[float]
    mean_auroc: list[float]
    seed: int


def select_alpha(predict_e: PredictorFn, predict_m: PredictorFn, data: Dataset,
                 n_repeats: int = 20, grid=None, seed: int = 0) -> AlphaSelection:
    """Repeated re-split evaluation of each mixing weight; ties pick smaller alpha."""
    if grid is None:
        grid = [round(0.1 * g, 1) for g in range(11)]
    grid = list(grid)
    if not grid or n_repeats < 1:
        raise ValueError("need a non-empty grid and n_repeats >= 1")
    totals = np.zeros(len(grid))
    for r in range(n_repeats):
        resplit = split_dataset(data, (0.7, 0.3), seed=seed + 7919 * r)
        test = resplit.part("test")
        se = predict_e(test)
        sm = predict_m(test)
        for gi, a in enumerate(grid):
            totals[gi] += metrics.auroc(a * se + (1 - a) * sm, test.y)
    means = totals / n_repeats
    best = int(np.argmax(np.round(means, 12)))  # argmax takes first on ties
    # explicit tie rule: smallest alpha among near-equal bests
    best_val = means[best]
    for gi in np.argsort(grid):
        if means[gi] >= best_val - 1e-12:
            best = int(gi)
            break
    return AlphaSelection(alpha=float(grid[best]), grid=[float(a) for a in grid],
                          mean_auroc=[float(v) for v in means], seed=seed)


# ---------------------------------------------------------------------------
# composite model

def fit_composite(data: Dataset, genetic_x_names: list[str],
                  weights: WeightSpec | None = None) -> LogisticModel:
    """Union of the genetic model's selected X covariates with all Z covariates,
    fit as one (weighted) logistic model on the given data."""
    if data.p_prime == 0:
        raise ValueError("composite model needs existing covariates Z")
    names = [n for n in genetic_x_names if n] + list(data.z_names)
    seen = []
    for n in names:
        if n not in seen:
            seen.append(n)
    design = _design(data, seen)
    model = glm.fit_weighted_logistic(design, data.y, weights, seen)
    return model


def selected_x_names(model, ds: Dataset) -> list[str]:
    """X covariates a genetic model actually uses (slopes or tree leaves)."""
    if isinstance(model, logicreg.LogicModel):
        idx = sorted(set().union(*[logicreg.leaf_indices(t) for t in model.trees])
                     if model.trees else set())
        return [ds.x_names[j] for j in idx]
    return [n for n, c in zip(model.names, model.coefficients) if abs(c) > 1e-12]


# ---------------------------------------------------------------------------
# gated two-stage prediction

@dataclass
class GateModel:
    svm_model: svm.SvmModel | None   # None: pass-through (all samples to base)
    gate_features: str | list[str]
    base_source: str = "existing"

    def route(self, ds: Dataset) -> np.ndarray:
        """+1: covariate subspace where the base model is trusted; -1: not."""
        if self.svm_model is None:
            return np.ones(ds.n, dtype=int)
        G = gate_feature_matrix(ds, self.gate_features)
        return svm.classify(self.svm_model, G)


def passthrough_gate(gate_features="xz") -> GateModel:
    return GateModel(svm_model=None, gate_features=gate_features)


def train_gate(predict_base: PredictorFn, train_data: Dataset,
               gate_features="xz", C: float = 1.0,
               kernel: svm.KernelSpec = svm.KernelSpec(kind="rbf"),
               balanced: bool = True, seed: int = 0) -> GateModel:
    """Label training samples +1/-1 by base-model correctness and fit the SVM."""
    scores = predict_base(train_data)
    correct = (scores >= 0.5).astype(int) == train_data.y
    labels = np.where(correct, 1, -1)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == -1))
    if n_pos < 2 or n_neg < 2:
        raise GateDegenerateError(
            f"gate classes too small (correct={n_pos}, incorrect={n_neg})")
    G = gate_feature_matrix(train_data, gate_features)
    class_weight = None
    if balanced:
        n = len(labels)
        class_weight = {1: n / (2.0 * n_pos), -1: n / (2.0 * n_neg)}
    model = svm.smo_fit(G, labels, C=C, spec=kernel, class_weight=class_weight,
                        seed=seed)
    base_source = getattr(predict_base, "source", "existing")
    return GateModel(svm_model=model, gate_features=gate_features,
                     base_source=base_source)


def two_stage_predict(gate: GateModel, predict_e: PredictorFn,
                      predict_m: PredictorFn, data: Dataset
                      ) -> tuple[PredictionSet, np.ndarray]:
    """Route each sample to the existing or the binary-data model per the gate.

    Returns the prediction set plus the raw gate decisions (+1/-1).
    """
    routes = gate.route(data)
    se = predict_e(data)
    sm = predict_m(data)
    scores = np.where(routes == 1, se, sm)
    src_e = getattr(predict_e, "source", "existing")
    src_m = getattr(predict_m, "source", "genetic_logistic")
    source = [src_e if r == 1 else src_m for r in routes]
    return PredictionSet(ids=list(data.ids), scores=scores, source=source), routes


def two_stage_oracle(predict_e: PredictorFn, predict_m: PredictorFn,
                     data: Dataset) -> PredictionSet:
    """Truth-dependent ideal routing: keep the existing model's prediction
    wherever it is correct. Upper-bound reference only, never reported."""
    se = predict_e(data)
    sm = predict_m(data)
    correct = (se >= 0.5).astype(int) == data.y
    scores = np.where(correct, se, sm)
    source = ["two_stage_oracle"] * data.n
    return PredictionSet(ids=list(data.ids), scores=scores, source=source)
