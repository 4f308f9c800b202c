"""Soft-margin support vector machine trained in the dual by SMO.

Used as the gate that routes samples between the existing-covariate model and
the binary-covariate model. Features are standardized internally (continuous
columns z-scored, 0/1 columns left alone) with training statistics stored in
the fitted model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KKT_TOL = 1e-3
MAX_ITER = 100_000
TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"  # linear | polynomial | rbf | sigmoid
    gamma: float | None = None  # None: 1 / (d * var) from training data
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "rbf", "sigmoid"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and self.kind == "rbf" and self.gamma <= 0:
            raise ValueError("rbf gamma must be positive")
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")


def kernel_eval(spec: KernelSpec, a, b, gamma: float | None = None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("kernel arguments must have the same arity")
    g = gamma if gamma is not None else (spec.gamma or 1.0)
    if spec.kind == "linear":
        return float(a @ b)
    if spec.kind == "rbf":
        d = a - b
        return float(math.exp(-g * float(d @ d)))
    if spec.kind == "polynomial":
        return float((g * (a @ b) + spec.coef0) ** spec.degree)
    return float(math.tanh(g * (a @ b) + spec.coef0))


def kernel_matrix(spec: KernelSpec, A, B, gamma: float | None = None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    g = gamma if gamma is not None else (spec.gamma or 1.0)
    if spec.kind == "linear":
        return A @ B.T
    if spec.kind == "rbf":
        sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
              - 2.0 * A @ B.T)
        return np.exp(-g * np.maximum(sq, 0.0))
    if spec.kind == "polynomial":
        return (g * (A @ B.T) + spec.coef0) ** spec.degree
    return np.tanh(g * (A @ B.T) + spec.coef0)


@dataclass
class SvmModel:
    support_vectors: np.ndarray      # scaled coordinates
    dual_coef: np.ndarray            # alpha_i * y_i per support vector
    bias: float
    C: float
    kernel: KernelSpec
    gamma: float                     # resolved value actually used
    scale_mean: np.ndarray
    scale_std: np.ndarray
    n_iter: int = 0
    # full training-set duals kept for KKT diagnostics
    alpha: np.ndarray = field(default_factory=lambda: np.array([]))

    def _scale(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.scale_mean):
            raise ValueError("arity mismatch with fitted model")
        return (X - self.scale_mean) / self.scale_std

    def serialize(self) -> str:
        lines = [f"svm-model kernel={self.kernel.kind} gamma={float(self.gamma)!r} "
                 f"degree={self.kernel.degree} coef0={float(self.kernel.coef0)!r} "
                 f"C={float(self.C)!r} bias={float(self.bias)!r}"]
        lines.append("mean " + " ".join(repr(float(v)) for v in self.scale_mean))
        lines.append("std " + " ".join(repr(float(v)) for v in self.scale_std))
        for coef, sv in zip(self.dual_coef, self.support_vectors):
            lines.append(f"sv {float(coef)!r} " + " ".join(repr(float(v)) for v in sv))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "SvmModel":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
        mean = np.array([float(v) for v in lines[1].split()[1:]])
        std = np.array([float(v) for v in lines[2].split()[1:]])
        coefs, svs = [], []
        for ln in lines[3:]:
            parts = ln.split()
            coefs.append(float(parts[1]))
            svs.append([float(v) for v in parts[2:]])
        spec = KernelSpec(kind=head["kernel"], gamma=float(head["gamma"]),
                          degree=int(head["degree"]), coef0=float(head["coef0"]))
        return cls(support_vectors=np.array(svs), dual_coef=np.array(coefs),
                   bias=float(head["bias"]), C=float(head["C"]), kernel=spec,
                   gamma=float(head["gamma"]), scale_mean=mean, scale_std=std)


def _resolve_scaling(X):
    """z-score continuous columns; leave 0/1 columns untouched."""
    mean = np.zeros(X.shape[1])
    std = np.ones(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.all(np.isin(col, (0.0, 1.0))):
            continue
        mean[j] = col.mean()
        s = col.std()
        std[j] = s if s > 0 else 1.0
    return mean, std


def smo_fit(X, y, C: float = 1.0, spec: KernelSpec = KernelSpec(),
            class_weight: dict | None = None, seed: int = 0,
            tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> SvmModel:
    """Sequential minimal optimization with maximal-violating-pair selection.

    y must be in {-1, +1}; class_weight maps class label to a multiplier on C
    (used for gate class balancing).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if set(np.unique(y)) != {-1, 1}:
        raise ValueError("labels must contain both classes, coded -1/+1")
    if C <= 0:
        raise ValueError("C must be positive")
    n = len(y)
    mean, std = _resolve_scaling(X)
    Xs = (X - mean) / std

    gamma = spec.gamma
    if gamma is None:
        var = float(Xs.var())
        gamma = 1.0 / (Xs.shape[1] * var) if var > 0 else 1.0

    Ci = np.full(n, C)
    if class_weight:
        for cls, mult in class_weight.items():
            Ci[y == cls] = C * mult

    K = kernel_matrix(spec, Xs, Xs, gamma=gamma)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a

    it = 0
    for it in range(1, max_iter + 1):
        # I_up: alpha can increase along +y direction; I_low: can decrease
        up = ((y == 1) & (alpha < Ci)) | ((y == -1) & (alpha > 0))
        low = ((y == 1) & (alpha > 0)) | ((y == -1) & (alpha < Ci))
        yg = -y * grad
        m_up = np.where(up, yg, -np.inf)
        m_low = np.where(low, yg, np.inf)
        i = int(np.argmax(m_up))
        j = int(np.argmin(m_low))
        if m_up[i] - m_low[j] < tol:
            break
        # two-variable analytic step along the equality constraint
        eta = Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j]
        eta = max(eta, TAU)
        delta = (m_up[i] - m_low[j]) / eta
        # move alpha_i by +y_i*step, alpha_j by -y_j*step, clipped to the box
        step = delta
        if y[i] == 1:
            step = min(step, Ci[i] - alpha[i])
        else:
            step = min(step, alpha[i])
        if y[j] == 1:
            step = min(step, alpha[j])
        else:
            step = min(step, Ci[j] - alpha[j])
        if step <= 0:
            break
        da_i = y[i] * step
        da_j = -y[j] * step
        alpha[i] += da_i
        alpha[j] += da_j
        grad += Q[:, i] * da_i + Q[:, j] * da_j

    # bias from the violating-pair bounds (midpoint; exact for free SVs)
    up = ((y == 1) & (alpha < Ci)) | ((y == -1) & (alpha > 0))
    low = ((y == 1) & (alpha > 0)) | ((y == -1) & (alpha < Ci))
    yg = -y * grad
    free = (alpha > 1e-9) & (alpha < Ci - 1e-9)
    if np.any(free):
        b = float(np.mean(yg[free]))
    else:
        hi = np.max(np.where(up, yg, -np.inf))
        lo = np.min(np.where(low, yg, np.inf))
        b = float(0.5 * (hi + lo))

    sv = alpha > 1e-10
    return SvmModel(support_vectors=Xs[sv], dual_coef=(alpha * y)[sv], bias=b,
                    C=C, kernel=spec, gamma=gamma, scale_mean=mean, scale_std=std,
                    n_iter=it, alpha=alpha)


def decision(model: SvmModel, X) -> np.ndarray:
    Xs = model._scale(X)
    K = kernel_matrix(model.kernel, Xs, model.support_vectors, gamma=model.gamma)
    return K @ model.dual_coef + model.bias


def classify(model: SvmModel, X) -> np.ndarray:
    """sign of the decision value; an exact zero classifies as +1."""
    d = decision(model, X)
    return np.where(d >= 0, 1, -1)


def kkt_violation(model: SvmModel, X, y, C_per_sample=None) -> float:
    """Maximum KKT violation of the fitted duals on the training data."""
    y = np.asarray(y, dtype=int)
    d = decision(model, X)
    margins = y * d
    alpha = model.alpha
    Ci = C_per_sample if C_per_sample is not None else np.full(len(y), model.C)
    viol = 0.0
    for a, m, c in zip(alpha, margins, Ci):
        if a <= 1e-9:
            viol = max(viol, 1.0 - m) if m < 1.0 else viol
        elif a >= c - 1e-9:
            viol = max(viol, m - 1.0) if m > 1.0 else viol
        else:
            viol = max(viol, abs(m - 1.0))
    return float(viol)


def dual_objective(model: SvmModel, X, y) -> float:
    """Value of the dual objective e'a - 1/2 a'Qa at the fitted alphas."""
    y = np.asarray(y, dtype=int)
    Xs = model._scale(X)
    K = kernel_matrix(model.kernel, Xs, Xs, gamma=model.gamma)
    a = model.alpha
    Q = (y[:, None] * y[None, :]) * K
    return float(np.sum(a) - 0.5 * a @ Q @ a)
