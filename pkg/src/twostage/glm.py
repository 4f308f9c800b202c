"""Weighted logistic regression fitted by iteratively reweighted least squares.

Backend for the existing-covariate model, the composite model, and the
coefficient re-estimation steps inside the tree search and the stepwise
selector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Linear predictors are clamped here before the inverse logit so that
# exp() never over/underflows; sigmoid(35) is 1 to within 7e-16.
ETA_CLAMP = 35.0

# |coefficient| above this during IRLS is treated as quasi-separation.
SEPARATION_LIMIT = 30.0
SEPARATION_RIDGE = 1e-4

IRLS_MAX_ITER = 100
IRLS_REL_TOL = 1e-12


class RankDeficientError(ValueError):
    """Design matrix is not full rank; names the offending columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design, collinear columns: {self.columns}")


@dataclass(frozen=True)
class WeightSpec:
    """Per-sample fitting weights: none, case/control balancing, or explicit."""

    mode: str = "unweighted"  # unweighted | class_balanced | explicit
    values: np.ndarray | None = None

    def resolve(self, y: np.ndarray) -> np.ndarray:
        n = len(y)
        if self.mode == "unweighted":
            return np.ones(n)
        if self.mode == "class_balanced":
            # each class receives total weight n/2
            w = np.empty(n)
            for cls in (0, 1):
                mask = y == cls
                n_c = int(mask.sum())
                if n_c == 0:
                    raise ValueError("class_balanced weights need both classes present")
                w[mask] = n / (2.0 * n_c)
            return w
        if self.mode == "explicit":
            w = np.asarray(self.values, dtype=float)
            if w.shape != (n,):
                raise ValueError("explicit weights must match sample count")
            if np.any(w <= 0):
                raise ValueError("weights must be positive")
            return w
        raise ValueError(f"unknown weight mode {self.mode!r}")


@dataclass
class LogisticModel:
    names: list[str]
    coefficients: np.ndarray
    intercept: float
    weight_mode: str = "unweighted"
    converged: bool = True
    separated: bool = False
    deviance: float = float("nan")
    n_iter: int = 0

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.names):
            raise ValueError(
                f"arity mismatch: model has {len(self.names)} covariates, got {X.shape[1]}"
            )
        return self.intercept + X @ self.coefficients

    def serialize(self) -> str:
        lines = ["logistic-model", f"weight_mode {self.weight_mode}",
                 f"separated {int(self.separated)}", f"intercept {float(self.intercept)!r}"]
        for name, c in zip(self.names, self.coefficients):
            lines.append(f"coef {name} {float(c)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "LogisticModel":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if lines[0] != "logistic-model":
            raise ValueError("not a serialized logistic model")
        names, coefs = [], []
        intercept = 0.0
        weight_mode = "unweighted"
        separated = False
        for ln in lines[1:]:
            key, rest = ln.split(None, 1)
            if key == "intercept":
                intercept = float(rest)
            elif key == "coef":
                name, val = rest.rsplit(None, 1)
                names.append(name)
                coefs.append(float(val))
            elif key == "weight_mode":
                weight_mode = rest.strip()
            elif key == "separated":
                separated = bool(int(rest))
        return cls(names=names, coefficients=np.array(coefs), intercept=intercept,
                   weight_mode=weight_mode, separated=separated)


def sigmoid(eta: np.ndarray) -> np.ndarray:
    eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return 1.0 / (1.0 + np.exp(-eta))


def binomial_deviance(y: np.ndarray, p: np.ndarray, weights: np.ndarray | None = None) -> float:
    p = np.clip(p, 1e-300, 1 - 1e-16)
    ll = y * np.log(p) + (1 - y) * np.log1p(-p)
    if weights is not None:
        ll = weights * ll
    return float(-2.0 * np.sum(ll))


def _check_rank(X_aug: np.ndarray, names: list[str]) -> None:
    rank = np.linalg.matrix_rank(X_aug)
    if rank == X_aug.shape[1]:
        return
    # identify a minimal set of columns whose removal restores full rank
    bad = []
    keep = [0]  # intercept always kept
    for j in range(1, X_aug.shape[1]):
        trial = X_aug[:, keep + [j]]
        if np.linalg.matrix_rank(trial) == len(keep) + 1:
            keep.append(j)
        else:
            bad.append(names[j - 1])
    raise RankDeficientError(bad)


def _irls(X_aug, y, w, ridge=0.0):
    """Core IRLS loop; returns (beta, deviance, n_iter, hit_separation)."""
    n, d = X_aug.shape
    beta = np.zeros(d)
    dev = binomial_deviance(y, np.full(n, 0.5), w)
    hit_sep = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        eta = np.clip(X_aug @ beta, -ETA_CLAMP, ETA_CLAMP)
        p = sigmoid(eta)
        v = np.maximum(p * (1 - p), 1e-12)
        wt = w * v
        z = eta + (y - p) / v
        A = X_aug.T @ (X_aug * wt[:, None])
        if ridge > 0:
            A = A + ridge * np.eye(d)
        b = X_aug.T @ (wt * z)
        beta_new = np.linalg.solve(A, b)
        p_new = sigmoid(X_aug @ beta_new)
        dev_new = binomial_deviance(y, p_new, w)
        if ridge == 0.0 and np.max(np.abs(beta_new)) > SEPARATION_LIMIT:
            hit_sep = True
            beta = beta_new
            dev = dev_new
            break
        rel = abs(dev - dev_new) / (abs(dev) + 1e-12)
        beta = beta_new
        dev = dev_new
        if rel < IRLS_REL_TOL:
            break
    return beta, dev, it, hit_sep


def fit_weighted_logistic(X, y, weights: WeightSpec | None = None,
                          names: list[str] | None = None) -> LogisticModel:
    """Maximize the weighted binomial log-likelihood over (intercept, slopes).

    Quasi-separated fits (any |coefficient| > 30 during IRLS) are refit with a
    small ridge penalty and flagged ``separated`` so downstream predictions
    stay finite and reproducible.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if names is None:
        names = [f"v{j}" for j in range(d)]
    if len(names) != d:
        raise ValueError("names length must match column count")
    if n < d + 1:
        raise ValueError(f"need n >= #columns + 1 (n={n}, columns={d})")
    if d > 0 and np.any(np.all(X == 0, axis=0)):
        zero = [names[j] for j in range(d) if np.all(X[:, j] == 0)]
        raise ValueError(f"constant-zero columns: {zero}")
    spec = weights or WeightSpec()
    w = spec.resolve(y.astype(int))

    X_aug = np.column_stack([np.ones(n), X])
    if d > 0:
        _check_rank(X_aug, names)

    beta, dev, it, hit_sep = _irls(X_aug, y, w, ridge=0.0)
    separated = False
    if hit_sep:
        separated = True
        beta, dev, it, _ = _irls(X_aug, y, w, ridge=SEPARATION_RIDGE)

    p = sigmoid(X_aug @ beta)
    grad = X_aug.T @ (w * (y - p))
    converged = separated or bool(np.linalg.norm(grad) < 1e-6)
    return LogisticModel(names=list(names), coefficients=beta[1:], intercept=float(beta[0]),
                         weight_mode=spec.mode, converged=converged, separated=separated,
                         deviance=dev, n_iter=it)


def predict_prob(model: LogisticModel, X) -> np.ndarray:
    """Inverse-logit of the clamped linear predictor; always in (0, 1)."""
    return sigmoid(model.linear_predictor(X))


def classify(probability, threshold: float = 0.5):
    """Positive call iff probability >= threshold; the boundary maps to 1."""
    p = np.asarray(probability, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probability outside [0, 1]")
    out = (p >= threshold).astype(int)
    return out if p.ndim else int(out)
