"""Variable selection for the n < p regime.

L1-constrained logistic fits are computed by cyclic coordinate descent on the
penalized form, with a bisection map from penalty strength to the constraint
bound. Selection repeats the fit, dropping zero-coefficient covariates, and
falls back to removing the smallest-coefficient variable one at a time until
fewer variables than samples remain. The survivors feed a backward stepwise
logistic model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .glm import (LogisticModel, WeightSpec, binomial_deviance, fit_weighted_logistic,
                  sigmoid)

CD_TOL = 1e-7
CD_MAX_SWEEPS = 60  # outer re-approximations; inner cycles cap at 30 each
BOUND_SLACK = 1e-8


@dataclass
class LassoFit:
    coefficients: np.ndarray   # slopes over the active covariates
    intercept: float
    bound: float
    converged: bool
    objective: float           # binomial deviance at the fit
    penalty: float = 0.0       # Lagrange multiplier realizing the bound


@dataclass
class SelectionRecord:
    active_before: list[int]
    coefficients: np.ndarray
    removed: list[int]
    reason: str  # zero_coefficient | smallest_coefficient_fallback


@dataclass
class SelectionTrace:
    records: list[SelectionRecord] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)

    def serialize(self) -> str:
        lines = []
        for i, rec in enumerate(self.records):
            lines.append(f"iteration {i} active={len(rec.active_before)} "
                         f"removed={rec.removed} reason={rec.reason}")
        lines.append(f"selected {self.selected}")
        return "\n".join(lines) + "\n"


def _nll(eta, y):
    # sum log(1+exp(eta)) - y*eta, stable
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _cd_penalized(X, y, lam, beta0, beta, max_iter=3000, tol=CD_TOL, obj_tol=1e-12):
    """Accelerated proximal-gradient solve of nll + lam*||slopes||_1.

    The intercept is unpenalized; slopes are soft-thresholded each step and
    capped at +/-40 so separable inputs stay bounded. Momentum restarts keep
    the objective monotone.
    """
    n, d = X.shape
    cap = 40.0
    Xa = np.column_stack([np.ones(n), X])
    # Lipschitz constant of the logistic gradient: ||Xa||_2^2 / 4
    L = np.linalg.norm(Xa, 2) ** 2 / 4.0
    step = 1.0 / L

    def objective(b0, b):
        eta = b0 + X @ b
        return _nll(eta, y) + lam * float(np.sum(np.abs(b)))

    theta = np.concatenate([[beta0], beta])
    mom = theta.copy()
    t_k = 1.0
    obj = objective(theta[0], theta[1:])
    converged = False
    for _ in range(max_iter):
        eta = Xa @ mom
        p = sigmoid(eta)
        grad = Xa.T @ (p - y)
        new = mom - step * grad
        new[1:] = np.sign(new[1:]) * np.maximum(np.abs(new[1:]) - step * lam, 0.0)
        new = np.clip(new, -cap, cap)
        new_obj = objective(new[0], new[1:])
        if new_obj > obj:  # restart momentum
            mom = theta.copy()
            t_k = 1.0
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        mom = new + ((t_k - 1.0) / t_next) * (new - theta)
        delta = float(np.max(np.abs(new - theta)))
        theta = new
        t_k = t_next
        if abs(obj - new_obj) < obj_tol * (1.0 + abs(obj)) and delta < tol:
            converged = True
            obj = new_obj
            break
        obj = new_obj
    return float(theta[0]), theta[1:], converged


def _intercept_only(y):
    mean = float(np.mean(y))
    mean = min(max(mean, 1e-12), 1 - 1e-12)
    return float(np.log(mean / (1 - mean)))


def lasso_logistic(X, y, bound: float, lam_hint: float | None = None) -> LassoFit:
    """Minimize binomial deviance subject to sum|slopes| <= bound.

    lam_hint seeds the penalty bisection with a previous fit's multiplier
    (used by iterative_select, where consecutive problems are similar).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if bound < 0:
        raise ValueError("bound must be >= 0")
    n, d = X.shape
    if bound == 0.0 or d == 0:
        b0 = _intercept_only(y)
        dev = binomial_deviance(y, np.full(n, sigmoid(b0)))
        return LassoFit(coefficients=np.zeros(d), intercept=b0, bound=bound,
                        converged=True, objective=dev, penalty=np.inf)

    def fit_at(lam, warm=None, loose=False):
        if warm is None:
            b0, beta = _intercept_only(y), np.zeros(d)
        else:
            b0, beta = warm[0], warm[1].copy()
        if loose:
            # bisection probes only need the constraint norm roughly right;
            # the winning multiplier is re-solved tightly afterwards
            return _cd_penalized(X, y, lam, b0, beta, max_iter=800,
                                 tol=1e-5, obj_tol=1e-10)
        return _cd_penalized(X, y, lam, b0, beta)

    # lam above lam_max zeroes every slope
    p0 = np.mean(y)
    lam_max = float(np.max(np.abs(X.T @ (y - p0)))) + 1e-12

    # near-unpenalized solution first: if it already satisfies the bound the
    # constraint is slack and the unconstrained optimum is the answer
    # (skipped under a hint: the caller knows the constraint binds)
    lam_eps = 1e-8 * lam_max
    if lam_hint is None:
        b0, beta, conv = fit_at(lam_eps)
    else:
        b0, beta, conv = _intercept_only(y), np.zeros(d), True
    if lam_hint is None and np.sum(np.abs(beta)) <= bound + BOUND_SLACK:
        if d < n:
            try:
                model = fit_weighted_logistic(X, y)
                if not model.separated and np.sum(np.abs(model.coefficients)) <= bound:
                    b0, beta, conv = model.intercept, model.coefficients, True
            except (ValueError, np.linalg.LinAlgError):
                pass
        dev = binomial_deviance(y, sigmoid(b0 + X @ beta))
        return LassoFit(coefficients=beta, intercept=b0, bound=bound,
                        converged=conv, objective=dev, penalty=0.0)

    # bisect lam so that ||slopes||_1 hits the bound from below
    lo, hi = 0.0, lam_max
    best = None  # feasible side (norm <= bound)
    warm = (b0, beta)
    if lam_hint is not None and 0.0 < lam_hint < lam_max:
        b0_h, beta_h, conv_h = fit_at(lam_hint, warm, loose=True)
        warm = (b0_h, beta_h)
        norm_h = float(np.sum(np.abs(beta_h)))
        if norm_h <= bound + BOUND_SLACK:
            best = (b0_h, beta_h.copy(), conv_h, lam_hint)
            hi = lam_hint
        else:
            lo = lam_hint
    f_lo = None  # norm(lo) - bound on the infeasible side (positive)
    f_hi = None  # feasible side (negative)
    if lam_hint is not None and 0.0 < lam_hint < lam_max:
        if hi == lam_hint:
            f_hi = float(np.sum(np.abs(warm[1]))) - bound
        elif lo == lam_hint:
            f_lo = float(np.sum(np.abs(warm[1]))) - bound
    last_side = None
    for it in range(40):
        if f_lo is not None and f_hi is not None and f_lo > 0.0 > f_hi:
            # false position on the monotone norm(lam) curve, safeguarded
            lam = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            lam = min(max(lam, lo + 0.02 * (hi - lo)), hi - 0.02 * (hi - lo))
        else:
            lam = 0.5 * (lo + hi)
        loose = it < 25 and (hi - lo) > 1e-6 * lam_max
        b0_l, beta_l, conv_l = fit_at(lam, warm, loose=loose)
        warm = (b0_l, beta_l)
        norm = float(np.sum(np.abs(beta_l)))
        if norm <= bound + BOUND_SLACK:
            if not loose:
                best = (b0_l, beta_l.copy(), conv_l, lam)
            elif best is None or lam <= best[3]:
                best = (b0_l, beta_l.copy(), conv_l, lam)
            hi, f_hi = lam, norm - bound
            if last_side == "hi" and f_lo is not None:
                f_lo *= 0.5  # Illinois step against stagnation
            last_side = "hi"
        else:
            lo, f_lo = lam, norm - bound
            if last_side == "lo" and f_hi is not None:
                f_hi *= 0.5
            last_side = "lo"
        if not loose and norm <= bound + BOUND_SLACK \
                and abs(norm - bound) <= 1e-9 * (1.0 + bound):
            break
        if not loose and hi - lo < 1e-10 * lam_max:
            break
    if best is None:
        b0_l, beta_l, conv_l = fit_at(lam_max)
        best = (b0_l, beta_l, conv_l, lam_max)
    b0, beta, conv, lam = best
    # final tight solve at the winning multiplier (probes may have been loose)
    b0_t, beta_t, conv_t = fit_at(lam, (b0, beta))
    if float(np.sum(np.abs(beta_t))) <= bound + BOUND_SLACK:
        b0, beta, conv = b0_t, beta_t, conv_t
    dev = binomial_deviance(y, sigmoid(b0 + X @ beta))
    return LassoFit(coefficients=beta, intercept=b0, bound=bound,
                    converged=conv, objective=dev, penalty=lam)


def cv_bound(X, y, grid=None, n_folds: int = 5, seed: int = 0) -> float:
    """Pick the L1 bound by cross-validated held-out deviance."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if grid is None:
        grid = np.geomspace(0.05, 16.0, 20)
    grid = np.sort(np.asarray(grid, dtype=float))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, n_folds)
    devs = np.full((len(grid), n_folds), np.nan)
    for k in range(n_folds):
        val = folds[k]
        train = np.concatenate([folds[j] for j in range(n_folds) if j != k])
        if len(np.unique(y[train])) < 2:
            continue
        # ascending bounds: the previous multiplier brackets the next one
        hint = None
        for b, bound in enumerate(grid):
            fit = lasso_logistic(X[train], y[train], bound, lam_hint=hint)
            hint = fit.penalty if 0.0 < fit.penalty < np.inf else None
            p = sigmoid(fit.intercept + X[val] @ fit.coefficients)
            devs[b, k] = binomial_deviance(y[val], p) / len(val)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_dev = np.nanmean(devs, axis=1)
    mean_dev = np.where(np.isnan(mean_dev), np.inf, mean_dev)
    return float(grid[int(np.argmin(mean_dev))])


@dataclass(frozen=True)
class SelectConfig:
    bound: float | None = None  # None: 5-fold CV over a log grid
    cv_folds: int = 5
    seed: int = 0
    zero_tol: float = 1e-10


def iterative_select(X, y, config: SelectConfig = SelectConfig()) -> SelectionTrace:
    """Iterated LASSO elimination with a smallest-coefficient fallback.

    Guarantees the final active set has fewer variables than samples.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if d == 0:
        raise ValueError("X must be non-empty")
    bound = config.bound if config.bound is not None else cv_bound(
        X, y, n_folds=config.cv_folds, seed=config.seed)

    trace = SelectionTrace()
    active = list(range(d))
    hint = None
    while True:
        fit = lasso_logistic(X[:, active], y, bound, lam_hint=hint)
        hint = fit.penalty if 0.0 < fit.penalty < np.inf else None
        zero = [active[j] for j in range(len(active))
                if abs(fit.coefficients[j]) <= config.zero_tol]
        if not zero or len(zero) == len(active):
            # stable active set (or everything zero: stop with what survives)
            if len(zero) == len(active) and len(active) > 0:
                trace.records.append(SelectionRecord(
                    active_before=list(active), coefficients=fit.coefficients.copy(),
                    removed=list(zero), reason="zero_coefficient"))
                active = []
            else:
                trace.records.append(SelectionRecord(
                    active_before=list(active), coefficients=fit.coefficients.copy(),
                    removed=[], reason="zero_coefficient"))
            break
        trace.records.append(SelectionRecord(
            active_before=list(active), coefficients=fit.coefficients.copy(),
            removed=list(zero), reason="zero_coefficient"))
        active = [j for j in active if j not in zero]
        if not active:
            break

    # fallback: drop the smallest-|coefficient| variable one at a time
    while len(active) >= n:
        fit = lasso_logistic(X[:, active], y, bound, lam_hint=hint)
        hint = fit.penalty if 0.0 < fit.penalty < np.inf else None
        mags = np.abs(fit.coefficients)
        j_local = int(np.lexsort((active, mags))[0])  # ties -> lower column index
        removed = active[j_local]
        trace.records.append(SelectionRecord(
            active_before=list(active), coefficients=fit.coefficients.copy(),
            removed=[removed], reason="smallest_coefficient_fallback"))
        active = [j for j in active if j != removed]

    trace.selected = list(active)
    return trace


def _dedup_columns(X, names):
    seen = {}
    keep = []
    for j in range(X.shape[1]):
        key = X[:, j].tobytes()
        if key not in seen:
            seen[key] = j
            keep.append(j)
    return keep


def stepwise_logistic(X, y, weights: WeightSpec | None = None,
                      names: list[str] | None = None,
                      direction: str = "backward",
                      criterion: str = "aic") -> LogisticModel:
    """Backward elimination under AIC, delegating each fit to IRLS."""
    if direction != "backward":
        raise ValueError("only backward elimination is implemented")
    if criterion != "aic":
        raise ValueError("only the AIC criterion is implemented")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if names is None:
        names = [f"v{j}" for j in range(X.shape[1])]
    keep = _dedup_columns(X, names)
    active = list(keep)

    def fit_subset(cols):
        model = fit_weighted_logistic(X[:, cols], y, weights,
                                      [names[j] for j in cols])
        return model, model.deviance + 2.0 * (len(cols) + 1)

    model, crit = fit_subset(active)
    while active:
        best = None
        for j in active:
            cols = [c for c in active if c != j]
            try:
                cand_model, cand_crit = fit_subset(cols)
            except (np.linalg.LinAlgError, ValueError) as exc:
                warnings.warn(f"stepwise submodel without {names[j]!r} skipped: {exc}")
                continue
            if cand_crit < crit and (best is None or cand_crit < best[1]):
                best = (cand_model, cand_crit, j)
        if best is None:
            break
        model, crit, removed = best
        active = [c for c in active if c != removed]
    return model
