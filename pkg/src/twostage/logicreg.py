"""Logic regression: Boolean-tree predictors searched by simulated annealing.

A model is a set of trees whose 0/1 evaluations enter a regression linearly
through a link. Three families are supported:

  linear          score = residual sum of squares
  logistic        score = binomial deviance
  classification  single tree, prediction I(L = 1), score = #misclassified

Model search proposes local tree edits (grow/prune/split/delete plus two
self-inverse refinements) and accepts worsening moves with probability
exp(-delta/T) under a geometric cooling schedule. Coefficients are refit
exactly at every proposal. Signal and model-size questions are answered by
randomization tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .glm import binomial_deviance, sigmoid

FAMILIES = ("linear", "logistic", "classification")
MOVE_KINDS = ("grow", "prune", "split", "delete", "relabel", "opflip")


# ---------------------------------------------------------------------------
# trees

@dataclass(frozen=True)
class Leaf:
    index: int
    negated: bool = False


@dataclass(frozen=True)
class Op:
    op: str  # "AND" | "OR"
    left: "Leaf | Op"
    right: "Leaf | Op"


Node = Leaf | Op


def n_leaves(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return n_leaves(node.left) + n_leaves(node.right)


def eval_tree(node: Node, x) -> bool:
    """Recursive evaluation on a single bit-vector."""
    if isinstance(node, Leaf):
        if node.index >= len(x):
            raise IndexError(f"leaf index {node.index} out of range for p={len(x)}")
        return bool(x[node.index]) != node.negated
    a = eval_tree(node.left, x)
    b = eval_tree(node.right, x)
    return (a and b) if node.op == "AND" else (a or b)


def eval_tree_matrix(node: Node, X: np.ndarray) -> np.ndarray:
    """Vectorized evaluation over the rows of a 0/1 matrix."""
    if isinstance(node, Leaf):
        col = X[:, node.index].astype(bool)
        return ~col if node.negated else col
    a = eval_tree_matrix(node.left, X)
    b = eval_tree_matrix(node.right, X)
    return (a & b) if node.op == "AND" else (a | b)


def tree_to_expr(node: Node) -> str:
    if isinstance(node, Leaf):
        return f"!x{node.index}" if node.negated else f"x{node.index}"
    return f"({node.op} {tree_to_expr(node.left)} {tree_to_expr(node.right)})"


def parse_expr(text: str) -> Node:
    """Parse the prefix notation emitted by tree_to_expr."""
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def parse() -> Node:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            op = tokens[pos]
            pos += 1
            if op not in ("AND", "OR"):
                raise ValueError(f"unknown operator {op!r}")
            left = parse()
            right = parse()
            if tokens[pos] != ")":
                raise ValueError("expected ')'")
            pos += 1
            return Op(op, left, right)
        neg = tok.startswith("!")
        body = tok[1:] if neg else tok
        if not body.startswith("x"):
            raise ValueError(f"bad leaf token {tok!r}")
        return Leaf(int(body[1:]), neg)

    node = parse()
    if pos != len(tokens):
        raise ValueError("trailing tokens in expression")
    return node


def leaf_indices(node: Node) -> set[int]:
    if isinstance(node, Leaf):
        return {node.index}
    return leaf_indices(node.left) | leaf_indices(node.right)


def _random_leaf(p: int, rng) -> Leaf:
    return Leaf(int(rng.integers(p)), bool(rng.integers(2)))


def _sites(node: Node, want_leaf: bool, path=()):
    """Enumerate (path, node) pairs for leaves or internal nodes."""
    if isinstance(node, Leaf):
        if want_leaf:
            yield path, node
        return
    if not want_leaf:
        yield path, node
    yield from _sites(node.left, want_leaf, path + ("L",))
    yield from _sites(node.right, want_leaf, path + ("R",))


def _replace_at(node: Node, path, new: Node) -> Node:
    if not path:
        return new
    if path[0] == "L":
        return Op(node.op, _replace_at(node.left, path[1:], new), node.right)
    return Op(node.op, node.left, _replace_at(node.right, path[1:], new))


def _node_at(node: Node, path) -> Node:
    for step in path:
        node = node.left if step == "L" else node.right
    return node


# ---------------------------------------------------------------------------
# models and configuration

@dataclass
class LogicModel:
    trees: list[Node]
    coefficients: np.ndarray  # beta_0 .. beta_t
    family: str
    score: float = float("nan")

    @property
    def t(self) -> int:
        return len(self.trees)

    def serialize(self) -> str:
        lines = [f"logic-model {self.family}"]
        lines.append("coef " + " ".join(repr(float(c)) for c in self.coefficients))
        for tree in self.trees:
            lines.append("tree " + tree_to_expr(tree))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "LogicModel":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "logic-model" or head[1] not in FAMILIES:
            raise ValueError("not a serialized logic model")
        coefs = np.array([])
        trees = []
        for ln in lines[1:]:
            key, rest = ln.split(None, 1)
            if key == "coef":
                coefs = np.array([float(v) for v in rest.split()])
            elif key == "tree":
                trees.append(parse_expr(rest))
        return cls(trees=trees, coefficients=coefs, family=head[1])


@dataclass(frozen=True)
class AnnealConfig:
    iterations: int = 50_000
    start_temperature: float | None = None  # None: calibrated to ~0.9 acceptance
    end_temperature_ratio: float = 1e-4
    max_leaves: int = 8
    max_trees: int = 2
    move_weights: dict = field(default_factory=lambda: {
        "grow": 3.0, "prune": 3.0, "split": 1.0, "delete": 1.0,
        "relabel": 3.0, "opflip": 1.0,
    })
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations >= 1 required")
        if self.start_temperature is not None and self.start_temperature <= 0:
            raise ValueError("start temperature must be positive")
        if not (0 < self.end_temperature_ratio < 1):
            raise ValueError("end temperature must be below start temperature")
        weights = [self.move_weights.get(k, 0.0) for k in MOVE_KINDS]
        if any(w < 0 for w in weights) or sum(weights) == 0:
            raise ValueError("move weights must be >= 0 and not all zero")


@dataclass
class RandTestResult:
    observed_score: float
    permuted_scores: list[float]
    p_value: float
    k: int | None = None


# ---------------------------------------------------------------------------
# moves

def propose_move(trees: list[Node], kind: str, rng, p: int,
                 max_leaves: int, max_trees: int) -> list[Node] | None:
    """One local edit of the tree set, or None when the kind is inapplicable."""
    if kind == "split":
        if len(trees) >= max_trees:
            return None
        return trees + [_random_leaf(p, rng)]
    if kind == "delete":
        if not trees:
            return None
        i = int(rng.integers(len(trees)))
        return trees[:i] + trees[i + 1:]
    if not trees:
        return None
    i = int(rng.integers(len(trees)))
    tree = trees[i]
    if kind == "grow":
        if sum(n_leaves(t) for t in trees) >= max_leaves:
            return None
        sites = list(_sites(tree, want_leaf=True))
        path, leaf = sites[int(rng.integers(len(sites)))]
        op = "AND" if rng.integers(2) else "OR"
        new = Op(op, leaf, _random_leaf(p, rng))
        return trees[:i] + [_replace_at(tree, path, new)] + trees[i + 1:]
    if kind == "prune":
        sites = list(_sites(tree, want_leaf=False))
        if not sites:
            return None
        path, node = sites[int(rng.integers(len(sites)))]
        child = node.left if rng.integers(2) else node.right
        return trees[:i] + [_replace_at(tree, path, child)] + trees[i + 1:]
    if kind == "relabel":
        sites = list(_sites(tree, want_leaf=True))
        path, _ = sites[int(rng.integers(len(sites)))]
        return trees[:i] + [_replace_at(tree, path, _random_leaf(p, rng))] + trees[i + 1:]
    if kind == "opflip":
        sites = list(_sites(tree, want_leaf=False))
        if not sites:
            return None
        path, node = sites[int(rng.integers(len(sites)))]
        flipped = Op("OR" if node.op == "AND" else "AND", node.left, node.right)
        return trees[:i] + [_replace_at(tree, path, flipped)] + trees[i + 1:]
    raise ValueError(f"unknown move kind {kind!r}")


# ---------------------------------------------------------------------------
# per-family coefficient fits

def _fit_coefs(L: np.ndarray, y: np.ndarray, family: str) -> tuple[np.ndarray, float]:
    """Exact conditional fit of beta given the tree columns; returns (beta, score)."""
    n, t = L.shape
    if family == "classification":
        if t == 0:
            cls = 1.0 if np.mean(y) >= 0.5 else 0.0
            return np.array([cls]), float(np.sum(y != cls))
        pred = L[:, 0]
        return np.array([0.0, 1.0]), float(np.sum(y != pred))
    D = np.column_stack([np.ones(n), L]) if t else np.ones((n, 1))
    if family == "linear":
        beta, *_ = np.linalg.lstsq(D, y, rcond=None)
        resid = y - D @ beta
        return beta, float(resid @ resid)
    if family == "logistic":
        beta = _small_irls(D, y)
        p = sigmoid(D @ beta)
        return beta, binomial_deviance(y, p)
    raise ValueError(f"unknown family {family!r}")


def _small_irls(D: np.ndarray, y: np.ndarray, max_iter: int = 30) -> np.ndarray:
    """Lean ridge-stabilized IRLS for the tiny designs inside the search."""
    d = D.shape[1]
    beta = np.zeros(d)
    dev = np.inf
    for _ in range(max_iter):
        eta = np.clip(D @ beta, -35, 35)
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1 - p), 1e-10)
        z = eta + (y - p) / w
        A = D.T @ (D * w[:, None]) + 1e-8 * np.eye(d)
        beta = np.linalg.solve(A, D.T @ (w * z))
        beta = np.clip(beta, -35, 35)
        new_dev = binomial_deviance(y, sigmoid(D @ beta))
        if abs(dev - new_dev) < 1e-9 * (abs(dev) + 1):
            break
        dev = new_dev
    return beta


def score(model: LogicModel, X: np.ndarray, y: np.ndarray,
          family: str | None = None) -> float:
    """Family score of a model's trees on data; lower is better."""
    family = family or model.family
    L = _tree_columns(model.trees, X)
    _, s = _fit_coefs(L, np.asarray(y, dtype=float), family)
    return s


def _tree_columns(trees: list[Node], X: np.ndarray) -> np.ndarray:
    if not trees:
        return np.empty((X.shape[0], 0))
    return np.column_stack([eval_tree_matrix(t, X).astype(float) for t in trees])


def predict(model: LogicModel, X) -> np.ndarray:
    """Classification: {0,1}; logistic: probability; linear: real score."""
    X = np.atleast_2d(np.asarray(X))
    L = _tree_columns(model.trees, X)
    if model.family == "classification":
        if model.t == 0:
            return np.full(X.shape[0], model.coefficients[0])
        return L[:, 0]
    eta = model.coefficients[0] + (L @ model.coefficients[1:] if model.t else 0.0)
    if model.family == "logistic":
        return sigmoid(eta)
    return np.asarray(eta, dtype=float) + np.zeros(X.shape[0])


# ---------------------------------------------------------------------------
# annealing search

def _calibrate_start_temp(X, y, family, cfg, rng, trees, n_probe=60):
    """Start temperature giving ~0.9 acceptance for the typical worsening move."""
    base_L = _tree_columns(trees, X)
    _, s0 = _fit_coefs(base_L, y, family)
    deltas = []
    kinds = list(MOVE_KINDS)
    weights = np.array([cfg.move_weights.get(k, 0.0) for k in kinds])
    weights = weights / weights.sum()
    for _ in range(n_probe):
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        new = propose_move(trees, kind, rng, X.shape[1], cfg.max_leaves, cfg.max_trees)
        if new is None:
            continue
        _, s = _fit_coefs(_tree_columns(new, X), y, family)
        if s > s0:
            deltas.append(s - s0)
    if not deltas:
        return 1.0
    return float(np.median(deltas) / math.log(1.0 / 0.9))


def anneal_fit(X, y, family: str, cfg: AnnealConfig,
               max_total_leaves: int | None = None) -> LogicModel:
    """Simulated-annealing search over tree sets; returns the best state visited.

    max_total_leaves additionally caps the summed leaf count (used by the
    model-size randomization test); None means cfg.max_leaves applies.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    rng = np.random.default_rng(cfg.seed)
    p = X.shape[1]
    leaf_cap = cfg.max_leaves if max_total_leaves is None else min(cfg.max_leaves, max_total_leaves)
    tree_cap = 1 if family == "classification" else cfg.max_trees

    # degenerate cases: constant response or no leaf budget
    if leaf_cap == 0 or np.all(y == y[0]):
        beta, s = _fit_coefs(np.empty((len(y), 0)), y, family)
        return LogicModel(trees=[], coefficients=beta, family=family, score=s)

    trees: list[Node] = [_random_leaf(p, rng)] if family == "classification" else []
    L = _tree_columns(trees, X)
    beta, cur = _fit_coefs(L, y, family)
    best = (cur, [t for t in trees], beta)

    kinds = list(MOVE_KINDS)
    weights = np.array([cfg.move_weights.get(k, 0.0) for k in kinds])
    weights = weights / weights.sum()

    t0 = cfg.start_temperature
    if t0 is None:
        t0 = _calibrate_start_temp(X, y, family, cfg, np.random.default_rng(cfg.seed + 1),
                                   trees)
        t0 = max(t0, 1e-8)
    t1 = t0 * cfg.end_temperature_ratio
    cool = (t1 / t0) ** (1.0 / max(cfg.iterations - 1, 1))

    temp = t0
    kind_draws = rng.choice(len(kinds), size=cfg.iterations, p=weights)
    accept_draws = rng.random(cfg.iterations)
    for i in range(cfg.iterations):
        kind = kinds[kind_draws[i]]
        if kind == "grow" and sum(n_leaves(t) for t in trees) >= leaf_cap:
            temp *= cool
            continue
        new = propose_move(trees, kind, rng, p, leaf_cap, tree_cap)
        temp_i = temp
        temp *= cool
        if new is None:
            continue
        new_beta, new_score = _fit_coefs(_tree_columns(new, X), y, family)
        delta = new_score - cur
        if delta <= 0 or accept_draws[i] < math.exp(-delta / temp_i):
            trees, cur, beta = new, new_score, new_beta
            if cur < best[0]:  # strict: ties keep the earlier state
                best = (cur, [t for t in trees], beta)

    return LogicModel(trees=best[1], coefficients=best[2], family=family, score=best[0])


# ---------------------------------------------------------------------------
# randomization tests

def null_signal_test(X, y, family: str, cfg: AnnealConfig, n_perm: int) -> RandTestResult:
    """Permute the response, refit, and compare best scores to the observed one."""
    if n_perm < 19:
        raise ValueError("n_perm >= 19 required for a meaningful test")
    y = np.asarray(y, dtype=float)
    observed = anneal_fit(X, y, family, cfg).score
    rng = np.random.default_rng(cfg.seed ^ 0x9E3779B9)
    permuted = []
    for r in range(n_perm):
        y_perm = y[rng.permutation(len(y))]
        fit = anneal_fit(X, y_perm, family, replace(cfg, seed=cfg.seed + 1000 + r))
        permuted.append(fit.score)
    p_value = (sum(s <= observed for s in permuted) + 1) / (n_perm + 1)
    return RandTestResult(observed_score=observed, permuted_scores=permuted, p_value=p_value)


def _fitted_classes(model: LogicModel, X: np.ndarray) -> np.ndarray:
    pred = predict(model, X)
    if model.family == "logistic":
        return (pred >= 0.5).astype(int)
    return pred.astype(int)


def model_size_test(X, y, K: int, family: str, cfg: AnnealConfig, n_perm: int,
                    threshold: float = 0.05) -> tuple[int, list[RandTestResult]]:
    """Choose a model size by conditional randomization.

    For each size k the response is permuted within the fitted classes of the
    best size-k model and the search is rerun without the size restriction.
    Size k is accepted when the unrestricted observed score is unexceptional
    against those conditional scores (per-k randomization p-value above the
    threshold); the chosen size is the smallest accepted k, preferring
    parsimony. Continuous-fitted-value (linear) models are not supported.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if family == "linear":
        raise ValueError("model-size test is defined for classification/logistic families only")
    y = np.asarray(y, dtype=float)
    X = np.asarray(X)
    observed_best = anneal_fit(X, y, family, cfg).score

    results = []
    chosen = K
    chosen_set = False
    rng = np.random.default_rng(cfg.seed ^ 0x5DEECE66)
    for k in range(K + 1):
        model_k = anneal_fit(X, y, family, cfg, max_total_leaves=k)
        classes = _fitted_classes(model_k, X)
        permuted = []
        for r in range(n_perm):
            y_perm = y.copy()
            for cls in np.unique(classes):
                idx = np.flatnonzero(classes == cls)
                y_perm[idx] = y[idx[rng.permutation(len(idx))]]
            fit = anneal_fit(X, y_perm, family,
                             replace(cfg, seed=cfg.seed + 5000 + 100 * k + r))
            permuted.append(fit.score)
        p_value = (sum(s <= observed_best for s in permuted) + 1) / (n_perm + 1)
        results.append(RandTestResult(observed_score=model_k.score,
                                      permuted_scores=permuted, p_value=p_value, k=k))
        if not chosen_set and p_value > threshold:
            chosen = k
            chosen_set = True
    return chosen, results
