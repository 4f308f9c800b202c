"""Acceptance gate: one test per shipped guarantee, at pinned tolerances.

Each test prints a single PASS line on success; a failure reads as the
criterion name under pytest -v.
"""

import itertools
import time

import numpy as np
import pytest

from twostage import cli, ensemble, glm, logicreg, metrics, select, svm
from twostage.dataset import SyntheticConfig, generate_synthetic, split_dataset


def _report(name, detail=""):
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


# -- independent oracles ----------------------------------------------------

def _oracle_eval(node, x):
    """Truth-table oracle built on tuples, sharing no code with the library."""
    if isinstance(node, logicreg.Leaf):
        v = bool(x[node.index])
        return (not v) if node.negated else v
    a = _oracle_eval(node.left, x)
    b = _oracle_eval(node.right, x)
    return (a and b) if node.op == "AND" else (a or b)


def _pairwise_auroc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def _random_tree(rng, p, k):
    node = logicreg.Leaf(int(rng.integers(p)), bool(rng.integers(2)))
    for _ in range(k - 1):
        leaf = logicreg.Leaf(int(rng.integers(p)), bool(rng.integers(2)))
        op = "AND" if rng.integers(2) else "OR"
        sites = list(logicreg._sites(node, want_leaf=True))
        path, old = sites[int(rng.integers(len(sites)))]
        node = logicreg._replace_at(node, path, logicreg.Op(op, old, leaf))
    return node


def _nll(beta, X_aug, y, w):
    eta = X_aug @ beta
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


# -- criteria ---------------------------------------------------------------

def test_logic_tree_correctness():
    """1000 random trees, k <= 8 leaves: exact truth-table agreement, < 10 s."""
    rng = np.random.default_rng(20240301)
    t0 = time.time()
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        p = int(rng.integers(k, k + 5))
        tree = _random_tree(rng, p, k)
        assignments = np.array(list(itertools.product((0, 1), repeat=p)),
                               dtype=np.int8)
        got = logicreg.eval_tree_matrix(tree, assignments)
        want = np.array([_oracle_eval(tree, row) for row in assignments])
        assert np.array_equal(got, want)
    elapsed = time.time() - t0
    assert elapsed < 10.0
    _report("logic-tree correctness", f"1000 trees in {elapsed:.1f}s")


def test_annealing_recovery():
    """Planted 4-leaf tree, n=500, p=30, 5% noise: test error <= 10% in >= 9/10
    seeded runs, each run < 2 min."""
    tree = logicreg.parse_expr("(OR (AND x2 x17) (AND x8 !x23))")
    hits = 0
    worst_run = 0.0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        X = rng.integers(0, 2, size=(500, 30))
        X_test = rng.integers(0, 2, size=(500, 30))
        y = logicreg.eval_tree_matrix(tree, X).astype(float)
        flip = rng.random(500) < 0.05
        y[flip] = 1 - y[flip]
        cfg = logicreg.AnnealConfig(iterations=120_000, max_leaves=6,
                                    max_trees=1, seed=seed)
        t0 = time.time()
        fit = logicreg.anneal_fit(X, y, "classification", cfg)
        worst_run = max(worst_run, time.time() - t0)
        mis = np.mean(logicreg.predict(fit, X_test)
                      != logicreg.eval_tree_matrix(tree, X_test))
        hits += mis <= 0.10
    assert worst_run < 120.0
    assert hits >= 9
    _report("annealing recovery", f"{hits}/10 seeds, slowest run {worst_run:.1f}s")


def test_null_randomization_calibration():
    """40 pure-noise replicates (n=100, p=20, 99 permutations): p <= 0.05 in at
    most 15% of them; model size test picks 0 in >= 80%."""
    cfg_base = logicreg.AnnealConfig(iterations=200, max_leaves=4, max_trees=1)
    small_p = 0
    size_zero = 0
    n_rep = 40
    for rep in range(n_rep):
        rng = np.random.default_rng(31000 + rep)
        X = rng.integers(0, 2, size=(100, 20))
        y = rng.integers(0, 2, 100).astype(float)
        cfg = logicreg.AnnealConfig(iterations=200, max_leaves=4, max_trees=1,
                                    seed=31000 + rep,
                                    move_weights=cfg_base.move_weights)
        res = logicreg.null_signal_test(X, y, "classification", cfg, n_perm=99)
        small_p += res.p_value <= 0.05
        chosen, _ = logicreg.model_size_test(X, y, K=1, family="classification",
                                             cfg=cfg, n_perm=99)
        size_zero += chosen == 0
    frac = small_p / n_rep
    assert 0.0 <= frac <= 0.15
    assert size_zero >= 0.8 * n_rep
    _report("null randomization calibration",
            f"p<=0.05 in {small_p}/{n_rep}, size 0 chosen in {size_zero}/{n_rep}")


def test_lasso_exactness():
    """Bound 0 exact within 1e-10; slack bound matches IRLS within 1e-4 on a
    6x2 instance; p* < n on 200 random shapes including p = 5n."""
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 8))
    y = rng.integers(0, 2, 50).astype(float)
    y[:2] = [0, 1]
    fit0 = select.lasso_logistic(X, y, bound=0.0)
    mean = np.mean(y)
    assert np.all(fit0.coefficients == 0.0)
    assert abs(fit0.intercept - np.log(mean / (1 - mean))) < 1e-10

    X6 = np.array([[0.5, -1.0], [-0.3, 0.4], [1.2, 0.6],
                   [-0.8, -0.2], [0.1, 1.1], [-1.0, -0.7]])
    y6 = np.array([1, 1, 0, 0, 1, 0], dtype=float)
    ref = glm.fit_weighted_logistic(X6, y6)
    assert not ref.separated
    big = select.lasso_logistic(X6, y6, bound=1000.0)
    assert np.max(np.abs(big.coefficients - ref.coefficients)) < 1e-4
    assert abs(big.intercept - ref.intercept) < 1e-4

    shapes = 0
    for rep in range(200):
        r = np.random.default_rng(5000 + rep)
        n = int(r.integers(5, 35))
        d = 5 * n if rep % 10 == 0 else int(r.integers(2, 3 * n + 2))
        Xr = r.normal(size=(n, d))
        yr = r.integers(0, 2, n).astype(float)
        yr[:2] = [0, 1]
        trace = select.iterative_select(Xr, yr, select.SelectConfig(bound=2.0))
        assert len(trace.selected) < n
        shapes += 1
    _report("lasso exactness", f"{shapes} random shapes, p* < n everywhere")


def test_irls_correctness():
    """Gradient vs central differences within 1e-5 relative; 6-sample deviance
    within 1e-3 of a grid oracle; weight doubling invariant within 1e-8."""
    rng = np.random.default_rng(12)
    X = rng.normal(size=(150, 3))
    y = (rng.random(150) < glm.sigmoid(0.4 + X @ np.array([1.0, -0.7, 0.3]))
         ).astype(float)
    m = glm.fit_weighted_logistic(X, y)
    X_aug = np.column_stack([np.ones(150), X])
    beta = np.concatenate([[m.intercept], m.coefficients])
    w = np.ones(150)
    h = 1e-6
    scale = _nll(beta, X_aug, y, w)
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (_nll(beta + e, X_aug, y, w) - _nll(beta - e, X_aug, y, w)) / (2 * h)
        assert abs(fd) / (1.0 + abs(scale)) < 1e-5  # gradient vanishes at optimum

    x6 = np.array([0.5, -0.3, 1.2, -0.8, 0.1, -1.0])
    y6 = np.array([1, 1, 0, 0, 1, 0], dtype=float)
    m6 = glm.fit_weighted_logistic(x6.reshape(-1, 1), y6)
    aug6 = np.column_stack([np.ones(6), x6])
    center, width = np.zeros(2), 6.0
    best = None
    for _ in range(7):
        for b0 in np.linspace(center[0] - width, center[0] + width, 41):
            for b1 in np.linspace(center[1] - width, center[1] + width, 41):
                v = _nll(np.array([b0, b1]), aug6, y6, np.ones(6))
                if best is None or v < best[0]:
                    best = (v, b0, b1)
        center, width = np.array([best[1], best[2]]), width / 8.0
    assert abs(m6.deviance - 2 * best[0]) < 1e-3

    m1 = glm.fit_weighted_logistic(X, y, glm.WeightSpec("explicit", np.ones(150)))
    m2 = glm.fit_weighted_logistic(X, y, glm.WeightSpec("explicit", 2 * np.ones(150)))
    assert np.max(np.abs(m1.coefficients - m2.coefficients)) < 1e-8
    assert abs(m1.intercept - m2.intercept) < 1e-8
    _report("irls correctness")


def test_svm_correctness():
    """KKT violations <= 1e-3 on 50 random fits; XOR with rbf is exact; 4-point
    dual objective within 1e-3 of an exhaustive grid oracle."""
    rng = np.random.default_rng(21)
    for rep in range(50):
        n = int(rng.integers(15, 50))
        d = int(rng.integers(2, 5))
        Xr = rng.normal(size=(n, d))
        yr = np.where(Xr @ rng.normal(size=d) + 0.3 * rng.normal(size=n) > 0, 1, -1)
        if np.all(yr == yr[0]):
            yr[0] = -yr[0]
        kind = ("linear", "rbf")[rep % 2]
        C = float(rng.choice([0.5, 1.0, 4.0]))
        m = svm.smo_fit(Xr, yr, C=C, spec=svm.KernelSpec(kind, gamma=0.5),
                        tol=2e-4)
        assert svm.kkt_violation(m, Xr, yr) <= 1e-3

    X_xor = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y_xor = np.array([-1, 1, 1, -1])
    m = svm.smo_fit(X_xor, y_xor, C=10.0, spec=svm.KernelSpec("rbf", gamma=1.0))
    assert np.array_equal(svm.classify(m, X_xor), y_xor)

    X4 = np.array([[0.0, 0.2], [0.4, 1.0], [1.0, 0.1], [0.8, 0.9]])
    y4 = np.array([1, -1, 1, -1])
    spec = svm.KernelSpec("rbf", gamma=0.8)
    m4 = svm.smo_fit(X4, y4, C=1.0, spec=spec, tol=1e-7)
    Xs = (X4 - m4.scale_mean) / m4.scale_std
    K = svm.kernel_matrix(spec, Xs, Xs, gamma=m4.gamma)
    Q = np.outer(y4, y4) * K
    # exhaustive oracle: grid two positive-class alphas, solve the equality
    # constraint within the remaining negative pair
    grid = np.linspace(0.0, 1.0, 101)
    oracle = -np.inf
    for a0 in grid:
        for a2 in grid:
            s = a0 + a2
            for a1 in grid:
                a3 = s - a1
                if not (0.0 <= a3 <= 1.0):
                    continue
                a = np.array([a0, a1, a2, a3])
                oracle = max(oracle, a.sum() - 0.5 * a @ Q @ a)
    fitted = svm.dual_objective(m4, X4, y4)
    assert fitted >= oracle - 1e-3
    assert fitted <= oracle + 5e-3  # grid resolution slack
    _report("svm correctness", f"dual {fitted:.6f} vs grid {oracle:.6f}")


def test_auroc_exactness():
    """Exact pairwise-oracle agreement on 500 random instances (n <= 200, with
    ties); exact monotone-transform invariance."""
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(4, 201))
        if rng.random() < 0.5:
            scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        else:
            scores = rng.random(n)
        truth = rng.integers(0, 2, n)
        if truth.min() == truth.max():
            truth[0] = 1 - truth[0]
        a = metrics.auroc(scores, truth)
        assert a == _pairwise_auroc(scores, truth)
        assert metrics.auroc(np.exp(2.0 * scores), truth) == a
    _report("auroc exactness", "500 instances, exact incl. ties")


def test_ensemble_identities():
    """Mixing boundaries exact; oracle accuracy >= base accuracy on every
    random instance; pass-through gate reproduces the base sample-exactly."""
    rng = np.random.default_rng(5)
    cfg = SyntheticConfig(n_samples=120, p=6, p_prime=2, seed=8,
                          label_noise_rate=0.1, subgroup_marker_shift=2.0)
    data = generate_synthetic(cfg)
    for rep in range(200):
        se = rng.random(data.n)
        sm = rng.random(data.n)
        ids = list(data.ids)
        ps_e = ensemble.PredictionSet(ids, se, ["existing"] * data.n)
        ps_m = ensemble.PredictionSet(ids, sm, ["genetic_logic"] * data.n)
        assert np.array_equal(ensemble.weighted_average(ps_e, ps_m, 1.0).scores, se)
        assert np.array_equal(ensemble.weighted_average(ps_e, ps_m, 0.0).scores, sm)

        pe = lambda d, _s=se: _s  # noqa: E731
        pm = lambda d, _s=sm: _s  # noqa: E731
        oracle = ensemble.two_stage_oracle(pe, pm, data)
        acc_o = np.mean(oracle.classes() == data.y)
        acc_e = np.mean((se >= 0.5).astype(int) == data.y)
        assert acc_o >= acc_e

        ps, routes = ensemble.two_stage_predict(ensemble.passthrough_gate(),
                                                pe, pm, data)
        assert np.all(routes == 1)
        assert np.array_equal(ps.scores, se)
    _report("ensemble identities", "200 random instances")


def test_two_stage_heterogeneous_benchmark():
    """Two-subgroup benchmark (n=800, 10% noise, subgroup-separable gate
    features): gated auROC beats both single models by >= 5 points and keeps
    >= 80% of the oracle gain, in >= 8/10 seeds, < 5 min total."""
    t0 = time.time()
    hits = 0
    for seed in range(10):
        cfg = SyntheticConfig(
            n_samples=800, p=12, p_prime=2, seed=seed,
            planted_logic_expression="(OR (AND x0 x3) (AND x5 !x9))",
            planted_linear_coefficients=(3.0, 3.0),
            label_noise_rate=0.10, subgroup_marker_shift=4.0)
        ds = split_dataset(generate_synthetic(cfg), (0.7, 0.3), seed=seed + 101)
        train, test = ds.part("training"), ds.part("test")
        m_e = glm.fit_weighted_logistic(train.z, train.y, names=train.z_names)
        pe = ensemble.logistic_predictor(m_e, "z", "existing")
        m_m = logicreg.anneal_fit(
            train.x, train.y, "logistic",
            logicreg.AnnealConfig(iterations=6000, max_leaves=6, max_trees=2,
                                  seed=seed + 7))
        pm = ensemble.logic_predictor(m_m)
        try:
            gate = ensemble.train_gate(pe, train, gate_features=["z_marker"])
        except ensemble.GateDegenerateError:
            gate = ensemble.passthrough_gate(["z_marker"])
        ps, _ = ensemble.two_stage_predict(gate, pe, pm, test)
        oracle = ensemble.two_stage_oracle(pe, pm, test)
        a_e = metrics.auroc(pe(test), test.y)
        a_m = metrics.auroc(pm(test), test.y)
        a_g = metrics.auroc(ps.scores, test.y)
        a_o = metrics.auroc(oracle.scores, test.y)
        base = max(a_e, a_m)
        gain_ok = (a_o - base) <= 0 or (a_g - base) >= 0.8 * (a_o - base)
        hits += (a_g >= a_e + 0.05) and (a_g >= a_m + 0.05) and gain_ok
    elapsed = time.time() - t0
    assert elapsed < 300.0
    assert hits >= 8
    _report("two-stage heterogeneous benchmark",
            f"{hits}/10 seeds in {elapsed:.0f}s")


def test_end_to_end_determinism(tmp_path):
    """Same config + seed twice: byte-identical reports."""
    config = """
[data]
source = "synthetic"
n_samples = 200
p = 8
p_prime = 2
label_noise_rate = 0.05
subgroup_marker_shift = 2.0

[experiment]
seed = 17
recipes = ["clinical", "genetic_logic_logistic", "two_stage"]

[logicreg]
iterations = 1000
max_leaves = 5
max_trees = 1
"""
    cfg_path = tmp_path / "exp.toml"
    cfg_path.write_text(config)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1),
                     "--format", "both"]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2),
                     "--format", "both"]) == 0
    csv1 = (out1 / "report.csv").read_bytes()
    csv2 = (out2 / "report.csv").read_bytes()
    txt1 = (out1 / "report.txt").read_bytes()
    txt2 = (out2 / "report.txt").read_bytes()
    assert csv1 == csv2
    assert txt1 == txt2
    _report("end-to-end determinism", "reports byte-identical")
