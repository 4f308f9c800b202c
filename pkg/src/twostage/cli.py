"""Experiment harness and command line interface.

Subcommands:
  simulate   write a synthetic two-subgroup dataset to CSV
  run        execute an experiment config (TOML) and emit reports
  randtest   randomization-test driver (null signal / model size)
  evaluate   metrics on a prediction CSV
  inspect    pretty-print a serialized model

Exit codes: 0 success, 1 config error, 2 data error, 3 model-fit failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import sys

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import ensemble, glm, logicreg, metrics, select, svm
from .dataset import DataError, Dataset, Schema, SyntheticConfig, generate_synthetic, split_dataset
from .glm import WeightSpec

RECIPES = ("clinical", "genetic_lasso_logistic", "genetic_logic_class",
           "genetic_logic_logistic", "composite", "weighted_average", "two_stage")
GENETIC_PRIORITY = ("genetic_lasso_logistic", "genetic_logic_logistic",
                    "genetic_logic_class")
PARTITIONS = ("training", "test")
METRIC_ROWS = ("auROC", "acc", "fn", "fp")


class ConfigError(ValueError):
    pass


class FitError(RuntimeError):
    pass


def derive_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**31 - 1)


@dataclass
class ExperimentConfig:
    data: dict
    recipes: list[str]
    seed: int = 0
    train_fraction: float = 0.7
    logicreg: dict = field(default_factory=dict)
    select: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)
    glm: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)
    raw_text: str = ""

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad config: {exc}")
        data = doc.get("data")
        if not data:
            raise ConfigError("config needs a [data] section")
        exp = doc.get("experiment", {})
        recipes = list(exp.get("recipes", RECIPES))
        cfg = cls(data=data, recipes=recipes,
                  seed=int(exp.get("seed", 0)),
                  train_fraction=float(exp.get("train_fraction", 0.7)),
                  logicreg=doc.get("logicreg", {}), select=doc.get("select", {}),
                  gate=doc.get("gate", {}), glm=doc.get("glm", {}),
                  alpha=doc.get("alpha", {}), raw_text=text)
        cfg.validate()
        return cfg

    def validate(self):
        for r in self.recipes:
            if r not in RECIPES:
                raise ConfigError(f"unknown recipe {r!r}")
        genetic = [r for r in self.recipes if r.startswith("genetic_")]
        if "two_stage" in self.recipes:
            if "clinical" not in self.recipes or not genetic:
                raise ConfigError("two_stage requires clinical plus a genetic recipe")
        if "weighted_average" in self.recipes:
            if "clinical" not in self.recipes or not genetic:
                raise ConfigError("weighted_average requires clinical plus a genetic recipe")
        if "composite" in self.recipes and not genetic:
            raise ConfigError("composite requires a genetic recipe")

    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    config_hash: str
    seed: int
    gate_features: str = ""
    alpha: float | None = None
    routing_counts: dict = field(default_factory=dict)
    # recipe -> partition -> MetricsReport, or recipe -> {"error": reason}
    results: dict = field(default_factory=dict)


def _load_data(cfg: ExperimentConfig) -> Dataset:
    src = cfg.data.get("source", "synthetic")
    if src == "synthetic":
        fields = {k: v for k, v in cfg.data.items() if k != "source"}
        fields.setdefault("seed", derive_seed(cfg.seed, "data"))
        if "planted_linear_coefficients" in fields:
            fields["planted_linear_coefficients"] = tuple(
                fields["planted_linear_coefficients"])
        return generate_synthetic(SyntheticConfig(**fields))
    if src == "csv":
        schema = Schema.load(cfg.data["schema"])
        ds, _report = ds_mod.load_csv(cfg.data["path"], schema)
        return ds
    raise ConfigError(f"unknown data source {src!r}")


def _weight_spec(cfg: ExperimentConfig) -> WeightSpec:
    return WeightSpec(mode=cfg.glm.get("weights", "class_balanced"))


def _anneal_config(cfg: ExperimentConfig, seed: int) -> logicreg.AnnealConfig:
    kw = dict(cfg.logicreg)
    kw.pop("family", None)
    kw["seed"] = seed
    return logicreg.AnnealConfig(**kw)


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Fit the configured recipes in dependency order and evaluate each on the
    training and test partitions. Errors are recorded per recipe."""
    data = _load_data(cfg)
    if not any(s == "test" for s in data.split):
        data = split_dataset(data, (cfg.train_fraction, 1 - cfg.train_fraction),
                             seed=derive_seed(cfg.seed, "split"))
    train = data.part("training")
    test = data.part("test")
    weights = _weight_spec(cfg)

    report = RunReport(config_hash=cfg.config_hash(), seed=cfg.seed,
                       gate_features=str(cfg.gate.get("features", "xz")))
    predictors: dict[str, ensemble.PredictorFn] = {}

    def record(name, predictor):
        predictors[name] = predictor
        entry = {}
        for part_name, part in (("training", train), ("test", test)):
            entry[part_name] = metrics.evaluate(predictor(part), part.y)
        report.results[name] = entry

    def fail(name, exc):
        report.results[name] = {"error": f"{type(exc).__name__}: {exc}"}

    if "clinical" in cfg.recipes:
        try:
            if train.p_prime == 0:
                raise DataError("clinical recipe needs Z covariates")
            model = glm.fit_weighted_logistic(train.z, train.y, weights,
                                              list(train.z_names))
            record("clinical", ensemble.logistic_predictor(model, "z", "existing"))
        except Exception as exc:
            fail("clinical", exc)

    if "genetic_lasso_logistic" in cfg.recipes:
        try:
            sel_cfg = select.SelectConfig(
                bound=cfg.select.get("bound"),
                seed=derive_seed(cfg.seed, "genetic_lasso_logistic"))
            trace = select.iterative_select(train.x.astype(float), train.y, sel_cfg)
            cols = trace.selected
            model = select.stepwise_logistic(
                train.x[:, cols].astype(float) if cols else np.empty((train.n, 0)),
                train.y, weights, [train.x_names[j] for j in cols])
            record("genetic_lasso_logistic",
                   ensemble.logistic_predictor(model, "x", "genetic_logistic"))
        except Exception as exc:
            fail("genetic_lasso_logistic", exc)

    for recipe, family in (("genetic_logic_class", "classification"),
                           ("genetic_logic_logistic", "logistic")):
        if recipe in cfg.recipes:
            try:
                acfg = _anneal_config(cfg, derive_seed(cfg.seed, recipe))
                model = logicreg.anneal_fit(train.x, train.y, family, acfg)
                record(recipe, ensemble.logic_predictor(model, "genetic_logic"))
            except Exception as exc:
                fail(recipe, exc)

    genetic_name = next((r for r in GENETIC_PRIORITY
                         if r in predictors), None)

    if "composite" in cfg.recipes:
        try:
            if genetic_name is None:
                raise FitError("no genetic model available for composite")
            gm = _model_of(predictors[genetic_name])
            names = _genetic_names(gm, train)
            model = ensemble.fit_composite(train, names, weights)
            record("composite", ensemble.logistic_predictor(model, "xz", "composite"))
        except Exception as exc:
            fail("composite", exc)

    if "weighted_average" in cfg.recipes:
        try:
            if "clinical" not in predictors or genetic_name is None:
                raise FitError("weighted_average needs clinical and genetic models")
            sel = ensemble.select_alpha(
                predictors["clinical"], predictors[genetic_name], train,
                n_repeats=int(cfg.alpha.get("n_repeats", 20)),
                grid=cfg.alpha.get("grid"),
                seed=derive_seed(cfg.seed, "weighted_average"))
            report.alpha = sel.alpha

            def avg_pred(part, _a=sel.alpha, _e=predictors["clinical"],
                         _m=predictors[genetic_name]):
                return _a * _e(part) + (1 - _a) * _m(part)
            avg_pred.source = "averaged"  # type: ignore[attr-defined]
            record("weighted_average", avg_pred)
        except Exception as exc:
            fail("weighted_average", exc)

    if "two_stage" in cfg.recipes:
        try:
            if "clinical" not in predictors or genetic_name is None:
                raise FitError("two_stage needs clinical and genetic models")
            features = cfg.gate.get("features", "xz")
            try:
                gate = ensemble.train_gate(
                    predictors["clinical"], train, gate_features=features,
                    C=float(cfg.gate.get("C", 1.0)),
                    kernel=svm.KernelSpec(kind=cfg.gate.get("kernel", "rbf"),
                                          gamma=cfg.gate.get("gamma")),
                    seed=derive_seed(cfg.seed, "gate"))
            except ensemble.GateDegenerateError:
                gate = ensemble.passthrough_gate(features)

            def ts_pred(part, _g=gate, _e=predictors["clinical"],
                        _m=predictors[genetic_name]):
                ps, _routes = ensemble.two_stage_predict(_g, _e, _m, part)
                return ps.scores
            ts_pred.source = "two_stage_gated"  # type: ignore[attr-defined]
            record("two_stage", ts_pred)
            for part_name, part in (("training", train), ("test", test)):
                _, routes = ensemble.two_stage_predict(
                    gate, predictors["clinical"], predictors[genetic_name], part)
                report.routing_counts[part_name] = {
                    "existing": int(np.sum(routes == 1)),
                    "genetic": int(np.sum(routes == -1)),
                }
        except Exception as exc:
            fail("two_stage", exc)

    return report


def _model_of(predictor):
    # predictors close over their model; retrieve it for covariate inspection
    cells = predictor.__closure__ or ()
    for cell in cells:
        obj = cell.cell_contents
        if isinstance(obj, (glm.LogisticModel, logicreg.LogicModel)):
            return obj
    raise FitError("predictor carries no inspectable model")


def _genetic_names(model, ds: Dataset) -> list[str]:
    return ensemble.selected_x_names(model, ds)


# ---------------------------------------------------------------------------
# report emission

def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["recipe", "partition", "metric", "percent"])
    for recipe, entry in report.results.items():
        if "error" in entry:
            w.writerow([recipe, "", "error", entry["error"]])
            continue
        for part in PARTITIONS:
            row = entry[part].as_percent_row()
            for metric, val in zip(METRIC_ROWS, row):
                w.writerow([recipe, part, metric, val])
    return buf.getvalue()


def report_table(report: RunReport) -> str:
    recipes = [r for r in report.results]
    lines = [f"# config {report.config_hash} seed {report.seed}"]
    if report.alpha is not None:
        lines.append(f"# weighted_average alpha = {report.alpha}")
    if report.routing_counts:
        lines.append(f"# gate features = {report.gate_features}, "
                     f"routing = {report.routing_counts}")
    width = max([12] + [len(r) for r in recipes]) + 2
    for part in PARTITIONS:
        lines.append(f"\n{part} samples")
        lines.append("  " + "metric".ljust(8)
                     + "".join(r.rjust(width) for r in recipes))
        for mi, metric in enumerate(METRIC_ROWS):
            cells = []
            for r in recipes:
                entry = report.results[r]
                if "error" in entry:
                    cells.append("failed".rjust(width))
                else:
                    cells.append(entry[part].as_percent_row()[mi].rjust(width))
            lines.append("  " + metric.ljust(8) + "".join(cells))
    for r in recipes:
        if "error" in report.results[r]:
            lines.append(f"\n{r} failed: {report.results[r]['error']}")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, out_dir, fmt: str = "csv") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = out / "report.csv"
        path.write_text(report_csv(report))
        written.append(path)
    if fmt in ("text-table", "both"):
        path = out / "report.txt"
        path.write_text(report_table(report))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    data = _load_data(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_csv(out)
    schema_path = out.with_suffix(".schema")
    roles = data.default_schema().roles
    schema_path.write_text("".join(f"{k} = {v}\n" for k, v in roles.items()))
    print(f"wrote {out} ({data.n} samples, p={data.p}, p'={data.p_prime}) "
          f"and {schema_path}")
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    report = run_experiment(cfg)
    files = emit_report(report, args.out, args.format)
    for f in files:
        print(f"wrote {f}")
    if all("error" in e for e in report.results.values()):
        return 3
    return 0


def _cmd_randtest(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    data = _load_data(cfg)
    if data.p == 0:
        print("error: randomization tests need X columns", file=sys.stderr)
        return 2
    acfg = _anneal_config(cfg, derive_seed(cfg.seed, "randtest"))
    family = cfg.logicreg.get("family", "classification")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "null_signal":
        res = logicreg.null_signal_test(data.x, data.y, family, acfg, args.n_perm)
        _write_hist(out / "null_signal_scores.csv", res.permuted_scores)
        (out / "null_signal.txt").write_text(
            f"observed {res.observed_score!r}\np_value {res.p_value!r}\n")
        print(f"null-signal p = {res.p_value:.4f}")
    else:
        chosen, results = logicreg.model_size_test(
            data.x, data.y, args.K, family, acfg, args.n_perm)
        for res in results:
            _write_hist(out / f"model_size_k{res.k}_scores.csv", res.permuted_scores)
        summary = "".join(
            f"k={r.k} observed {r.observed_score!r} p {r.p_value!r}\n" for r in results)
        (out / "model_size.txt").write_text(summary + f"chosen {chosen}\n")
        print(f"chosen model size = {chosen}")
    return 0


def _write_hist(path: Path, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["score"])
        for s in scores:
            w.writerow([repr(float(s))])


def _cmd_evaluate(args) -> int:
    with open(args.pred, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0] or "truth" not in rows[0]:
        print("error: prediction CSV needs 'score' and 'truth' columns",
              file=sys.stderr)
        return 2
    scores = np.array([float(r["score"]) for r in rows])
    truth = np.array([int(r["truth"]) for r in rows])
    rep = metrics.evaluate(scores, truth)
    for name, val in zip(METRIC_ROWS, rep.as_percent_row()):
        print(f"{name}\t{val}")
    return 0


def _cmd_inspect(args) -> int:
    text = Path(args.model).read_text()
    head = text.strip().splitlines()[0]
    if head.startswith("logic-model"):
        model = logicreg.LogicModel.deserialize(text)
        print(f"logic model, family={model.family}, trees={model.t}")
        for tree, beta in zip(model.trees, model.coefficients[1:]):
            print(f"  {beta:+.6g} * {logicreg.tree_to_expr(tree)}")
        print(f"  intercept {model.coefficients[0]:+.6g}")
    elif head.startswith("logistic-model"):
        model = glm.LogisticModel.deserialize(text)
        print(f"logistic model ({model.weight_mode}"
              + (", separated)" if model.separated else ")"))
        print(f"  intercept {model.intercept:+.6g}")
        for name, c in zip(model.names, model.coefficients):
            print(f"  {c:+.6g} * {name}")
    elif head.startswith("svm-model"):
        model = svm.SvmModel.deserialize(text)
        print(f"svm model, kernel={model.kernel.kind}, gamma={model.gamma:.6g}, "
              f"C={model.C}, support vectors={len(model.dual_coef)}, "
              f"bias={model.bias:+.6g}")
    else:
        print("error: unrecognized model file", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twostage",
                                 description="gated two-stage ensemble prediction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "text-table", "both"), default="both")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("randtest", help="randomization-test driver")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=("null_signal", "model_size"), required=True)
    p.add_argument("--n-perm", type=int, default=99)
    p.add_argument("-K", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_randtest)

    p = sub.add_parser("evaluate", help="metrics on a prediction CSV")
    p.add_argument("--pred", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("inspect", help="pretty-print a serialized model")
    p.add_argument("model")
    p.set_defaults(fn=_cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"model-fit failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
