"""Data model and ingestion: binary covariates X, existing covariates Z,
binary outcome Y, cohort/split tags, SNP genotype recoding, and a synthetic
heterogeneous-population generator for desk-scale validation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import logicreg
from .glm import sigmoid

SPLITS = ("training", "test", "validation")
ROLES = ("label", "snp_genotype", "binary", "continuous", "cohort", "split", "id")

# fixed decimal precision for continuous columns on save (round-trip contract)
Z_DECIMALS = 12


class DataError(ValueError):
    pass


@dataclass
class LoadReport:
    n_loaded: int = 0
    n_dropped: int = 0
    dropped_lines: list[int] = field(default_factory=list)


@dataclass
class Schema:
    """Maps CSV column names to roles; genotype columns carry a coding."""

    roles: dict[str, str]  # column name -> role
    genotype_coding: str = "dominant"

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """Parse 'column = role' lines; '# comments' allowed.

        A special line 'genotype_coding = dominant|recessive' sets the SNP
        recoding applied at load time.
        """
        roles = {}
        coding = "dominant"
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"schema line {i}: expected 'column = role'")
            name, role = (part.strip() for part in line.split("=", 1))
            if name == "genotype_coding":
                if role not in ("dominant", "recessive"):
                    raise DataError(f"schema line {i}: unknown coding {role!r}")
                coding = role
                continue
            if role not in ROLES:
                raise DataError(f"schema line {i}: unknown role {role!r}")
            roles[name] = role
        if sum(1 for r in roles.values() if r == "label") != 1:
            raise DataError("schema must declare exactly one label column")
        return cls(roles=roles, genotype_coding=coding)

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.parse(fh.read())


@dataclass
class Dataset:
    """Immutable-by-convention container of aligned sample arrays."""

    x: np.ndarray          # (n, p) values in {0, 1}
    z: np.ndarray          # (n, p') floats
    y: np.ndarray          # (n,) values in {0, 1}
    ids: list[str]
    cohort: list[str]
    split: list[str]
    x_names: list[str]
    z_names: list[str]
    z_kinds: list[str]     # per Z column: "continuous" | "binary"
    label_name: str = "y"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int8).reshape(len(self.y), -1)
        self.z = np.asarray(self.z, dtype=float).reshape(len(self.y), -1)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.validate()

    def validate(self):
        n = len(self.y)
        if self.x.shape != (n, len(self.x_names)) or self.z.shape != (n, len(self.z_names)):
            raise DataError("column arity mismatch")
        if len(self.ids) != n or len(self.cohort) != n or len(self.split) != n:
            raise DataError("tag arity mismatch")
        if self.p == 0 and self.p_prime == 0:
            raise DataError("need at least one X or Z covariate")
        if self.x.size and not np.all(np.isin(self.x, (0, 1))):
            raise DataError("non-binary value in X")
        if not np.all(np.isin(self.y, (0, 1))):
            raise DataError("non-binary label")
        names = self.x_names + self.z_names + [self.label_name]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names across X, Z, label")
        for s in self.split:
            if s not in SPLITS:
                raise DataError(f"unknown split tag {s!r}")
        if len(self.z_kinds) != self.p_prime:
            raise DataError("z_kinds arity mismatch")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return len(self.x_names)

    @property
    def p_prime(self) -> int:
        return len(self.z_names)

    def y_pm1(self) -> np.ndarray:
        """Labels mapped to {-1, +1}; Y=1 maps to +1."""
        return np.where(self.y == 1, 1, -1).astype(int)

    def subset(self, mask_or_idx) -> "Dataset":
        idx = np.asarray(mask_or_idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            x=self.x[idx], z=self.z[idx], y=self.y[idx],
            ids=[self.ids[i] for i in idx],
            cohort=[self.cohort[i] for i in idx],
            split=[self.split[i] for i in idx],
            x_names=self.x_names, z_names=self.z_names,
            z_kinds=self.z_kinds, label_name=self.label_name,
        )

    def part(self, split_tag: str) -> "Dataset":
        return self.subset(np.array([s == split_tag for s in self.split]))

    def with_split(self, split: list[str]) -> "Dataset":
        return Dataset(x=self.x, z=self.z, y=self.y, ids=self.ids, cohort=self.cohort,
                       split=list(split), x_names=self.x_names, z_names=self.z_names,
                       z_kinds=self.z_kinds, label_name=self.label_name)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + self.x_names + self.z_names
                       + [self.label_name, "cohort", "split"])
            for i in range(self.n):
                z_vals = [f"{v:.{Z_DECIMALS}f}" if self.z_kinds[j] == "continuous"
                          else str(int(self.z[i, j])) for j, v in enumerate(self.z[i])]
                w.writerow([self.ids[i]] + [str(int(v)) for v in self.x[i]] + z_vals
                           + [str(int(self.y[i])), self.cohort[i], self.split[i]])

    def default_schema(self) -> Schema:
        roles = {"id": "id", self.label_name: "label", "cohort": "cohort", "split": "split"}
        for name in self.x_names:
            roles[name] = "binary"
        for name, kind in zip(self.z_names, self.z_kinds):
            roles[name] = kind
        return Schema(roles=roles)


def recode_genotype(values, coding: str) -> np.ndarray:
    """Binarize a 0/1/2 genotype column.

    dominant: 1 iff at least one minor-allele copy; recessive: 1 iff two.
    """
    arr = np.asarray(values)
    if np.any(arr == None) or (arr.dtype.kind == "f" and np.any(np.isnan(arr))):  # noqa: E711
        raise DataError("missing genotype values present; filter rows first")
    arr = arr.astype(int)
    if not np.all(np.isin(arr, (0, 1, 2))):
        raise DataError("genotype values must be in {0, 1, 2}")
    if coding == "dominant":
        return (arr >= 1).astype(np.int8)
    if coding == "recessive":
        return (arr == 2).astype(np.int8)
    raise DataError(f"unknown coding {coding!r}")


def load_csv(path, schema: Schema) -> tuple[Dataset, LoadReport]:
    """Read a header-first CSV against a schema; rows with missing required
    fields are dropped and counted in the report."""
    with open(path, newline="") as fh:
        return _load_rows(csv.reader(fh), schema)


def loads_csv(text: str, schema: Schema) -> tuple[Dataset, LoadReport]:
    return _load_rows(csv.reader(io.StringIO(text)), schema)


def _load_rows(reader, schema: Schema) -> tuple[Dataset, LoadReport]:
    header = next(reader, None)
    if header is None:
        raise DataError("empty file")
    for name in schema.roles:
        if name not in header:
            raise DataError(f"unknown column {name!r} not present in file")
    col_role = {name: schema.roles.get(name) for name in header}

    x_names = [c for c in header if col_role[c] in ("binary", "snp_genotype")]
    z_cont = [c for c in header if col_role[c] == "continuous"]
    label = next(c for c in header if col_role[c] == "label")
    cohort_col = next((c for c in header if col_role[c] == "cohort"), None)
    split_col = next((c for c in header if col_role[c] == "split"), None)
    id_col = next((c for c in header if col_role[c] == "id"), None)
    required = x_names + z_cont + [label]

    pos = {c: i for i, c in enumerate(header)}
    report = LoadReport()
    rows_x, rows_z, ys, ids, cohorts, splits = [], [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(v.strip() == "" for v in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: malformed row ({len(row)} fields, "
                            f"expected {len(header)})")
        if any(row[pos[c]].strip() == "" for c in required):
            report.n_dropped += 1
            report.dropped_lines.append(lineno)
            continue
        xv = []
        for c in x_names:
            raw = row[pos[c]].strip()
            try:
                val = int(raw)
            except ValueError:
                raise DataError(f"line {lineno}: non-integer value {raw!r} in column {c!r}")
            if col_role[c] == "snp_genotype":
                if val not in (0, 1, 2):
                    raise DataError(f"line {lineno}: genotype value {val} in column {c!r} "
                                    "outside {0,1,2}")
                val = int(recode_genotype([val], schema.genotype_coding)[0])
            elif val not in (0, 1):
                raise DataError(f"line {lineno}: non-binary value {val} in column {c!r}")
            xv.append(val)
        zv = [float(row[pos[c]]) for c in z_cont]
        yv = row[pos[label]].strip()
        if yv not in ("0", "1"):
            raise DataError(f"line {lineno}: non-binary label {yv!r}")
        rows_x.append(xv)
        rows_z.append(zv)
        ys.append(int(yv))
        ids.append(row[pos[id_col]] if id_col else f"s{lineno}")
        cohorts.append(row[pos[cohort_col]] if cohort_col else "")
        splits.append(row[pos[split_col]] if split_col else "training")
    if not ys:
        raise DataError("no usable rows")
    report.n_loaded = len(ys)
    ds = Dataset(
        x=np.array(rows_x, dtype=np.int8).reshape(len(ys), len(x_names)),
        z=np.array(rows_z, dtype=float).reshape(len(ys), len(z_cont)),
        y=np.array(ys), ids=ids, cohort=cohorts, split=splits,
        x_names=x_names, z_names=z_cont,
        z_kinds=["continuous"] * len(z_cont), label_name=label,
    )
    return ds, report


def split_dataset(ds: Dataset, fractions: tuple[float, float], seed: int) -> "Dataset":
    """Assign training/test tags, stratified by outcome class.

    Deterministic under the seed; returns a new Dataset with tags set.
    """
    f_train, f_test = fractions
    if abs(f_train + f_test - 1.0) > 1e-9:
        raise DataError("fractions must sum to 1")
    if f_train <= 0 or f_test <= 0:
        raise DataError("empty part requested")
    rng = np.random.default_rng(seed)
    split = [""] * ds.n
    for cls in (0, 1):
        idx = np.flatnonzero(ds.y == cls)
        if len(idx) < 2:
            raise DataError(f"class {cls} has fewer samples than parts requested")
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(f_train * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)
        for i in idx[:n_train]:
            split[i] = "training"
        for i in idx[n_train:]:
            split[i] = "test"
    return ds.with_split(split)


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-subgroup population: labels driven by Z in subgroup A and by a
    planted Boolean expression over X in subgroup B."""

    n_samples: int
    p: int
    p_prime: int
    subgroup_fraction: float = 0.5  # fraction of samples in subgroup A
    planted_logic_expression: str = "(OR x0 (AND x1 x2))"
    planted_linear_coefficients: tuple = ()
    label_noise_rate: float = 0.0
    subgroup_marker_shift: float = 0.0  # >0 appends a Z column separating subgroups
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.subgroup_fraction < 1):
            raise DataError("subgroup_fraction must be in (0, 1)")
        if not (0 <= self.label_noise_rate < 0.5):
            raise DataError("label_noise_rate must be in [0, 0.5)")
        if self.n_samples < 4 or self.p < 1 or self.p_prime < 0:
            raise DataError("degenerate synthetic shape")
        if len(self.planted_linear_coefficients) not in (0, self.p_prime):
            raise DataError("planted_linear_coefficients must match p_prime")


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Deterministic under cfg.seed; subgroup tag stored in the cohort field."""
    rng = np.random.default_rng(cfg.seed)
    n, p, pp = cfg.n_samples, cfg.p, cfg.p_prime
    tree = logicreg.parse_expr(cfg.planted_logic_expression)
    if max(logicreg.leaf_indices(tree), default=-1) >= p:
        raise DataError("planted expression references covariates beyond p")

    X = rng.integers(0, 2, size=(n, p)).astype(np.int8)
    Z = rng.standard_normal((n, pp))
    in_a = rng.random(n) < cfg.subgroup_fraction

    coefs = np.array(cfg.planted_linear_coefficients or [2.0] * pp, dtype=float)
    y = np.empty(n, dtype=np.int8)
    if pp:
        score = Z @ coefs
        y[in_a] = (rng.random(in_a.sum()) < sigmoid(score[in_a])).astype(np.int8)
    else:
        y[in_a] = rng.integers(0, 2, size=int(in_a.sum())).astype(np.int8)
    planted = logicreg.eval_tree_matrix(tree, X).astype(np.int8)
    flip = rng.random(n) < cfg.label_noise_rate
    y[~in_a] = np.where(flip[~in_a], 1 - planted[~in_a], planted[~in_a])

    z_names = [f"z{j}" for j in range(pp)]
    z_kinds = ["continuous"] * pp
    if cfg.subgroup_marker_shift > 0:
        marker = np.where(in_a, cfg.subgroup_marker_shift, -cfg.subgroup_marker_shift)
        marker = marker + 0.5 * rng.standard_normal(n)
        Z = np.column_stack([Z, marker]) if pp else marker.reshape(-1, 1)
        z_names.append("z_marker")
        z_kinds.append("continuous")

    return Dataset(
        x=X, z=Z, y=y,
        ids=[f"s{i}" for i in range(n)],
        cohort=["subgroup_A" if a else "subgroup_B" for a in in_a],
        split=["training"] * n,
        x_names=[f"x{j}" for j in range(p)],
        z_names=z_names, z_kinds=z_kinds, label_name="y",
    )
