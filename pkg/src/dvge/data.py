"""Tabular datasets: the South German Credit file and a synthetic proxy-attribute generator."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CREDIT_COLUMNS = (
    "status",
    "duration",
    "credit_history",
    "purpose",
    "amount",
    "savings",
    "employment_duration",
    "installment_rate",
    "personal_status_sex",
    "other_debtors",
    "present_residence",
    "property",
    "age",
    "other_installment_plans",
    "housing",
    "number_credits",
    "job",
    "people_liable",
    "telephone",
    "foreign_worker",
)
CREDIT_LABEL = "credit_risk"
# header names used by the distributed ``SouthGermanCredit.asc``
CREDIT_GERMAN_HEADER = (
    "laufkont laufzeit moral verw hoehe sparkont beszeit rate famges buerge "
    "wohnzeit verm alter weitkred wohn bishkred beruf pers telef gastarb kredit"
).split()
CREDIT_CONTINUOUS = frozenset({"duration", "amount", "age"})

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class DataFormatError(ValueError):
    """An input file does not have the expected layout."""


@dataclass(frozen=True)
class DatasetTable:
    """Feature matrix with named columns, binary sensitive columns, and a binary label."""

    columns: tuple[str, ...]
    kinds: tuple[str, ...]
    features: np.ndarray
    label: np.ndarray
    label_name: str = "label"
    sensitive: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != len(self.columns):
            raise ValueError(f"feature matrix {features.shape} does not match {len(self.columns)} columns")
        if len(self.kinds) != len(self.columns):
            raise ValueError("one kind per column required")
        if any(k not in (CONTINUOUS, CATEGORICAL) for k in self.kinds):
            raise ValueError(f"column kinds must be {CONTINUOUS!r} or {CATEGORICAL!r}")
        label = np.asarray(self.label, dtype=np.int64)
        if label.shape != (features.shape[0],):
            raise ValueError("label length does not match row count")
        if np.isnan(features).any():
            raise ValueError("feature matrix contains missing values")
        sens = {k: np.asarray(v, dtype=np.int64) for k, v in self.sensitive.items()}
        for name, vec in sens.items():
            if vec.shape != label.shape:
                raise ValueError(f"sensitive column {name!r} has the wrong length")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "sensitive", sens)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.features[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def take(self, rows) -> "DatasetTable":
        rows = np.asarray(rows)
        return replace(
            self,
            features=self.features[rows],
            label=self.label[rows],
            sensitive={k: v[rows] for k, v in self.sensitive.items()},
        )

    def drop_columns(self, names: Sequence[str]) -> "DatasetTable":
        keep = [i for i, c in enumerate(self.columns) if c not in set(names)]
        return replace(
            self,
            columns=tuple(self.columns[i] for i in keep),
            kinds=tuple(self.kinds[i] for i in keep),
            features=self.features[:, keep],
        )

    def with_sensitive(self, **columns) -> "DatasetTable":
        return replace(self, sensitive={**self.sensitive, **columns})

    def equals(self, other: "DatasetTable") -> bool:
        return (
            self.columns == other.columns
            and self.kinds == other.kinds
            and self.label_name == other.label_name
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.label, other.label)
            and self.sensitive.keys() == other.sensitive.keys()
            and all(np.array_equal(self.sensitive[k], other.sensitive[k]) for k in self.sensitive)
        )


# ---------------------------------------------------------------------------
# South German Credit


def _detect_delimiter(line: str) -> str | None:
    return "," if "," in line else None


def _split(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.split()
    return [cell.strip() for cell in line.split(delimiter)]


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_credit(path, delimiter: str | None = "auto", expected_rows: int | None = None) -> DatasetTable:
    """Read the 21-column credit file (20 attributes, then ``credit_risk``).

    Values are kept raw; use :func:`normalize` afterwards. One header line
    is tolerated. ``delimiter`` is ``"auto"`` (comma if the first data line
    has one, otherwise whitespace), ``None`` for whitespace, or a character.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: file is empty")
    if delimiter == "auto":
        delimiter = _detect_delimiter(lines[0][1] if len(lines) == 1 else lines[1][1])

    first = _split(lines[0][1], delimiter)
    if not all(_is_number(tok.strip('"')) for tok in first):
        if len(first) != 21:
            raise DataFormatError(f"{path}: line {lines[0][0]}: header has {len(first)} columns, expected 21")
        lines = lines[1:]

    n_cols = len(CREDIT_COLUMNS) + 1
    rows = []
    for lineno, line in lines:
        cells = _split(line, delimiter)
        if len(cells) != n_cols:
            raise DataFormatError(f"{path}: line {lineno}: found {len(cells)} columns, expected {n_cols}")
        row = []
        for col, cell in enumerate(cells):
            try:
                row.append(float(cell.strip('"')))
            except ValueError:
                name = (CREDIT_COLUMNS + (CREDIT_LABEL,))[col]
                raise DataFormatError(
                    f"{path}: line {lineno}, column {col + 1} ({name}): non-numeric value {cell!r}"
                ) from None
        rows.append(row)
    if expected_rows is not None and len(rows) != expected_rows:
        raise DataFormatError(f"{path}: {len(rows)} rows, expected {expected_rows}")

    arr = np.asarray(rows, dtype=np.float64)
    label = arr[:, -1]
    if not np.isin(label, (0, 1)).all():
        raise DataFormatError(f"{path}: {CREDIT_LABEL} must be coded 0/1")
    kinds = tuple(CONTINUOUS if c in CREDIT_CONTINUOUS else CATEGORICAL for c in CREDIT_COLUMNS)
    return DatasetTable(CREDIT_COLUMNS, kinds, arr[:, :-1], label.astype(np.int64), CREDIT_LABEL)


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def save_credit(table: DatasetTable, path, delimiter: str = " ") -> Path:
    """Write ``table`` back in the 21-column credit layout with the original German header."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(delimiter.join(CREDIT_GERMAN_HEADER) + "\n")
        for row, y in zip(table.features, table.label):
            fh.write(delimiter.join([_fmt(v) for v in row] + [str(int(y))]) + "\n")
    return path


def normalize(table: DatasetTable) -> DatasetTable:
    """Continuous columns divided by their maximum; categorical codes mapped onto ``{0, 1/(c-1), ..., 1}``."""
    out = np.empty_like(table.features)
    for j, (name, kind) in enumerate(zip(table.columns, table.kinds)):
        col = table.features[:, j]
        if kind == CONTINUOUS:
            top = col.max()
            if top <= 0:
                raise ValueError(f"continuous column {name!r} has non-positive maximum {top}")
            out[:, j] = col / top
        else:
            cats, codes = np.unique(col, return_inverse=True)
            out[:, j] = 0.0 if len(cats) == 1 else codes / (len(cats) - 1)
    return replace(table, features=out)


# ---------------------------------------------------------------------------
# sensitive attributes


@dataclass(frozen=True)
class Threshold:
    """``value >= threshold`` (or ``>`` with ``inclusive=False``)."""

    threshold: float
    inclusive: bool = True

    def apply(self, col: np.ndarray) -> np.ndarray:
        hit = col >= self.threshold if self.inclusive else col > self.threshold
        return hit.astype(np.int64)


@dataclass(frozen=True)
class ValueSet:
    """Membership in a set of category codes."""

    values: tuple[float, ...]

    def apply(self, col: np.ndarray) -> np.ndarray:
        absent = [v for v in self.values if not np.any(col == v)]
        if absent:
            raise ValueError(f"rule references values not present in the column: {absent}")
        return np.isin(col, self.values).astype(np.int64)


@dataclass(frozen=True)
class Identity:
    """The column is already coded 0/1."""

    def apply(self, col: np.ndarray) -> np.ndarray:
        if not np.isin(col, (0, 1)).all():
            raise ValueError("identity rule needs a 0/1 column")
        return col.astype(np.int64)


_RULE_RE = re.compile(r"^\s*(>=|>|==|in)\s*(.+?)\s*$")


def parse_rule(text: str):
    """Parse ``">=25"``, ``">3"``, ``"==1"``, ``"in 1,2"`` or ``"identity"``."""
    if text.strip() == "identity":
        return Identity()
    m = _RULE_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse sensitive rule {text!r}")
    op, arg = m.groups()
    if op == ">=":
        return Threshold(float(arg))
    if op == ">":
        return Threshold(float(arg), inclusive=False)
    return ValueSet(tuple(float(v) for v in arg.split(",")))


def binarize_sensitive(table: DatasetTable, column: str, rule) -> np.ndarray:
    if isinstance(rule, str):
        rule = parse_rule(rule)
    return rule.apply(table.column(column))


def conjunction(*vectors) -> np.ndarray:
    """1 where every input vector is 1."""
    if not vectors:
        raise ValueError("conjunction of nothing")
    out = np.ones_like(np.asarray(vectors[0], dtype=np.int64))
    for v in vectors:
        out = out & np.asarray(v, dtype=np.int64)
    return out


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic proxy-attribute dataset.

    Columns are ``t0..t{k-1}`` (task signals, uniform on [0, 1]), ``s``
    (sensitive, unless ``include_sensitive`` is off), ``p`` (proxy), and
    ``noise0..`` (uniform distractors). Binary columns are encoded as
    ``0.25`` / ``0.75`` plus Gaussian jitter of std ``noise``, clipped to
    [0, 1].
    """

    n: int = 10_000
    k_task: int = 4
    prevalence: float = 0.5
    rho_p: float = 0.8
    beta_s: float = 0.3
    noise: float = 0.05
    n_noise: int = 2
    signal_scale: float = 2.0
    include_sensitive: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("synthetic dataset needs n >= 1")
        if self.k_task < 1:
            raise ValueError("need at least one task-signal feature")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")
        if not 0.0 <= self.rho_p <= 1.0:
            raise ValueError("rho_p must lie in [0, 1]")
        if not 0.0 <= self.beta_s <= 1.0:
            raise ValueError("beta_s must lie in [0, 1]")
        if self.noise < 0 or self.n_noise < 0:
            raise ValueError("noise settings must be non-negative")


def task_score(t: np.ndarray) -> np.ndarray:
    """Standardised task signal: sum of centred uniforms scaled to unit variance."""
    k = t.shape[1]
    return (t - 0.5).sum(axis=1) * np.sqrt(12.0 / k)


def label_probability(t: np.ndarray, s: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """P(y=1 | t, s): a logistic task term, shifted up by exactly ``beta_s`` when s=1."""
    base = 1.0 / (1.0 + np.exp(-spec.signal_scale * task_score(t)))
    return (1.0 - spec.beta_s) * base + spec.beta_s * s


def synth_generate(spec: SyntheticSpec) -> DatasetTable:
    """Draw a dataset; the proxy copies ``s`` with probability ``rho_p`` and is otherwise an independent draw.

    That mixture gives corr(p, s) = rho_p for every prevalence, and
    P(p = s) = (1 + rho_p) / 2 at prevalence 0.5.
    """
    rng = np.random.default_rng(spec.seed)
    t = rng.uniform(0.0, 1.0, size=(spec.n, spec.k_task))
    s = (rng.uniform(size=spec.n) < spec.prevalence).astype(np.int64)
    copy = rng.uniform(size=spec.n) < spec.rho_p
    fresh = (rng.uniform(size=spec.n) < spec.prevalence).astype(np.int64)
    p = np.where(copy, s, fresh)
    y = (rng.uniform(size=spec.n) < label_probability(t, s, spec)).astype(np.int64)

    def encode(bits):
        return np.clip(0.25 + 0.5 * bits + rng.normal(0.0, spec.noise, size=spec.n), 0.0, 1.0)

    s_col, p_col = encode(s), encode(p)
    noise = rng.uniform(0.0, 1.0, size=(spec.n, spec.n_noise))

    cols = [f"t{j}" for j in range(spec.k_task)]
    blocks = [t]
    if spec.include_sensitive:
        cols.append("s")
        blocks.append(s_col[:, None])
    cols.append("p")
    blocks.append(p_col[:, None])
    cols += [f"noise{j}" for j in range(spec.n_noise)]
    blocks.append(noise)
    kinds = tuple(CONTINUOUS for _ in cols)
    return DatasetTable(tuple(cols), kinds, np.hstack(blocks), y, "y", {"s": s, "p": p})


# ---------------------------------------------------------------------------
# splitting and canonical CSV


def split(table: DatasetTable, train_fraction: float, seed: int) -> tuple[DatasetTable, DatasetTable]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(table.n)
    n_train = int(round(train_fraction * table.n))
    return table.take(order[:n_train]), table.take(order[n_train:])


def write_csv(table: DatasetTable, path) -> Path:
    """Canonical CSV: features, then ``sensitive:<name>`` columns, then the label."""
    path = Path(path)
    sens_names = sorted(table.sensitive)
    header = list(table.columns) + [f"sensitive:{k}" for k in sens_names] + [f"label:{table.label_name}"]
    kinds = list(table.kinds) + ["sensitive"] * len(sens_names) + ["label"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerow(kinds)
    for i in range(table.n):
        writer.writerow(
            [repr(float(v)) for v in table.features[i]]
            + [str(int(table.sensitive[k][i])) for k in sens_names]
            + [str(int(table.label[i]))]
        )
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    return path


def read_csv(path) -> DatasetTable:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
            kinds = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: missing header rows") from None
        rows = list(reader)
    feat_idx = [i for i, k in enumerate(kinds) if k in (CONTINUOUS, CATEGORICAL)]
    sens_idx = [i for i, k in enumerate(kinds) if k == "sensitive"]
    label_idx = [i for i, k in enumerate(kinds) if k == "label"]
    if len(label_idx) != 1:
        raise DataFormatError(f"{path}: expected exactly one label column")
    try:
        arr = np.asarray([[float(c) for c in row] for row in rows], dtype=np.float64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return DatasetTable(
        tuple(header[i] for i in feat_idx),
        tuple(kinds[i] for i in feat_idx),
        arr[:, feat_idx],
        arr[:, label_idx[0]].astype(np.int64),
        header[label_idx[0]].removeprefix("label:"),
        {header[i].removeprefix("sensitive:"): arr[:, i].astype(np.int64) for i in sens_idx},
    )
