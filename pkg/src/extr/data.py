"""Tabular datasets with a binary protected attribute.

Covers CSV ingestion/serialization, age binarization, group splitting,
the biased-Gaussian generator used in the simulation experiments, and
stratified K-fold assignment.

Encoding conventions used throughout the package: ``protected == 1`` is the
privileged group, ``label == 1`` is the favorable outcome.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    feature_names: tuple[str, ...]
    protected: np.ndarray
    label: np.ndarray | None = None
    protected_name: str = "s"
    label_name: str | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise DataError("features must be a 2-D matrix with at least one column")
        if not np.all(np.isfinite(feats)):
            raise DataError("features must be finite")
        n = feats.shape[0]
        if len(self.feature_names) != feats.shape[1]:
            raise DataError("feature_names length does not match feature columns")
        prot = np.asarray(self.protected).astype(np.int8)
        if prot.shape != (n,) or not np.isin(prot, (0, 1)).all():
            raise DataError("protected must be a 0/1 vector with one entry per row")
        lab = None
        if self.label is not None:
            lab = np.asarray(self.label).astype(np.int8)
            if lab.shape != (n,) or not np.isin(lab, (0, 1)).all():
                raise DataError("label must be a 0/1 vector with one entry per row")
            lab.setflags(write=False)
        feats.setflags(write=False)
        prot.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "protected", prot)
        object.__setattr__(self, "label", lab)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def column_index(self, cols: Sequence[str | int] | None) -> list[int]:
        """Resolve column names or positions to feature positions.

        ``None`` selects every feature column.
        """
        if cols is None:
            return list(range(self.d))
        out = []
        for c in cols:
            if isinstance(c, (int, np.integer)):
                if not 0 <= c < self.d:
                    raise DataError(f"column index {c} out of range")
                out.append(int(c))
            elif c in self.feature_names:
                out.append(self.feature_names.index(c))
            else:
                raise DataError(f"missing column: {c!r}")
        if not out:
            raise DataError("empty column subset")
        if len(set(out)) != len(out):
            raise DataError("duplicate columns in subset")
        return out

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.feature_names, self.protected, self.label,
                       self.protected_name, self.label_name)

    def take(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.features[rows],
            self.feature_names,
            self.protected[rows],
            None if self.label is None else self.label[rows],
            self.protected_name,
            self.label_name,
        )


@dataclass(frozen=True)
class GroupedData:
    group0: np.ndarray
    group1: np.ndarray
    row_index0: np.ndarray
    row_index1: np.ndarray

    @property
    def n0(self) -> int:
        return self.group0.shape[0]

    @property
    def n1(self) -> int:
        return self.group1.shape[0]

    def merge(self) -> np.ndarray:
        """Reassemble the original feature matrix from the two groups."""
        d = self.group0.shape[1]
        out = np.empty((self.n0 + self.n1, d))
        out[self.row_index0] = self.group0
        out[self.row_index1] = self.group1
        return out


@dataclass(frozen=True)
class SyntheticConfig:
    n0: int
    n1: int
    means0: tuple[float, ...]
    means1: tuple[float, ...]
    cov_diag: tuple[float, ...]
    beta0: tuple[float, ...]
    beta1: tuple[float, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        d = len(self.means0)
        if d < 1 or len(self.means1) != d or len(self.cov_diag) != d:
            raise DataError("means0, means1 and cov_diag must share one dimension d >= 1")
        if any(v <= 0 for v in self.cov_diag):
            raise DataError("cov_diag entries must be positive")
        if len(self.beta0) != d + 1 or len(self.beta1) != d + 1:
            raise DataError("beta vectors must have length d + 1 (intercept first)")
        if self.n0 < 1 or self.n1 < 1:
            raise DataError("group sizes must be positive")
        if self.seed < 0:
            raise DataError("seed must be non-negative")

    @property
    def d(self) -> int:
        return len(self.means0)


_E1_MEANS0 = (3.0, 3.0, 2.0, 2.5, 3.5)
_E1_MEANS1 = (4.0, 4.0, 3.0, 3.5, 4.5)
_E1_COV = (1.0, 1.0, 0.5, 0.5, 1.0)
_E1_BETA0 = (1.0, -1.0, -0.5, 1.0, -1.0, 1.0)
_E1_BETA1 = (1.0, -0.4, 1.0, -1.0, 1.0, -0.5)


def e1_config(variant: str = "A", seed: int = 0) -> SyntheticConfig:
    """Generator settings of the one-dimensional-repair simulation.

    Variant ``"A"`` has balanced groups (200/200), ``"B"`` 200/300.
    """
    sizes = {"A": (200, 200), "B": (200, 300)}
    if variant.upper() not in sizes:
        raise DataError(f"unknown E1 variant {variant!r}")
    n0, n1 = sizes[variant.upper()]
    return SyntheticConfig(n0, n1, _E1_MEANS0, _E1_MEANS1, _E1_COV, _E1_BETA0, _E1_BETA1, seed)


def e2_config(n0: int = 200, n1: int = 200, seed: int = 0) -> SyntheticConfig:
    """Three-dimensional online-scenario generator (first three E1 coordinates)."""
    return SyntheticConfig(n0, n1, _E1_MEANS0[:3], _E1_MEANS1[:3], _E1_COV[:3],
                           _E1_BETA0[:4], _E1_BETA1[:4], seed)


# ---------------------------------------------------------------------------
# CSV


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric value at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value at row {row}, column {col}")
    return value


def _binary_column(values: list[str], name: str) -> np.ndarray:
    stripped = [v.strip() for v in values]
    try:
        nums = [float(v) for v in stripped]
    except ValueError:
        nums = None
    if nums is not None and set(nums) <= {0.0, 1.0}:
        return np.array(nums, dtype=np.int8)
    levels = sorted(set(stripped))
    if len(levels) > 2:
        raise DataError(f"column {name!r} has more than two distinct values")
    # lexically smaller value -> 0
    return np.array([levels.index(v) for v in stripped], dtype=np.int8)


def read_csv_text(text: str, protected_col: str, label_col: str | None = None,
                  require_both_groups: bool = True) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("empty CSV (no header row)")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for name in (protected_col, label_col):
        if name is not None and name not in header:
            raise DataError(f"missing column: {name!r}")
    if len(body) < 2:
        raise DataError("need at least 2 data rows")
    for r, line in enumerate(body, start=1):
        if len(line) != len(header):
            raise DataError(f"row {r} has {len(line)} fields, expected {len(header)}")

    p_idx = header.index(protected_col)
    l_idx = header.index(label_col) if label_col is not None else None
    feat_idx = [i for i in range(len(header)) if i not in (p_idx, l_idx)]
    if not feat_idx:
        raise DataError("no feature columns")

    features = np.empty((len(body), len(feat_idx)))
    for r, line in enumerate(body, start=1):
        for k, i in enumerate(feat_idx):
            features[r - 1, k] = _parse_float(line[i], r, header[i])
    protected = _binary_column([line[p_idx] for line in body], protected_col)
    label = None
    if l_idx is not None:
        label = _binary_column([line[l_idx] for line in body], label_col)

    ds = Dataset(features, tuple(header[i] for i in feat_idx), protected, label,
                 protected_col, label_col)
    if require_both_groups and (ds.protected.min() == ds.protected.max()):
        raise DataError("a protected group is empty")
    return ds


def load_csv(path: str | Path, protected_col: str, label_col: str | None = None,
             require_both_groups: bool = True) -> Dataset:
    """Read a header-ed, comma-separated file into a :class:`Dataset`.

    The protected (and optional label) column must hold 0/1 values or exactly
    two distinct strings; strings are mapped by lexical order, smaller -> 0.
    Every other column is a numeric feature, kept in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    return read_csv_text(path.read_text(encoding="utf-8"), protected_col, label_col,
                         require_both_groups)


def format_float(value: float) -> str:
    # repr is the shortest string that round-trips
    return repr(float(value))


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(ds.feature_names) + [ds.protected_name]
    if ds.label is not None:
        header.append(ds.label_name or "y")
    writer.writerow(header)
    for i in range(ds.n):
        row = [format_float(v) for v in ds.features[i]] + [str(int(ds.protected[i]))]
        if ds.label is not None:
            row.append(str(int(ds.label[i])))
        writer.writerow(row)
    return buf.getvalue()


def write_csv(ds: Dataset, path: str | Path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, dataset_to_csv(ds))


# ---------------------------------------------------------------------------
# Transformations


def binarize_protected_age(ds: Dataset, age_col: str, threshold: float = 25.0,
                           drop: bool = False) -> Dataset:
    """Protected := 1 (senior, privileged) where age > threshold, else 0."""
    if age_col not in ds.feature_names:
        raise DataError(f"missing column: {age_col!r}")
    j = ds.feature_names.index(age_col)
    protected = (ds.features[:, j] > threshold).astype(np.int8)
    features, names = ds.features, ds.feature_names
    if drop:
        keep = [k for k in range(ds.d) if k != j]
        if not keep:
            raise DataError("dropping the age column leaves no features")
        features = features[:, keep]
        names = tuple(names[k] for k in keep)
    return Dataset(features, names, protected, ds.label, age_col + "_senior", ds.label_name)


def split_by_group(ds: Dataset) -> GroupedData:
    idx0 = np.flatnonzero(ds.protected == 0)
    idx1 = np.flatnonzero(ds.protected == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise DataError("a protected group is empty")
    return GroupedData(ds.features[idx0], ds.features[idx1], idx0, idx1)


def gen_biased_gaussian(cfg: SyntheticConfig) -> Dataset:
    """Draw group-conditional Gaussians and group-specific logistic labels.

    Group ``s`` uses its own child stream of ``SeedSequence(cfg.seed)``
    (spawn order: group 0, group 1), so the draws of one group do not depend
    on the size of the other.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)]
    sd = np.sqrt(np.asarray(cfg.cov_diag, dtype=float))
    blocks, labels = [], []
    for s, (n, mean, beta) in enumerate(((cfg.n0, cfg.means0, cfg.beta0),
                                         (cfg.n1, cfg.means1, cfg.beta1))):
        rng = streams[s]
        x = rng.standard_normal((n, cfg.d)) * sd + np.asarray(mean, dtype=float)
        eta = beta[0] + x @ np.asarray(beta[1:], dtype=float)
        p = 1.0 / (1.0 + np.exp(-eta))
        labels.append((rng.random(n) < p).astype(np.int8))
        blocks.append(x)
    features = np.vstack(blocks)
    protected = np.concatenate([np.zeros(cfg.n0, np.int8), np.ones(cfg.n1, np.int8)])
    names = tuple(f"x{k + 1}" for k in range(cfg.d))
    return Dataset(features, names, protected, np.concatenate(labels), "s", "y")


@dataclass(frozen=True)
class FoldPlan:
    K: int
    assignments: np.ndarray
    seed: int
    stratified_by: str = field(default="s,y")

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def folds(self):
        for k in range(1, self.K + 1):
            yield k, self.train_rows(k), self.test_rows(k)


def kfold_split(ds: Dataset, K: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified K-fold assignment with fold ids ``1..K``.

    Strata are (S, Y) cells when labels exist, S otherwise; when a stratum
    has fewer than K rows the plan falls back to stratifying by S alone (and
    to no stratification if even that is too small). Rows are dealt
    round-robin over the concatenated, shuffled strata, so fold sizes differ
    by at most one.
    """
    if not 2 <= K <= ds.n:
        raise DataError(f"K must be in [2, {ds.n}], got {K}")
    rng = np.random.default_rng(seed)

    def strata_of(keys: np.ndarray) -> list[np.ndarray]:
        return [np.flatnonzero(keys == v) for v in np.unique(keys)]

    levels = []
    if ds.label is not None:
        levels.append(("s,y", ds.protected.astype(int) * 2 + ds.label))
    levels.append(("s", ds.protected.astype(int)))
    levels.append(("none", np.zeros(ds.n, int)))

    for i, (name, keys) in enumerate(levels):
        strata = strata_of(keys)
        if name == "none" or min(len(s) for s in strata) >= K:
            if i > 0:
                log.warning("a stratum is smaller than K=%d; stratifying by %s", K, name)
            break

    order = np.concatenate([rng.permutation(s) for s in strata])
    assignments = np.empty(ds.n, dtype=np.int64)
    assignments[order] = np.arange(ds.n) % K + 1
    return FoldPlan(K, assignments, seed, name)
