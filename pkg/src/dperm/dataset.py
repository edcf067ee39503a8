"""Tabular binary-classification data: loading, encoding, splitting, export.

Instances are pairs (x, y) with a feature vector x scaled into the unit
ball and a label y in {-1, +1}. Datasets are immutable once built, so they
can be shared freely between training runs.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataInstance",
    "Dataset",
    "EncodingSpec",
    "load_csv",
    "normalize_unit_ball",
    "scale_features",
    "split",
    "synthesize",
    "subsample",
    "export_private",
    "exported_encoding",
    "load_exported",
]


@dataclass(frozen=True)
class DataInstance:
    """One example: feature vector plus a -1/+1 label."""

    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        if self.y not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.y!r}")


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of instances sharing one feature dimension.

    Features live in an (n, d) float array and labels in an (n,) array of
    -1/+1 values. Arrays are frozen after construction; derive modified
    datasets through :meth:`replace_features`.
    """

    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=int))
        if X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one instance")
        if y.shape != (X.shape[0],):
            raise ValueError(
                f"label count {y.shape} does not match {X.shape[0]} instances"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def instances(self) -> tuple[DataInstance, ...]:
        return tuple(self.instance(i) for i in range(self.n))

    def instance(self, i: int) -> DataInstance:
        return DataInstance(self.X[i], int(self.y[i]))

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        for i in range(self.n):
            yield self.instance(i)

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.X, axis=1).max())

    def replace_features(self, X: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(X, self.y.copy(), name if name is not None else self.name)

    def take(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], name if name is not None else self.name)


@dataclass(frozen=True)
class EncodingSpec:
    """How raw CSV columns map to (x, y) pairs.

    Exactly one column carries the label role; its raw values map to -1/+1
    through ``label_map``. Feature columns keep their header order, with each
    categorical column expanded into one indicator per level. Levels are
    sorted lexicographically when inferred from the file; pass ``levels`` to
    pin them (values outside the pinned levels encode as an all-zero block).
    Rows whose label is missing from ``label_map`` raise unless
    ``drop_unmapped`` is set, which silently skips them (used to reduce
    multi-class sources to a class pair).
    """

    label: str
    label_map: dict
    numeric: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    drop_unmapped: bool = False
    levels: dict | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "numeric", tuple(self.numeric))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        feature_cols = set(self.numeric) | set(self.categorical)
        if self.label in feature_cols:
            raise ValueError(f"column {self.label!r} cannot be both label and feature")
        if set(self.numeric) & set(self.categorical):
            raise ValueError("a column cannot be both numeric and categorical")
        if not feature_cols:
            raise ValueError("at least one feature column is required")
        if not self.label_map:
            raise ValueError("label_map must not be empty")
        bad = {v for v in self.label_map.values() if v not in (-1, 1)}
        if bad:
            raise ValueError(f"label_map values must be -1 or +1, got {sorted(bad)}")


def load_csv(path: str | Path, spec: EncodingSpec) -> Dataset:
    """Read a headered CSV file and encode it per ``spec``.

    Categorical columns are one-hot expanded; the label column is mapped to
    -1/+1. Parse failures report the offending 1-based line number. The
    returned dataset is not normalized; see :func:`normalize_unit_ball`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        col_index = {name: i for i, name in enumerate(header)}
        wanted = (spec.label,) + spec.numeric + spec.categorical
        missing = [c for c in wanted if c not in col_index]
        if missing:
            raise ValueError(f"{path}: missing columns {missing} in header {header}")

        labels: list[int] = []
        numeric_rows: list[list[float]] = []
        cat_rows: list[dict] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            raw_label = row[col_index[spec.label]].strip()
            if raw_label not in spec.label_map:
                if spec.drop_unmapped:
                    continue
                raise ValueError(
                    f"{path}:{lineno}: label value {raw_label!r} not in label map"
                )
            labels.append(int(spec.label_map[raw_label]))
            nums = []
            for col in spec.numeric:
                raw = row[col_index[col]].strip()
                try:
                    nums.append(float(raw))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {raw!r} in column {col!r}"
                    ) from None
            numeric_rows.append(nums)
            cat_rows.append({col: row[col_index[col]].strip() for col in spec.categorical})

    if not labels:
        raise ValueError(f"{path}: no usable rows")

    levels: dict[str, list] = {}
    for col in spec.categorical:
        if spec.levels is not None and col in spec.levels:
            levels[col] = list(spec.levels[col])
        else:
            levels[col] = sorted({r[col] for r in cat_rows})

    # Feature layout follows the CSV header order, categoricals expanded in place.
    blocks: list[np.ndarray] = []
    feature_cols = [c for c in header if c in set(spec.numeric) | set(spec.categorical)]
    numeric_pos = {c: i for i, c in enumerate(spec.numeric)}
    num_arr = np.asarray(numeric_rows, dtype=float)
    for col in feature_cols:
        if col in numeric_pos:
            blocks.append(num_arr[:, numeric_pos[col]][:, None])
        else:
            lv = levels[col]
            block = np.zeros((len(labels), len(lv)))
            pos = {v: j for j, v in enumerate(lv)}
            for i, r in enumerate(cat_rows):
                j = pos.get(r[col])
                if j is not None:
                    block[i, j] = 1.0
            blocks.append(block)
    X = np.hstack(blocks)
    return Dataset(X, np.asarray(labels), name=path.stem)


def normalize_unit_ball(ds: Dataset) -> tuple[Dataset, float]:
    """Scale features so the largest row norm is 1, if it exceeds 1.

    Returns the dataset and the scale factor used, so held-out data can be
    divided by the same factor (see :func:`scale_features`). Datasets already
    inside the unit ball are returned unchanged with scale 1. An all-zero
    dataset triggers a warning and the identity transform.
    """
    s = ds.max_norm()
    if s == 0.0:
        warnings.warn("all-zero dataset: unit-ball normalization is the identity")
        return ds, 1.0
    if s <= 1.0:
        return ds, 1.0
    return ds.replace_features(ds.X / s), s


def scale_features(ds: Dataset, scale: float) -> Dataset:
    """Divide features by a previously computed normalization scale."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if scale == 1.0:
        return ds
    return ds.replace_features(ds.X / scale)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint train/test partition by seeded uniform shuffle.

    Train size is ceil(train_fraction * n); membership is deterministic
    given the seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if ds.n < 2:
        raise ValueError("need at least two instances to split")
    n_train = math.ceil(round(train_fraction * ds.n, 12))
    if n_train < 1 or n_train >= ds.n:
        raise ValueError(
            f"train_fraction {train_fraction} yields an empty partition for n={ds.n}"
        )
    perm = np.random.default_rng(seed).permutation(ds.n)
    return (
        ds.take(perm[:n_train], name=f"{ds.name}-train"),
        ds.take(perm[n_train:], name=f"{ds.name}-test"),
    )


def synthesize(n: int, d: int, margin: float, seed: int) -> Dataset:
    """Two seeded Gaussian clusters at +/- margin along a random direction.

    Labels follow the cluster (balanced up to rounding, order shuffled);
    at margin 0 they are independent of the features. The result is
    normalized into the unit ball. Pure function of (n, d, margin, seed).
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    if margin < 0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    n_pos = (n + 1) // 2
    y = np.array([1] * n_pos + [-1] * (n - n_pos))
    rng.shuffle(y)
    X = y[:, None] * margin * u[None, :] + rng.standard_normal((n, d))
    ds = Dataset(X, y, name=f"synthetic-{n}x{d}")
    ds, _ = normalize_unit_ball(ds)
    return ds


def subsample(ds: Dataset, size: int, seed: int) -> Dataset:
    """Seeded subsample without replacement, preserving original row order."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    if size >= ds.n:
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(ds.n, size=size, replace=False))
    return ds.take(idx)


def export_private(ds_priv: Dataset, path: str | Path) -> None:
    """Write a perturbed dataset as CSV: features then the -1/+1 label.

    Features are printed with 17 significant digits so a reload through
    :func:`load_exported` reproduces the values exactly.
    """
    if not str(path):
        raise ValueError("empty output path")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(ds_priv.d)] + ["label"])
        for i in range(ds_priv.n):
            writer.writerow(
                [format(v, ".17g") for v in ds_priv.X[i]] + [str(int(ds_priv.y[i]))]
            )


def exported_encoding(d: int) -> EncodingSpec:
    """Encoding spec matching the column layout written by export_private."""
    return EncodingSpec(
        label="label",
        label_map={"-1": -1, "1": 1},
        numeric=tuple(f"x{j}" for j in range(d)),
    )


def load_exported(path: str | Path) -> Dataset:
    """Reload a CSV produced by :func:`export_private`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    d = len(header) - 1
    if d < 1 or header[-1].strip() != "label":
        raise ValueError(f"{path}: not an exported dataset (header {header})")
    return load_csv(path, exported_encoding(d))
