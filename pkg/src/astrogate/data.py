"""Tabular network-flow loading, labeling, normalization, and synthesis.

CSV rows become (features, label) pairs: numeric cells parse directly,
anything else maps through a stable 64-bit hash to an integer code, and the
label is 1 iff the label cell contains any of the configured marker strings
(case-insensitive). Normalization statistics are fitted on the training
split only.
"""

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

DEFAULT_FEATURE_COLUMNS = ("Dur", "Proto", "TotBytes", "TotPkts", "SrcBytes")
DEFAULT_LABEL_COLUMN = "Label"
DEFAULT_POSITIVE_MARKERS = ("Botnet",)


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"  # path to a CSV, or "synthetic"
    feature_columns: tuple = DEFAULT_FEATURE_COLUMNS
    label_column: str = DEFAULT_LABEL_COLUMN
    positive_label_markers: tuple = DEFAULT_POSITIVE_MARKERS
    normalization: str = "zscore"  # zscore | minmax | none
    n_train: int = None
    n_test: int = None
    ratio: float = None
    stratify: bool = False
    delimiter: str = ","
    # synthetic-source settings
    n_samples: int = 16000
    n_features: int = 8
    class_sep: float = 6.0
    label_noise: float = 0.0
    positive_fraction: float = 0.5

    def __post_init__(self):
        if self.normalization not in ("zscore", "minmax", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.ratio is not None:
            if not 0 < self.ratio < 1:
                raise ValueError("split ratio must lie in (0, 1)")
        elif self.n_train is not None or self.n_test is not None:
            if not (self.n_train and self.n_test
                    and self.n_train >= 1 and self.n_test >= 1):
                raise ValueError("n_train and n_test must both be >= 1")
        else:
            raise ValueError("spec needs either (n_train, n_test) or ratio")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on sample count")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()


def stable_hash_code(value: str) -> float:
    """Deterministic 64-bit hash of a string, as a float feature code."""
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest()
    return float(int.from_bytes(digest, "little") >> 11)  # keep exact in f64


def _parse_cell(value: str) -> float:
    value = value.strip()
    try:
        return float(value)
    except ValueError:
        return stable_hash_code(value)


def synthesize(n: int, d: int, class_sep: float, seed: int,
               label_noise=0.0, positive_fraction=0.5):
    """Two seeded Gaussian clusters at +-(class_sep/2) along a random unit axis."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 samples and d >= 1 features")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    y = (rng.random(n) < positive_fraction).astype(np.uint8)
    X = rng.standard_normal((n, d)) + np.where(y[:, None] == 1, 1.0, -1.0) \
        * (class_sep / 2.0) * u[None, :]
    if label_noise > 0:
        flips = rng.random(n) < label_noise
        y = np.where(flips, 1 - y, y).astype(np.uint8)
    return X, y


def _read_csv(spec: DatasetSpec):
    with open(spec.source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=spec.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{spec.source}: empty file") from None
        header = [c.strip() for c in header]
        col_idx = []
        for col in spec.feature_columns:
            if isinstance(col, int):
                if col >= len(header):
                    raise ValueError(f"feature column index {col} out of range")
                col_idx.append(col)
            else:
                if col not in header:
                    raise ValueError(f"missing feature column {col!r}")
                col_idx.append(header.index(col))
        if spec.label_column not in header:
            raise ValueError(f"missing label column {spec.label_column!r}")
        label_idx = header.index(spec.label_column)
        markers = tuple(m.lower() for m in spec.positive_label_markers)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) <= max(max(col_idx), label_idx):
                raise ValueError(f"{spec.source}:{lineno}: truncated row")
            rows.append([_parse_cell(row[i]) for i in col_idx])
            label = row[label_idx].lower()
            labels.append(1 if any(m in label for m in markers) else 0)
    if not rows:
        raise ValueError(f"{spec.source}: no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.uint8)


def _split_sizes(spec: DatasetSpec, n: int):
    if spec.ratio is not None:
        n_train = int(round(spec.ratio * n))
        n_test = n - n_train
    else:
        n_train, n_test = spec.n_train, spec.n_test
        if n_train + n_test > n:
            raise ValueError(
                f"split ({n_train}+{n_test}) exceeds available rows ({n})")
    if n_train < 1 or n_test < 1:
        raise ValueError("both splits must be nonempty")
    return n_train, n_test


def _split_indices(spec: DatasetSpec, y, seed: int):
    n = y.shape[0]
    n_train, n_test = _split_sizes(spec, n)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    perm = rng.permutation(n)
    if not spec.stratify:
        return perm[:n_train], perm[n_train:n_train + n_test]
    train_idx, test_idx = [], []
    want_frac = n_train / (n_train + n_test)
    for cls in (0, 1):
        members = perm[y[perm] == cls]
        k = int(round(want_frac * members.size))
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    train = np.concatenate(train_idx)[:n_train]
    test = np.concatenate(test_idx)[:n_test]
    return train, test


def fit_normalization(X_train, kind: str):
    """Statistics from the training split only (no test leakage)."""
    if kind == "zscore":
        mu = X_train.mean(axis=0)
        sd = X_train.std(axis=0)
        sd = np.where(sd == 0, 1.0, sd)
        return {"kind": kind, "center": mu, "scale": sd}
    if kind == "minmax":
        lo = X_train.min(axis=0)
        span = X_train.max(axis=0) - lo
        span = np.where(span == 0, 1.0, span)
        return {"kind": kind, "center": lo, "scale": span}
    return {"kind": "none", "center": np.zeros(X_train.shape[1]),
            "scale": np.ones(X_train.shape[1])}


def apply_normalization(X, stats):
    return (X - stats["center"]) / stats["scale"]


def load_csv(spec: DatasetSpec, seed=0):
    """Parse, deterministically shuffle, split, and normalize a CSV dataset.

    Returns (train, test, stats).
    """
    X, y = _read_csv(spec)
    return _finish(spec, X, y, seed)


def build_dataset(spec: DatasetSpec, seed=0):
    """Route to the CSV loader or the synthetic generator per ``spec.source``."""
    if spec.source == "synthetic":
        X, y = synthesize(spec.n_samples, spec.n_features, spec.class_sep,
                          seed=int(np.random.SeedSequence([int(seed), 0x57A7]).generate_state(1)[0]),
                          label_noise=spec.label_noise,
                          positive_fraction=spec.positive_fraction)
        return _finish(spec, X, y, seed)
    return load_csv(spec, seed)


def _finish(spec: DatasetSpec, X, y, seed):
    train_idx, test_idx = _split_indices(spec, y, seed)
    stats = fit_normalization(X[train_idx], spec.normalization)
    train = Dataset(apply_normalization(X[train_idx], stats), y[train_idx])
    test = Dataset(apply_normalization(X[test_idx], stats), y[test_idx])
    return train, test, stats
