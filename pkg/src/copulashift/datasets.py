"""Data generation and ingestion: stretched two-moons, delimited loading,
min-max normalization, and deterministic epoch batching.

Loaders never reorder rows; all shuffling happens in the batch iterator,
keyed by (seed, epoch). Dataset dumps are comma-separated with a single
'#'-prefixed JSON header line recording how the file was produced, which
the loader skips.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DomainError

_DOMAINS = ("source", "target")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    domain: str = "source"
    feature_names: list[str] = field(default_factory=list)
    label_name: str | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] < 1:
            raise ContractViolation(f"Dataset: features must be N x d with d >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DomainError("Dataset: features contain non-finite values")
        self.features = f
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.ndim != 1 or y.shape[0] != f.shape[0]:
                raise ContractViolation(
                    f"Dataset: {y.shape} labels for {f.shape[0]} rows")
            self.labels = y
        if self.domain not in _DOMAINS:
            raise ContractViolation(f"Dataset: domain must be one of {_DOMAINS}")
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(f.shape[1])]
        if len(self.feature_names) != f.shape[1]:
            raise ContractViolation("Dataset: one name per feature column required")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return replace(self, features=self.features[idx],
                       labels=None if self.labels is None else self.labels[idx])

    def unlabeled(self) -> "Dataset":
        return replace(self, labels=None)


@dataclass(frozen=True)
class MoonsConfig:
    """Stretched two-moons generator settings."""

    n_per_class: int = 512
    stretch: float = 1.0
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if int(self.n_per_class) < 1:
            raise ContractViolation("MoonsConfig: n_per_class must be positive")
        if self.stretch < 1.0:
            raise ContractViolation(f"MoonsConfig: stretch must be >= 1, got {self.stretch}")
        if self.noise_sigma < 0.0:
            raise ContractViolation("MoonsConfig: noise_sigma must be nonnegative")
        object.__setattr__(self, "n_per_class", int(self.n_per_class))


def generate_moons(config: MoonsConfig, domain: str = "source") -> Dataset:
    """Two inter-twinning moons with the x axis stretched.

    Class 0 lies on y = sqrt(1 - x^2) for x in [-1, 1]; class 1 on
    y = 0.5 - sqrt(1 - (1-x)^2) for x in [0, 2]. The x coordinate is then
    multiplied by ``stretch`` and isotropic Gaussian noise of scale
    ``noise_sigma`` is added to both coordinates.
    """
    n = config.n_per_class
    rng = np.random.default_rng(config.seed)
    x0 = rng.uniform(-1.0, 1.0, size=n)
    y0 = np.sqrt(1.0 - x0 * x0)
    x1 = rng.uniform(0.0, 2.0, size=n)
    y1 = 0.5 - np.sqrt(1.0 - (1.0 - x1) ** 2)
    pts = np.column_stack([np.concatenate([x0, x1]) * config.stretch,
                           np.concatenate([y0, y1])])
    pts = pts + rng.normal(0.0, config.noise_sigma, size=pts.shape)
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n)
    return Dataset(pts, labels, domain=domain,
                   feature_names=["x", "y"], label_name="label")


def load_delimited(path, delimiter: str = ",", label_column: str | None = None,
                   domain: str = "source") -> Dataset:
    """Read a delimited text file with a header row into a Dataset.

    Leading '#' lines are skipped. Every cell must parse as a real number;
    failures report the 1-based row and the column name. The designated
    label column, when given, is separated out (integer dtype when all
    values are integral).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ContractViolation(f"load_delimited: {path} has no header row")
    rows = list(csv.reader(lines, delimiter=delimiter))
    header = [h.strip().strip('"') for h in rows[0]]
    if label_column is not None and label_column not in header:
        raise ContractViolation(
            f"load_delimited: label column {label_column!r} not in header {header}")
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ContractViolation(
                f"load_delimited: row {r} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise ContractViolation(
                    f"load_delimited: row {r}, column {header[c]!r}: "
                    f"cannot parse {cell!r} as a number") from None
    if label_column is None:
        return Dataset(data, None, domain=domain, feature_names=header)
    li = header.index(label_column)
    labels = data[:, li]
    if np.all(labels == np.round(labels)):
        labels = labels.astype(np.int64)
    features = np.delete(data, li, axis=1)
    names = [h for k, h in enumerate(header) if k != li]
    return Dataset(features, labels, domain=domain,
                   feature_names=names, label_name=label_column)


def write_dataset(ds: Dataset, path, header_note: dict | None = None) -> None:
    """Dump a Dataset as comma-separated text, labels in the final column."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_note is not None:
            fh.write("# " + json.dumps(header_note, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        cols = list(ds.feature_names)
        if ds.labels is not None:
            cols.append(ds.label_name or "label")
        writer.writerow(cols)
        for k in range(len(ds)):
            row = [repr(float(v)) for v in ds.features[k]]
            if ds.labels is not None:
                v = ds.labels[k]
                row.append(str(int(v)) if np.issubdtype(ds.labels.dtype, np.integer)
                           else repr(float(v)))
            writer.writerow(row)


@dataclass(frozen=True)
class MinMaxStats:
    """Per-column ranges recorded by minmax_normalize for inverse transforms."""

    feature_min: np.ndarray
    feature_max: np.ndarray
    label_min: float | None = None
    label_max: float | None = None

    @property
    def scales_labels(self) -> bool:
        return self.label_min is not None

    def denormalize_labels(self, y) -> np.ndarray:
        if not self.scales_labels:
            return np.asarray(y, dtype=np.float64)
        span = self.label_max - self.label_min
        return np.asarray(y, dtype=np.float64) * span + self.label_min


def _scale(values, lo, hi):
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(span > 0, (values - lo) / np.where(span > 0, span, 1.0), 0.0)
    return out


def minmax_normalize(stats_from: Dataset, *apply_to: Dataset,
                     scale_labels: bool | None = None):
    """Column-wise (x - min)/(max - min) with ranges taken from one dataset.

    Returns (normalized datasets in apply_to order, MinMaxStats). Constant
    columns map to zero; values outside the fitted range are not clipped.
    ``scale_labels=None`` scales labels only when the fitting dataset has
    float labels (regression targets); class indices pass through.
    """
    lo = stats_from.features.min(axis=0)
    hi = stats_from.features.max(axis=0)
    if scale_labels is None:
        scale_labels = (stats_from.labels is not None
                        and np.issubdtype(stats_from.labels.dtype, np.floating))
    if scale_labels and stats_from.labels is None:
        raise ContractViolation("minmax_normalize: no labels on the stats dataset")
    ymin = ymax = None
    if scale_labels:
        y = stats_from.labels.astype(np.float64)
        ymin, ymax = float(y.min()), float(y.max())
    stats = MinMaxStats(lo, hi, ymin, ymax)

    out = []
    for ds in apply_to:
        if ds.dim != stats_from.dim:
            raise ContractViolation(
                f"minmax_normalize: dataset has d={ds.dim}, stats have d={stats_from.dim}")
        labels = ds.labels
        if scale_labels and labels is not None:
            span = ymax - ymin
            labels = (labels.astype(np.float64) - ymin) / (span if span > 0 else 1.0)
        out.append(replace(ds, features=_scale(ds.features, lo, hi), labels=labels))
    return out, stats


def batch_iterator(ds: Dataset, batch_size: int, seed: int, epoch: int):
    """Deterministic shuffled row-index batches for one epoch.

    The permutation is keyed by (seed, epoch). Even batch sizes only (the
    copula estimator consumes row pairs); an odd final batch loses its
    last row, and disappears entirely if nothing remains.
    """
    batch_size = int(batch_size)
    if batch_size < 2 or batch_size % 2 != 0:
        raise ContractViolation(
            f"batch_iterator: batch_size must be even and >= 2, got {batch_size}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch)])
    perm = rng.permutation(len(ds))
    for start in range(0, len(perm), batch_size):
        batch = perm[start:start + batch_size]
        if len(batch) % 2 != 0:
            batch = batch[:-1]
        if len(batch) == 0:
            break
        yield batch
