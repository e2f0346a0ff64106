"""Synthetic continual-task streams, CSV ingestion, and deterministic
train/test splitting. All generators are pure functions of spec + seed.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .linalg import as_matrix

GENERATORS = ("SplitGaussians", "RotatedGaussians", "CsvSplit")
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class TaskDataset:
    """Feature matrix with task-local class labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    task_id: int

    def __post_init__(self):
        feats = as_matrix(self.features, "features")
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or lab.shape[0] != feats.shape[0]:
            raise ValidationError("labels must match the number of feature rows")
        if lab.size and (lab.min() < 0 or lab.max() >= self.class_count):
            raise ValidationError("labels must be < class_count")
        if feats.shape[0] < self.class_count:
            raise ValidationError("need at least one sample per class")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class StreamSpec:
    """Recipe for a deterministic sequence of tasks."""

    generator: str = "SplitGaussians"
    tasks: int = 5
    classes_per_task: int = 2
    dim: int = 32
    samples_per_class: int = 200
    noise_sigma: float = 0.5
    seed: int = 0
    csv_path: str | None = None
    csv_label_column: str | int | None = None
    csv_has_header: bool = True
    csv_normalize: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"unknown generator {self.generator!r}")
        if self.tasks < 1:
            raise ValidationError("tasks must be >= 1")
        if self.classes_per_task < 2:
            raise ValidationError("classes_per_task must be >= 2")
        if self.samples_per_class < 2:
            raise ValidationError("samples_per_class must be >= 2")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.generator == "CsvSplit" and not self.csv_path:
            raise ValidationError("CsvSplit requires csv_path")


def _split_train_test(features, labels, class_count, task_id, rng):
    """Per-class 80/20 split, shuffled deterministically."""
    train_idx, test_idx = [], []
    for cls in range(class_count):
        idx = np.nonzero(labels == cls)[0]
        perm = idx[rng.permutation(idx.size)]
        cut = max(1, int(np.floor(TRAIN_FRACTION * idx.size)))
        train_idx.append(perm[:cut])
        test_idx.append(perm[cut:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    if test_idx.size == 0:
        raise ValidationError("not enough samples per class for a test split")
    train = TaskDataset(features[train_idx], labels[train_idx], class_count, task_id)
    test = TaskDataset(features[test_idx], labels[test_idx], class_count, task_id)
    return train, test


def _gaussian_clusters(spec, rng, task_id):
    scale = 3.0 * spec.noise_sigma if spec.noise_sigma > 0 else 1.0
    blocks, labels = [], []
    for cls in range(spec.classes_per_task):
        mean = rng.standard_normal(spec.dim)
        mean *= scale / np.linalg.norm(mean)
        noise = rng.standard_normal((spec.samples_per_class, spec.dim))
        blocks.append(mean + spec.noise_sigma * noise)
        labels.append(np.full(spec.samples_per_class, cls, dtype=np.int64))
    return np.vstack(blocks), np.concatenate(labels)


def _random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def generate_stream(spec):
    """Build the ordered list of (train, test) task datasets for a spec."""
    if spec.generator == "SplitGaussians":
        rng = np.random.default_rng([spec.seed, 101])
        out = []
        for t in range(1, spec.tasks + 1):
            feats, labels = _gaussian_clusters(spec, rng, t)
            out.append(_split_train_test(feats, labels, spec.classes_per_task, t, rng))
        return out
    if spec.generator == "RotatedGaussians":
        rng = np.random.default_rng([spec.seed, 202])
        base_feats, base_labels = _gaussian_clusters(spec, rng, 1)
        out = []
        for t in range(1, spec.tasks + 1):
            rotation = np.eye(spec.dim) if t == 1 else _random_rotation(rng, spec.dim)
            feats = base_feats @ rotation
            out.append(_split_train_test(feats, base_labels.copy(),
                                         spec.classes_per_task, t, rng))
        return out
    return _csv_stream(spec)


def _csv_stream(spec):
    features, labels, _ = ingest_csv(
        spec.csv_path,
        spec.csv_label_column if spec.csv_label_column is not None else -1,
        normalize=spec.csv_normalize,
        has_header=spec.csv_has_header,
    )
    n_classes = int(labels.max()) + 1
    if n_classes % spec.tasks != 0:
        raise ValidationError(
            f"{n_classes} classes cannot be split evenly into {spec.tasks} tasks"
        )
    per_task = n_classes // spec.tasks
    if per_task < 2:
        raise ValidationError("CsvSplit needs at least 2 classes per task")
    rng = np.random.default_rng([spec.seed, 303])
    out = []
    for t in range(1, spec.tasks + 1):
        lo = (t - 1) * per_task
        mask = (labels >= lo) & (labels < lo + per_task)
        local = labels[mask] - lo
        out.append(_split_train_test(features[mask], local, per_task, t, rng))
    return out


def ingest_csv(path, label_column, normalize=False, has_header=True):
    """Parse a labeled CSV into (features, labels, label_names).

    Labels are mapped to dense indices by first occurrence; with
    ``normalize`` every feature column is standardized (constant columns
    become zero). Row order is preserved.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ParseError("empty file")

    header = None
    start = 0
    if has_header:
        header = rows[0]
        start = 1
        if len(rows) == 1:
            raise ParseError("no data rows", line=2)

    width = len(rows[start])
    if isinstance(label_column, str):
        if header is None:
            raise ValidationError("label column by name requires a header row")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ValidationError(f"unknown label column {label_column!r}") from None
    else:
        label_idx = int(label_column)
        if label_idx < 0:
            label_idx += width
        if not 0 <= label_idx < width:
            raise ValidationError(f"label column index {label_column} out of range")

    feats, raw_labels = [], []
    for offset, row in enumerate(rows[start:]):
        line_no = start + offset + 1
        if len(row) != width:
            raise ParseError(f"expected {width} cells, got {len(row)}", line=line_no)
        values = []
        for j, cell in enumerate(row):
            if j == label_idx:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", line=line_no) from None
        feats.append(values)
        raw_labels.append(row[label_idx])

    label_names = []
    index_of = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, name in enumerate(raw_labels):
        if name not in index_of:
            index_of[name] = len(label_names)
            label_names.append(name)
        labels[i] = index_of[name]

    features = np.asarray(feats, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ParseError("non-finite feature value")
    if normalize:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        centered = features - mean
        features = np.divide(centered, std, out=np.zeros_like(centered),
                             where=std > 0)
    return features, labels, label_names


def write_csv(path, features, labels, header=None):
    """Write a dataset as CSV with the label in the last column."""
    feats = as_matrix(features, "features")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        if header is not None:
            writer.writerow(header)
        for row, label in zip(feats, np.asarray(labels)):
            writer.writerow([repr(float(v)) for v in row] + [label])
