"""Dataset representation, file formats, and synthetic label/annotator generation.

External conventions: class indices are 1-based in every file format and API
payload; internally they are 0-based. Feature files carry raw features; a
constant-1 bias column is appended at load time, so the flattened parameter
dimension is C*(d+1).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConsistencyError, FormatError, ValidationError
from .rng import stream

MAGIC = b"CHEF"
FORMAT_VERSION = 1

PROB_SUM_LOAD_TOL = 1e-6
PROB_SUM_TOL = 1e-9

DETERMINISTIC = "det"
PROBABILISTIC = "prob"
CLEANED = "cleaned"


@dataclass
class LabelState:
    """Label of one sample: a fixed class or a probability vector over classes.

    ``class_index`` is 0-based and set for det/cleaned labels; ``probs`` is set
    for probabilistic labels. A probabilistic label transitions to cleaned
    exactly once and never back.
    """

    kind: str
    class_index: int | None = None
    probs: np.ndarray | None = None

    @staticmethod
    def deterministic(class_index: int) -> "LabelState":
        return LabelState(DETERMINISTIC, class_index=int(class_index))

    @staticmethod
    def probabilistic(probs) -> "LabelState":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_SUM_LOAD_TOL:
            raise ValidationError(f"not a probability vector: {p}")
        return LabelState(PROBABILISTIC, probs=p / p.sum())

    @staticmethod
    def cleaned(class_index: int) -> "LabelState":
        return LabelState(CLEANED, class_index=int(class_index))

    @property
    def is_uncleaned(self) -> bool:
        return self.kind == PROBABILISTIC

    def vector(self, num_classes: int) -> np.ndarray:
        """Label as a length-C vector (one-hot for det/cleaned)."""
        if self.kind == PROBABILISTIC:
            return self.probs
        v = np.zeros(num_classes)
        v[self.class_index] = 1.0
        return v

    def weight(self, gamma: float) -> float:
        return gamma if self.kind == PROBABILISTIC else 1.0

    def copy(self) -> "LabelState":
        return LabelState(
            self.kind,
            self.class_index,
            None if self.probs is None else self.probs.copy(),
        )


@dataclass
class Dataset:
    """Feature matrix plus per-sample label state and split membership.

    Treated as immutable after load except for label cleaning, which goes
    through :meth:`clean_label` and only ever moves probabilistic -> cleaned.
    """

    features: np.ndarray  # N x d, raw (no bias column)
    labels: list[LabelState]
    num_classes: int
    split: dict[str, list[int]]  # keys: train/validation/test
    ground_truth: list[int | None] | None = None  # 0-based class per sample
    _features_aug: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.validate()

    def validate(self):
        n = self.features.shape[0]
        if len(self.labels) != n:
            raise ConsistencyError(
                f"{len(self.labels)} labels for {n} feature rows"
            )
        seen: set[int] = set()
        for name in ("train", "validation", "test"):
            ids = self.split.get(name, [])
            dup = seen.intersection(ids)
            if dup:
                raise ValidationError(f"ids in multiple splits: {sorted(dup)[:5]}")
            seen.update(ids)
        if seen != set(range(n)):
            raise ValidationError("splits must be disjoint and cover all ids")
        for i, lab in enumerate(self.labels):
            if lab.kind == PROBABILISTIC:
                if lab.probs.shape != (self.num_classes,):
                    raise ValidationError(f"sample {i}: bad probability length")
                if abs(lab.probs.sum() - 1.0) > PROB_SUM_TOL or np.any(lab.probs < 0):
                    raise ValidationError(f"sample {i}: invalid probability vector")
            elif not (0 <= lab.class_index < self.num_classes):
                raise ValidationError(f"sample {i}: class out of range")
        for name in ("validation", "test"):
            for i in self.split.get(name, []):
                if self.labels[i].kind == PROBABILISTIC:
                    raise ValidationError(
                        f"{name} sample {i} carries a probabilistic label"
                    )

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def features_aug(self) -> np.ndarray:
        """Features with the constant-1 bias column appended (cached)."""
        if self._features_aug is None or self._features_aug.shape[0] != self.features.shape[0]:
            self._features_aug = np.hstack(
                [self.features, np.ones((self.features.shape[0], 1))]
            )
        return self._features_aug

    @property
    def train_ids(self) -> list[int]:
        return self.split["train"]

    @property
    def validation_ids(self) -> list[int]:
        return self.split["validation"]

    @property
    def test_ids(self) -> list[int]:
        return self.split["test"]

    def uncleaned_ids(self) -> list[int]:
        return [i for i in self.train_ids if self.labels[i].is_uncleaned]

    def label_matrix(self, ids) -> np.ndarray:
        return np.array([self.labels[i].vector(self.num_classes) for i in ids])

    def weights(self, ids, gamma: float) -> np.ndarray:
        return np.array([self.labels[i].weight(gamma) for i in ids])

    def clean_label(self, sample_id: int, class_index: int):
        """Apply a cleaned label; only probabilistic labels may transition."""
        lab = self.labels[sample_id]
        if not lab.is_uncleaned:
            raise ValidationError(f"sample {sample_id} is not uncleaned")
        if not (0 <= class_index < self.num_classes):
            raise ArgumentError(f"class {class_index} out of range")
        self.labels[sample_id] = LabelState.cleaned(class_index)

    def copy(self) -> "Dataset":
        return Dataset(
            self.features.copy(),
            [lab.copy() for lab in self.labels],
            self.num_classes,
            {k: list(v) for k, v in self.split.items()},
            None if self.ground_truth is None else list(self.ground_truth),
        )


@dataclass
class AnnotatorPool:
    """Simulated annotators: per-annotator map sample id -> 0-based class."""

    annotators: list[dict[int, int]]
    error_rate: float
    seed: int

    def labels_for(self, sample_id: int) -> list[int]:
        return [a[sample_id] for a in self.annotators]


# ---------------------------------------------------------------------------
# file formats


def write_feature_bin(path, features: np.ndarray):
    features = np.ascontiguousarray(features, dtype="<f8")
    rows, cols = features.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, rows, cols))
        f.write(features.tobytes())


def read_feature_bin(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16 or head[:4] != MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        version, rows, cols = struct.unpack("<III", head[4:])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        payload = f.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def write_feature_csv(path, features: np.ndarray):
    # %.17g round-trips float64 exactly through text
    np.savetxt(path, features, delimiter=",", fmt="%.17g")


def read_feature_csv(path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return arr


def _parse_label_row(row, num_classes: int):
    if len(row) < 3:
        raise FormatError(f"label row too short: {row}")
    sample_id = int(row[0])
    kind = row[1]
    values = row[2:]
    if kind in ("det", "gt"):
        if len(values) != 1:
            raise FormatError(f"row {sample_id}: {kind} takes one class index")
        c = int(values[0])
        if not (1 <= c <= num_classes):
            raise ValidationError(f"row {sample_id}: class {c} out of 1..{num_classes}")
        return sample_id, kind, c - 1
    if kind == "prob":
        if len(values) != num_classes:
            raise FormatError(
                f"row {sample_id}: expected {num_classes} probabilities"
            )
        p = np.array([float(v) for v in values])
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_SUM_LOAD_TOL:
            raise ValidationError(
                f"row {sample_id}: probabilities sum to {p.sum():.8f}"
            )
        return sample_id, kind, p / p.sum()
    raise FormatError(f"row {sample_id}: unknown label kind {kind!r}")


def read_label_csv(path, num_classes: int):
    """Returns (labels: dict id->LabelState, ground_truth: dict id->class)."""
    labels: dict[int, LabelState] = {}
    gt: dict[int, int] = {}
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "kind", "values"]:
            raise FormatError(f"{path}: expected header 'id,kind,values'")
        for row in reader:
            if not row:
                continue
            sample_id, kind, value = _parse_label_row(row, num_classes)
            if kind == "gt":
                if sample_id in gt:
                    raise ConsistencyError(f"duplicate ground truth for id {sample_id}")
                gt[sample_id] = value
            else:
                if sample_id in labels:
                    raise ConsistencyError(f"duplicate label for id {sample_id}")
                if kind == "det":
                    labels[sample_id] = LabelState.deterministic(value)
                else:
                    labels[sample_id] = LabelState.probabilistic(value)
    return labels, gt


def write_label_csv(path, dataset: Dataset):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "kind", "values"])
        for i, lab in enumerate(dataset.labels):
            if lab.kind == PROBABILISTIC:
                writer.writerow([i, "prob"] + [f"{v:.17g}" for v in lab.probs])
            else:
                # cleaned labels are persisted as deterministic
                writer.writerow([i, "det", lab.class_index + 1])


def write_ground_truth_csv(path, dataset: Dataset):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "kind", "values"])
        for i, c in enumerate(dataset.ground_truth):
            if c is not None:
                writer.writerow([i, "gt", c + 1])


def _split_ids(entry) -> list[int]:
    if isinstance(entry, dict):
        try:
            return list(range(int(entry["start"]), int(entry["stop"])))
        except KeyError as exc:
            raise FormatError(f"range split needs start/stop: {entry}") from exc
    return [int(i) for i in entry]


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from its JSON manifest.

    The manifest references a feature file ("bin" or "csv" format) and a label
    CSV, plus split id lists and an optional ground-truth CSV.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    num_classes = int(manifest["num_classes"])
    if num_classes < 2:
        raise ValidationError("num_classes must be >= 2")

    fmt = manifest.get("format", "bin")
    feature_path = base / manifest["features"]
    if fmt == "bin":
        features = read_feature_bin(feature_path)
    elif fmt == "csv":
        features = read_feature_csv(feature_path)
    else:
        raise FormatError(f"unknown feature format {fmt!r}")

    label_map, gt_map = read_label_csv(base / manifest["labels"], num_classes)
    if "ground_truth" in manifest and manifest["ground_truth"]:
        _, extra_gt = read_label_csv(base / manifest["ground_truth"], num_classes)
        gt_map.update(extra_gt)

    n = features.shape[0]
    if set(label_map) != set(range(n)):
        raise ConsistencyError(
            f"label rows cover {len(label_map)} ids for {n} feature rows"
        )
    labels = [label_map[i] for i in range(n)]
    ground_truth = None
    if gt_map:
        ground_truth = [gt_map.get(i) for i in range(n)]

    split = {
        name: _split_ids(manifest["splits"].get(name, []))
        for name in ("train", "validation", "test")
    }
    return Dataset(features, labels, num_classes, split, ground_truth)


def write_dataset(out_dir, dataset: Dataset, name: str = "dataset", fmt: str = "bin") -> Path:
    """Write manifest + feature + label (+ ground truth) files; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feat_name = f"{name}.features.{ 'bin' if fmt == 'bin' else 'csv' }"
    if fmt == "bin":
        write_feature_bin(out_dir / feat_name, dataset.features)
    else:
        write_feature_csv(out_dir / feat_name, dataset.features)
    labels_name = f"{name}.labels.csv"
    write_label_csv(out_dir / labels_name, dataset)
    manifest = {
        "features": feat_name,
        "labels": labels_name,
        "num_classes": dataset.num_classes,
        "splits": {k: list(map(int, v)) for k, v in dataset.split.items()},
        "format": fmt,
    }
    if dataset.ground_truth is not None:
        gt_name = f"{name}.gt.csv"
        write_ground_truth_csv(out_dir / gt_name, dataset)
        manifest["ground_truth"] = gt_name
    manifest_path = out_dir / f"{name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


# ---------------------------------------------------------------------------
# synthetic labels and annotators


def synth_probabilistic_labels(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Replace a seeded-uniform fraction of training labels with random
    probability vectors (iid uniform draws, normalized). Validation/test
    labels are never touched; ground truth is kept as-is.
    """
    if not (0 < fraction <= 1):
        raise ArgumentError(f"fraction must be in (0, 1], got {fraction}")
    for i in dataset.train_ids:
        if dataset.ground_truth is None or dataset.ground_truth[i] is None:
            raise ArgumentError(f"training sample {i} lacks ground truth")
    out = dataset.copy()
    rng = stream(seed, "synth-prob")
    train = np.array(dataset.train_ids)
    n_replace = int(round(fraction * len(train)))
    chosen = rng.choice(train, size=n_replace, replace=False)
    for i in sorted(int(c) for c in chosen):
        draws = rng.uniform(0.0, 1.0, size=dataset.num_classes)
        out.labels[i] = LabelState.probabilistic(draws / draws.sum())
    return out


def simulate_annotators(dataset: Dataset, k: int, error_rate: float, seed: int) -> AnnotatorPool:
    """k independent annotators, each flipping ground truth on exactly
    round(error_rate * N_gt) seeded-uniform training samples; a flip draws
    uniformly among the other C-1 classes.
    """
    if k < 1:
        raise ArgumentError("k must be >= 1")
    if not (0 <= error_rate < 1):
        raise ArgumentError(f"error_rate must be in [0, 1), got {error_rate}")
    gt_ids = [i for i in dataset.train_ids
              if dataset.ground_truth is not None and dataset.ground_truth[i] is not None]
    if len(gt_ids) != len(dataset.train_ids):
        raise ArgumentError("ground truth required for all training samples")
    annotators = []
    for a in range(k):
        rng = stream(seed, "annotator", a)
        labels = {i: dataset.ground_truth[i] for i in gt_ids}
        n_flips = int(round(error_rate * len(gt_ids)))
        flipped = rng.choice(np.array(gt_ids), size=n_flips, replace=False)
        for i in sorted(int(f) for f in flipped):
            others = [c for c in range(dataset.num_classes) if c != labels[i]]
            labels[i] = int(others[rng.integers(len(others))])
        annotators.append(labels)
    return AnnotatorPool(annotators, error_rate, seed)


def make_blobs_dataset(
    n: int,
    d: int,
    num_classes: int,
    seed: int,
    train_frac: float = 0.7,
    val_frac: float = 0.15,
    class_sep: float = 2.0,
    class_weights=None,
) -> Dataset:
    """Gaussian-blob synthetic dataset with full ground truth and
    deterministic labels everywhere (cleaning noise is applied separately).
    """
    if n < 10:
        raise ArgumentError("n must be >= 10")
    rng = stream(seed, "blobs")
    means = rng.normal(0.0, 1.0, size=(num_classes, d))
    means *= class_sep / max(1e-12, np.linalg.norm(means, axis=1).mean())
    if class_weights is None:
        classes = rng.integers(num_classes, size=n)
    else:
        w = np.asarray(class_weights, dtype=float)
        if w.shape != (num_classes,) or np.any(w <= 0):
            raise ArgumentError("class_weights needs one positive entry per class")
        classes = rng.choice(num_classes, size=n, p=w / w.sum())
    features = means[classes] + rng.normal(0.0, 1.0, size=(n, d))
    labels = [LabelState.deterministic(int(c)) for c in classes]
    ids = rng.permutation(n)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    split = {
        "train": sorted(int(i) for i in ids[:n_train]),
        "validation": sorted(int(i) for i in ids[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in ids[n_train + n_val:]),
    }
    return Dataset(features, labels, num_classes, split, [int(c) for c in classes])
