"""Datasets for generalized zero-shot learning: file formats, validation,
a synthetic cross-modal generator, and paired mini-batches."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"ACMX"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class DataError(Exception):
    """Base class for dataset problems."""


class HeaderError(DataError):
    """A file header disagrees with its payload or with another file."""


class MissingClassError(DataError):
    """A label references a class that has no attribute row."""


class SplitOverlapError(DataError):
    """Class sets or index lists that must be disjoint overlap."""


class SplitError(DataError):
    """Any other split invariant violation."""


@dataclass(frozen=True, eq=False)
class Dataset:
    visual: np.ndarray
    attributes: np.ndarray
    labels: np.ndarray
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    train_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    def visual_rows(self, idx) -> np.ndarray:
        return self.visual[np.asarray(idx, dtype=np.int64)]

    def equals(self, other: "Dataset") -> bool:
        names = ("visual", "attributes", "labels", "seen_classes", "unseen_classes",
                 "train_idx", "test_seen_idx", "test_unseen_idx")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names) and all(
            getattr(self, n).dtype == getattr(other, n).dtype for n in names)


class AuditingDataset:
    """Read-only view of a :class:`Dataset` that logs every visual row read.

    The full visual matrix is deliberately not reachable; consumers must go
    through :meth:`visual_rows`.
    """

    def __init__(self, ds: Dataset):
        self._ds = ds
        self.reads: list[int] = []

    def __getattr__(self, name):
        if name == "visual":
            raise AttributeError("direct access to the visual matrix is blocked under audit")
        return getattr(self._ds, name)

    def visual_rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        self.reads.extend(int(i) for i in idx.ravel())
        return self._ds.visual_rows(idx)

    def unseen_reads(self) -> list[int]:
        unseen = set(int(c) for c in self._ds.unseen_classes)
        return [i for i in self.reads if int(self._ds.labels[i]) in unseen]


# -- matrix files -----------------------------------------------------------

def write_matrix(path, arr: np.ndarray) -> None:
    """Binary matrix file: magic, u32 version, u64 rows, u64 cols, LE float32 payload."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def write_matrix_csv(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write(f"{arr.shape[0]},{arr.shape[1]}\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    """Read a binary or CSV matrix file into float64."""
    raw = Path(path).read_bytes()
    if raw[:4] == MATRIX_MAGIC:
        if len(raw) < _HEADER.size:
            raise HeaderError(f"{path}: truncated header")
        _, version, rows, cols = _HEADER.unpack_from(raw)
        if version != MATRIX_VERSION:
            raise HeaderError(f"{path}: unsupported matrix version {version}")
        payload = raw[_HEADER.size:]
        if len(payload) != rows * cols * 4:
            raise HeaderError(f"{path}: header says {rows}x{cols} but payload has {len(payload)} bytes")
        arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    else:
        arr = _read_matrix_csv(path, raw.decode("utf-8"))
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values")
    return arr


def _read_matrix_csv(path, text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise HeaderError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(v) for v in lines[0].split(","))
        body = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise HeaderError(f"{path}: malformed CSV matrix ({exc})") from None
    if len(body) != rows or any(len(r) != cols for r in body):
        raise HeaderError(f"{path}: header says {rows}x{cols}, body disagrees")
    return np.array(body, dtype=np.float64).reshape(rows, cols)


def write_labels(path, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("instance_index,class_id\n")
        for i, c in enumerate(labels):
            fh.write(f"{i},{int(c)}\n")


def read_labels(path, n_rows: int | None = None) -> np.ndarray:
    pairs = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not "".join(row).strip():
                continue
            if row[0].strip() == "instance_index":
                continue
            try:
                i, c = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise HeaderError(f"{path}: malformed label line {row!r}") from None
            if i in pairs:
                raise HeaderError(f"{path}: instance {i} labeled twice")
            pairs[i] = c
    n = len(pairs) if n_rows is None else n_rows
    if sorted(pairs) != list(range(n)):
        raise HeaderError(f"{path}: labels must cover instances 0..{n - 1} exactly once "
                          f"(found {len(pairs)} entries)")
    return np.array([pairs[i] for i in range(n)], dtype=np.int64)


SPLIT_KEYS = ("seen_classes", "unseen_classes", "train_idx", "test_seen_idx", "test_unseen_idx")


def write_split(path, ds: Dataset) -> None:
    doc = {k: [int(v) for v in getattr(ds, k)] for k in SPLIT_KEYS}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_split(path) -> dict[str, np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    missing = [k for k in SPLIT_KEYS if k not in doc]
    if missing:
        raise SplitError(f"{path}: missing keys {missing}")
    return {k: np.array(doc[k], dtype=np.int64).reshape(-1) for k in SPLIT_KEYS}


# -- validation ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    kind: type = SplitError


@dataclass
class SplitReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def raise_first(self) -> None:
        for c in self.checks:
            if not c.passed:
                raise c.kind(f"{c.name}: {c.detail}")


def validate_split(ds: Dataset) -> SplitReport:
    """Check every dataset invariant; never raises."""
    r = SplitReport()
    n, C = ds.visual.shape[0], ds.attributes.shape[0]
    seen, unseen = set(ds.seen_classes.tolist()), set(ds.unseen_classes.tolist())

    r.checks.append(Check("label_count", ds.labels.shape[0] == n,
                          f"{ds.labels.shape[0]} labels for {n} instances", HeaderError))
    bad = sorted(set(int(c) for c in ds.labels if c < 0 or c >= C))
    r.checks.append(Check("labels_have_attributes", not bad,
                          f"classes without attribute rows: {bad[:10]}", MissingClassError))
    bad = sorted(c for c in seen | unseen if c < 0 or c >= C)
    r.checks.append(Check("split_classes_have_attributes", not bad,
                          f"classes without attribute rows: {bad[:10]}", MissingClassError))
    both = sorted(seen & unseen)
    r.checks.append(Check("seen_unseen_disjoint", not both,
                          f"classes in both sets: {both[:10]}", SplitOverlapError))
    for key in ("seen_classes", "unseen_classes"):
        arr = getattr(ds, key)
        r.checks.append(Check(f"{key}_unique", len(set(arr.tolist())) == arr.size,
                              "duplicate class ids", SplitOverlapError))

    idx_lists = {k: getattr(ds, k) for k in ("train_idx", "test_seen_idx", "test_unseen_idx")}
    for key, idx in idx_lists.items():
        out = [int(i) for i in idx if i < 0 or i >= n]
        r.checks.append(Check(f"{key}_in_range", not out, f"out-of-range indices: {out[:10]}", SplitError))
        r.checks.append(Check(f"{key}_unique", len(set(idx.tolist())) == idx.size,
                              "duplicate indices", SplitOverlapError))
    keys = list(idx_lists)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            common = sorted(set(idx_lists[a].tolist()) & set(idx_lists[b].tolist()))
            r.checks.append(Check(f"{a}_{b}_disjoint", not common,
                                  f"shared indices: {common[:10]}", SplitOverlapError))

    def labels_of(idx):
        idx = idx[(idx >= 0) & (idx < ds.labels.shape[0])]
        return set(int(c) for c in ds.labels[idx])

    for key, allowed, what in (("train_idx", seen, "seen"), ("test_seen_idx", seen, "seen"),
                               ("test_unseen_idx", unseen, "unseen")):
        stray = sorted(labels_of(idx_lists[key]) - allowed)
        r.checks.append(Check(f"{key}_labels_{what}", not stray,
                              f"labels outside {what} classes: {stray[:10]}", SplitError))
    return r


def load_dataset(feature_path, attribute_path, label_path, split_path) -> Dataset:
    """Load and validate a dataset; raises the first failing check's error kind."""
    visual = read_matrix(feature_path)
    attributes = read_matrix(attribute_path)
    labels = read_labels(label_path)
    if labels.shape[0] != visual.shape[0]:
        raise HeaderError(f"{label_path}: {labels.shape[0]} labels but {visual.shape[0]} feature rows")
    split = read_split(split_path)
    ds = Dataset(visual, attributes, labels, **split)
    validate_split(ds).raise_first()
    return ds


def save_dataset(ds: Dataset, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"features": directory / "features.acmx", "attributes": directory / "attributes.acmx",
             "labels": directory / "labels.csv", "split": directory / "split.json"}
    write_matrix(paths["features"], ds.visual)
    write_matrix(paths["attributes"], ds.attributes)
    write_labels(paths["labels"], ds.labels)
    write_split(paths["split"], ds)
    return paths


# -- synthetic data -------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_seen: int = 8
    num_unseen: int = 4
    d_visual: int = 64
    d_attr: int = 16
    samples_per_class: int = 50
    prototype_noise: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_seen", "num_unseen", "d_visual", "d_attr", "samples_per_class"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.prototype_noise > 0:
            raise ValueError("prototype_noise must be > 0")


def _f32(x: np.ndarray) -> np.ndarray:
    # values representable in the float32 file format, so files round-trip exactly
    return x.astype(np.float32).astype(np.float64)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Classes with standard-normal attributes and visual prototypes ``M a_c``.

    ``M`` is a fixed random linear map; each instance is its class prototype
    plus isotropic Gaussian noise.  Seen classes are split 80/20 per class
    into train and test; all unseen instances are test.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C = spec.num_seen + spec.num_unseen
    proj = rng.normal(size=(spec.d_attr, spec.d_visual)) / np.sqrt(spec.d_attr)
    attributes = rng.normal(size=(C, spec.d_attr))
    prototypes = attributes @ proj
    n_per = spec.samples_per_class
    labels = np.repeat(np.arange(C, dtype=np.int64), n_per)
    visual = prototypes[labels] + spec.prototype_noise * rng.normal(size=(C * n_per, spec.d_visual))

    seen = np.arange(spec.num_seen, dtype=np.int64)
    unseen = np.arange(spec.num_seen, C, dtype=np.int64)
    n_train = int(round(0.8 * n_per))
    train, test_seen = [], []
    for c in seen:
        idx = c * n_per + rng.permutation(n_per)
        train.append(np.sort(idx[:n_train]))
        test_seen.append(np.sort(idx[n_train:]))
    test_unseen = np.arange(spec.num_seen * n_per, C * n_per, dtype=np.int64)
    return Dataset(_f32(visual), _f32(attributes), labels, seen, unseen,
                   np.concatenate(train).astype(np.int64), np.concatenate(test_seen).astype(np.int64),
                   test_unseen)


# -- batching -------------------------------------------------------------

@dataclass
class PairedBatch:
    idx: np.ndarray
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray


def make_paired_batches(ds, batch_size: int, epoch_seed) -> list[PairedBatch]:
    """Shuffle ``train_idx`` and cut it into (image, class attribute, label) batches."""
    if len(ds.train_idx) == 0:
        raise DataError("training split is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(np.asarray(ds.train_idx, dtype=np.int64))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        y = ds.labels[idx]
        batches.append(PairedBatch(idx, ds.visual_rows(idx), ds.attributes[y], y))
    return batches
