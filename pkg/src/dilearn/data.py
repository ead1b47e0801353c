"""Synthetic shifted domains, feature files, manifests and batching.

Feature file layout (little-endian)::

    4s   magic  b"DILF"
    u16  version (1)
    u16  dtype code (1 = float32)
    u32  F (frequency bins)
    u32  T (frames)
    F*T float32, row-major

A manifest is comma-separated text, one ``path,domain,labels`` record per
line, labels joined by ``;``. Lines starting with ``#`` are comments. Paths
are relative to the manifest's directory.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError
from .model import TaskKind
from .tensor import Tensor

FEATURE_MAGIC = b"DILF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_DTYPE_CODES = {1: np.dtype("<f4")}


@dataclass
class DomainData:
    """Features (N, 1, F, T) with labels indexed into ``classes``.

    Single-label data stores one class index per sample; multi-label data a
    (N, C) 0/1 matrix.
    """

    name: str
    classes: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    task_kind: TaskKind = TaskKind.SINGLE

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.task_kind = TaskKind(self.task_kind)
        if len(self.features) != len(self.labels):
            raise DataError(f"{self.name}: {len(self.features)} feature rows vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "DomainData":
        return DomainData(self.name, self.classes, self.features[idx], self.labels[idx], self.task_kind)

    def targets(self, class_list: Sequence[str]) -> np.ndarray:
        """Labels re-indexed into ``class_list``."""
        if self.task_kind == TaskKind.SINGLE:
            lookup = np.full(len(self.classes), -1, dtype=np.int64)
            for k, c in enumerate(self.classes):
                if c in class_list:
                    lookup[k] = list(class_list).index(c)
            out = lookup[self.labels]
            if (out < 0).any():
                bad = sorted({self.classes[k] for k in self.labels[out < 0]})
                raise DataError(f"{self.name}: classes {bad} are not in the target class list")
            return out
        out = np.zeros((len(self), len(class_list)), dtype=np.int64)
        for k, c in enumerate(self.classes):
            if c in class_list:
                out[:, list(class_list).index(c)] = self.labels[:, k]
            elif self.labels[:, k].any():
                raise DataError(f"{self.name}: class {c!r} is not in the target class list")
        return out


@dataclass
class DomainDataset:
    train: DomainData
    test: DomainData


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """One synthetic domain.

    Samples are class prototypes plus Gaussian noise, passed through the
    domain transform ``scale * band[f] * x + offset[f] + background * B``,
    where B is a fixed smooth field belonging to the domain (its stationary
    background). ``offset`` and ``band_emphasis`` may be scalars or
    per-frequency vectors.

    A class prototype is shared by every domain with the same
    ``prototype_seed``. With ``variant_weight`` w > 0 it is blended with a
    domain-specific pattern drawn from ``variant_seed``:
    ``sqrt(1 - w**2) * shared + w * variant``.
    """

    name: str
    classes: tuple[str, ...]
    n_train: int = 40
    n_test: int = 20
    n_freq: int = 16
    n_frames: int = 16
    prototype_seed: int = 0
    scale: float = 1.0
    offset: float | tuple[float, ...] = 0.0
    noise: float = 0.5
    band_emphasis: tuple[float, ...] | None = None
    smoothness: float = 1.5
    background: float = 0.0
    background_seed: int = 0
    variant_weight: float = 0.0
    variant_seed: int = 0
    task_kind: TaskKind = TaskKind.SINGLE

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if not self.classes:
            raise ConfigError(f"synthetic domain {self.name!r} has no classes")
        if self.scale <= 0:
            raise ConfigError(f"synthetic domain {self.name!r}: scale must be > 0")
        if self.noise < 0:
            raise ConfigError(f"synthetic domain {self.name!r}: noise must be >= 0")
        if not 0 <= self.variant_weight <= 1:
            raise ConfigError(f"synthetic domain {self.name!r}: variant_weight must lie in [0, 1]")
        if self.n_freq < 8 or self.n_frames < 8:
            raise ConfigError(f"synthetic domain {self.name!r}: dims must be at least 8x8")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError(f"synthetic domain {self.name!r}: need at least one train and test sample per class")
        for key in ("offset", "band_emphasis"):
            v = getattr(self, key)
            if v is not None and np.ndim(v) == 1 and len(v) != self.n_freq:
                raise ConfigError(f"synthetic domain {self.name!r}: {key} needs {self.n_freq} values")


def _name_seed(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def class_prototype(name: str, n_freq: int, n_frames: int, prototype_seed: int = 0, smoothness: float = 1.5) -> np.ndarray:
    """Smooth random field for a class, standardized to zero mean, unit std."""
    rng = np.random.default_rng([prototype_seed, _name_seed(name)])
    field_ = gaussian_filter(rng.standard_normal((n_freq, n_frames)), smoothness, mode="wrap")
    return (field_ - field_.mean()) / field_.std()


def domain_prototypes(spec: SyntheticDomainSpec) -> np.ndarray:
    """(C, F, T) class patterns as seen in this domain, before the transform."""
    dims = (spec.n_freq, spec.n_frames)
    shared = np.stack([class_prototype(c, *dims, spec.prototype_seed, spec.smoothness) for c in spec.classes])
    w = spec.variant_weight
    if w == 0:
        return shared
    variant = np.stack([class_prototype(f"variant:{c}", *dims, spec.variant_seed, spec.smoothness) for c in spec.classes])
    return np.sqrt(1 - w * w) * shared + w * variant


def _transform(spec: SyntheticDomainSpec, x: np.ndarray) -> np.ndarray:
    band = 1.0 if spec.band_emphasis is None else np.asarray(spec.band_emphasis, dtype=np.float64)
    offset = np.asarray(spec.offset, dtype=np.float64)
    if band is not None and np.ndim(band) == 1:
        band = band[:, None]
    if offset.ndim == 1:
        offset = offset[:, None]
    out = spec.scale * band * x + offset
    if spec.background:
        bg = class_prototype(f"background:{spec.name}", spec.n_freq, spec.n_frames, spec.background_seed, spec.smoothness)
        out = out + spec.background * bg
    return out


def _split(spec: SyntheticDomainSpec, prototypes: np.ndarray, n_per_class: int, rng) -> tuple[np.ndarray, np.ndarray]:
    c = len(spec.classes)
    if spec.task_kind == TaskKind.SINGLE:
        labels = np.repeat(np.arange(c), n_per_class)
        clean = prototypes[labels]
    else:
        labels = np.zeros((c * n_per_class, c), dtype=np.int64)
        for n in range(len(labels)):
            k = rng.integers(1, min(3, c) + 1)
            labels[n, rng.choice(c, size=k, replace=False)] = 1
        clean = np.tensordot(labels.astype(np.float64), prototypes, axes=(1, 0))
    noisy = clean + spec.noise * rng.standard_normal(clean.shape)
    return _transform(spec, noisy).astype(np.float32)[:, None], labels


def generate_synthetic_domain(spec: SyntheticDomainSpec, seed: int = 0) -> DomainDataset:
    """Deterministic train/test data for one domain.

    Class prototypes depend only on ``prototype_seed`` and the class name, so
    domains that share both see the same underlying classes.
    """
    prototypes = domain_prototypes(spec)
    rng = np.random.default_rng([seed, _name_seed(spec.name)])
    x_train, y_train = _split(spec, prototypes, spec.n_train, rng)
    x_test, y_test = _split(spec, prototypes, spec.n_test, rng)
    return DomainDataset(
        DomainData(spec.name, spec.classes, x_train, y_train, spec.task_kind),
        DomainData(spec.name, spec.classes, x_test, y_test, spec.task_kind),
    )


def nearest_centroid_accuracy(train: DomainData, test: DomainData) -> float:
    """Accuracy of a nearest class-mean classifier on flattened features."""
    if train.task_kind != TaskKind.SINGLE:
        raise DataError("nearest-centroid oracle is defined for single-label data")
    classes = list(train.classes)
    xtr = train.features.reshape(len(train), -1).astype(np.float64)
    centroids = np.stack([xtr[train.labels == k].mean(axis=0) for k in range(len(classes))])
    xte = test.features.reshape(len(test), -1).astype(np.float64)
    dist = ((xte[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    predicted = np.asarray(classes, dtype=object)[dist.argmin(axis=1)]
    truth = np.asarray(test.classes, dtype=object)[test.labels]
    return float((predicted == truth).mean())


# ------------------------------------------------------------------ batching


def batch_indices(n: int, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded permutation of ``range(n)`` cut into batches; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(n)
    return [order[k : k + batch_size] for k in range(0, n, batch_size)]


def batch_iter(data: DomainData, batch_size: int, epoch_seed) -> Iterator[DomainData]:
    for idx in batch_indices(len(data), batch_size, epoch_seed):
        yield data.subset(idx)


# ------------------------------------------------------------- feature files


def write_features(path, features: np.ndarray) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise DataError(f"feature files hold one channel, got shape {arr.shape}")
        arr = arr[0]
    f, t = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, 1, f, t))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_features(path, n_freq: int | None = None, n_frames: int | None = None) -> np.ndarray:
    """Read one feature file as a (1, F, T) float32 array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc.strerror}") from None
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, code, f, t = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION or code not in _DTYPE_CODES:
        raise DataError(f"{path}: not a version-{FEATURE_VERSION} feature file")
    if (n_freq is not None and f != n_freq) or (n_frames is not None and t != n_frames):
        raise DataError(f"{path}: features are {f}x{t}, expected {n_freq}x{n_frames}")
    payload = raw[_HEADER.size :]
    if len(payload) != 4 * f * t:
        raise DataError(f"{path}: payload holds {len(payload)} bytes, expected {4 * f * t}")
    return np.frombuffer(payload, dtype=_DTYPE_CODES[code]).astype(np.float32).reshape(1, f, t)


# ----------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    domain: str
    labels: tuple[str, ...]
    line: int


@dataclass
class Manifest:
    source: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.records})


def load_manifest(path, vocabulary: Sequence[str] | None = None) -> Manifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    base = path.parent
    manifest, seen = Manifest(path), set()
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3 or not all(parts):
            raise DataError(f"{path}:{lineno}: expected 'path,domain,labels', got {text!r}")
        rel, domain, label_field = parts
        labels = tuple(lbl.strip() for lbl in label_field.split(";") if lbl.strip())
        if vocabulary is not None:
            for lbl in labels:
                if lbl not in vocabulary:
                    raise DataError(f"{path}:{lineno}: unknown label {lbl!r}")
        full = base / rel
        if not full.is_file():
            raise DataError(f"{path}:{lineno}: feature file {rel} does not exist")
        if full in seen:
            raise DataError(f"{path}:{lineno}: duplicate path {rel}")
        seen.add(full)
        manifest.records.append(ManifestRecord(full, domain, labels, lineno))
    if not manifest.records:
        raise DataError(f"{path}: manifest has no records")
    return manifest


def load_features(record: ManifestRecord, n_freq: int | None = None, n_frames: int | None = None) -> Tensor:
    try:
        return Tensor(read_features(record.path, n_freq, n_frames), dtype=np.float32)
    except DataError as exc:
        raise DataError(f"line {record.line}: {exc}") from None


def load_domain(
    manifest: Manifest,
    classes: Sequence[str],
    task_kind=TaskKind.SINGLE,
    name: str | None = None,
    n_freq: int | None = None,
    n_frames: int | None = None,
) -> DomainData:
    """Materialize the manifest's records (optionally one domain only)."""
    task_kind = TaskKind(task_kind)
    classes = tuple(classes)
    records = [r for r in manifest.records if name is None or r.domain == name]
    if not records:
        raise DataError(f"{manifest.source}: no records for domain {name!r}")
    feats, labels = [], []
    for r in records:
        unknown = [lbl for lbl in r.labels if lbl not in classes]
        if unknown:
            raise DataError(f"{manifest.source}:{r.line}: unknown label {unknown[0]!r} for domain {r.domain!r}")
        if task_kind == TaskKind.SINGLE:
            if len(r.labels) != 1:
                raise DataError(f"{manifest.source}:{r.line}: single-label domain needs exactly one label")
            labels.append(classes.index(r.labels[0]))
        else:
            row = np.zeros(len(classes), dtype=np.int64)
            row[[classes.index(lbl) for lbl in r.labels]] = 1
            labels.append(row)
        feats.append(load_features(r, n_freq, n_frames).data)
    return DomainData(name or records[0].domain, classes, np.stack(feats), np.asarray(labels), task_kind)


def write_domain_split(data: DomainData, directory, split: str) -> Path:
    """Write ``<directory>/<split>/NNNNN.dilf`` files plus ``<split>.csv``."""
    directory = Path(directory)
    (directory / split).mkdir(parents=True, exist_ok=True)
    rows = ["# path,domain,labels"]
    for n in range(len(data)):
        rel = f"{split}/{n:05d}.dilf"
        write_features(directory / rel, data.features[n])
        if data.task_kind == TaskKind.SINGLE:
            names = [data.classes[int(data.labels[n])]]
        else:
            names = [data.classes[k] for k in np.flatnonzero(data.labels[n])]
        rows.append(f"{rel},{data.name},{';'.join(names)}")
    manifest = directory / f"{split}.csv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def write_dataset(dataset: DomainDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise DataError(f"directory {directory} is not writable")
    write_domain_split(dataset.train, directory, "train")
    write_domain_split(dataset.test, directory, "test")


def read_dataset(
    directory,
    classes: Sequence[str],
    task_kind=TaskKind.SINGLE,
    n_freq: int | None = None,
    n_frames: int | None = None,
) -> DomainDataset:
    directory = Path(directory)
    splits = []
    for split in ("train", "test"):
        manifest = load_manifest(directory / f"{split}.csv")
        splits.append(load_domain(manifest, classes, task_kind, None, n_freq, n_frames))
    return DomainDataset(*splits)
