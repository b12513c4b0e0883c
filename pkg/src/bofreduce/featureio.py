"""Local features: data model, on-disk formats and pre-assignment reduction.

Binary feature file (``.boff``), little-endian::

    offset  size  field
    0       4     magic b"BOFF"
    4       4     format version, u32 = 1
    8       4     dimensionality D, u32 (> 0)
    12      8     feature count, u64
    20      ...   count records of (x, y, scale, orientation, D descriptor
                  values), every value an f32

so a record is ``16 + 4 * D`` bytes. The text form starts with a header line
``BOFT 1 D count`` followed by one feature per line with the same field order.
Values are written with the shortest decimal that round-trips the f32, which
makes binary -> text -> binary lossless.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"BOFF"
TEXT_MAGIC = "BOFT"
VERSION = 1
HEADER = struct.Struct("<4sIIQ")
HEADER_SIZE = HEADER.size  # 20
GEOMETRY_FIELDS = 4


# ---------------------------------------------------------------------------
# retention
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetentionSpec:
    """How much of an image description to keep.

    ``mode="fraction"`` keeps ``ceil(value * m)`` of ``m`` items, ``mode="absolute"``
    keeps ``min(value, m)``.
    """

    mode: str
    value: float

    def __post_init__(self):
        if self.mode == "fraction":
            if not (0.0 < self.value <= 1.0):
                raise ConfigError(f"retention fraction must be in (0, 1], got {self.value}")
        elif self.mode == "absolute":
            if int(self.value) != self.value or self.value < 1:
                raise ConfigError(f"absolute retention must be an integer >= 1, got {self.value}")
        else:
            raise ConfigError(f"unknown retention mode {self.mode!r}")

    @classmethod
    def fraction(cls, p: float) -> "RetentionSpec":
        return cls("fraction", float(p))

    @classmethod
    def absolute(cls, n: int) -> "RetentionSpec":
        return cls("absolute", int(n))

    @classmethod
    def coerce(cls, keep) -> "RetentionSpec":
        """Accept a RetentionSpec, a float fraction or an int count."""
        if isinstance(keep, RetentionSpec):
            return keep
        if isinstance(keep, (int, np.integer)) and not isinstance(keep, bool) and keep > 1:
            return cls.absolute(int(keep))
        return cls.fraction(float(keep))

    @property
    def is_identity(self) -> bool:
        return self.mode == "fraction" and self.value == 1.0

    def count(self, m: int) -> int:
        """Number of items kept out of ``m``."""
        if m <= 0:
            return 0
        if self.mode == "absolute":
            return min(int(self.value), m)
        x = self.value * m
        # p*m carries float error (0.3 * 100 == 30.000000000000004), so shave a
        # relative epsilon before the ceiling.
        n = math.ceil(x - 1e-9 * max(1.0, x))
        return min(max(n, 1), m)


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalFeature:
    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"feature scale must be positive, got {self.scale}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """The local features of one image, stored column-wise.

    Attributes:
        image_id: identifier of the image.
        geometry: (m, 4) float32 array of x, y, scale, orientation.
        descriptors: (m, D) float32 array.
    """

    image_id: str
    geometry: np.ndarray
    descriptors: np.ndarray
    dimensionality: int = field(default=0)

    def __post_init__(self):
        geometry = np.ascontiguousarray(self.geometry, dtype=np.float32).reshape(-1, GEOMETRY_FIELDS)
        descriptors = np.asarray(self.descriptors, dtype=np.float32)
        dim = self.dimensionality or (descriptors.shape[1] if descriptors.ndim == 2 else 0)
        if dim <= 0:
            raise ConfigError("descriptor dimensionality must be positive")
        descriptors = np.ascontiguousarray(descriptors).reshape(-1, dim)
        if len(geometry) != len(descriptors):
            raise ConfigError(
                f"{len(geometry)} keypoints but {len(descriptors)} descriptors in {self.image_id!r}"
            )
        if len(geometry) and not np.all(geometry[:, 2] > 0):
            raise ConfigError(f"non-positive keypoint scale in {self.image_id!r}")
        object.__setattr__(self, "geometry", _frozen(geometry))
        object.__setattr__(self, "descriptors", _frozen(descriptors))
        object.__setattr__(self, "dimensionality", int(dim))

    @classmethod
    def from_features(cls, image_id: str, features: Sequence[LocalFeature], dimensionality: int) -> "FeatureSet":
        geometry = np.array([[f.x, f.y, f.scale, f.orientation] for f in features], dtype=np.float32)
        descriptors = np.array([np.asarray(f.descriptor, dtype=np.float32) for f in features], dtype=np.float32)
        if descriptors.size and descriptors.shape[1] != dimensionality:
            raise ConfigError(f"descriptor length {descriptors.shape[1]} != D={dimensionality}")
        return cls(image_id, geometry.reshape(-1, 4), descriptors.reshape(-1, dimensionality), dimensionality)

    @classmethod
    def empty(cls, image_id: str, dimensionality: int) -> "FeatureSet":
        return cls(image_id, np.zeros((0, 4), np.float32), np.zeros((0, dimensionality), np.float32), dimensionality)

    def __len__(self) -> int:
        return len(self.geometry)

    def __iter__(self) -> Iterator[LocalFeature]:
        return iter(self.features)

    @property
    def features(self) -> list[LocalFeature]:
        return [
            LocalFeature(float(g[0]), float(g[1]), float(g[2]), float(g[3]), d)
            for g, d in zip(self.geometry, self.descriptors)
        ]

    @property
    def scales(self) -> np.ndarray:
        return self.geometry[:, 2]

    def subset(self, indices) -> "FeatureSet":
        """Features at ``indices``, in the given order."""
        indices = np.asarray(indices, dtype=np.intp)
        return FeatureSet(self.image_id, self.geometry[indices], self.descriptors[indices], self.dimensionality)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.dimensionality == other.dimensionality
            and np.array_equal(self.geometry, other.geometry)
            and np.array_equal(self.descriptors, other.descriptors)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------


def features_to_bytes(fs: FeatureSet) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, fs.dimensionality, len(fs))
    records = np.concatenate([fs.geometry, fs.descriptors], axis=1).astype("<f4", copy=False)
    return header + records.tobytes()


def features_from_bytes(data: bytes, image_id: str = "", path=None) -> FeatureSet:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"feature header needs {HEADER_SIZE} bytes, file has {len(data)}", len(data), path)
    magic, version, dim, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported feature format version {version}", 4, path)
    if dim == 0:
        raise FormatError("dimensionality is 0", 8, path)
    record = 4 * (GEOMETRY_FIELDS + dim)
    available = (len(data) - HEADER_SIZE) // record
    if available < count:
        offset = HEADER_SIZE + available * record
        raise FormatError(f"truncated payload: {count} features declared, {available} complete", offset, path)
    end = HEADER_SIZE + count * record
    if len(data) != end:
        raise FormatError(f"{len(data) - end} trailing bytes after the last feature", end, path)
    payload = np.frombuffer(data, dtype="<f4", count=count * (GEOMETRY_FIELDS + dim), offset=HEADER_SIZE)
    payload = payload.reshape(count, GEOMETRY_FIELDS + dim).astype(np.float32)
    if count and not np.all(payload[:, 2] > 0):
        bad = int(np.argmin(payload[:, 2] > 0))
        raise FormatError("non-positive keypoint scale", HEADER_SIZE + bad * record + 8, path)
    return FeatureSet(image_id, payload[:, :GEOMETRY_FIELDS], payload[:, GEOMETRY_FIELDS:], dim)


def save_features(fs: FeatureSet, path) -> None:
    Path(path).write_bytes(features_to_bytes(fs))


def load_features(path, image_id: str | None = None) -> FeatureSet:
    """Read a binary feature file.

    ``image_id`` defaults to the file stem; the format itself stores no id.
    """
    path = Path(path)
    return features_from_bytes(path.read_bytes(), image_id if image_id is not None else path.stem, path)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def _f32(v) -> str:
    # numpy prints the shortest string that round-trips the f32
    return str(np.float32(v))


def features_to_text(fs: FeatureSet) -> str:
    lines = [f"{TEXT_MAGIC} {VERSION} {fs.dimensionality} {len(fs)}"]
    rows = np.concatenate([fs.geometry, fs.descriptors], axis=1)
    lines.extend(" ".join(_f32(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def features_from_text(text: str, image_id: str = "", path=None) -> FeatureSet:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty text feature file", 1, path)
    head = lines[0].split()
    if len(head) != 4 or head[0] != TEXT_MAGIC:
        raise FormatError(f"bad header line {lines[0]!r}", 1, path)
    try:
        version, dim, count = int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise FormatError(f"bad header line {lines[0]!r}", 1, path) from None
    if version != VERSION:
        raise FormatError(f"unsupported feature format version {version}", 1, path)
    if dim <= 0:
        raise FormatError("dimensionality is 0", 1, path)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise FormatError(f"{count} features declared, {len(body)} lines present", len(body) + 2, path)
    rows = np.zeros((count, GEOMETRY_FIELDS + dim), dtype=np.float32)
    for i, ln in enumerate(body):
        values = ln.split()
        if len(values) != GEOMETRY_FIELDS + dim:
            raise FormatError(f"expected {GEOMETRY_FIELDS + dim} values, got {len(values)}", i + 2, path)
        try:
            rows[i] = np.array(values, dtype=np.float32)
        except ValueError:
            raise FormatError("non-numeric value", i + 2, path) from None
    return FeatureSet(image_id, rows[:, :GEOMETRY_FIELDS], rows[:, GEOMETRY_FIELDS:], dim)


def save_features_text(fs: FeatureSet, path) -> None:
    Path(path).write_text(features_to_text(fs))


def load_features_text(path, image_id: str | None = None) -> FeatureSet:
    path = Path(path)
    return features_from_text(path.read_text(), image_id if image_id is not None else path.stem, path)


def load_any_features(path, image_id: str | None = None) -> FeatureSet:
    """Load either format, sniffing the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == TEXT_MAGIC.encode():
        return load_features_text(path, image_id)
    return load_features(path, image_id)


# ---------------------------------------------------------------------------
# manifests and labels
# ---------------------------------------------------------------------------


def _read_pairs(path, what: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise FormatError(f"{what} line must be 'image_id<TAB>value'", lineno, path)
        pairs.append((parts[0], parts[1]))
    return pairs


def _write_pairs(pairs, path) -> None:
    Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in pairs))


def read_manifest(path) -> list[tuple[str, Path]]:
    """Read ``image_id<TAB>feature_file`` lines; relative paths resolve against the manifest."""
    base = Path(path).parent
    out = []
    for image_id, p in _read_pairs(path, "manifest"):
        fp = Path(p)
        out.append((image_id, fp if fp.is_absolute() else base / fp))
    return out


def write_manifest(entries, path) -> None:
    _write_pairs(((i, str(p)) for i, p in entries), path)


def load_manifest_features(path) -> list[FeatureSet]:
    return [load_any_features(p, image_id) for image_id, p in read_manifest(path)]


def read_labels(path) -> dict[str, str]:
    labels = {}
    for lineno, (image_id, label) in enumerate(_read_pairs(path, "label"), 1):
        if image_id in labels:
            raise FormatError(f"duplicate image id {image_id!r} in label file", lineno, path)
        labels[image_id] = label
    return labels


def write_labels(labels: dict[str, str], path) -> None:
    _write_pairs(labels.items(), path)


# ---------------------------------------------------------------------------
# pre-assignment reduction
# ---------------------------------------------------------------------------


def select_by_scale(scales: np.ndarray, keep) -> np.ndarray:
    """Indices of the features kept by scale pruning, in original order.

    Features are ranked by scale descending, ties by position ascending, and
    the top ``keep.count(m)`` survive.
    """
    keep = RetentionSpec.coerce(keep)
    scales = np.asarray(scales)
    m = len(scales)
    n = keep.count(m)
    # lexsort is stable on the last key; positions are the implicit tie-break
    order = np.lexsort((np.arange(m), -scales.astype(np.float64)))
    return np.sort(order[:n])


def select_random(m: int, keep, seed: int) -> np.ndarray:
    """Indices of a uniformly random subset, in original order.

    The subset is the first ``keep.count(m)`` entries of a permutation drawn
    from numpy's PCG64 generator (``np.random.default_rng(seed)``), sorted.
    """
    keep = RetentionSpec.coerce(keep)
    n = keep.count(m)
    if n == m:
        return np.arange(m)
    perm = np.random.default_rng(seed).permutation(m)
    return np.sort(perm[:n])


def prune_by_scale(fs: FeatureSet, keep) -> FeatureSet:
    """Keep the largest-scale features of ``fs``."""
    keep = RetentionSpec.coerce(keep)
    if keep.is_identity:
        return fs
    return fs.subset(select_by_scale(fs.scales, keep))


def prune_random_features(fs: FeatureSet, keep, seed: int) -> FeatureSet:
    """Keep a seeded uniformly random subset of the features of ``fs``."""
    keep = RetentionSpec.coerce(keep)
    if keep.is_identity:
        return fs
    return fs.subset(select_random(len(fs), keep, seed))


def derive_seed(seed: int, image_id: str) -> int:
    """Per-image seed mixing a run seed with a CRC32 of the image id.

    Lets one run-level seed drive independent streams for every image.
    """
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(image_id.encode("utf-8"))])
    return int(state.generate_state(1, dtype=np.uint64)[0])
