"""Datasets, splits, IDX ingestion and the synthetic cluster generator."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, IdxFormatError, MissingTrackError
from .noise import NoiseField, TransitionMatrix, apply_noise
from .rng import stream

IDX_IMAGES = 2051
IDX_LABELS = 2049

CACHE_TAG = b"NESD"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHII")  # tag, version, c, n, d -> 16 bytes


@dataclass(frozen=True)
class Provenance:
    source: str
    seed: int | None = None
    noise: str | None = None
    noise_seed: int | None = None

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features plus a clean label track and an optional noisy one.

    Labels are 0-based.  ``index`` records each row's position in the
    originating dataset so splits can be checked for disjointness.
    """

    features: np.ndarray
    clean_labels: np.ndarray
    c: int
    noisy_labels: np.ndarray | None = None
    provenance: Provenance = field(default_factory=lambda: Provenance("memory"))
    index: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DomainError(f"features must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if int(self.c) != self.c or self.c < 2:
            raise DomainError(f"class count must be >= 2, got {self.c}")
        tracks = {"clean_labels": self.clean_labels, "noisy_labels": self.noisy_labels}
        for name, y in tracks.items():
            if y is None:
                continue
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (n,):
                raise DomainError(f"{name} has shape {y.shape}, expected ({n},)")
            if n and (y.min() < 0 or y.max() >= self.c):
                raise DomainError(f"{name} outside 0..{self.c - 1}")
            y.setflags(write=False)
            object.__setattr__(self, name, y)
        idx = np.arange(n) if self.index is None else np.asarray(self.index, dtype=np.int64)
        if idx.shape != (n,):
            raise DomainError("index length differs from the row count")
        for arr in (X, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "c", int(self.c))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def labels(self, track: str = "clean") -> np.ndarray:
        if track == "clean":
            return self.clean_labels
        if track == "noisy":
            if self.noisy_labels is None:
                raise MissingTrackError("dataset has no noisy label track")
            return self.noisy_labels
        raise MissingTrackError(f"unknown label track {track!r}")

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        noisy = None if self.noisy_labels is None else self.noisy_labels[rows]
        return Dataset(self.features[rows], self.clean_labels[rows], self.c, noisy, self.provenance,
                       self.index[rows])

    def with_noise(self, field: NoiseField | TransitionMatrix, seed: int) -> "Dataset":
        noisy = apply_noise(self.clean_labels, field, self.features, seed)
        desc = field.describe() if isinstance(field, NoiseField) else "matrix"
        prov = replace(self.provenance, noise=desc, noise_seed=int(seed))
        return replace(self, noisy_labels=noisy, provenance=prov)

    def with_noisy_labels(self, noisy, descriptor: str, seed: int | None = None) -> "Dataset":
        prov = replace(self.provenance, noise=descriptor, noise_seed=seed)
        return replace(self, noisy_labels=np.asarray(noisy), provenance=prov)

    def clean_only(self) -> "Dataset":
        return replace(self, noisy_labels=None)


@dataclass(frozen=True)
class SplitBundle:
    train: Dataset
    noisy_val: Dataset
    clean_val: Dataset
    test: Dataset

    def sizes(self):
        return len(self.train), len(self.noisy_val), len(self.test)


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expect_magic: int, ndim: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(f"{what}: file too short for a magic number", 0)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IdxFormatError(f"{what}: magic {magic}, expected {expect_magic}", 0)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{what}: header truncated", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header_end != count:
        raise IdxFormatError(
            f"{what}: header promises {count} data bytes, file holds {len(raw) - header_end}",
            header_end + min(count, len(raw) - header_end),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), IDX_IMAGES, 3, "images")


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), IDX_LABELS, 1, "labels")


def load_idx(images_path, labels_path, c: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    n = images.shape[0]
    X = images.reshape(n, -1).astype(np.float64) / 255.0
    if c is None:
        c = max(2, int(labels.max()) + 1) if n else 10
    return Dataset(X, labels.astype(np.int64), c, provenance=Provenance(f"idx:{images_path}"))


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES, *images.shape))
        fh.write(images.tobytes())
    write_idx_labels(labels_path, labels)


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS, labels.shape[0]))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------------------
# native cache


def save_cache(dataset: Dataset, path) -> None:
    """Single-file container: 16-byte header, features, labels, metadata.

    Header is ``<4sHHII``: tag ``NESD``, version, c, n, d.  Then ``n*d``
    little-endian float64 features (row-major) and ``n`` little-endian uint16
    clean labels.  A uint32 length and a UTF-8 JSON record (provenance and a
    noisy-track flag) follow, then ``n`` uint16 noisy labels if flagged.
    """
    ds = dataset
    meta = {"provenance": ds.provenance.as_dict(), "noisy": ds.noisy_labels is not None}
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_TAG, CACHE_VERSION, ds.c, ds.n, ds.d))
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.clean_labels.astype("<u2").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if ds.noisy_labels is not None:
            fh.write(ds.noisy_labels.astype("<u2").tobytes())


def load_cache(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CACHE_HEADER.size:
        raise IdxFormatError("cache: header truncated", len(raw))
    tag, version, c, n, d = _CACHE_HEADER.unpack_from(raw)
    if tag != CACHE_TAG:
        raise IdxFormatError(f"cache: bad tag {tag!r}", 0)
    if version != CACHE_VERSION:
        raise IdxFormatError(f"cache: unsupported version {version}", 4)
    off = _CACHE_HEADER.size

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(raw):
            raise IdxFormatError(f"cache: {what} truncated", len(raw))
        chunk = raw[off:off + nbytes]
        off += nbytes
        return chunk

    X = np.frombuffer(take(8 * n * d, "features"), dtype="<f8").reshape(n, d)
    clean = np.frombuffer(take(2 * n, "labels"), dtype="<u2").astype(np.int64)
    meta_at = off
    (mlen,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(mlen, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise IdxFormatError("cache: metadata is not valid JSON", meta_at) from None
    noisy = None
    if meta.get("noisy"):
        noisy = np.frombuffer(take(2 * n, "noisy labels"), dtype="<u2").astype(np.int64)
    if off != len(raw):
        raise IdxFormatError(f"cache: {len(raw) - off} unexpected trailing bytes", off)
    prov = Provenance(**meta.get("provenance", {"source": "cache"}))
    return Dataset(X.copy(), clean, c, noisy, prov)


# ---------------------------------------------------------------------------
# splitting and generation


def split(dataset: Dataset, fractions: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0) -> SplitBundle:
    """Shuffle by ``seed`` then cut contiguous train / validation / test blocks.

    Validation is returned twice: ``noisy_val`` keeps the noisy track for
    noisy early stopping and ``clean_val`` drops it so only clean labels can
    be read.
    """
    fr = tuple(float(f) for f in fractions)
    problems = []
    if len(fr) != 3:
        problems.append(f"need three fractions, got {len(fr)}")
    elif any(f <= 0 for f in fr):
        problems.append(f"fractions must be positive, got {fr}")
    elif abs(sum(fr) - 1.0) > 1e-9:
        problems.append(f"fractions sum to {sum(fr)}, not 1")
    if problems:
        raise ConfigError(problems)
    n = dataset.n
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    n_test = n - n_train - n_val
    sizes = {"train": n_train, "validation": n_val, "test": n_test}
    empty = [f"{k} split is empty (n={n}, fractions={fr})" for k, v in sizes.items() if v <= 0]
    if empty:
        raise ConfigError(empty)
    perm = stream(seed, "split").permutation(n)
    train = dataset.take(perm[:n_train])
    val = dataset.take(perm[n_train:n_train + n_val])
    test = dataset.take(perm[n_train + n_val:]).clean_only()
    return SplitBundle(train=train, noisy_val=val, clean_val=val.clean_only(), test=test)


def make_synthetic(n: int = 2000, d: int = 20, informative: int = 10, c: int = 3, seed: int = 42,
                   half_width: float = 2.0) -> Dataset:
    """Gaussian clusters on hypercube vertices, plus irrelevant noise features.

    Each class gets one distinct vertex of ``{-w, w}^informative`` as its
    centre and unit within-class covariance.  Labels are drawn iid uniform.
    All columns are standardised afterwards.
    """
    if informative > d or informative < 1:
        raise DomainError(f"need 1 <= informative <= d, got informative={informative}, d={d}")
    if c < 2:
        raise DomainError(f"need c >= 2, got {c}")
    if informative < 63 and c > 2 ** informative:
        raise DomainError(f"{c} classes do not fit on {2 ** informative} hypercube vertices")
    rng = stream(seed, "synthetic")
    centres = set()
    rows = []
    while len(rows) < c:
        v = tuple(rng.integers(0, 2, size=informative).tolist())
        if v not in centres:
            centres.add(v)
            rows.append(v)
    centres = (2.0 * np.array(rows, dtype=np.float64) - 1.0) * half_width
    y = rng.integers(0, c, size=n)
    X = rng.standard_normal((n, d))
    X[:, :informative] += centres[y]
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    X = (X - mu) / sd
    return Dataset(X, y, c, provenance=Provenance("synthetic", seed=seed))


def subset_classes(dataset: Dataset, keep: Sequence[int]) -> Dataset:
    """Keep only instances of the ``keep`` classes, relabelled 0..k-1 in ascending order."""
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise DomainError("keep must be nonempty")
    present = set(np.unique(dataset.clean_labels).tolist())
    if not present & set(keep):
        raise DomainError(f"none of {keep} occur in the dataset")
    if len(keep) < 2:
        raise DomainError("need at least two classes after subsetting")
    rows = np.flatnonzero(np.isin(dataset.clean_labels, keep))
    remap = np.full(dataset.c, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    sub = dataset.take(rows)
    noisy = None
    if sub.noisy_labels is not None:
        noisy = remap[sub.noisy_labels]
        if np.any(noisy < 0):
            raise DomainError("noisy labels leave the kept classes; subset before injecting noise")
    return Dataset(sub.features, remap[sub.clean_labels], len(keep), noisy, sub.provenance, sub.index)


def subsample(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Uniform random subset of ``size`` rows (all rows if ``size`` >= n)."""
    if size >= dataset.n:
        return dataset
    rows = np.sort(stream(seed, "subsample").choice(dataset.n, size=size, replace=False))
    sub = dataset.take(rows)
    return replace(sub, index=np.arange(size))
