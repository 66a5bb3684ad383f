"""Shared domain types plus the distance, entropy, and barcoding primitives.

Every engine consumes these types; all of them are immutable after
construction and all operations here are pure functions.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    UndefinedSimilarityError,
    ValidationError,
)

MAGNIFICATIONS = ("20x", "40x")
DISTANCE_KINDS = ("hamming", "cosine", "hypergraph", "votes")

#: Default feature width; databases carry their own dimension and engines
#: always read it from there rather than from this constant.
DEFAULT_DIM = 1024


def _frozen_feature(vec: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionError(f"feature must be one-dimensional, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyInputError("feature vector is empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature vector contains non-finite components")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PatchFeature:
    """One patch: an integer (x, y) grid cell plus its feature vector."""

    x: int
    y: int
    feature: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature", _frozen_feature(self.feature))

    @property
    def dim(self) -> int:
        return int(self.feature.shape[0])

    @property
    def coord(self) -> tuple[int, int]:
        return (self.x, self.y)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchFeature):
            return NotImplemented
        return (
            self.x == other.x
            and self.y == other.y
            and np.array_equal(self.feature, other.feature)
        )


@dataclass(frozen=True)
class Barcode:
    """Bit string obtained by thresholding successive feature differences."""

    bits: str

    def __post_init__(self) -> None:
        if not self.bits:
            raise EmptyInputError("barcode must contain at least one bit")
        if set(self.bits) - {"0", "1"}:
            raise ValidationError("barcode bits must be '0'/'1' characters")

    def __len__(self) -> int:
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        """Bits as a uint8 vector of 0/1 values."""
        return np.frombuffer(self.bits.encode("ascii"), dtype=np.uint8) - ord("0")

    def as_int(self) -> int:
        return int(self.bits, 2)


class SlideLabels(NamedTuple):
    site: str
    subtype: str
    patient_id: str


@dataclass(frozen=True)
class BagOfBarcodes:
    """A slide represented as the barcodes of its mosaic patches."""

    slide_id: str
    barcodes: tuple[tuple[Barcode, tuple[int, int]], ...]

    def __post_init__(self) -> None:
        if not self.barcodes:
            raise EmptyInputError(f"bag for slide {self.slide_id!r} is empty")
        lengths = {len(code) for code, _ in self.barcodes}
        if len(lengths) != 1:
            raise DimensionError("all barcodes in a bag must share one length")
        coords = [coord for _, coord in self.barcodes]
        if len(set(coords)) != len(coords):
            raise ValidationError(f"bag for slide {self.slide_id!r} repeats a coordinate")

    def __len__(self) -> int:
        return len(self.barcodes)

    @property
    def code_length(self) -> int:
        return len(self.barcodes[0][0])

    def bit_matrix(self) -> np.ndarray:
        """(m, L) uint8 matrix of the bag's bits, row order as stored."""
        return np.stack([code.as_array() for code, _ in self.barcodes])


@dataclass(frozen=True, eq=False)
class SlideRecord:
    """A slide with its identifiers, labels, and dense patch grid."""

    slide_id: str
    patient_id: str
    site: str
    subtype: str
    magnification: str
    patches: tuple[PatchFeature, ...]

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise ValidationError(f"slide {self.slide_id!r} has an empty patient_id")
        if self.magnification not in MAGNIFICATIONS:
            raise ValidationError(
                f"slide {self.slide_id!r}: magnification must be one of {MAGNIFICATIONS}"
            )
        if not self.patches:
            raise EmptyInputError(f"slide {self.slide_id!r} has no patches")
        dims = {p.dim for p in self.patches}
        if len(dims) != 1:
            raise DimensionError(f"slide {self.slide_id!r} mixes feature dimensions {dims}")

    @property
    def dim(self) -> int:
        return self.patches[0].dim

    @property
    def labels(self) -> SlideLabels:
        return SlideLabels(self.site, self.subtype, self.patient_id)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([p.feature for p in self.patches])


@dataclass(frozen=True)
class RetrievalEntry:
    target_id: str
    target_site: str
    target_subtype: str
    score: float
    distance_kind: str

    def __post_init__(self) -> None:
        if self.distance_kind not in DISTANCE_KINDS:
            raise ValidationError(f"unknown distance kind {self.distance_kind!r}")


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked matches; may hold fewer entries than were requested."""

    entries: tuple[RetrievalEntry, ...]
    k_requested: int

    def __post_init__(self) -> None:
        if self.k_requested < 1:
            raise ValidationError("k_requested must be >= 1")
        if len(self.entries) > self.k_requested:
            raise ValidationError("result holds more entries than were requested")

    def __len__(self) -> int:
        return len(self.entries)

    def target_ids(self) -> list[str]:
        return [e.target_id for e in self.entries]


def hamming_distance(a: Barcode, b: Barcode) -> int:
    """Number of differing bit positions between two equal-length barcodes."""
    if len(a) != len(b):
        raise DimensionError(f"barcode lengths differ: {len(a)} vs {len(b)}")
    return (a.as_int() ^ b.as_int()).bit_count()


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between two non-zero vectors, clipped to [-1, 1]."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionError(f"vector shapes differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def label_entropy(labels: Iterable[str]) -> float:
    """Shannon entropy (natural log) of the empirical label distribution."""
    counts = Counter(labels)
    total = sum(counts.values())
    if total == 0:
        raise EmptyInputError("label entropy is undefined for an empty multiset")
    return -sum((c / total) * math.log(c / total) for c in counts.values())


_POPCOUNT8 = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)


def pack_bit_rows(bits: np.ndarray) -> np.ndarray:
    """Pack an (m, L) 0/1 matrix into bytes row-wise (zero-padded on the right)."""
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-d bit matrix, got shape {arr.shape}")
    return np.packbits(arr, axis=1)


def hamming_matrix(packed_a: np.ndarray, packed_b: np.ndarray) -> np.ndarray:
    """(m_a, m_b) pairwise Hamming distances between packed bit rows.

    Both inputs must come from pack_bit_rows with the same original bit
    length, so the zero padding cancels under xor.
    """
    if packed_a.shape[1] != packed_b.shape[1]:
        raise DimensionError(
            f"packed widths differ: {packed_a.shape[1]} vs {packed_b.shape[1]}"
        )
    xored = packed_a[:, None, :] ^ packed_b[None, :, :]
    return _POPCOUNT8[xored].sum(axis=2, dtype=np.int64)


def patch_ref(slide_id: str, x: int, y: int) -> str:
    """Canonical identifier of one patch inside one slide."""
    return f"{slide_id}:{x},{y}"


def slide_seed(base_seed: int, slide_id: str) -> int:
    """Stable per-slide RNG seed, independent of slide ordering and of
    PYTHONHASHSEED."""
    digest = hashlib.blake2s(
        f"{base_seed}:{slide_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def binarize_barcode(feature: Sequence[float] | np.ndarray) -> Barcode:
    """Barcode of a feature vector: bit i is 1 iff feature[i+1] > feature[i].

    Invariant under adding a constant to every component and under positive
    scaling, since only the signs of successive differences matter.
    """
    arr = np.asarray(feature)
    if arr.ndim != 1:
        raise DimensionError(f"feature must be one-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DimensionError("barcoding needs a feature of length >= 2")
    ascents = (np.diff(arr) > 0).astype(np.uint8)
    return Barcode((ascents + ord("0")).tobytes().decode("ascii"))
