"""Barcode-based retrieval: mosaic patches, binarize, compare by Hamming.

A slide is indexed as the barcodes of its mosaic members.  Slide-to-slide
distance is the median over query barcodes of the minimum Hamming distance
to the target's bag, so one aberrant mosaic patch cannot dominate the
match.  Patch queries skip the aggregation and rank individual barcodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, ValidationError
from .model import (
    BagOfBarcodes,
    PatchFeature,
    RetrievalEntry,
    RetrievalResult,
    SlideLabels,
    SlideRecord,
    binarize_barcode,
    hamming_matrix,
    pack_bit_rows,
    patch_ref,
    slide_seed,
)
from .mosaic import build_mosaic_percent, histogram_matrix


@dataclass(frozen=True)
class YottixelParams:
    k_primary: int = 9
    fraction: float = 0.15
    histogram_bins: int = 16
    seed: int = 0


@dataclass(frozen=True, eq=False)
class IndexedBag:
    """One database slide: its labels plus the packed barcode bits."""

    slide_id: str
    labels: SlideLabels
    bag: BagOfBarcodes
    packed: np.ndarray  # (m, ceil(L / 8)) uint8


@dataclass
class YottixelDatabase:
    params: YottixelParams
    dim: int
    code_length: int
    entries: list[IndexedBag] = field(default_factory=list)
    unprocessed: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


CandidateFilter = Callable[[str, SlideLabels], bool]


def _mosaic_members(slide: SlideRecord, params: YottixelParams) -> tuple[PatchFeature, ...]:
    hist = histogram_matrix(slide, bins=params.histogram_bins)
    mosaic = build_mosaic_percent(
        slide,
        hist,
        k_primary=params.k_primary,
        fraction=params.fraction,
        seed=slide_seed(params.seed, slide.slide_id),
    )
    return mosaic.members


def _bag_from_slide(slide: SlideRecord, params: YottixelParams) -> BagOfBarcodes:
    codes = tuple(
        (binarize_barcode(m.feature), m.coord) for m in _mosaic_members(slide, params)
    )
    return BagOfBarcodes(slide_id=slide.slide_id, barcodes=codes)


def build_database(slides: Sequence[SlideRecord], params: YottixelParams | None = None) -> YottixelDatabase:
    """Index slides; ones that fail mosaic or barcoding land in .unprocessed."""
    params = params or YottixelParams()
    if not slides:
        raise EmptyInputError("cannot build a database from zero slides")
    dims = {s.dim for s in slides}
    if len(dims) != 1:
        raise DimensionError(f"slides mix feature dimensions {sorted(dims)}")
    dim = dims.pop()
    if dim < 2:
        raise DimensionError("barcoding needs feature dimension >= 2")

    db = YottixelDatabase(params=params, dim=dim, code_length=dim - 1)
    for slide in slides:
        try:
            bag = _bag_from_slide(slide, params)
        except ValidationError as exc:
            db.unprocessed.append((slide.slide_id, str(exc)))
            continue
        db.entries.append(
            IndexedBag(
                slide_id=slide.slide_id,
                labels=slide.labels,
                bag=bag,
                packed=pack_bit_rows(bag.bit_matrix()),
            )
        )
    return db


def prepare_query(db: YottixelDatabase, slide: SlideRecord) -> BagOfBarcodes:
    """Mosaic + barcode a query slide under the database parameters."""
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    return _bag_from_slide(slide, db.params)


def median_min_hamming(query_packed: np.ndarray, target_packed: np.ndarray) -> float:
    """Median over query rows of the minimum distance into the target rows."""
    distances = hamming_matrix(query_packed, target_packed)
    return float(np.median(distances.min(axis=1)))


def query_slides(
    db: YottixelDatabase,
    query: SlideRecord | BagOfBarcodes,
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    """Top-k slides by ascending median-of-minimum Hamming distance."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    bag = prepare_query(db, query) if isinstance(query, SlideRecord) else query
    if bag.code_length != db.code_length:
        raise DimensionError(
            f"query code length {bag.code_length} != database code length {db.code_length}"
        )
    qpacked = pack_bit_rows(bag.bit_matrix())

    scored: list[tuple[float, str, IndexedBag]] = []
    for entry in db.entries:
        if candidate_filter is not None and not candidate_filter(entry.slide_id, entry.labels):
            continue
        scored.append((median_min_hamming(qpacked, entry.packed), entry.slide_id, entry))
    scored.sort(key=lambda t: (t[0], t[1]))

    entries = tuple(
        RetrievalEntry(
            target_id=e.slide_id,
            target_site=e.labels.site,
            target_subtype=e.labels.subtype,
            score=dist,
            distance_kind="hamming",
        )
        for dist, _, e in scored[:k]
    )
    return RetrievalResult(entries=entries, k_requested=k)


def query_patches(
    db: YottixelDatabase,
    patch: PatchFeature,
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    """Top-k mosaic patches by ascending Hamming distance to one query patch."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if patch.dim != db.dim:
        raise DimensionError(f"query dim {patch.dim} != database dim {db.dim}")
    code = binarize_barcode(patch.feature)
    qpacked = pack_bit_rows(code.as_array()[None, :])

    ranked: list[tuple[int, str, int, IndexedBag]] = []
    for entry in db.entries:
        if candidate_filter is not None and not candidate_filter(entry.slide_id, entry.labels):
            continue
        dists = hamming_matrix(qpacked, entry.packed)[0]
        for ordinal, dist in enumerate(dists):
            ranked.append((int(dist), entry.slide_id, ordinal, entry))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))

    entries = []
    for dist, slide_id, ordinal, entry in ranked[:k]:
        x, y = entry.bag.barcodes[ordinal][1]
        entries.append(
            RetrievalEntry(
                target_id=patch_ref(slide_id, x, y),
                target_site=entry.labels.site,
                target_subtype=entry.labels.subtype,
                score=float(dist),
                distance_kind="hamming",
            )
        )
    return RetrievalResult(entries=tuple(entries), k_requested=k)


def query_patch_set(db: YottixelDatabase, slide: SlideRecord) -> list[PatchFeature]:
    """The patches a slide would contribute as individual patch queries."""
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    return list(_mosaic_members(slide, db.params))
