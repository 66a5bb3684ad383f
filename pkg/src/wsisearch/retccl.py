"""Cosine-threshold retrieval with entropy-ordered bags and majority voting.

The database is a flat index of every mosaic patch.  Each query patch pulls
in all database patches with cosine similarity at or above the threshold,
forming a bag.  Bags with mixed labels (high entropy) sort last, bags whose
best scores are weak (mean of top five under the cross-bag median) are
dropped, and each surviving bag nominates one slide: the best-scoring hit
that carries the bag's majority label.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    UndefinedSimilarityError,
    UnprocessedSlideError,
    ValidationError,
)
from .model import (
    PatchFeature,
    RetrievalEntry,
    RetrievalResult,
    SlideLabels,
    SlideRecord,
    label_entropy,
    patch_ref,
    slide_seed,
)
from .mosaic import build_mosaic_percent

QUALITY_MEDIAN = "median"
QUALITY_NONE = "none"


@dataclass(frozen=True)
class RetcclParams:
    sim_threshold: float = 0.70
    k_primary: int = 9
    fraction: float = 0.20
    quality_rule: str = QUALITY_MEDIAN
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.sim_threshold <= 1.0):
            raise ValidationError(
                f"sim_threshold must lie in (0, 1], got {self.sim_threshold}"
            )
        if self.quality_rule not in (QUALITY_MEDIAN, QUALITY_NONE):
            raise ValidationError(f"unknown quality rule {self.quality_rule!r}")


class Hit(NamedTuple):
    slide_id: str
    ordinal: int  # position of the patch in the flat index
    score: float
    subtype: str


@dataclass(frozen=True)
class Bag:
    """One query patch with everything the database matched to it."""

    ordinal: int
    hits: tuple[Hit, ...]  # sorted by score descending
    entropy: float  # +inf for an empty bag, so it always filters out


@dataclass
class RetcclDatabase:
    params: RetcclParams
    dim: int
    unit_features: np.ndarray  # (N, dim) float64, rows normalized
    patch_slides: list[str]  # slide_id per row of unit_features
    patch_coords: list[tuple[int, int]]
    slide_labels: dict[str, SlideLabels]
    unprocessed: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.slide_labels)

    @property
    def n_patches(self) -> int:
        return int(self.unit_features.shape[0])


CandidateFilter = Callable[[str, SlideLabels], bool]


def _mosaic_members(slide: SlideRecord, params: RetcclParams) -> list[PatchFeature]:
    """Percent mosaic clustered on the features themselves; zero vectors are
    dropped because cosine similarity cannot see them."""
    mosaic = build_mosaic_percent(
        slide,
        slide.feature_matrix().astype(np.float64),
        k_primary=params.k_primary,
        fraction=params.fraction,
        seed=slide_seed(params.seed, slide.slide_id),
    )
    kept = [m for m in mosaic.members if float(np.linalg.norm(m.feature)) > 0.0]
    if not kept:
        raise UnprocessedSlideError(
            f"slide {slide.slide_id!r}: every mosaic patch is a zero vector"
        )
    return kept


def build_database(
    slides: Sequence[SlideRecord], params: RetcclParams | None = None
) -> RetcclDatabase:
    params = params or RetcclParams()
    if not slides:
        raise EmptyInputError("cannot build a database from zero slides")
    dims = {s.dim for s in slides}
    if len(dims) != 1:
        raise DimensionError(f"slides mix feature dimensions {sorted(dims)}")
    dim = dims.pop()

    rows: list[np.ndarray] = []
    patch_slides: list[str] = []
    patch_coords: list[tuple[int, int]] = []
    slide_labels: dict[str, SlideLabels] = {}
    unprocessed: list[tuple[str, str]] = []
    for slide in slides:
        try:
            members = _mosaic_members(slide, params)
        except (ValidationError, UnprocessedSlideError) as exc:
            unprocessed.append((slide.slide_id, str(exc)))
            continue
        for m in members:
            vec = m.feature.astype(np.float64)
            rows.append(vec / np.linalg.norm(vec))
            patch_slides.append(slide.slide_id)
            patch_coords.append(m.coord)
        slide_labels[slide.slide_id] = slide.labels
    if not slide_labels:
        raise EmptyInputError("no slide survived mosaic construction")

    return RetcclDatabase(
        params=params,
        dim=dim,
        unit_features=np.stack(rows),
        patch_slides=patch_slides,
        patch_coords=patch_coords,
        slide_labels=slide_labels,
        unprocessed=unprocessed,
    )


def prepare_query(db: RetcclDatabase, slide: SlideRecord) -> list[PatchFeature]:
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    return _mosaic_members(slide, db.params)


def _candidate_mask(db: RetcclDatabase, candidate_filter: CandidateFilter | None) -> np.ndarray:
    if candidate_filter is None:
        return np.ones(db.n_patches, dtype=bool)
    keep_slide = {
        sid: candidate_filter(sid, labels) for sid, labels in db.slide_labels.items()
    }
    return np.fromiter(
        (keep_slide[sid] for sid in db.patch_slides), dtype=bool, count=db.n_patches
    )


def build_bags(
    db: RetcclDatabase,
    query_patches: Sequence[PatchFeature],
    candidate_filter: CandidateFilter | None = None,
) -> list[Bag]:
    """One bag per query patch: all candidates at cosine >= the threshold.

    A zero-vector query patch yields an empty bag (entropy +inf) rather than
    an error, mirroring how zero vectors are invisible to the index.
    """
    if not query_patches:
        raise EmptyInputError("query mosaic has no patches")
    mask = _candidate_mask(db, candidate_filter)
    bags: list[Bag] = []
    for i, patch in enumerate(query_patches):
        if patch.dim != db.dim:
            raise DimensionError(f"query dim {patch.dim} != database dim {db.dim}")
        vec = patch.feature.astype(np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            bags.append(Bag(ordinal=i, hits=(), entropy=math.inf))
            continue
        scores = np.clip(db.unit_features @ (vec / norm), -1.0, 1.0)
        picked = np.flatnonzero((scores >= db.params.sim_threshold) & mask)
        hits = [
            Hit(
                slide_id=db.patch_slides[j],
                ordinal=int(j),
                score=float(scores[j]),
                subtype=db.slide_labels[db.patch_slides[j]].subtype,
            )
            for j in picked
        ]
        hits.sort(key=lambda h: (-h.score, h.slide_id, h.ordinal))
        entropy = label_entropy(h.subtype for h in hits) if hits else math.inf
        bags.append(Bag(ordinal=i, hits=tuple(hits), entropy=entropy))
    return bags


def filter_and_order_bags(bags: Sequence[Bag], quality_rule: str = QUALITY_MEDIAN) -> list[Bag]:
    """Drop empty and weak bags, then order the rest by rising entropy.

    Weak means the mean of the bag's top-5 scores falls strictly below the
    median of those means across non-empty bags.
    """
    nonempty = [b for b in bags if b.hits]
    if not nonempty:
        return []
    if quality_rule == QUALITY_MEDIAN:
        means = [float(np.mean([h.score for h in b.hits[:5]])) for b in nonempty]
        cutoff = float(np.median(means))
        nonempty = [b for b, m in zip(nonempty, means) if m >= cutoff]
    elif quality_rule != QUALITY_NONE:
        raise ValidationError(f"unknown quality rule {quality_rule!r}")
    return sorted(nonempty, key=lambda b: (b.entropy, b.ordinal))


def vote_slides(bags: Sequence[Bag], db: RetcclDatabase, k: int) -> RetrievalResult:
    """Each bag nominates its best hit carrying the bag's majority label;
    distinct slides are collected in bag order until k are found."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    entries: list[RetrievalEntry] = []
    seen: set[str] = set()
    for bag in bags:
        if len(entries) == k:
            break
        top = bag.hits[:5]
        counts = Counter(h.subtype for h in top)
        best = max(counts.values())
        # hits are score-descending, so the first hit whose label is tied
        # for the majority settles the tie toward the higher-scoring label
        majority = next(h.subtype for h in top if counts[h.subtype] == best)
        representative = next(h for h in bag.hits if h.subtype == majority)
        if representative.slide_id in seen:
            continue
        seen.add(representative.slide_id)
        labels = db.slide_labels[representative.slide_id]
        entries.append(
            RetrievalEntry(
                target_id=representative.slide_id,
                target_site=labels.site,
                target_subtype=labels.subtype,
                score=representative.score,
                distance_kind="cosine",
            )
        )
    return RetrievalResult(entries=tuple(entries), k_requested=k)


def query_slides(
    db: RetcclDatabase,
    query: SlideRecord | Sequence[PatchFeature],
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    patches = prepare_query(db, query) if isinstance(query, SlideRecord) else list(query)
    bags = build_bags(db, patches, candidate_filter)
    ordered = filter_and_order_bags(bags, db.params.quality_rule)
    return vote_slides(ordered, db, k)


def query_patches(
    db: RetcclDatabase,
    patch: PatchFeature,
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    """Global top-k patches by cosine, unthresholded, ties by (slide, ordinal)."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if patch.dim != db.dim:
        raise DimensionError(f"query dim {patch.dim} != database dim {db.dim}")
    vec = patch.feature.astype(np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    scores = np.clip(db.unit_features @ (vec / norm), -1.0, 1.0)
    mask = _candidate_mask(db, candidate_filter)

    order = sorted(
        np.flatnonzero(mask),
        key=lambda j: (-scores[j], db.patch_slides[j], int(j)),
    )
    entries = []
    for j in order[:k]:
        sid = db.patch_slides[j]
        labels = db.slide_labels[sid]
        x, y = db.patch_coords[j]
        entries.append(
            RetrievalEntry(
                target_id=patch_ref(sid, x, y),
                target_site=labels.site,
                target_subtype=labels.subtype,
                score=float(scores[j]),
                distance_kind="cosine",
            )
        )
    return RetrievalResult(entries=tuple(entries), k_requested=k)


def query_patch_set(db: RetcclDatabase, slide: SlideRecord) -> list[PatchFeature]:
    """The patches a slide would contribute as individual patch queries."""
    return prepare_query(db, slide)
