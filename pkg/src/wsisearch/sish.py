"""Integer-indexed retrieval over a van Emde Boas tree.

Each mosaic patch gets two codes: a Hamming barcode for comparing, and a
48-bit integer index for locating.  The index comes from quantizing the
feature to bytes and average-pooling at three granularities (whole vector,
halves, thirds), giving six base-256 digits from coarse to fine, so nearby
features land on nearby integers.  A query walks the tree outward from its
own index with successor/predecessor probes, then keeps only candidates
within a Hamming threshold of its barcode.

Slide ranking follows the uncertainty rule: query patches whose retrieved
labels are too mixed (entropy above the median patch entropy) are dropped,
and surviving retrievals vote with weight 1/(1+entropy), divided by the
database frequency of the target's label to blunt class imbalance.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateFeatureError,
    DimensionError,
    EmptyInputError,
    UnprocessedSlideError,
    ValidationError,
)
from .model import (
    Barcode,
    PatchFeature,
    RetrievalEntry,
    RetrievalResult,
    SlideLabels,
    SlideRecord,
    binarize_barcode,
    hamming_distance,
    label_entropy,
    patch_ref,
    slide_seed,
)
from .mosaic import Mosaic, build_mosaic_percent, histogram_matrix
from .veb import VebTree

#: One unit in the coarsest pooled digit; the guided walk seeds one step of
#: this size to either side of the query index.
COARSE_DIGIT_UNIT = 256**5

INDEX_BITS = 48
N_DIGITS = 6


@dataclass(frozen=True)
class SishParams:
    universe_bits: int = INDEX_BITS
    hamming_threshold: int = 128
    probe_budget: int = 500
    seed_offset: int = COARSE_DIGIT_UNIT
    k_primary: int = 9
    fraction: float = 0.15
    histogram_bins: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.universe_bits < INDEX_BITS:
            raise ValidationError(
                f"universe_bits must be >= {INDEX_BITS} to hold {N_DIGITS} base-256 digits"
            )
        if self.hamming_threshold < 0:
            raise ValidationError("hamming_threshold must be >= 0")
        if self.probe_budget < 1:
            raise ValidationError("probe_budget must be >= 1")


@dataclass(frozen=True)
class SishEntry:
    slide_id: str
    ordinal: int  # position within the slide's mosaic
    x: int
    y: int
    code: Barcode
    index: int


@dataclass
class SishDatabase:
    params: SishParams
    dim: int
    code_length: int
    lo: np.ndarray  # (dim,) componentwise minima over indexed patches
    hi: np.ndarray
    tree: VebTree
    buckets: dict[int, list[SishEntry]] = field(default_factory=dict)
    slide_labels: dict[str, SlideLabels] = field(default_factory=dict)
    subtype_freq: dict[str, float] = field(default_factory=dict)
    unprocessed: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.slide_labels)


CandidateFilter = Callable[[str, SlideLabels], bool]


def index_encode(feature: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> int:
    """Map one feature vector to a 48-bit integer index.

    Components quantize to 0..255 against the database-wide ranges (values
    outside clip; flat components read as 0).  The byte vector is padded by
    cyclic repetition to a multiple of 6 and pooled over the whole, the two
    halves, and the three thirds; the six rounded means are the base-256
    digits of the index, coarsest first.
    """
    f = np.asarray(feature, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if f.shape != lo.shape or f.shape != hi.shape:
        raise DimensionError(
            f"feature shape {f.shape} does not match range shapes {lo.shape}/{hi.shape}"
        )
    span = hi - lo
    live = span > 0
    if not live.any():
        raise DegenerateFeatureError("every component range is flat; index undefined")
    q = np.zeros(f.shape[0], dtype=np.float64)
    q[live] = np.clip(np.rint(255.0 * (f[live] - lo[live]) / span[live]), 0, 255)

    if q.shape[0] % N_DIGITS:
        pad = N_DIGITS - q.shape[0] % N_DIGITS
        q = np.concatenate([q, q[:pad]])
    half = q.shape[0] // 2
    third = q.shape[0] // 3
    pools = (
        q.mean(),
        q[:half].mean(),
        q[half:].mean(),
        q[:third].mean(),
        q[third : 2 * third].mean(),
        q[2 * third :].mean(),
    )
    index = 0
    for value in pools:
        digit = int(np.clip(np.rint(value), 0, 255))
        index = (index << 8) | digit
    return index


def _mosaic_patches(slide: SlideRecord, params: SishParams) -> list[PatchFeature]:
    """Mosaic members with flat-feature patches (scanner artifacts) dropped."""
    hist = histogram_matrix(slide, bins=params.histogram_bins)
    mosaic: Mosaic = build_mosaic_percent(
        slide,
        hist,
        k_primary=params.k_primary,
        fraction=params.fraction,
        seed=slide_seed(params.seed, slide.slide_id),
    )
    kept = [m for m in mosaic.members if float(np.ptp(m.feature)) > 0.0]
    if not kept:
        raise UnprocessedSlideError(
            f"slide {slide.slide_id!r}: every mosaic patch is constant"
        )
    return kept


def build_database(slides: Sequence[SlideRecord], params: SishParams | None = None) -> SishDatabase:
    params = params or SishParams()
    if not slides:
        raise EmptyInputError("cannot build a database from zero slides")
    dims = {s.dim for s in slides}
    if len(dims) != 1:
        raise DimensionError(f"slides mix feature dimensions {sorted(dims)}")
    dim = dims.pop()
    if dim < 2:
        raise DimensionError("barcoding needs feature dimension >= 2")

    kept: list[tuple[SlideRecord, list[PatchFeature]]] = []
    unprocessed: list[tuple[str, str]] = []
    for slide in slides:
        try:
            kept.append((slide, _mosaic_patches(slide, params)))
        except (ValidationError, UnprocessedSlideError) as exc:
            unprocessed.append((slide.slide_id, str(exc)))
    if not kept:
        raise EmptyInputError("no slide survived mosaic construction")

    # quantization ranges are a database-wide statistic, frozen at build time
    stacked = np.stack([p.feature for _, patches in kept for p in patches])
    lo = stacked.min(axis=0).astype(np.float64)
    hi = stacked.max(axis=0).astype(np.float64)

    db = SishDatabase(
        params=params,
        dim=dim,
        code_length=dim - 1,
        lo=lo,
        hi=hi,
        tree=VebTree(params.universe_bits),
        unprocessed=unprocessed,
    )
    subtype_counts: Counter[str] = Counter()
    for slide, patches in kept:
        try:
            entries = [
                SishEntry(
                    slide_id=slide.slide_id,
                    ordinal=i,
                    x=p.x,
                    y=p.y,
                    code=binarize_barcode(p.feature),
                    index=index_encode(p.feature, lo, hi),
                )
                for i, p in enumerate(patches)
            ]
        except ValidationError as exc:
            db.unprocessed.append((slide.slide_id, str(exc)))
            continue
        for entry in entries:
            db.tree.insert(entry.index)
            db.buckets.setdefault(entry.index, []).append(entry)
        db.slide_labels[slide.slide_id] = slide.labels
        subtype_counts[slide.subtype] += 1

    if not db.slide_labels:
        raise EmptyInputError("no slide survived indexing")
    total = sum(subtype_counts.values())
    db.subtype_freq = {name: count / total for name, count in subtype_counts.items()}
    return db


def prepare_query(db: SishDatabase, slide: SlideRecord) -> list[SishEntry]:
    """Mosaic + codes for a query slide under the database's frozen ranges."""
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    patches = _mosaic_patches(slide, db.params)
    return [
        SishEntry(
            slide_id=slide.slide_id,
            ordinal=i,
            x=p.x,
            y=p.y,
            code=binarize_barcode(p.feature),
            index=index_encode(p.feature, db.lo, db.hi),
        )
        for i, p in enumerate(patches)
    ]


def guided_search(
    db: SishDatabase,
    query: SishEntry,
    probe_budget: int | None = None,
    candidate_filter: CandidateFilter | None = None,
) -> list[tuple[SishEntry, int]]:
    """Walk the tree outward from the query index, keep near-in-Hamming hits.

    Three seeds (query index, one coarse digit up, one down) each expand by
    alternating successor and predecessor calls; every tree operation costs
    one probe from the budget.  Results are (entry, hamming) ascending by
    distance, all within db.params.hamming_threshold; the list may be empty.
    """
    budget = db.params.probe_budget if probe_budget is None else probe_budget
    if budget < 1:
        raise ValidationError("probe_budget must be >= 1")
    top = db.tree.universe_size - 1
    m = query.index
    c = db.params.seed_offset
    seeds = list(dict.fromkeys(min(max(v, 0), top) for v in (m, m + c, m - c)))

    probes = 0
    hit_indices: list[int] = []
    seen: set[int] = set()

    def visit(idx: int) -> None:
        if idx not in seen:
            seen.add(idx)
            hit_indices.append(idx)

    for seed in seeds:
        if probes >= budget:
            break
        probes += 1
        if db.tree.member(seed):
            visit(seed)

    # walker = [position, step]; a walker dies when its step returns None
    walkers: list[list | None] = []
    for seed in seeds:
        walkers.append([seed, db.tree.successor])
        walkers.append([seed, db.tree.predecessor])
    alive = len(walkers)
    while alive and probes < budget:
        for wi in range(len(walkers)):
            walker = walkers[wi]
            if walker is None or probes >= budget:
                continue
            position, step = walker
            probes += 1
            nxt = step(position)
            if nxt is None:
                walkers[wi] = None
                alive -= 1
            else:
                walker[0] = nxt
                visit(nxt)

    results: list[tuple[SishEntry, int]] = []
    for idx in hit_indices:
        for entry in db.buckets.get(idx, ()):
            if candidate_filter is not None and not candidate_filter(
                entry.slide_id, db.slide_labels[entry.slide_id]
            ):
                continue
            ham = hamming_distance(query.code, entry.code)
            if ham <= db.params.hamming_threshold:
                results.append((entry, ham))
    results.sort(key=lambda t: (t[1], t[0].slide_id, t[0].ordinal))
    return results


def rank_slides(
    patch_results: Sequence[Sequence[tuple[SishEntry, int]]],
    db: SishDatabase,
    k: int,
) -> RetrievalResult:
    """Uncertainty-filtered weighted voting over per-patch search results."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not patch_results:
        raise EmptyInputError("rank_slides needs at least one query patch")

    surviving: list[tuple[float, Sequence[tuple[SishEntry, int]]]] = []
    for results in patch_results:
        if not results:
            continue
        entropy = label_entropy(
            db.slide_labels[e.slide_id].subtype for e, _ in results
        )
        surviving.append((entropy, results))
    if not surviving:
        return RetrievalResult(entries=(), k_requested=k)

    median_entropy = float(np.median([h for h, _ in surviving]))
    votes: dict[str, float] = {}
    for entropy, results in surviving:
        if entropy > median_entropy:
            continue
        patch_weight = 1.0 / (1.0 + entropy)
        for entry, _ in results:
            subtype = db.slide_labels[entry.slide_id].subtype
            weight = patch_weight / db.subtype_freq[subtype]
            votes[entry.slide_id] = votes.get(entry.slide_id, 0.0) + weight

    ranked = sorted(votes.items(), key=lambda t: (-t[1], t[0]))
    entries = tuple(
        RetrievalEntry(
            target_id=slide_id,
            target_site=db.slide_labels[slide_id].site,
            target_subtype=db.slide_labels[slide_id].subtype,
            score=weight,
            distance_kind="votes",
        )
        for slide_id, weight in ranked[:k]
    )
    return RetrievalResult(entries=entries, k_requested=k)


def query_slides(
    db: SishDatabase,
    query: SlideRecord | Sequence[SishEntry],
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    patches = prepare_query(db, query) if isinstance(query, SlideRecord) else list(query)
    if not patches:
        raise EmptyInputError("query has no mosaic patches")
    per_patch = [
        guided_search(db, patch, candidate_filter=candidate_filter) for patch in patches
    ]
    return rank_slides(per_patch, db, k)


def query_patches(
    db: SishDatabase,
    patch: PatchFeature,
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    """Top-k patches by guided search from one query patch; may come up short."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if patch.dim != db.dim:
        raise DimensionError(f"query dim {patch.dim} != database dim {db.dim}")
    probe = SishEntry(
        slide_id="",
        ordinal=0,
        x=patch.x,
        y=patch.y,
        code=binarize_barcode(patch.feature),
        index=index_encode(patch.feature, db.lo, db.hi),
    )
    hits = guided_search(db, probe, candidate_filter=candidate_filter)
    entries = tuple(
        RetrievalEntry(
            target_id=patch_ref(e.slide_id, e.x, e.y),
            target_site=db.slide_labels[e.slide_id].site,
            target_subtype=db.slide_labels[e.slide_id].subtype,
            score=float(ham),
            distance_kind="hamming",
        )
        for e, ham in hits[:k]
    )
    return RetrievalResult(entries=entries, k_requested=k)


def query_patch_set(db: SishDatabase, slide: SlideRecord) -> list[PatchFeature]:
    """The patches a slide would contribute as individual patch queries."""
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    return _mosaic_patches(slide, db.params)
