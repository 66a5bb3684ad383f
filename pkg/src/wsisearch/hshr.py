"""Hypergraph retrieval over per-slide hash signatures.  Slide-level only.

A slide's signature is built from its fixed-centroid mosaic: every centroid
feature is hashed to a bit string, attention weights follow cluster
population, and the slide hash is the hash of the attention-weighted mean
feature.  Each database slide spans one hyperedge containing its K nearest
slides by hash distance; a query joins the graph as a fresh vertex and
hyperedge, and scores combine vertex-level and hyperedge-level similarity
read off the weighted incidence products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    UnprocessedSlideError,
    UnsupportedOperationError,
    ValidationError,
)
from .model import (
    Barcode,
    RetrievalEntry,
    RetrievalResult,
    SlideLabels,
    SlideRecord,
    binarize_barcode,
    slide_seed,
)
from .mosaic import FIXED_CENTROIDS, Mosaic, build_mosaic_fixed


@dataclass(frozen=True)
class HshrParams:
    k_fixed: int = 20
    knn_k: int = 10
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_fixed < 1:
            raise ValidationError("k_fixed must be >= 1")
        if self.knn_k < 1:
            raise ValidationError("knn_k must be >= 1")


@dataclass(frozen=True, eq=False)
class SlideSignature:
    """Hashes plus attention for one slide; the slide_hash is what the
    hypergraph compares."""

    slide_id: str
    centroid_hashes: tuple[Barcode, ...]
    attention: np.ndarray  # (k_effective,) non-negative, sums to 1
    slide_hash: Barcode


@dataclass
class Hypergraph:
    """Square incidence: column s is slide s's hyperedge over the vertices."""

    incidence: np.ndarray  # (T, T) float64, entries in [0, 1]
    edge_weights: np.ndarray  # (T,) mean of positive entries per column
    knn_k: int


@dataclass
class HshrDatabase:
    params: HshrParams
    dim: int
    code_length: int
    signatures: list[SlideSignature]
    slide_labels: dict[str, SlideLabels]
    graph: Hypergraph
    hash_bits: np.ndarray  # (T, L) uint8 rows of slide-hash bits
    unprocessed: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.signatures)


CandidateFilter = Callable[[str, SlideLabels], bool]


def slide_signature(slide: SlideRecord, mosaic: Mosaic) -> SlideSignature:
    """Reference signature encoder over a fixed-centroid mosaic."""
    if mosaic.method != FIXED_CENTROIDS or mosaic.cluster_sizes is None:
        raise ValidationError("slide_signature needs a fixed-centroid mosaic")
    if mosaic.slide_id != slide.slide_id:
        raise ValidationError(
            f"mosaic belongs to {mosaic.slide_id!r}, not {slide.slide_id!r}"
        )
    hashes = tuple(binarize_barcode(m.feature) for m in mosaic.members)
    sizes = np.asarray(mosaic.cluster_sizes, dtype=np.float64)
    attention = sizes / sizes.sum()
    weighted_mean = attention @ mosaic.feature_matrix().astype(np.float64)
    return SlideSignature(
        slide_id=slide.slide_id,
        centroid_hashes=hashes,
        attention=attention,
        slide_hash=binarize_barcode(weighted_mean),
    )


def _signature_of(slide: SlideRecord, params: HshrParams) -> SlideSignature:
    mosaic = build_mosaic_fixed(
        slide, k_fixed=params.k_fixed, seed=slide_seed(params.seed, slide.slide_id)
    )
    return slide_signature(slide, mosaic)


def _knn_columns(ham: np.ndarray, k: int, skip_self: bool) -> list[np.ndarray]:
    """Per column of a pairwise Hamming matrix, the k nearest row indices
    (ascending distance, index as tie-break)."""
    t = ham.shape[0]
    columns = []
    for s in range(ham.shape[1]):
        order = np.lexsort((np.arange(t), ham[:, s]))
        if skip_self:
            order = order[order != s]
        columns.append(order[:k])
    return columns


def build_hypergraph(signatures: Sequence[SlideSignature], knn_k: int) -> Hypergraph:
    """Each slide's hyperedge holds its knn_k nearest slides plus itself,
    entered at affinity 1 - hamming/L."""
    if not signatures:
        raise EmptyInputError("cannot build a hypergraph from zero signatures")
    t = len(signatures)
    length = len(signatures[0].slide_hash)
    bits = np.stack([sig.slide_hash.as_array() for sig in signatures])
    ham = (bits[:, None, :] != bits[None, :, :]).sum(axis=2)
    affinity = 1.0 - ham / float(length)

    incidence = np.zeros((t, t), dtype=np.float64)
    k = min(knn_k, t - 1)
    for s, neighbors in enumerate(_knn_columns(ham, k, skip_self=True)):
        incidence[neighbors, s] = affinity[neighbors, s]
        incidence[s, s] = 1.0
    weights = np.array(
        [incidence[:, s][incidence[:, s] > 0].mean() for s in range(t)]
    )
    return Hypergraph(incidence=incidence, edge_weights=weights, knn_k=knn_k)


def build_database(
    slides: Sequence[SlideRecord], params: HshrParams | None = None
) -> HshrDatabase:
    params = params or HshrParams()
    if not slides:
        raise EmptyInputError("cannot build a database from zero slides")
    dims = {s.dim for s in slides}
    if len(dims) != 1:
        raise DimensionError(f"slides mix feature dimensions {sorted(dims)}")
    dim = dims.pop()
    if dim < 2:
        raise DimensionError("hashing needs feature dimension >= 2")

    signatures: list[SlideSignature] = []
    slide_labels: dict[str, SlideLabels] = {}
    unprocessed: list[tuple[str, str]] = []
    for slide in slides:
        try:
            signatures.append(_signature_of(slide, params))
        except (ValidationError, UnprocessedSlideError) as exc:
            unprocessed.append((slide.slide_id, str(exc)))
            continue
        slide_labels[slide.slide_id] = slide.labels
    if not signatures:
        raise EmptyInputError("no slide survived signature construction")

    graph = build_hypergraph(signatures, params.knn_k)
    hash_bits = np.stack([sig.slide_hash.as_array() for sig in signatures])
    return HshrDatabase(
        params=params,
        dim=dim,
        code_length=dim - 1,
        signatures=signatures,
        slide_labels=slide_labels,
        graph=graph,
        hash_bits=hash_bits,
        unprocessed=unprocessed,
    )


def prepare_query(db: HshrDatabase, slide: SlideRecord) -> SlideSignature:
    if slide.dim != db.dim:
        raise DimensionError(f"query dim {slide.dim} != database dim {db.dim}")
    return _signature_of(slide, db.params)


def ranked_scores(db: HshrDatabase, query: SlideSignature) -> list[tuple[float, str]]:
    """Scores of every database slide against the query, best first.

    The query becomes vertex/hyperedge T in a copy of the incidence matrix;
    scoring reads row T of the row-normalized weighted products.  Returns
    (score, slide_id) sorted descending, ties by slide_id; the caller slices
    its top-k after any candidate filtering.
    """
    t = len(db.signatures)
    length = len(query.slide_hash)
    if length != db.code_length:
        raise DimensionError(
            f"query hash length {length} != database hash length {db.code_length}"
        )
    qbits = query.slide_hash.as_array()
    ham = (db.hash_bits != qbits[None, :]).sum(axis=1)
    affinity = 1.0 - ham / float(length)

    extended = np.zeros((t + 1, t + 1), dtype=np.float64)
    extended[:t, :t] = db.graph.incidence
    order = np.lexsort((np.arange(t), ham))
    neighbors = order[: min(db.graph.knn_k, t)]
    extended[neighbors, t] = affinity[neighbors]
    extended[t, t] = 1.0

    q_column = extended[:, t]
    q_weight = q_column[q_column > 0].mean()
    weights = np.concatenate([db.graph.edge_weights, [q_weight]])

    adjacency = extended @ np.diag(weights) @ extended.T
    vertex_sim = adjacency / adjacency.sum(axis=1, keepdims=True)
    overlap = extended.T @ extended
    edge_sim = overlap / overlap.sum(axis=1, keepdims=True)
    scores = db.params.alpha * vertex_sim[t, :t] + db.params.beta * edge_sim[t, :t]

    ranked = sorted(
        ((float(scores[i]), db.signatures[i].slide_id) for i in range(t)),
        key=lambda pair: (-pair[0], pair[1]),
    )
    return ranked


def query_similarity(db: HshrDatabase, query: SlideSignature, k: int) -> RetrievalResult:
    """Top-k database slides by combined vertex and hyperedge similarity."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    entries = tuple(
        RetrievalEntry(
            target_id=slide_id,
            target_site=db.slide_labels[slide_id].site,
            target_subtype=db.slide_labels[slide_id].subtype,
            score=score,
            distance_kind="hypergraph",
        )
        for score, slide_id in ranked_scores(db, query)[:k]
    )
    return RetrievalResult(entries=entries, k_requested=k)


def query_slides(
    db: HshrDatabase,
    query: SlideRecord | SlideSignature,
    k: int,
    candidate_filter: CandidateFilter | None = None,
) -> RetrievalResult:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    signature = prepare_query(db, query) if isinstance(query, SlideRecord) else query
    ranked = ranked_scores(db, signature)
    entries: list[RetrievalEntry] = []
    for score, slide_id in ranked:
        if len(entries) == k:
            break
        labels = db.slide_labels[slide_id]
        if candidate_filter is not None and not candidate_filter(slide_id, labels):
            continue
        entries.append(
            RetrievalEntry(
                target_id=slide_id,
                target_site=labels.site,
                target_subtype=labels.subtype,
                score=score,
                distance_kind="hypergraph",
            )
        )
    return RetrievalResult(entries=tuple(entries), k_requested=k)


def query_patches(db: HshrDatabase, *args, **kwargs) -> RetrievalResult:
    """Always unsupported: hash signatures exist per slide, not per patch."""
    raise UnsupportedOperationError("hshr does not support patch retrieval")


def query_patch_set(db: HshrDatabase, slide: SlideRecord) -> list:
    """Always unsupported: hash signatures exist per slide, not per patch."""
    raise UnsupportedOperationError("hshr does not support patch retrieval")
