"""Retrieval metrics with explicit null semantics, plus the Mann-Whitney U test.

A retrieval row carries up to K_max result slots; a slot is None when the
engine returned fewer results than requested.  Majority voting lets null
slots vote for a sentinel: a row whose winner is the sentinel yields None,
and None outcomes are excluded from averages while zeros count.  Average
precision skips null slots but keeps their positions.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInputError, UndefinedAggregateError, ValidationError

FIELD_SITE = "site"
FIELD_SUBTYPE = "subtype"
FIELDS = (FIELD_SITE, FIELD_SUBTYPE)

METRIC_MV = "MV"
METRIC_AP = "AP"

#: what a null slot votes for in majority voting
NULL_VOTE = -1


class RetrievalSlot(NamedTuple):
    target_id: str
    site: str
    subtype: str
    score: float


@dataclass(frozen=True)
class QueryRow:
    """One query and its (possibly partially filled) top-K_max results."""

    query_id: str
    query_site: str
    query_subtype: str
    slots: tuple[RetrievalSlot | None, ...]

    def query_label(self, field: str) -> str:
        if field == FIELD_SITE:
            return self.query_site
        if field == FIELD_SUBTYPE:
            return self.query_subtype
        raise ValidationError(f"unknown label field {field!r}")

    def slot_labels(self, k: int, field: str) -> list[str | None]:
        """Labels of the first k slots, None where the slot is null."""
        if field not in FIELDS:
            raise ValidationError(f"unknown label field {field!r}")
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        if k > len(self.slots):
            raise ValidationError(
                f"k={k} exceeds the row's {len(self.slots)} result slots"
            )
        picked = self.slots[:k]
        if field == FIELD_SITE:
            return [s.site if s is not None else None for s in picked]
        return [s.subtype if s is not None else None for s in picked]


@dataclass(frozen=True)
class MetricOutcome:
    value: float | None
    metric: str
    k: int

    def __post_init__(self) -> None:
        if self.metric not in (METRIC_MV, METRIC_AP):
            raise ValidationError(f"unknown metric {self.metric!r}")
        if self.metric == METRIC_MV and self.value not in (0, 1, None):
            raise ValidationError(f"MV outcome must be 0, 1, or None, got {self.value}")
        if self.metric == METRIC_AP and not (
            self.value is not None and 0.0 <= self.value <= 1.0
        ):
            raise ValidationError(f"AP outcome must lie in [0, 1], got {self.value}")


def mv_at_k(row: QueryRow, k: int, field: str) -> int | None:
    """Majority vote over the first k slots.

    Null slots vote for a sentinel.  Ties go to the label seen earliest
    among the k slots (Counter preserves first-encounter order).  A sentinel
    win means the row abstains: the outcome is None, not 0.
    """
    votes: list = [
        label if label is not None else NULL_VOTE
        for label in row.slot_labels(k, field)
    ]
    winner = Counter(votes).most_common(1)[0][0]
    if winner == NULL_VOTE:
        return None
    return 1 if winner == row.query_label(field) else 0


def ap_at_k(row: QueryRow, k: int, field: str) -> float:
    """Average precision over the first k slots.

    Null slots contribute nothing but still occupy their rank position.
    The divisor is min(k, number of relevant slots found), so a row with a
    single relevant hit at rank 1 scores 1.0.
    """
    query_label = row.query_label(field)
    relevant = 0
    precision_sum = 0.0
    for position, label in enumerate(row.slot_labels(k, field), start=1):
        if label is None:
            continue
        if label == query_label:
            relevant += 1
            precision_sum += relevant / position
    if relevant == 0:
        return 0.0
    return precision_sum / min(k, relevant)


def aggregate_mean(outcomes: Iterable[MetricOutcome | float | None]) -> float:
    """Mean over non-None outcomes; zeros count, absences do not."""
    values = [
        o.value if isinstance(o, MetricOutcome) else o for o in outcomes
    ]
    present = [float(v) for v in values if v is not None]
    if not present:
        raise UndefinedAggregateError("every outcome is None; the mean is undefined")
    return float(np.mean(present))


def _midranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties sharing their average rank."""
    n = len(values)
    order = sorted(range(n), key=values.__getitem__)
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j + 2) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = shared
        i = j + 1
    return ranks


#: largest pooled size for which the p-value is computed by full enumeration
EXACT_ENUMERATION_LIMIT = 12


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns (U of the first sample, p).

    Midranks handle ties.  Small pooled samples (n1 + n2 <= 12) get an
    exact p by enumerating all group assignments; larger samples use the
    normal approximation with tie and continuity corrections.  Two
    identical constant samples have no ordering information at all: U is
    its null mean and p is nan, matching how such rows are reported.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("both samples must be non-empty")
    pooled = [float(v) for v in a] + [float(v) for v in b]
    if not all(math.isfinite(v) for v in pooled):
        raise ValidationError("samples must be finite")
    n1, n2 = len(a), len(b)
    n = n1 + n2

    if min(pooled) == max(pooled):
        return (n1 * n2 / 2.0, math.nan)

    ranks = _midranks(pooled)
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1

    if n <= EXACT_ENUMERATION_LIMIT:
        observed = min(u1, u2)
        at_most = 0
        total = 0
        offset = n1 * (n1 + 1) / 2.0
        for combo in itertools.combinations(range(n), n1):
            cu1 = sum(ranks[i] for i in combo) - offset
            total += 1
            if min(cu1, n1 * n2 - cu1) <= observed:
                at_most += 1
        return (u1, at_most / total)

    mu = n1 * n2 / 2.0
    ties = Counter(pooled)
    tie_term = sum(t**3 - t for t in ties.values())
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma2 <= 0.0:
        return (u1, math.nan)
    z = max(0.0, (abs(u1 - mu) - 0.5) / math.sqrt(sigma2))
    return (u1, math.erfc(z / math.sqrt(2.0)))
