"""Recursive van Emde Boas tree over a 2**u integer universe.

Keys split into high bits (cluster address) and low bits (position inside
the cluster); clusters are allocated lazily in a dict so sparse key sets
stay small.  The minimum of a node is stored only in the node itself, which
is what keeps insert and the successor/predecessor walks to one recursive
call per level, i.e. O(log u) for a u-bit universe.

The tree counts node visits and tracks the recursion depth of the last
operation so tests can check the promised probe bounds directly.
"""
from __future__ import annotations

from .errors import KeyRangeError, ValidationError

DEFAULT_UNIVERSE_BITS = 48


class _OpStats:
    __slots__ = ("depth", "visits")

    def __init__(self) -> None:
        self.depth = 0
        self.visits = 0

    def visit(self, depth: int) -> None:
        self.visits += 1
        if depth > self.depth:
            self.depth = depth


class _Node:
    __slots__ = ("u_bits", "low_bits", "low_mask", "min", "max", "clusters", "summary")

    def __init__(self, u_bits: int) -> None:
        self.u_bits = u_bits
        self.low_bits = u_bits // 2
        self.low_mask = (1 << self.low_bits) - 1
        self.min: int | None = None
        self.max: int | None = None
        self.clusters: dict[int, _Node] = {}
        self.summary: _Node | None = None

    def _split(self, x: int) -> tuple[int, int]:
        return x >> self.low_bits, x & self.low_mask

    def _join(self, high: int, low: int) -> int:
        return (high << self.low_bits) | low

    def insert(self, x: int, stats: _OpStats, depth: int) -> None:
        stats.visit(depth)
        if self.min is None:
            self.min = self.max = x
            return
        if x == self.min or x == self.max:
            return
        if x < self.min:
            x, self.min = self.min, x
        if self.u_bits > 1:
            high, low = self._split(x)
            cluster = self.clusters.get(high)
            if cluster is None:
                cluster = _Node(self.low_bits)
                self.clusters[high] = cluster
            if cluster.min is None:
                if self.summary is None:
                    self.summary = _Node(self.u_bits - self.low_bits)
                self.summary.insert(high, stats, depth + 1)
                cluster.min = cluster.max = low
            else:
                cluster.insert(low, stats, depth + 1)
        if x > self.max:
            self.max = x

    def member(self, x: int, stats: _OpStats, depth: int) -> bool:
        stats.visit(depth)
        if x == self.min or x == self.max:
            return True
        if self.u_bits <= 1:
            return False
        high, low = self._split(x)
        cluster = self.clusters.get(high)
        if cluster is None:
            return False
        return cluster.member(low, stats, depth + 1)

    def successor(self, x: int, stats: _OpStats, depth: int) -> int | None:
        stats.visit(depth)
        if self.u_bits <= 1:
            if x == 0 and self.max == 1:
                return 1
            return None
        if self.min is not None and x < self.min:
            return self.min
        high, low = self._split(x)
        cluster = self.clusters.get(high)
        if cluster is not None and cluster.max is not None and low < cluster.max:
            return self._join(high, cluster.successor(low, stats, depth + 1))
        next_cluster = None
        if self.summary is not None:
            next_cluster = self.summary.successor(high, stats, depth + 1)
        if next_cluster is None:
            return None
        return self._join(next_cluster, self.clusters[next_cluster].min)

    def predecessor(self, x: int, stats: _OpStats, depth: int) -> int | None:
        stats.visit(depth)
        if self.u_bits <= 1:
            if x == 1 and self.min == 0:
                return 0
            return None
        if self.max is not None and x > self.max:
            return self.max
        high, low = self._split(x)
        cluster = self.clusters.get(high)
        if cluster is not None and cluster.min is not None and low > cluster.min:
            return self._join(high, cluster.predecessor(low, stats, depth + 1))
        prev_cluster = None
        if self.summary is not None:
            prev_cluster = self.summary.predecessor(high, stats, depth + 1)
        if prev_cluster is None:
            # the node minimum lives outside the clusters
            if self.min is not None and x > self.min:
                return self.min
            return None
        return self._join(prev_cluster, self.clusters[prev_cluster].max)


class VebTree:
    """Integer set with O(log u) insert/member/successor/predecessor."""

    def __init__(self, universe_bits: int = DEFAULT_UNIVERSE_BITS) -> None:
        if universe_bits < 1:
            raise ValidationError(f"universe_bits must be >= 1, got {universe_bits}")
        self.universe_bits = universe_bits
        self._root = _Node(universe_bits)
        self._size = 0
        self.total_visits = 0
        self.last_op_depth = 0

    @property
    def universe_size(self) -> int:
        return 1 << self.universe_bits

    def _check_key(self, key: int) -> None:
        if not (0 <= key < self.universe_size):
            raise KeyRangeError(
                f"key {key} outside universe [0, 2**{self.universe_bits})"
            )

    def _run(self, method, key: int):
        stats = _OpStats()
        out = method(key, stats, 1)
        self.total_visits += stats.visits
        self.last_op_depth = stats.depth
        return out

    def insert(self, key: int) -> None:
        """Insert key; duplicates are a no-op."""
        self._check_key(key)
        if not self._run(self._root.member, key):
            self._run(self._root.insert, key)
            self._size += 1

    def member(self, key: int) -> bool:
        self._check_key(key)
        return self._run(self._root.member, key)

    def successor(self, key: int) -> int | None:
        """Smallest member strictly greater than key, or None."""
        self._check_key(key)
        return self._run(self._root.successor, key)

    def predecessor(self, key: int) -> int | None:
        """Largest member strictly smaller than key, or None."""
        self._check_key(key)
        return self._run(self._root.predecessor, key)

    @property
    def min(self) -> int | None:
        return self._root.min

    @property
    def max(self) -> int | None:
        return self._root.max

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key: int) -> bool:
        return self.member(key)

    def keys(self) -> list[int]:
        """All members in ascending order (walks successors)."""
        out: list[int] = []
        current = self._root.min
        while current is not None:
            out.append(current)
            current = self.successor(current)
        return out
