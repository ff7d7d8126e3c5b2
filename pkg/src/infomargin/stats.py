"""Per-category embedding statistics over bounded windows, merged exactly.

A fixed-capacity FIFO queue collects instance embeddings during an epoch.
Every time `capacity` new embeddings have arrived, the caller snapshots
per-category (count, mean, covariance) triples over the current queue
contents; at epoch end a final snapshot is taken over whatever the queue
holds and all snapshots are merged into exact dataset-level statistics.

Covariances are population-normalized (divisor = count) and accumulated in
float64 regardless of input precision; the merge is exact in exact
arithmetic for any set of windows. LocalStats values are immutable once
produced; `merge_stats` is pure and order-insensitive, so merging may be
parallelized or tree-reduced across windows and categories.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "EmbeddingRecord",
    "LocalStats",
    "CategoryStats",
    "GlobalStats",
    "EmbeddingQueue",
    "EpochAccumulator",
    "compute_local_stats",
    "local_stats_from_arrays",
    "merge_stats",
    "epoch_finalize",
    "global_stats_to_json",
    "global_stats_from_json",
]


@dataclass(frozen=True)
class EmbeddingRecord:
    """One instance embedding tagged with its category id."""

    category: int
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "vector", vec)
        if self.category < 0:
            raise InputError(f"category must be >= 0, got {self.category}")
        if not np.all(np.isfinite(vec)):
            raise InputError(f"non-finite coordinate in embedding for category {self.category}")


@dataclass(frozen=True)
class LocalStats:
    """Count, mean and population covariance of one category in one window."""

    category: int
    count: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class CategoryStats:
    """Dataset-level statistics for one category after merging windows."""

    total: int
    mean: np.ndarray
    cov: np.ndarray
    windows: int = 1


@dataclass
class GlobalStats:
    """Merged per-category statistics for one epoch.

    `absent` lists expected categories that saw zero records this epoch;
    downstream consumers keep their previous information amounts.
    """

    p: int
    categories: dict[int, CategoryStats] = field(default_factory=dict)
    absent: tuple[int, ...] = ()


def _as_matrix(batch: Sequence[EmbeddingRecord]) -> tuple[np.ndarray, np.ndarray]:
    cats = np.fromiter((r.category for r in batch), dtype=np.int64, count=len(batch))
    X = np.stack([r.vector for r in batch]).astype(np.float64, copy=False)
    return X, cats


def local_stats_from_arrays(X: np.ndarray, categories: np.ndarray) -> list[LocalStats]:
    """Array fast path for `compute_local_stats`.

    Parameters
    ----------
    X : (n, p) float64 array of embeddings.
    categories : (n,) integer array of category ids.

    Returns
    -------
    One LocalStats per distinct category, ordered by category id.
    """
    X = np.asarray(X, dtype=np.float64)
    categories = np.asarray(categories)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError(f"expected a nonempty (n, p) embedding matrix, got shape {X.shape}")
    if categories.shape != (X.shape[0],):
        raise InputError(
            f"categories shape {categories.shape} does not match {X.shape[0]} embeddings"
        )
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite coordinates in embedding batch")
    out = []
    for cat in np.unique(categories):
        rows = X[categories == cat]
        n = rows.shape[0]
        mean = rows.mean(axis=0)
        centered = rows - mean
        cov = centered.T @ centered / n
        cov = 0.5 * (cov + cov.T)
        out.append(LocalStats(category=int(cat), count=n, mean=mean, cov=cov))
    return out


def compute_local_stats(batch: Sequence[EmbeddingRecord]) -> list[LocalStats]:
    """Per-category mean and population covariance of one window.

    The covariance uses divisor n (population form), so a single-record
    category yields the zero matrix.
    """
    if len(batch) == 0:
        raise InputError("cannot compute local statistics of an empty batch")
    p = batch[0].vector.shape[0]
    for r in batch:
        if r.vector.shape[0] != p:
            raise InputError(
                f"embedding dimension mismatch: expected {p}, got {r.vector.shape[0]} "
                f"(category {r.category})"
            )
    X, cats = _as_matrix(batch)
    return local_stats_from_arrays(X, cats)


def merge_stats(windows: Sequence[LocalStats]) -> CategoryStats:
    """Merge same-category window statistics into exact global statistics.

    With window counts n_k, means mu_k and covariances S_k, the merged
    mean is the count-weighted mean and the merged covariance is

        S = (1/N) * ( sum_k n_k S_k + sum_k n_k (mu_k - mu)(mu_k - mu)^T )

    which equals the population covariance of the pooled data exactly in
    exact arithmetic, for any partition and any window order.
    """
    if len(windows) == 0:
        raise InputError("cannot merge an empty window list")
    cat = windows[0].category
    p = windows[0].mean.shape[0]
    for w in windows:
        if w.category != cat:
            raise InputError(f"mixed categories in merge: {cat} and {w.category}")
        if w.mean.shape[0] != p or w.cov.shape != (p, p):
            raise InputError(
                f"dimension mismatch in merge for category {cat}: "
                f"expected p={p}, got mean {w.mean.shape}, cov {w.cov.shape}"
            )
        if w.count < 1:
            raise InputError(f"window count must be >= 1, got {w.count}")
    total = sum(w.count for w in windows)
    mean = np.zeros(p, dtype=np.float64)
    for w in windows:
        mean += w.count * w.mean
    mean /= total
    cov = np.zeros((p, p), dtype=np.float64)
    for w in windows:
        d = w.mean - mean
        cov += w.count * w.cov
        cov += w.count * np.outer(d, d)
    cov /= total
    cov = 0.5 * (cov + cov.T)
    return CategoryStats(total=total, mean=mean, cov=cov, windows=len(windows))


class EmbeddingQueue:
    """Fixed-capacity FIFO buffer of embeddings with a snapshot counter.

    Single-writer. `push` returns True exactly when `capacity` records have
    been inserted since the last snapshot (the counter then resets); the
    caller is expected to snapshot per-category local statistics over the
    current contents at that point. Entries persist across epochs; only the
    counters reset at epoch end.
    """

    def __init__(self, capacity: int, p: int):
        if capacity < 1:
            raise InputError(f"queue capacity must be >= 1, got {capacity}")
        if p < 1:
            raise InputError(f"embedding dimension must be >= 1, got {p}")
        self.capacity = capacity
        self.p = p
        self._entries: deque[EmbeddingRecord] = deque(maxlen=capacity)
        self.inserted_since_snapshot = 0
        self._seen_this_epoch: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, record: EmbeddingRecord) -> bool:
        """Append a record (evicting the oldest when full); True means snapshot now."""
        if record.vector.shape[0] != self.p:
            raise InputError(
                f"embedding dimension mismatch: queue expects p={self.p}, "
                f"got {record.vector.shape[0]}"
            )
        self._entries.append(record)
        self.inserted_since_snapshot += 1
        self._seen_this_epoch[record.category] = self._seen_this_epoch.get(record.category, 0) + 1
        if self.inserted_since_snapshot == self.capacity:
            self.inserted_since_snapshot = 0
            return True
        return False

    def contents(self) -> list[EmbeddingRecord]:
        """Current entries, oldest first."""
        return list(self._entries)

    def categories_seen_this_epoch(self) -> dict[int, int]:
        return dict(self._seen_this_epoch)

    def reset_epoch_counters(self) -> None:
        self.inserted_since_snapshot = 0
        self._seen_this_epoch = {}


def epoch_finalize(
    queue: EmbeddingQueue,
    accumulated: Iterable[LocalStats],
    expected_categories: Iterable[int] | None = None,
) -> GlobalStats:
    """Close out an epoch: final snapshot, per-category merge, counter reset.

    A final window is snapshotted over the current queue contents (even
    when the queue is not full) whenever at least one record arrived since
    the last snapshot, so a stream of N insertions against capacity d
    produces floor(N/d) + 1 windows when d does not divide N. When the
    stream ends exactly on a snapshot boundary the final window would
    duplicate the previous one verbatim and is skipped, keeping the merge
    free of double counting (N = d yields statistics identical to a direct
    full-data computation). Categories with zero insertions this epoch are
    excluded from the output and, when part of `expected_categories`,
    reported in `GlobalStats.absent`; any of their stale entries still
    sitting in the queue are ignored.
    """
    seen = queue.categories_seen_this_epoch()
    per_category: dict[int, list[LocalStats]] = {}
    for ls in accumulated:
        per_category.setdefault(ls.category, []).append(ls)
    if queue.inserted_since_snapshot > 0:
        for ls in compute_local_stats(queue.contents()):
            per_category.setdefault(ls.category, []).append(ls)
    merged = {
        cat: merge_stats(windows)
        for cat, windows in sorted(per_category.items())
        if cat in seen
    }
    absent: tuple[int, ...] = ()
    if expected_categories is not None:
        absent = tuple(c for c in sorted(expected_categories) if c not in merged)
    queue.reset_epoch_counters()
    return GlobalStats(p=queue.p, categories=merged, absent=absent)


class EpochAccumulator:
    """Drives the queue/snapshot/merge cycle for one stream of records.

    This is the exact update loop the trainer runs; the CLI `stats` command
    uses it too so both paths share one implementation. When
    `keep_window_contents` is set, the raw embeddings covered by every
    snapshot window are retained so callers can cross-check the merged
    statistics against a direct pooled computation.
    """

    def __init__(self, capacity: int, p: int, keep_window_contents: bool = False):
        self.queue = EmbeddingQueue(capacity=capacity, p=p)
        self._local: list[LocalStats] = []
        self._keep = keep_window_contents
        self._window_records: list[EmbeddingRecord] = []

    def add(self, record: EmbeddingRecord) -> None:
        if self.queue.push(record):
            self._snapshot()

    def _snapshot(self) -> None:
        contents = self.queue.contents()
        self._local.extend(compute_local_stats(contents))
        if self._keep:
            self._window_records.extend(contents)

    def finalize(self, expected_categories: Iterable[int] | None = None) -> GlobalStats:
        if self._keep and self.queue.inserted_since_snapshot > 0:
            self._window_records.extend(self.queue.contents())
        stats = epoch_finalize(self.queue, self._local, expected_categories)
        self._local = []
        return stats

    def window_records(self) -> list[EmbeddingRecord]:
        """All records covered by snapshot windows so far (with multiplicity)."""
        return list(self._window_records)

    def reset_window_records(self) -> None:
        self._window_records = []


def global_stats_to_json(stats: GlobalStats) -> dict:
    """JSON-ready form: {"p": ..., "categories": [{id, count, mean, cov_row_major}]}."""
    return {
        "p": stats.p,
        "categories": [
            {
                "id": cat,
                "count": cs.total,
                "mean": [float(v) for v in cs.mean],
                "cov_row_major": [float(v) for v in cs.cov.reshape(-1)],
            }
            for cat, cs in sorted(stats.categories.items())
        ],
    }


def global_stats_from_json(doc: dict) -> GlobalStats:
    try:
        p = int(doc["p"])
        entries = doc["categories"]
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed statistics document: missing {exc}") from exc
    categories: dict[int, CategoryStats] = {}
    for entry in entries:
        try:
            cat = int(entry["id"])
            count = int(entry["count"])
            mean = np.asarray(entry["mean"], dtype=np.float64)
            cov = np.asarray(entry["cov_row_major"], dtype=np.float64).reshape(p, p)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed statistics entry: {exc}") from exc
        if mean.shape != (p,):
            raise InputError(
                f"category {cat}: mean length {mean.shape[0]} does not match p={p}"
            )
        categories[cat] = CategoryStats(total=count, mean=mean, cov=cov)
    return GlobalStats(p=p, categories=categories)
