"""Window statistics, the exact merge, and the streaming queue."""

import numpy as np
import pytest

from infomargin.errors import InputError
from infomargin.stats import (
    EmbeddingQueue,
    EmbeddingRecord,
    EpochAccumulator,
    LocalStats,
    compute_local_stats,
    epoch_finalize,
    global_stats_from_json,
    global_stats_to_json,
    local_stats_from_arrays,
    merge_stats,
)


def records(X, categories):
    return [EmbeddingRecord(category=int(c), vector=v) for c, v in zip(categories, X)]


def two_pass_reference(X):
    """Textbook mean / population covariance in 80-bit extended precision."""
    Xl = np.asarray(X, dtype=np.longdouble)
    mean = Xl.mean(axis=0)
    centered = Xl - mean
    cov = centered.T @ centered / Xl.shape[0]
    return np.asarray(mean, dtype=np.float64), np.asarray(cov, dtype=np.float64)


def rel_frobenius(a, b):
    scale = max(np.linalg.norm(b), 1e-30)
    return np.linalg.norm(a - b) / scale


# ---------------------------------------------------------------- records


def test_record_rejects_negative_category():
    with pytest.raises(InputError):
        EmbeddingRecord(category=-1, vector=np.zeros(3))


def test_record_rejects_non_finite_vector():
    with pytest.raises(InputError):
        EmbeddingRecord(category=0, vector=np.array([1.0, np.nan]))


# ---------------------------------------------------------- local statistics


def test_single_record_gives_zero_covariance():
    batch = records(np.array([[2.0, -1.0, 3.0]]), [4])
    (ls,) = compute_local_stats(batch)
    assert ls.category == 4
    assert ls.count == 1
    assert np.array_equal(ls.mean, np.array([2.0, -1.0, 3.0]))
    assert np.array_equal(ls.cov, np.zeros((3, 3)))


def test_pair_of_opposite_scalars_has_unit_variance():
    # Population variance of {-1, +1}: mean 0, E[x^2] - mean^2 = 1.
    batch = records(np.array([[-1.0], [1.0]]), [0, 0])
    (ls,) = compute_local_stats(batch)
    assert ls.count == 2
    assert np.array_equal(ls.mean, np.array([0.0]))
    assert np.array_equal(ls.cov, np.array([[1.0]]))


def test_local_stats_match_extended_precision_reference():
    rng = np.random.default_rng(71)
    X = rng.normal(size=(5, 2)) * 3.0 + 1.5
    (ls,) = compute_local_stats(records(X, [7] * 5))
    mean_ref, cov_ref = two_pass_reference(X)
    assert np.allclose(ls.mean, mean_ref, rtol=1e-12, atol=1e-15)
    assert rel_frobenius(ls.cov, cov_ref) < 1e-12


def test_local_stats_split_by_category_sorted():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(7, 3))
    cats = [5, 1, 5, 1, 1, 9, 5]
    out = compute_local_stats(records(X, cats))
    assert [ls.category for ls in out] == [1, 5, 9]
    assert [ls.count for ls in out] == [3, 3, 1]
    for ls in out:
        rows = X[np.asarray(cats) == ls.category]
        mean_ref, cov_ref = two_pass_reference(rows)
        assert np.allclose(ls.mean, mean_ref, rtol=1e-12, atol=1e-15)
        assert np.allclose(ls.cov, cov_ref, rtol=1e-12, atol=1e-15)


def test_local_stats_covariance_is_symmetric_psd():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 6)) @ np.diag([5.0, 2.0, 1.0, 0.5, 0.1, 0.01])
    (ls,) = compute_local_stats(records(X, [0] * 40))
    assert np.array_equal(ls.cov, ls.cov.T)
    assert np.linalg.eigvalsh(ls.cov).min() > -1e-12


def test_empty_batch_rejected():
    with pytest.raises(InputError):
        compute_local_stats([])


def test_mixed_dimension_batch_rejected():
    batch = [
        EmbeddingRecord(category=0, vector=np.zeros(3)),
        EmbeddingRecord(category=0, vector=np.zeros(4)),
    ]
    with pytest.raises(InputError):
        compute_local_stats(batch)


def test_array_fast_path_matches_record_path():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(12, 4))
    cats = rng.integers(0, 3, size=12)
    via_arrays = local_stats_from_arrays(X, cats)
    via_records = compute_local_stats(records(X, cats))
    assert len(via_arrays) == len(via_records)
    for a, b in zip(via_arrays, via_records):
        assert a.category == b.category and a.count == b.count
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.cov, b.cov)


# ------------------------------------------------------------------- merge


def test_merge_single_window_is_identity():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(6, 3))
    (ls,) = compute_local_stats(records(X, [2] * 6))
    merged = merge_stats([ls])
    assert merged.total == 6
    assert merged.windows == 1
    assert np.array_equal(merged.mean, ls.mean)
    assert np.allclose(merged.cov, ls.cov, rtol=0, atol=1e-16)


def test_merge_equal_means_averages_covariances():
    # Two windows with identical means: the between-window term vanishes and
    # the pooled covariance is the count-weighted average of the window
    # covariances, (n1*S1 + n2*S2) / (n1 + n2).
    X1 = np.array([[-1.0, 0.0], [1.0, 0.0]])          # mean 0, cov diag(1, 0)
    X2 = np.array([[0.0, -2.0], [0.0, 2.0], [0.0, 0.0], [0.0, 0.0]])  # mean 0, cov diag(0, 2)
    (w1,) = compute_local_stats(records(X1, [0, 0]))
    (w2,) = compute_local_stats(records(X2, [0] * 4))
    merged = merge_stats([w1, w2])
    expected = (2 * w1.cov + 4 * w2.cov) / 6
    assert np.array_equal(merged.mean, np.zeros(2))
    assert np.allclose(merged.cov, expected, rtol=0, atol=1e-15)
    mean_ref, cov_ref = two_pass_reference(np.vstack([X1, X2]))
    assert np.allclose(merged.cov, cov_ref, rtol=0, atol=1e-15)


def test_merge_three_windows_equals_pooled():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(30, 5)) * 2.0 - 0.7
    parts = [X[:4], X[4:17], X[17:]]
    windows = [compute_local_stats(records(part, [1] * len(part)))[0] for part in parts]
    merged = merge_stats(windows)
    mean_ref, cov_ref = two_pass_reference(X)
    assert merged.total == 30
    assert merged.windows == 3
    assert np.allclose(merged.mean, mean_ref, rtol=1e-12, atol=1e-15)
    assert rel_frobenius(merged.cov, cov_ref) < 1e-12


def test_merge_rejects_empty_and_mixed_categories():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(4, 2))
    (a,) = compute_local_stats(records(X[:2], [0, 0]))
    (b,) = compute_local_stats(records(X[2:], [1, 1]))
    with pytest.raises(InputError):
        merge_stats([])
    with pytest.raises(InputError):
        merge_stats([a, b])


def test_merge_result_is_symmetric():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(50, 8)) * rng.uniform(0.1, 10.0, size=8)
    windows = [
        compute_local_stats(records(part, [0] * len(part)))[0]
        for part in np.array_split(X, 4)
    ]
    merged = merge_stats(windows)
    assert np.array_equal(merged.cov, merged.cov.T)


def test_merge_exactness_randomized():
    # Merged statistics must agree with a direct pooled computation for
    # arbitrary window partitions; the merge identity is algebraically exact.
    rng = np.random.default_rng(15)
    for _ in range(30):
        p = int(rng.integers(1, 9))
        n = int(rng.integers(2, 200))
        k = int(rng.integers(1, min(7, n) + 1))
        X = rng.normal(size=(n, p)) * rng.uniform(0.01, 100.0)
        cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else []
        parts = np.split(X, cuts)
        windows = [
            compute_local_stats(records(part, [3] * len(part)))[0]
            for part in parts
            if len(part)
        ]
        merged = merge_stats(windows)
        mean_ref, cov_ref = two_pass_reference(X)
        assert merged.total == n
        assert np.allclose(merged.mean, mean_ref, rtol=1e-10, atol=1e-12)
        assert rel_frobenius(merged.cov, cov_ref) < 1e-10


def test_merge_is_hierarchical():
    # merge(merge(A, B), C) == merge(A, B, C): merging is associative because
    # both sides equal the pooled statistics of the concatenated data.
    rng = np.random.default_rng(16)
    for _ in range(10):
        p = int(rng.integers(1, 6))
        parts = [rng.normal(size=(int(rng.integers(1, 40)), p)) for _ in range(3)]
        wins = [compute_local_stats(records(x, [0] * len(x)))[0] for x in parts]
        ab = merge_stats(wins[:2])
        ab_local = LocalStats(category=0, count=ab.total, mean=ab.mean, cov=ab.cov)
        two_step = merge_stats([ab_local, wins[2]])
        one_step = merge_stats(wins)
        assert two_step.total == one_step.total
        assert np.allclose(two_step.mean, one_step.mean, rtol=1e-10, atol=1e-13)
        assert rel_frobenius(two_step.cov, one_step.cov) < 1e-10


def test_merge_is_permutation_invariant():
    rng = np.random.default_rng(17)
    parts = [rng.normal(size=(int(rng.integers(2, 30)), 4)) for _ in range(5)]
    wins = [compute_local_stats(records(x, [0] * len(x)))[0] for x in parts]
    base = merge_stats(wins)
    for _ in range(4):
        order = rng.permutation(5)
        shuffled = merge_stats([wins[i] for i in order])
        assert shuffled.total == base.total
        assert np.allclose(shuffled.mean, base.mean, rtol=1e-12, atol=1e-15)
        assert rel_frobenius(shuffled.cov, base.cov) < 1e-12


def test_merge_conserves_counts():
    rng = np.random.default_rng(18)
    counts = [int(rng.integers(1, 50)) for _ in range(6)]
    wins = [
        compute_local_stats(records(rng.normal(size=(n, 3)), [0] * n))[0] for n in counts
    ]
    assert merge_stats(wins).total == sum(counts)


# ------------------------------------------------------------------- queue


def test_queue_flag_fires_exactly_at_capacity():
    q = EmbeddingQueue(capacity=3, p=2)
    flags = [q.push(EmbeddingRecord(category=0, vector=np.full(2, float(i)))) for i in range(3)]
    assert flags == [False, False, True]


def test_queue_flag_refires_after_reset():
    q = EmbeddingQueue(capacity=3, p=1)
    flags = [q.push(EmbeddingRecord(category=0, vector=np.array([float(i)]))) for i in range(7)]
    assert flags == [False, False, True, False, False, True, False]
    assert q.inserted_since_snapshot == 1


def test_queue_evicts_oldest_when_full():
    q = EmbeddingQueue(capacity=2, p=1)
    for i in range(3):
        q.push(EmbeddingRecord(category=0, vector=np.array([float(i)])))
    kept = [r.vector[0] for r in q.contents()]
    assert kept == [1.0, 2.0]
    assert len(q) == 2


def test_queue_rejects_dimension_mismatch_and_bad_capacity():
    with pytest.raises(InputError):
        EmbeddingQueue(capacity=0, p=1)
    with pytest.raises(InputError):
        EmbeddingQueue(capacity=2, p=0)
    q = EmbeddingQueue(capacity=2, p=3)
    with pytest.raises(InputError):
        q.push(EmbeddingRecord(category=0, vector=np.zeros(2)))


def test_queue_epoch_counters_reset_but_entries_persist():
    q = EmbeddingQueue(capacity=4, p=1)
    for i in range(3):
        q.push(EmbeddingRecord(category=i, vector=np.array([float(i)])))
    assert q.categories_seen_this_epoch() == {0: 1, 1: 1, 2: 1}
    q.reset_epoch_counters()
    assert q.categories_seen_this_epoch() == {}
    assert q.inserted_since_snapshot == 0
    assert len(q) == 3  # entries survive the epoch boundary


# ----------------------------------------------------------- epoch finalize


def test_five_pushes_capacity_two_makes_three_windows():
    # 5 insertions against capacity 2: snapshots after records {0,1} and
    # {2,3}, plus a final partial window over the current contents {3,4}.
    acc = EpochAccumulator(capacity=2, p=1, keep_window_contents=True)
    for i in range(5):
        acc.add(EmbeddingRecord(category=0, vector=np.array([float(i)])))
    stats = acc.finalize()  # appends the final partial window to the kept records
    kept = sorted(r.vector[0] for r in acc.window_records())
    cs = stats.categories[0]
    assert cs.windows == 3
    assert cs.total == 6  # record 3 is covered by two windows
    assert kept == [0.0, 1.0, 2.0, 3.0, 3.0, 4.0]
    mean_ref, cov_ref = two_pass_reference(np.array(kept).reshape(-1, 1))
    assert np.allclose(cs.mean, mean_ref, rtol=1e-14, atol=1e-15)
    assert np.allclose(cs.cov, cov_ref, rtol=1e-14, atol=1e-15)


def test_exact_boundary_stream_is_duplicate_free():
    # When the stream length equals the capacity the final snapshot would
    # repeat the boundary snapshot verbatim; it is skipped, so the merged
    # output equals a direct full-data computation.
    rng = np.random.default_rng(19)
    X = rng.normal(size=(4, 3))
    acc = EpochAccumulator(capacity=4, p=3)
    for row in X:
        acc.add(EmbeddingRecord(category=1, vector=row))
    stats = acc.finalize()
    cs = stats.categories[1]
    mean_ref, cov_ref = two_pass_reference(X)
    assert cs.windows == 1
    assert cs.total == 4
    assert np.allclose(cs.mean, mean_ref, rtol=1e-14, atol=1e-15)
    assert np.allclose(cs.cov, cov_ref, rtol=1e-14, atol=1e-15)


def test_window_count_floor_formula_when_not_divisible():
    # N insertions against capacity d with d not dividing N produce
    # floor(N/d) + 1 windows.
    for n, d, expected in [(10, 3, 4), (7, 2, 4), (5, 4, 2), (3, 5, 1)]:
        acc = EpochAccumulator(capacity=d, p=1)
        for i in range(n):
            acc.add(EmbeddingRecord(category=0, vector=np.array([float(i)])))
        assert acc.finalize().categories[0].windows == expected, (n, d)


def test_finalize_merge_matches_window_multiset():
    # The merged statistics equal a direct computation over the multiset of
    # records covered by the snapshot windows (overlap included).
    rng = np.random.default_rng(20)
    X = rng.normal(size=(10, 2))
    acc = EpochAccumulator(capacity=3, p=2, keep_window_contents=True)
    for row in X:
        acc.add(EmbeddingRecord(category=0, vector=row))
    stats = acc.finalize()  # appends the final partial window to the kept records
    kept = np.stack([r.vector for r in acc.window_records()])
    cs = stats.categories[0]
    # Snapshots cover {0,1,2}, {3,4,5}, {6,7,8}; the final partial window
    # holds the current contents {7,8,9}, so records 7 and 8 count twice.
    assert cs.total == kept.shape[0] == 12
    mean_ref, cov_ref = two_pass_reference(kept)
    assert np.allclose(cs.mean, mean_ref, rtol=1e-12, atol=1e-15)
    assert rel_frobenius(cs.cov, cov_ref) < 1e-12


def test_finalize_flags_absent_expected_category():
    acc = EpochAccumulator(capacity=8, p=1)
    for i in range(3):
        acc.add(EmbeddingRecord(category=0, vector=np.array([float(i)])))
    stats = acc.finalize(expected_categories=[0, 1])
    assert set(stats.categories) == {0}
    assert stats.absent == (1,)


def test_stale_entries_of_unseen_category_are_ignored():
    # Epoch 1 fills the queue with categories 0 and 1 exactly to capacity
    # (so no partial window is pending). Epoch 2 pushes one new category-0
    # record; its final window still physically contains stale category-1
    # entries, but category 1 saw no insertions this epoch, so it is
    # reported absent rather than resurrected from leftovers.
    acc = EpochAccumulator(capacity=4, p=1)
    epoch1 = [(0, 1.0), (0, 2.0), (1, 10.0), (1, 12.0)]
    for cat, v in epoch1:
        acc.add(EmbeddingRecord(category=cat, vector=np.array([v])))
    first = acc.finalize(expected_categories=[0, 1])
    assert set(first.categories) == {0, 1}
    acc.add(EmbeddingRecord(category=0, vector=np.array([3.0])))
    second = acc.finalize(expected_categories=[0, 1])
    assert set(second.categories) == {0}
    assert second.absent == (1,)
    # The surviving category is computed over the full final window, which
    # legitimately still holds its own older entries: {2.0, 3.0}.
    cs = second.categories[0]
    assert cs.total == 2
    assert np.allclose(cs.mean, [2.5])


def test_epoch_finalize_direct_call_resets_counters():
    q = EmbeddingQueue(capacity=5, p=1)
    local = []
    for i in range(7):
        if q.push(EmbeddingRecord(category=0, vector=np.array([float(i)]))):
            local.extend(compute_local_stats(q.contents()))
    stats = epoch_finalize(q, local)
    assert stats.categories[0].windows == 2
    assert q.inserted_since_snapshot == 0
    assert q.categories_seen_this_epoch() == {}


# -------------------------------------------------------------------- json


def test_global_stats_json_round_trip():
    rng = np.random.default_rng(21)
    acc = EpochAccumulator(capacity=5, p=3)
    for i in range(12):
        acc.add(EmbeddingRecord(category=i % 2, vector=rng.normal(size=3)))
    stats = acc.finalize()
    doc = global_stats_to_json(stats)
    back = global_stats_from_json(doc)
    assert back.p == stats.p
    assert set(back.categories) == set(stats.categories)
    for cat, cs in stats.categories.items():
        bs = back.categories[cat]
        assert bs.total == cs.total
        assert np.array_equal(bs.mean, cs.mean)
        assert np.array_equal(bs.cov, cs.cov)


def test_global_stats_from_json_rejects_malformed():
    with pytest.raises(InputError):
        global_stats_from_json({"categories": []})
    with pytest.raises(InputError):
        global_stats_from_json({"p": 2, "categories": [{"id": 0}]})
    with pytest.raises(InputError):
        global_stats_from_json(
            {"p": 2, "categories": [{"id": 0, "count": 1, "mean": [0.0], "cov_row_major": [0.0] * 4}]}
        )
