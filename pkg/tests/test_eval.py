import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdhash.codec import CodeBook, HashCode, pack_bits
from pdhash.evaluation import (
    NoRelevantItems,
    average_precision,
    evaluate,
    parse_keyvalue,
    precision_at_k,
)
from pdhash.numerics import SplitMix64
from pdhash.oracle import ideal_code, sample_family


def ap_reference(rel):
    """Textbook AP: mean precision at each relevant rank."""
    hits, total = 0, 0.0
    for rank, r in enumerate(rel, start=1):
        if r:
            hits += 1
            total += hits / rank
    return total / hits


def test_average_precision_examples():
    assert average_precision([1, 0, 1], 1) == pytest.approx(0.8333333333333334, abs=1e-15)
    assert average_precision([3, 3, 3], 3) == 1.0
    assert average_precision([0] * 9 + [1], 1) == pytest.approx(0.1)
    late = average_precision([0, 0, 0, 1, 1], 1)
    assert 0 < late < 0.5
    with pytest.raises(NoRelevantItems):
        average_precision([0, 0], 1)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=60).filter(any))
def test_average_precision_matches_reference(rel):
    ap = average_precision(rel, 1)
    assert ap == pytest.approx(ap_reference(rel), abs=1e-12)
    assert 0.0 < ap <= 1.0


def test_precision_at_k_examples():
    assert precision_at_k([1, 0, 1, 0], 1, 2) == 0.5
    assert precision_at_k([1, 0], 1, 1) == 1.0
    assert precision_at_k([1, 1, 0], 1, 10) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        precision_at_k([1], 1, 0)


def random_book(rng, count, n, n_classes, first_id=0):
    labels = np.arange(count) % n_classes
    return CodeBook(n, np.arange(first_id, first_id + count), labels, pack_bits(rng.bits((count, n))))


def test_random_codes_score_chance():
    rng = SplitMix64(31)
    gallery = random_book(rng, 10_000, 48, 10)
    queries = random_book(rng, 300, 48, 10)
    report = evaluate(gallery, queries, [100, 1000])
    assert 0.09 <= report.map <= 0.11
    assert report.n_queries == 300 and report.n_skipped == 0


def test_ideal_codes_score_one():
    fam = sample_family(SplitMix64(2), 10, 24)
    codes = [ideal_code(fam, c) for c in range(10)]
    assert all(codes[i] != codes[j] for i in range(10) for j in range(i))
    labels = np.repeat(np.arange(10), 20)
    gallery = CodeBook.from_codes([(i, int(lbl), codes[lbl]) for i, lbl in enumerate(labels)])
    report = evaluate(gallery, [(c, codes[c]) for c in range(10)], [20, 40])
    assert report.map == 1.0
    assert report.precision_at_k == {20: 1.0, 40: 0.5}


def test_skipped_queries_and_all_skipped():
    gallery = CodeBook.from_codes([(0, 0, HashCode.from_bits([0, 0])), (1, 0, HashCode.from_bits([1, 1]))])
    q0 = HashCode.from_bits([0, 0])
    report = evaluate(gallery, [(0, q0), (5, q0)], [1])
    assert report.n_skipped == 1 and report.n_queries == 2
    assert report.map == 1.0
    with pytest.raises(ValueError, match="skipped"):
        evaluate(gallery, [(5, q0)], [1])
    with pytest.raises(ValueError, match="mismatch"):
        evaluate(gallery, [(0, HashCode.from_bits([0]))], [1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_gallery_order_invariance(seed):
    rng = SplitMix64(seed)
    count, n = 60, 6
    bits = rng.bits((count, n))
    labels = rng.integers(4, count)
    ids = np.arange(count)
    perm = np.argsort(rng.uniform(count))
    a = CodeBook(n, ids, labels, pack_bits(bits))
    b = CodeBook(n, ids[perm], labels[perm], pack_bits(bits[perm]))
    queries = random_book(rng, 10, n, 4)
    ra, rb = evaluate(a, queries, [5, 20]), evaluate(b, queries, [5, 20])
    assert ra.to_keyvalue() == rb.to_keyvalue()
    assert 0.0 <= ra.map <= 1.0
    assert all(0.0 <= v <= 1.0 for v in ra.precision_at_k.values())


def test_report_formats():
    rng = SplitMix64(1)
    report = evaluate(random_book(rng, 50, 8, 5), random_book(rng, 10, 8, 5), [10, 5])
    kv = parse_keyvalue(report.to_keyvalue())
    assert list(kv) == ["map", "p_at_5", "p_at_10", "n_queries", "n_skipped"]
    assert float(kv["map"]) == report.map
    assert "precision@10" in report.to_table()
