import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setloc import autograd as ag
from setloc.data import Scan, default_world, generate_synthetic
from setloc.encoding import (
    EmbeddingTable,
    MinMaxScaler,
    build_vocabulary,
    encode_fixed_vector,
    encode_sequence,
    encode_set,
    normalize_rssi,
    sequence_order,
)


def _scan(*dets):
    return Scan(list(dets), (0.0, 0.0))


def test_vocabulary_union_in_lexicographic_order():
    v = build_vocabulary([_scan(("aa", -40)), _scan(("bb", -60), ("aa", -70))])
    assert v.bssid_to_index == {"aa": 0, "bb": 1}
    assert v.size == 2


def test_vocabulary_canonicalizes_case():
    v = build_vocabulary([_scan(("AA:BB", -40)), _scan(("aa:bb", -60))])
    assert v.bssid_to_index == {"aa:bb": 0}


def test_empty_vocabulary_raises():
    with pytest.raises(ValueError):
        build_vocabulary([])
    with pytest.raises(ValueError):
        build_vocabulary([_scan()])


def test_vocabulary_size_matches_single_pass_dedup():
    # 3,606 scans, the size of a large surveyed floor
    scans = generate_synthetic(default_world("E2"), 3606, seed=4)
    seen, count = {}, 0
    for s in scans:
        for b, _ in s.detections:
            if b not in seen:
                seen[b] = True
                count += 1
    v = build_vocabulary(scans)
    assert v.size == count
    assert sorted(v.bssid_to_index.values()) == list(range(count))


def test_single_detection_row():
    v = build_vocabulary([_scan(("aa", -40))])
    emb = EmbeddingTable(v.size, 4, rng=np.random.default_rng(0))
    rows = encode_set(_scan(("aa", -40.0)), v, emb)
    assert rows.shape == (1, 5)
    assert rows.data[0, -1] == pytest.approx(1.0)
    np.testing.assert_array_equal(rows.data[0, :4], emb.weights.data[0])


def test_reversed_detections_give_same_row_multiset():
    scans = generate_synthetic(default_world("E1"), 3, seed=0)
    v = build_vocabulary(scans)
    emb = EmbeddingTable(v.size, 8)
    s = scans[0]
    a = encode_set(s, v, emb).data
    b = encode_set(Scan(s.detections[::-1], s.position), v, emb).data
    key = lambda m: sorted(map(tuple, m))  # noqa: E731
    assert key(a) == key(b)


def test_unseen_bssid_fallback_is_deterministic():
    v = build_vocabulary([_scan(("aa", -40))])
    emb = EmbeddingTable(v.size, 4)
    s = _scan(("zz:unknown", -55.0), ("aa", -40.0))
    a = encode_set(s, v, emb, fallback_rng_seed=3).data
    b = encode_set(s, v, emb, fallback_rng_seed=3).data
    assert a.tobytes() == b.tobytes()
    assert np.all(np.abs(a[0, :4]) <= 0.1)
    c = encode_set(s, v, emb, fallback_rng_seed=4).data
    assert not np.array_equal(a[0], c[0])


def test_fallback_rows_carry_no_gradient_into_table():
    v = build_vocabulary([_scan(("aa", -40))])
    emb = EmbeddingTable(v.size, 4)
    rows = encode_set(_scan(("zz", -55.0)), v, emb)
    ag.reduce_sum(rows).backward()
    np.testing.assert_array_equal(emb.weights.grad, 0.0)


def test_empty_scan_rejected():
    v = build_vocabulary([_scan(("aa", -40))])
    emb = EmbeddingTable(v.size, 4)
    with pytest.raises(ValueError):
        encode_set(_scan(), v, emb)
    with pytest.raises(ValueError):
        encode_sequence(_scan(), v, emb)


def test_sequence_strongest_first():
    assert [b for b, _ in sequence_order([("aa", -70.0), ("bb", -40.0)])] == ["bb", "aa"]


def test_sequence_ties_break_lexicographically():
    assert [b for b, _ in sequence_order([("bb", -50.0), ("aa", -50.0)])] == ["aa", "bb"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a1", "b2", "c3", "d4", "e5"]), st.integers(-100, -30)),
                min_size=1, max_size=12))
def test_sequence_matches_reference_stable_sort(dets):
    dets = [(b, float(r)) for b, r in dets]
    # two stable passes: secondary key first, then primary
    ref = sorted(dets, key=lambda d: d[0])
    ref = sorted(ref, key=lambda d: d[1], reverse=True)
    assert sequence_order(dets) == ref
    rssi = [r for _, r in sequence_order(dets)]
    assert all(a >= b for a, b in zip(rssi, rssi[1:]))


def test_sequence_rows_follow_order():
    v = build_vocabulary([_scan(("aa", -40), ("bb", -50))])
    emb = EmbeddingTable(v.size, 3)
    rows = encode_sequence(_scan(("aa", -70.0), ("bb", -40.0)), v, emb).data
    np.testing.assert_array_equal(rows[0, :3], emb.weights.data[1])
    np.testing.assert_allclose(rows[:, -1], normalize_rssi([-40.0, -70.0]))


def test_fixed_vector_fills_minus_100():
    v = build_vocabulary([_scan(("aa", -40), ("bb", -60))])
    np.testing.assert_array_equal(encode_fixed_vector(_scan(("aa", -40.0)), v), [-40.0, -100.0])
    np.testing.assert_array_equal(encode_fixed_vector(_scan(), v), [-100.0, -100.0])
    np.testing.assert_array_equal(encode_fixed_vector(_scan(("cc", -30.0)), v), [-100.0, -100.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c", "x", "y"]), st.integers(-99, 0)), max_size=8))
def test_fixed_vector_values_come_from_scan(dets):
    v = build_vocabulary([_scan(("a", -1), ("b", -1), ("c", -1))])
    s = _scan(*[(b, float(r)) for b, r in dets])
    allowed = {-100.0} | {r for _, r in s.detections}
    assert set(encode_fixed_vector(s, v)) <= allowed


def test_minmax_scaler():
    sc = MinMaxScaler.fit(np.array([[-100.0, -40.0], [-70.0, -100.0]]))
    np.testing.assert_allclose(sc.transform([-100.0, -40.0, -70.0]), [0.0, 1.0, 0.5])
