import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuffledp.core import (
    Dataset,
    DomainError,
    ExactOracle,
    FormatError,
    RandomStream,
    Role,
    ShuffledBatch,
    SparsityError,
    VectorOracle,
    _FreshStreams,
    derive_seed,
    exact_histogram,
    pad_domain,
    read_dataset,
    read_points,
    shuffle,
    write_dataset,
    write_points,
)
from shuffledp.countmin import CMParams, HashFamily, analyze_cm, randomize_cm
from shuffledp.hadamard import HadParams, analyze_had_fast, randomize_had


def test_histogram_empty():
    assert exact_histogram(Dataset((), 5)).tolist() == [0] * 5


def test_histogram_small():
    ds = Dataset.from_sets([{1}, {1}, {2}], 2)
    assert exact_histogram(ds).tolist() == [2, 1]


def test_histogram_matches_tally():
    rng = np.random.default_rng(0)
    sets = [set(rng.choice(16, size=rng.integers(0, 4), replace=False) + 1) for _ in range(100)]
    ds = Dataset.from_sets(sets, 16, 3)
    tally = [0] * 16
    for s in sets:
        for x in s:
            tally[x - 1] += 1
    assert exact_histogram(ds).tolist() == tally
    assert exact_histogram(ds).sum() == sum(len(s) for s in sets)


@given(st.lists(st.integers(1, 12), max_size=40), st.lists(st.integers(1, 12), max_size=40))
def test_histogram_linear(a, b):
    da, db = Dataset.from_elements(a, 12), Dataset.from_elements(b, 12)
    assert np.array_equal(exact_histogram(da + db), exact_histogram(da) + exact_histogram(db))


def test_dataset_validation():
    with pytest.raises(DomainError):
        Dataset.from_sets([{0}], 4)
    with pytest.raises(DomainError):
        Dataset.from_sets([{5}], 4)
    with pytest.raises(SparsityError):
        Dataset.from_sets([{1, 2}], 4, k=1)


@pytest.mark.parametrize("B,want", [(8, 8), (5, 8), (1, 1), (2, 2), (1025, 2048)])
def test_pad_domain(B, want):
    assert pad_domain(B) == want


def test_pad_domain_rejects_zero():
    with pytest.raises(DomainError):
        pad_domain(0)


def test_shuffle_union():
    b = shuffle([[7], [9]], RandomStream(1, 0, Role.SHUFFLE))
    assert b.multiset() == {(7,): 1, (9,): 1}
    assert b.user_counts.tolist() == [1, 1]


def test_shuffle_multiplicity():
    b = shuffle([[4, 4], []], RandomStream(1, 0, Role.SHUFFLE))
    assert b.multiset() == {(4,): 2}
    assert b.user_counts.tolist() == [2, 0]


def test_shuffle_is_permutation():
    msgs = [np.arange(i * 5, i * 5 + 5).reshape(-1, 1) for i in range(20)]
    b = shuffle(msgs, RandomStream(3, 0, Role.SHUFFLE))
    assert sorted(b.messages[:, 0].tolist()) == list(range(100))
    assert b.messages[:, 0].tolist() != list(range(100))


def test_shuffle_width_mismatch():
    with pytest.raises(FormatError):
        shuffle([np.zeros((1, 2)), np.zeros((1, 3))], None)


def test_shuffle_positions_uniform():
    # first message lands in each of 4 slots about equally often
    hits = np.zeros(4)
    for s in range(4000):
        b = shuffle([[0], [1], [2], [3]], RandomStream(s, 0, Role.SHUFFLE))
        hits[int(np.nonzero(b.messages[:, 0] == 0)[0][0])] += 1
    assert np.all(np.abs(hits - 1000) < 4 * np.sqrt(4000 * 0.25 * 0.75))


def test_analyzers_ignore_order():
    p = HadParams(6, 8, 3, 2)
    ds = Dataset.from_elements([1, 2, 2, 5, 8, 3], 8)
    base = RandomStream(11)
    per = [randomize_had(u, p, base.for_user(i)) for i, u in enumerate(ds.users)]
    plain = analyze_had_fast(shuffle(per, None), p)
    for s in range(3):
        assert np.array_equal(analyze_had_fast(shuffle(per, RandomStream(s, 0, Role.SHUFFLE)), p), plain)
    cp = CMParams(6, 8, 3, 12, 0.3)
    fam = HashFamily.from_seed(2, 3, 12)
    per = [randomize_cm(u, cp, fam, base.for_user(i)) for i, u in enumerate(ds.users)]
    plain = analyze_cm(shuffle(per, None, width=2), cp).table
    for s in range(3):
        assert np.array_equal(analyze_cm(shuffle(per, RandomStream(s, 0, Role.SHUFFLE), width=2), cp).table, plain)


def test_stream_determinism():
    a = RandomStream(5, 3, Role.BLANKET).raw(8)
    b = RandomStream(5, 3, Role.BLANKET).raw(8)
    assert np.array_equal(a, b)


def test_streams_distinct():
    outs = {
        tuple(RandomStream(s, u, r).raw(4).tolist())
        for s in (0, 1)
        for u in (0, 1, 2)
        for r in Role
    }
    assert len(outs) == 2 * 3 * len(Role)


def test_stream_bits_range_and_uniformity():
    x = RandomStream(9).bits(5, 64000)
    assert x.min() >= 0 and x.max() < 32
    c = np.bincount(x, minlength=32)
    assert np.all(np.abs(c - 2000) < 5 * np.sqrt(2000))


def test_fresh_streams_match():
    f = _FreshStreams(42)
    for user in (0, 1, 77):
        for role in (Role.PAYLOAD, Role.BLANKET):
            for nbits in (1, 7, 11, 32):
                assert np.array_equal(f.bits(user, role, nbits, 37), RandomStream(42, user, role).bits(nbits, 37))


def test_derive_seed():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert len({derive_seed(1, i) for i in range(50)} | {derive_seed(2, 0)}) == 51


def test_oracles():
    ds = Dataset.from_elements([1, 1, 3], 3)
    o = ExactOracle(ds)
    assert o.query(1) == 2 and o.query_many([3, 2]).tolist() == [1, 0]
    with pytest.raises(DomainError):
        o.query(4)
    v = VectorOracle(np.array([0.5, 2.0]))
    assert v.query(2) == 2.0
    with pytest.raises(DomainError):
        v.query_many([0])


def test_batch_concat():
    a = ShuffledBatch(np.array([[1, 2]]), np.array([1]))
    b = ShuffledBatch(np.array([[1, 2], [3, 4]]), np.array([2]))
    c = a.concat(b)
    assert c.multiset() == {(1, 2): 2, (3, 4): 1}
    assert c.user_counts.tolist() == [1, 2]


def test_dataset_file_roundtrip(tmp_path):
    ds = Dataset.from_sets([{1, 3}, set(), {2}, set()], 4, 2)
    p = tmp_path / "d.txt"
    write_dataset(ds, p)
    assert read_dataset(p, 4, 2) == ds


def test_dataset_file_errors(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1,1\n")
    with pytest.raises(FormatError):
        read_dataset(p, 4)
    p.write_text("1,x\n")
    with pytest.raises(FormatError):
        read_dataset(p, 4)
    p.write_text("9\n")
    with pytest.raises(DomainError):
        read_dataset(p, 4)


def test_points_file_roundtrip(tmp_path):
    pts = np.array([[1, 2], [4, 4]])
    p = tmp_path / "p.txt"
    write_points(pts, p)
    assert np.array_equal(read_points(p, 2), pts)
    with pytest.raises(FormatError):
        read_points(p, 3)


@settings(max_examples=30)
@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_stream_reproducible_property(seed, user):
    assert np.array_equal(RandomStream(seed, user).bits(13, 9), RandomStream(seed, user).bits(13, 9))
