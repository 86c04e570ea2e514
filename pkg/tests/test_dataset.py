import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftmine import dataset


def test_generate_is_deterministic(tmp_path):
    a = dataset.generate_transactions(tmp_path / "a.ftmd", 100, 1000, (15, 20), 42)
    b = dataset.generate_transactions(tmp_path / "b.ftmd", 100, 1000, (15, 20), 42)
    assert a.checksum() == b.checksum()


def test_forced_length_covers_all_items(tmp_path):
    f = dataset.generate_transactions(tmp_path / "t.ftmd", 10, 5, (5, 5), 1)
    assert all(t == (0, 1, 2, 3, 4) for t in f.read_range(0, 10))


def test_generated_data_has_a_frequent_item(tmp_path):
    f = dataset.generate_transactions(tmp_path / "t.ftmd", 200, 20, (3, 6), 7)
    trans = f.read_range(0, 200)
    counts = [sum(1 for t in trans if i in t) for i in range(20)]
    assert max(counts) >= 0.3 * 200


def test_transactions_sorted_distinct_in_range(tmp_path):
    f = dataset.generate_transactions(tmp_path / "t.ftmd", 300, 50, (1, 9), 3)
    for t in f.read_range(0, 300):
        assert 1 <= len(t) <= 9
        assert list(t) == sorted(set(t))
        assert all(0 <= i < 50 for i in t)


def test_bad_length_range(tmp_path):
    with pytest.raises(dataset.InvalidRange):
        dataset.generate_transactions(tmp_path / "t.ftmd", 5, 4, (2, 6), 0)
    with pytest.raises(dataset.InvalidRange):
        dataset.write_transactions(tmp_path / "t.ftmd", [[0, 9]], 4)


def test_generate_points(tmp_path):
    a = dataset.generate_points(tmp_path / "a.ftmd", 4, 1, 0)
    b = dataset.generate_points(tmp_path / "b.ftmd", 4, 1, 0)
    assert np.array_equal(a.read_points(0, 4), b.read_points(0, 4))
    empty = dataset.generate_points(tmp_path / "e.ftmd", 0, 3, 0)
    assert empty.n_records == 0 and empty.dims == 3
    big = dataset.generate_points(tmp_path / "c.ftmd", 1000, 2, 9).read_points(0, 1000)
    assert np.isfinite(big).all() and big.min() >= -1 and big.max() <= 1


@pytest.mark.parametrize("n,p,sizes", [
    (10, 3, [4, 3, 3]),
    (6, 6, [1] * 6),
    (5, 8, [1, 1, 1, 1, 1, 0, 0, 0]),
])
def test_partition_sizes(n, p, sizes):
    m = dataset.partition(n, p)
    assert m.sizes() == sizes
    assert [s for s, _ in m.ranges] == list(np.cumsum([0] + sizes[:-1]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 500), st.integers(1, 40))
def test_partition_reconstructs_range(n, p):
    m = dataset.partition(n, p)
    covered = [i for s, c in m.ranges for i in range(s, s + c)]
    assert covered == list(range(n))
    assert max(m.sizes()) - min(m.sizes()) <= 1
    for i in range(0, n, max(1, n // 7)):
        s, c = m[m.owner_of(i)]
        assert s <= i < s + c


def test_read_range(tmp_path):
    rng = np.random.default_rng(0)
    trans = [sorted(rng.choice(30, size=int(rng.integers(1, 6)), replace=False).tolist())
             for _ in range(40)]
    f = dataset.write_transactions(tmp_path / "t.ftmd", trans, 30)
    assert [list(t) for t in f.read_range(0, 40)] == trans
    assert f.read_range(7, 0) == []
    m = dataset.partition(f, 4)
    start, count = m[2]
    assert [list(t) for t in f.read_range(start, count)] == trans[start:start + count]
    with pytest.raises(dataset.OutOfBounds):
        f.read_range(38, 5)


def test_read_counters_and_peek(tmp_path):
    f = dataset.write_transactions(tmp_path / "t.ftmd", [[0, 1], [2], [1, 3]], 4)
    f.peek_range(0, 3)
    assert f.stats.reads == 0
    f.read_range(1, 2)
    assert (f.stats.reads, f.stats.records_read) == (1, 2)
    assert f.shard_bytes(0, 3) == 8 + 12 + 12


@pytest.mark.parametrize("count,survivors,sizes", [
    (12, [0, 1, 2], [4, 4, 4]),
    (7, [0, 2, 3], [3, 2, 2]),
])
def test_parallel_read_failed(tmp_path, count, survivors, sizes):
    f = dataset.write_transactions(tmp_path / "t.ftmd", [[i % 5] for i in range(30)], 5)
    slices = dataset.parallel_read_failed(f, (10, count), survivors)
    assert [slices[s][1] for s in survivors] == sizes
    joined = [t for s in survivors for t in f.read_range(*slices[s])]
    assert joined == f.read_range(10, count)


def test_codec_roundtrip():
    trans = [(1, 2, 3), (0,), (4, 9)]
    buf = dataset.encode_transactions(trans)
    assert [tuple(t) for t in dataset.decode_transactions(buf)] == trans
    assert [tuple(t) for t in dataset.decode_transactions(buf, 2)] == trans[:2]
    assert len(buf) == sum(dataset.record_size(t) for t in trans)


def test_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.ftmd"
    p.write_bytes(b"not a dataset at all, really not")
    with pytest.raises(dataset.DatasetError):
        dataset.DatasetFile(p)
