from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from ftmine import fptree
from ftmine.fptree import FPTree, ItemOrder
from ftmine.harness.verify import brute_force_itemsets

from conftest import run_world

A, B, C = 0, 1, 2
EXAMPLE = [[A, B], [B, C], [A, B, C]]

transactions = st.lists(
    st.lists(st.integers(0, 7), min_size=1, max_size=6, unique=True).map(sorted),
    max_size=40)


def order_for(trans, n_items, min_count):
    return ItemOrder.from_counts(fptree.count_local(trans, n_items), min_count)


def mined(trans, n_items, min_count):
    return fptree.mine(fptree.build(trans, order_for(trans, n_items, min_count)), min_count)


def test_count_local():
    assert fptree.count_local(EXAMPLE, 3) == [2, 3, 2]
    assert fptree.count_local([], 3) == [0, 0, 0]
    assert fptree.count_local([[A]] * 5, 1) == [5]


@pytest.mark.parametrize("theta,n,expected", [
    (0.05, 200, 10), (0.1, 200, 20), (0.3, 200, 60), (0.3, 7, 3), (1.0, 9, 9), (0.03, 100, 3),
])
def test_min_support_count(theta, n, expected):
    assert fptree.min_support_count(theta, n) == expected


def test_global_frequent_tie_break():
    counts = [[1, 2], [1, 0]]
    _, out = run_world(2, lambda ctx: fptree.global_frequent(counts[ctx.rank], 0.5, 4, ctx))
    assert out[0] == out[1]
    assert out[0].items == (A, B) and out[0].counts == (2, 2)


def test_order_extremes():
    counts = [3, 0, 5, 1]
    assert ItemOrder.from_counts(counts, 0).items == (2, 0, 3, 1)
    assert ItemOrder.from_counts(counts, fptree.min_support_count(1.0, 5) + 1).items == ()


def test_insert_shares_prefix():
    order = ItemOrder.from_counts([2, 2], 1)
    tree = FPTree(order).insert([A, B]).insert([A, B])
    assert tree.n_nodes == 3
    assert tree.canonical() == [((A,), 2), ((A, B), 2)]


def test_insert_infrequent_only():
    order = ItemOrder.from_counts([5, 0], 1)
    tree = FPTree(order).insert([B])
    assert tree.n_nodes == 1 and tree.n_absorbed == 1


def test_insert_normalizes_order():
    order = ItemOrder.from_counts([2, 2], 1)
    assert FPTree(order).insert([B, A]).structurally_equal(FPTree(order).insert([A, B]))


def test_insert_order_mismatch():
    tree = FPTree(ItemOrder.from_counts([2, 2], 1))
    with pytest.raises(fptree.OrderMismatch):
        fptree.insert(tree, [A], ItemOrder.from_counts([2, 3], 1))


def test_merge_identity():
    order = order_for(EXAMPLE, 3, 1)
    t = fptree.build(EXAMPLE, order)
    assert fptree.merge(fptree.build(EXAMPLE, order), FPTree(order)).structurally_equal(t)
    assert fptree.merge(FPTree(order), fptree.build(EXAMPLE, order)).structurally_equal(t)


def test_serialize_roundtrip_small():
    order = order_for(EXAMPLE, 3, 1)
    empty = FPTree(order)
    assert fptree.deserialize(fptree.serialize(empty), order).structurally_equal(empty)
    t = FPTree(order).insert([A, B])
    assert t.n_nodes == 3
    back = fptree.deserialize(fptree.serialize(t), order)
    assert back.structurally_equal(t) and back.parents == t.parents


def test_deserialize_rejects_corruption():
    order = order_for(EXAMPLE, 3, 1)
    buf = fptree.serialize(fptree.build(EXAMPLE, order))
    with pytest.raises(fptree.CorruptBuffer):
        fptree.deserialize(buf[:-3], order)
    with pytest.raises(fptree.CorruptBuffer):
        fptree.deserialize(b"XXXX" + buf[4:], order)
    with pytest.raises(fptree.OrderMismatch):
        fptree.deserialize(buf, ItemOrder.from_counts([1, 1, 1], 1))


def test_mine_example():
    assert mined(EXAMPLE, 3, 2) == [((A,), 2), ((A, B), 2), ((B,), 3), ((B, C), 2), ((C,), 2)]


def test_mine_empty_and_single():
    assert fptree.mine(FPTree(ItemOrder.from_counts([0, 0], 1)), 1) == []
    assert mined([[A, B]], 2, 1) == [((A,), 1), ((A, B), 1), ((B,), 1)]


def test_result_text_roundtrip():
    sets = mined(EXAMPLE, 3, 2)
    text = fptree.format_itemsets(sets)
    assert text.splitlines()[0] == "0\t2"
    assert fptree.parse_itemsets(text) == sets


@settings(max_examples=80, deadline=None)
@given(transactions, st.integers(1, 6))
def test_mine_matches_powerset_oracle(trans, min_count):
    assert mined(trans, 8, min_count) == brute_force_itemsets(trans, 8, min_count)


@settings(max_examples=50, deadline=None)
@given(transactions, transactions)
def test_merge_commutes(a, b):
    order = order_for(a + b, 8, 1)
    ab = fptree.merge(fptree.build(a, order), fptree.build(b, order))
    ba = fptree.merge(fptree.build(b, order), fptree.build(a, order))
    assert fptree.mine(ab, 2) == fptree.mine(ba, 2)
    assert ab.structurally_equal(fptree.build(a + b, order))


@settings(max_examples=50, deadline=None)
@given(transactions)
def test_serialize_roundtrip_property(trans):
    order = order_for(trans, 8, 1)
    tree = fptree.build(trans, order)
    back = fptree.deserialize(fptree.serialize(tree), order)
    assert back.structurally_equal(tree)
    assert back.n_absorbed == tree.n_absorbed
    assert len(fptree.serialize(tree)) == tree.serialized_size()


@settings(max_examples=30, deadline=None)
@given(transactions, st.integers(1, 5))
def test_partition_invariance(trans, p):
    order = order_for(trans, 8, 2)
    parts = [trans[i::p] for i in range(p)]
    merged = FPTree(order)
    for part in parts:
        fptree.merge(merged, fptree.build(part, order))
    assert fptree.mine(merged, 2) == fptree.mine(fptree.build(trans, order), 2)


def test_oracle_powerset_by_hand():
    # independent of the brute-force helper: enumerate candidate itemsets directly
    trans = [[0, 1, 3], [1, 2], [0, 1, 2, 3], [3]]
    expected = {}
    for size in range(1, 5):
        for cand in combinations(range(4), size):
            s = sum(1 for t in trans if set(cand) <= set(t))
            if s >= 2:
                expected[cand] = s
    assert dict(mined(trans, 4, 2)) == expected
