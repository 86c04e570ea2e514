"""The compiled and pure-Python kernels must agree bit for bit."""

import importlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftmine import _pykernels, kernels

try:
    from ftmine import _ckernels
except ImportError:  # extension not built in this environment
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")

trans_st = st.lists(st.lists(st.integers(0, 30), min_size=1, max_size=8, unique=True),
                    max_size=30)


def test_backend_flag(monkeypatch):
    monkeypatch.setenv("FTMINE_PURE", "1")
    try:
        pure = importlib.reload(kernels)
        assert pure.BACKEND == "python"
        assert pure.euclidean is _pykernels.euclidean
    finally:
        monkeypatch.delenv("FTMINE_PURE")
        importlib.reload(kernels)
    assert kernels.BACKEND == ("cython" if _ckernels is not None else "python")


@needs_c
@settings(max_examples=50, deadline=None)
@given(trans_st)
def test_codec_parity(trans):
    blob = _pykernels.encode_transactions(trans)
    assert _ckernels.encode_transactions(trans) == blob
    assert [tuple(t) for t in _ckernels.decode_transactions(blob)] == \
        [tuple(t) for t in _pykernels.decode_transactions(blob)]
    assert _ckernels.count_items(trans, 31) == _pykernels.count_items(trans, 31)


@needs_c
@settings(max_examples=50, deadline=None)
@given(trans_st)
def test_tree_insert_parity(trans):
    rank_of = list(range(31))[::-1]
    states = []
    for mod in (_pykernels, _ckernels):
        child, items, counts, parents = {}, [-1], [0], [-1]
        for t in trans:
            path = mod.order_transaction(t, rank_of)
            mod.tree_insert(path, 1, child, items, counts, parents, 31)
        states.append((child, items, counts, parents))
    assert states[0] == states[1]


@needs_c
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**16))
def test_knn_block_parity(k, seed):
    rng = np.random.default_rng(seed)
    tests = rng.normal(size=(7, 5))
    train = np.round(rng.normal(size=(20, 5)), 1)
    ids = np.arange(100, 120, dtype=np.int64)
    outs = []
    for mod in (_pykernels, _ckernels):
        qd = np.full((7, k), np.inf)
        qi = np.full((7, k), -1, dtype=np.int64)
        qn = np.zeros(7, dtype=np.int64)
        mod.knn_block(tests, train, ids, qd, qi, qn, k)
        outs.append((qd.tobytes(), qi.tobytes(), qn.tobytes()))
    assert outs[0] == outs[1]
    for a, b in zip(tests[:3], train[:3]):
        assert _ckernels.euclidean(a, b) == _pykernels.euclidean(a, b)
