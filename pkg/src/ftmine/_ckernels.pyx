# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in :mod:`ftmine._pykernels`."""

from libc.math cimport sqrt
from libc.stdint cimport uint32_t, int64_t
from libc.string cimport memcpy
from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING

import numpy as np
cimport numpy as cnp

cnp.import_array()


def encode_transactions(list transactions):
    cdef Py_ssize_t total = 0, pos = 0
    cdef object t
    cdef uint32_t n, v
    for t in transactions:
        total += 4 * (len(t) + 1)
    out = PyBytes_FromStringAndSize(NULL, total)
    cdef char* buf = PyBytes_AS_STRING(out)
    for t in transactions:
        n = len(t)
        memcpy(buf + pos, &n, 4)
        pos += 4
        for item in t:
            v = item
            memcpy(buf + pos, &v, 4)
            pos += 4
    return out


def decode_transactions(bytes buf, Py_ssize_t count=-1):
    cdef const unsigned char[:] view = buf
    cdef Py_ssize_t pos = 0, end = len(buf), i
    cdef uint32_t n, v
    out = []
    while pos < end and count != 0:
        memcpy(&n, &view[pos], 4)
        pos += 4
        t = [0] * n
        for i in range(n):
            memcpy(&v, &view[pos], 4)
            t[i] = v
            pos += 4
        out.append(tuple(t))
        count -= 1
    if count > 0:
        raise ValueError("buffer holds fewer transactions than requested")
    return out


def count_items(transactions, Py_ssize_t n_items):
    cdef cnp.ndarray[int64_t, ndim=1] counts = np.zeros(n_items, dtype=np.int64)
    cdef Py_ssize_t item
    for t in transactions:
        for item in t:
            counts[item] += 1
    return counts.tolist()


def order_transaction(trans, list rank_of):
    keep = [i for i in trans if <long>rank_of[i] >= 0]
    keep.sort(key=rank_of.__getitem__)
    return keep


def tree_insert(path, long count, dict child, list items, list counts, list parents,
                long n_items):
    cdef long node = 0, nxt, created = 0, item
    cdef object key, found
    for item in path:
        key = node * n_items + item
        found = child.get(key)
        if found is None:
            nxt = len(items)
            items.append(item)
            counts.append(count)
            parents.append(node)
            child[key] = nxt
            created += 1
        else:
            nxt = found
            counts[nxt] += count
        node = nxt
    return created


def euclidean(a, b):
    cdef double s = 0.0, d
    for x, y in zip(a, b):
        d = <double>x - <double>y
        s += d * d
    return sqrt(s)


cdef inline void _offer(double[:, :] qd, int64_t[:, :] qi, int64_t[:] qn,
                        Py_ssize_t row, Py_ssize_t k, double dist, int64_t tid) nogil:
    cdef Py_ssize_t n = qn[row], pos
    cdef double pd
    cdef int64_t pi
    if n == k:
        if not (dist < qd[row, k - 1] or (dist == qd[row, k - 1] and tid < qi[row, k - 1])):
            return
        pos = k - 1
    else:
        pos = n
        qn[row] = n + 1
    while pos > 0:
        pd = qd[row, pos - 1]
        pi = qi[row, pos - 1]
        if dist < pd or (dist == pd and tid < pi):
            qd[row, pos] = pd
            qi[row, pos] = pi
            pos -= 1
        else:
            break
    qd[row, pos] = dist
    qi[row, pos] = tid


def knn_block(tests, train, train_ids, qd, qi, qn, Py_ssize_t k):
    cdef double[:, :] X = np.ascontiguousarray(tests, dtype=np.float64)
    cdef double[:, :] Y = np.ascontiguousarray(train, dtype=np.float64)
    cdef int64_t[:] ids = np.ascontiguousarray(train_ids, dtype=np.int64)
    cdef double[:, :] QD = qd
    cdef int64_t[:, :] QI = qi
    cdef int64_t[:] QN = qn
    cdef Py_ssize_t i, j, c, nt = X.shape[0], nr = Y.shape[0], dims = X.shape[1]
    cdef double s, d
    if nr and Y.shape[1] != dims:
        raise ValueError("dimension mismatch")
    with nogil:
        for i in range(nt):
            for j in range(nr):
                s = 0.0
                for c in range(dims):
                    d = X[i, c] - Y[j, c]
                    s += d * d
                _offer(QD, QI, QN, i, k, sqrt(s), ids[j])
