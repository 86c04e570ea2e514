"""Pure-Python versions of the hot loops.

These define the reference semantics; the compiled module must match them
bit for bit (same summation order for distances, same tie-breaks).
"""

from __future__ import annotations

import math
import struct

_U32 = struct.Struct("<I")


def encode_transactions(transactions):
    out = bytearray()
    for t in transactions:
        out += _U32.pack(len(t))
        out += struct.pack(f"<{len(t)}I", *t)
    return bytes(out)


def decode_transactions(buf, count=-1):
    out = []
    pos = 0
    end = len(buf)
    while pos < end and count != 0:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        out.append(struct.unpack_from(f"<{n}I", buf, pos))
        pos += 4 * n
        count -= 1
    if count > 0:
        raise ValueError("buffer holds fewer transactions than requested")
    return out


def count_items(transactions, n_items):
    counts = [0] * n_items
    for t in transactions:
        for item in t:
            counts[item] += 1
    return counts


def order_transaction(trans, rank_of):
    """Frequent items of ``trans`` sorted by global rank (``rank_of[i] < 0`` = pruned)."""
    keep = [i for i in trans if rank_of[i] >= 0]
    keep.sort(key=rank_of.__getitem__)
    return keep


def tree_insert(path, count, child, items, counts, parents, n_items):
    """Add ``path`` with multiplicity ``count`` below the root (node 0).

    ``child`` maps ``parent * n_items + item`` to a node index.  Returns the
    number of nodes created.
    """
    node = 0
    created = 0
    for item in path:
        key = node * n_items + item
        nxt = child.get(key)
        if nxt is None:
            nxt = len(items)
            items.append(item)
            counts.append(count)
            parents.append(node)
            child[key] = nxt
            created += 1
        else:
            counts[nxt] += count
        node = nxt
    return created


def euclidean(a, b):
    s = 0.0
    for x, y in zip(a, b):
        d = x - y
        s += d * d
    return math.sqrt(s)


def _offer(qd, qi, qn, row, k, dist, tid):
    n = qn[row]
    drow = qd[row]
    irow = qi[row]
    if n == k:
        last_d, last_i = drow[k - 1], irow[k - 1]
        if not (dist < last_d or (dist == last_d and tid < last_i)):
            return
        pos = k - 1
    else:
        pos = n
        qn[row] = n + 1
    while pos > 0:
        pd, pi = drow[pos - 1], irow[pos - 1]
        if dist < pd or (dist == pd and tid < pi):
            drow[pos] = pd
            irow[pos] = pi
            pos -= 1
        else:
            break
    drow[pos] = dist
    irow[pos] = tid


def knn_block(tests, train, train_ids, qd, qi, qn, k):
    """Offer every (test, train) pair to the test's bounded queue.

    ``qd``/``qi`` are (n_tests, k) arrays kept sorted ascending by
    (distance, id); ``qn`` holds the fill level of each row.
    """
    train_rows = [list(map(float, row)) for row in train]
    ids = [int(i) for i in train_ids]
    for row in range(len(tests)):
        a = list(map(float, tests[row]))
        for j, b in enumerate(train_rows):
            _offer(qd, qi, qn, row, k, euclidean(a, b), ids[j])
