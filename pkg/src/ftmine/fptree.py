"""FP-Tree construction, merging, serialization and FP-Growth mining."""

from __future__ import annotations

import math
import struct
import zlib
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from . import kernels

ROOT = 0

_MAGIC = b"FPT1"
_TREE_HEADER = struct.Struct("<4sIIQI")   # magic, n_items, order fingerprint, absorbed, n_records
_NODE = struct.Struct("<IiQ")             # item, parent record index (-1 = root), count

HEADER_SIZE = _TREE_HEADER.size
RECORD_SIZE = _NODE.size


class OrderMismatch(ValueError):
    pass


class CorruptBuffer(ValueError):
    pass


def count_local(transactions: Iterable[Sequence[int]], n_items: int) -> list[int]:
    """Per-item count of transactions containing it."""
    return kernels.count_items(transactions, n_items)


def min_support_count(theta: float, total_trans: int) -> int:
    """``ceil(theta * total_trans)`` computed without float round-up artefacts."""
    frac = Fraction(theta).limit_denominator(10**9)
    return math.ceil(frac * total_trans)


@dataclass(frozen=True)
class ItemOrder:
    """Frequent items in descending global count, ties by ascending item id."""

    items: tuple[int, ...]
    counts: tuple[int, ...]
    n_items: int
    min_count: int

    @classmethod
    def from_counts(cls, counts: Sequence[int], min_count: int) -> "ItemOrder":
        keep = [(c, i) for i, c in enumerate(counts) if c >= min_count]
        keep.sort(key=lambda ci: (-ci[0], ci[1]))
        return cls(tuple(i for _, i in keep), tuple(c for c, _ in keep), len(counts), min_count)

    @property
    def rank_of(self) -> list[int]:
        ranks = [-1] * self.n_items
        for pos, item in enumerate(self.items):
            ranks[item] = pos
        return ranks

    @property
    def fingerprint(self) -> int:
        return zlib.crc32(struct.pack(f"<I{len(self.items)}I", self.n_items, *self.items))

    def __len__(self):
        return len(self.items)


def global_frequent(local: Sequence[int], theta: float, total_trans: int, ctx) -> ItemOrder:
    """Allreduce local counts over the alive ranks and derive the item order."""
    counts = ctx.allreduce_sum(list(local))
    return ItemOrder.from_counts(counts, min_support_count(theta, total_trans))


class FPTree:
    """Prefix tree over frequency-ordered transactions.

    Nodes live in parallel lists; node 0 is the root.  A child is found
    through ``child[parent * n_items + item]``.  Parents always have a lower
    index than their children.
    """

    def __init__(self, order: ItemOrder):
        self.order = order
        self.n_items = order.n_items
        self._rank_of = order.rank_of
        self.items: list[int] = [-1]
        self.counts: list[int] = [0]
        self.parents: list[int] = [-1]
        self.child: dict[int, int] = {}
        self.header: dict[int, list[int]] = defaultdict(list)
        self.n_absorbed = 0

    def __repr__(self):
        return f"FPTree(nodes={self.n_nodes}, absorbed={self.n_absorbed})"

    @property
    def n_nodes(self) -> int:
        """Node count including the root."""
        return len(self.items)

    def serialized_size(self) -> int:
        return HEADER_SIZE + (self.n_nodes - 1) * RECORD_SIZE

    def _add_path(self, path: Sequence[int], count: int):
        before = len(self.items)
        created = kernels.tree_insert(path, count, self.child, self.items, self.counts,
                                      self.parents, self.n_items)
        for idx in range(before, before + created):
            self.header[self.items[idx]].append(idx)

    def insert(self, trans: Sequence[int], count: int = 1) -> "FPTree":
        path = kernels.order_transaction(trans, self._rank_of)
        if path:
            self._add_path(path, count)
        self.n_absorbed += count
        return self

    def insert_many(self, transactions: Iterable[Sequence[int]]) -> "FPTree":
        for t in transactions:
            self.insert(t)
        return self

    def path_to(self, node: int) -> tuple[int, ...]:
        out = []
        while node != ROOT:
            out.append(self.items[node])
            node = self.parents[node]
        return tuple(reversed(out))

    def canonical(self) -> list[tuple[tuple[int, ...], int]]:
        """Sorted (root-to-node path, count) pairs; equal iff structurally identical."""
        return sorted((self.path_to(n), self.counts[n]) for n in range(1, self.n_nodes))

    def structurally_equal(self, other: "FPTree") -> bool:
        return (self.order.fingerprint == other.order.fingerprint
                and self.canonical() == other.canonical())

    def _children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for n in range(1, self.n_nodes):
            kids[self.parents[n]].append(n)
        rank = self._rank_of
        for lst in kids:
            lst.sort(key=lambda n: rank[self.items[n]])
        return kids


def insert(tree: FPTree, trans: Sequence[int], order: ItemOrder | None = None) -> FPTree:
    if order is not None and order.fingerprint != tree.order.fingerprint:
        raise OrderMismatch("transaction order differs from tree order")
    return tree.insert(trans)


def build(transactions: Iterable[Sequence[int]], order: ItemOrder) -> FPTree:
    return FPTree(order).insert_many(transactions)


def merge(dst: FPTree, src: FPTree) -> FPTree:
    """Add every node count of ``src`` onto the matching path in ``dst`` (in place)."""
    if dst.order.fingerprint != src.order.fingerprint:
        raise OrderMismatch("cannot merge trees built under different item orders")
    mapped = [ROOT] * src.n_nodes
    n_items = dst.n_items
    for n in range(1, src.n_nodes):
        parent = mapped[src.parents[n]]
        item = src.items[n]
        key = parent * n_items + item
        hit = dst.child.get(key)
        if hit is None:
            hit = len(dst.items)
            dst.items.append(item)
            dst.counts.append(src.counts[n])
            dst.parents.append(parent)
            dst.child[key] = hit
            dst.header[item].append(hit)
        else:
            dst.counts[hit] += src.counts[n]
        mapped[n] = hit
    dst.n_absorbed += src.n_absorbed
    return dst


def serialize(tree: FPTree) -> bytes:
    kids = tree._children()
    out = bytearray(tree.serialized_size())
    _TREE_HEADER.pack_into(out, 0, _MAGIC, tree.n_items, tree.order.fingerprint,
                           tree.n_absorbed, tree.n_nodes - 1)
    pos = HEADER_SIZE
    rec_of = {ROOT: -1}
    stack = list(reversed(kids[ROOT]))
    rec = 0
    while stack:
        n = stack.pop()
        rec_of[n] = rec
        _NODE.pack_into(out, pos, tree.items[n], rec_of[tree.parents[n]], tree.counts[n])
        pos += RECORD_SIZE
        rec += 1
        stack.extend(reversed(kids[n]))
    return bytes(out)


def peek_header(buf) -> tuple[int, int, int, int]:
    """(n_items, fingerprint, n_absorbed, n_records) of a serialized tree."""
    if len(buf) < HEADER_SIZE:
        raise CorruptBuffer("buffer shorter than tree header")
    magic, n_items, fp, absorbed, n_rec = _TREE_HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise CorruptBuffer("bad tree magic")
    return n_items, fp, absorbed, n_rec


def deserialize(buf, order: ItemOrder) -> FPTree:
    n_items, fp, absorbed, n_rec = peek_header(buf)
    if len(buf) < HEADER_SIZE + n_rec * RECORD_SIZE:
        raise CorruptBuffer(f"buffer holds {len(buf)} bytes, header claims {n_rec} nodes")
    if fp != order.fingerprint or n_items != order.n_items:
        raise OrderMismatch("serialized tree was built under another item order")
    tree = FPTree(order)
    for rec, (item, parent, count) in enumerate(_NODE.iter_unpack(
            bytes(buf[HEADER_SIZE:HEADER_SIZE + n_rec * RECORD_SIZE]))):
        node = rec + 1
        parent_node = parent + 1  # record index -> node index; -1 -> ROOT
        if not 0 <= parent_node < node or item >= n_items:
            raise CorruptBuffer(f"record {rec} is inconsistent")
        tree.items.append(item)
        tree.counts.append(count)
        tree.parents.append(parent_node)
        tree.child[parent_node * n_items + item] = node
        tree.header[item].append(node)
    tree.n_absorbed = absorbed
    return tree


# -- mining ------------------------------------------------------------------

def _conditional(base: list[tuple[tuple[int, ...], int]], n_items: int,
                 min_count: int) -> FPTree | None:
    support: dict[int, int] = defaultdict(int)
    for path, c in base:
        for item in path:
            support[item] += c
    counts = [0] * n_items
    for item, s in support.items():
        counts[item] = s
    order = ItemOrder.from_counts(counts, min_count)
    if not order.items:
        return None
    tree = FPTree(order)
    for path, c in base:
        tree.insert(path, c)
    return tree


def _grow(tree: FPTree, suffix: tuple[int, ...], min_count: int,
          out: dict[tuple[int, ...], int]):
    for item in tree.order.items:
        nodes = tree.header.get(item)
        if not nodes:
            continue
        support = sum(tree.counts[n] for n in nodes)
        if support < min_count:
            continue
        itemset = suffix + (item,)
        out[tuple(sorted(itemset))] = support
        base = []
        for n in nodes:
            prefix = tree.path_to(tree.parents[n])
            if prefix:
                base.append((prefix, tree.counts[n]))
        if base:
            cond = _conditional(base, tree.n_items, min_count)
            if cond is not None:
                _grow(cond, itemset, min_count, out)


def mine(tree: FPTree, min_count: int) -> list[tuple[tuple[int, ...], int]]:
    """All itemsets with support >= ``min_count``, sorted lexicographically."""
    out: dict[tuple[int, ...], int] = {}
    _grow(tree, (), max(1, min_count), out)
    return sorted(out.items())


def format_itemsets(itemsets: Iterable[tuple[tuple[int, ...], int]]) -> str:
    """Canonical result file text: ``item,item,...<TAB>support`` per line."""
    return "".join(f"{','.join(map(str, s))}\t{c}\n" for s, c in sorted(itemsets))


def parse_itemsets(text: str) -> list[tuple[tuple[int, ...], int]]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        items, support = line.split("\t")
        out.append((tuple(int(i) for i in items.split(",")), int(support)))
    return out
