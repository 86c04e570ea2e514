"""Parallel exact KNN by ring rotation of training shards.

Every rank keeps one bounded queue per local test sample.  At ring
iteration ``j`` rank ``r`` works on the training block that originated at
rank ``(r - j) mod P``.  The ring is physical: positions of dead ranks stay
in place, and a rank whose predecessor died fetches the block it needs
straight from the owner's exposed ``train`` window (or from disk when the
owner is dead too).

Candidates are ordered by (distance, train id), so results are a pure
function of the data and ``k``.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .fabric import RankDead

TRAIN_WIN = "train"


class DimMismatch(ValueError):
    pass


class CapacityMismatch(ValueError):
    pass


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance, summed coordinate by coordinate in order."""
    if len(a) != len(b):
        raise DimMismatch(f"{len(a)} vs {len(b)} dimensions")
    return kernels.euclidean(a, b)


class NeighborQueue:
    """The ``k`` best (distance, train_id) pairs seen so far.

    Stored as a max-heap on (distance, id) so the current worst candidate
    is at the top.
    """

    def __init__(self, k: int, entries: Iterable[tuple[float, int]] = ()):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._heap: list[tuple[float, int]] = []   # (-dist, -id)
        for d, i in entries:
            self.enqueue(d, i)

    def enqueue(self, dist: float, train_id: int) -> "NeighborQueue":
        if dist < 0:
            raise ValueError("distance must be non-negative")
        item = (-dist, -train_id)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
        elif item > self._heap[0]:
            heapq.heapreplace(self._heap, item)
        return self

    def entries(self) -> list[tuple[float, int]]:
        """Ascending by (distance, id)."""
        return sorted((-d, -i) for d, i in self._heap)

    def worst(self) -> tuple[float, int] | None:
        if not self._heap:
            return None
        d, i = self._heap[0]
        return -d, -i

    def __len__(self):
        return len(self._heap)

    def __eq__(self, other):
        if not isinstance(other, NeighborQueue):
            return NotImplemented
        return self.k == other.k and self.entries() == other.entries()

    def __repr__(self):
        return f"NeighborQueue(k={self.k}, {self.entries()})"


def enqueue(q: NeighborQueue, dist: float, train_id: int) -> NeighborQueue:
    return q.enqueue(dist, train_id)


def merge_queues(a: NeighborQueue, b: NeighborQueue) -> NeighborQueue:
    """The ``k`` smallest of the union; entries present in both count once."""
    if a.k != b.k:
        raise CapacityMismatch(f"k={a.k} vs k={b.k}")
    union = sorted(set(a.entries()) | set(b.entries()))
    return NeighborQueue(a.k, union[:a.k])


# -- per-rank queue vector --------------------------------------------------

_QV_HEADER = struct.Struct("<4sIIIq")   # magic, owner, k, n rows, iteration tag
_QV_MAGIC = b"QVC1"


@dataclass
class QueueVector:
    """Neighbour queues for a set of test samples, in array form.

    Row ``r`` of ``qd``/``qi`` holds the first ``qn[r]`` entries of the
    queue for ``test_ids[r]``, ascending by (distance, id).
    """

    owner: int
    k: int
    test_ids: np.ndarray
    qd: np.ndarray
    qi: np.ndarray
    qn: np.ndarray
    tag: int = 0

    @classmethod
    def empty(cls, owner: int, k: int, test_ids: Sequence[int]) -> "QueueVector":
        n = len(test_ids)
        return cls(owner, k, np.asarray(test_ids, dtype=np.int64),
                   np.full((n, k), np.inf), np.full((n, k), -1, dtype=np.int64),
                   np.zeros(n, dtype=np.int64))

    def __len__(self):
        return len(self.test_ids)

    @staticmethod
    def serialized_size(n_rows: int, k: int) -> int:
        return _QV_HEADER.size + n_rows * (8 + 8 + 16 * k)

    def serialize(self) -> bytes:
        n = len(self)
        return b"".join([
            _QV_HEADER.pack(_QV_MAGIC, self.owner, self.k, n, self.tag),
            self.test_ids.astype("<i8").tobytes(),
            self.qn.astype("<i8").tobytes(),
            self.qd.astype("<f8").tobytes(),
            self.qi.astype("<i8").tobytes(),
        ])

    @classmethod
    def deserialize(cls, buf) -> "QueueVector":
        magic, owner, k, n, tag = _QV_HEADER.unpack_from(buf, 0)
        if magic != _QV_MAGIC:
            raise ValueError("not a serialized queue vector")
        pos = _QV_HEADER.size

        def take(dtype, count, shape=None):
            nonlocal pos
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).copy()
            pos += arr.nbytes
            return arr.reshape(shape) if shape else arr

        ids = take("<i8", n)
        qn = take("<i8", n)
        qd = take("<f8", n * k, (n, k))
        qi = take("<i8", n * k, (n, k))
        return cls(owner, k, ids.astype(np.int64), qd.astype(np.float64),
                   qi.astype(np.int64), qn.astype(np.int64), tag)

    def subset(self, rows: Sequence[int]) -> "QueueVector":
        rows = np.asarray(rows, dtype=np.int64)
        return QueueVector(self.owner, self.k, self.test_ids[rows].copy(), self.qd[rows].copy(),
                           self.qi[rows].copy(), self.qn[rows].copy(), self.tag)

    def process(self, tests: np.ndarray, block: "TrainBlock") -> "QueueVector":
        return process_block(tests, block, self)

    def queue(self, row: int) -> NeighborQueue:
        n = int(self.qn[row])
        return NeighborQueue(self.k, zip(self.qd[row, :n].tolist(), self.qi[row, :n].tolist()))

    def results(self) -> dict[int, list[tuple[int, float]]]:
        """test_id -> [(train_id, distance), ...] ascending."""
        out = {}
        for row, tid in enumerate(self.test_ids.tolist()):
            n = int(self.qn[row])
            out[tid] = list(zip(self.qi[row, :n].tolist(), self.qd[row, :n].tolist()))
        return out


@dataclass
class TrainBlock:
    origin: int
    ids: np.ndarray
    points: np.ndarray

    @property
    def nbytes(self) -> int:
        return int(self.ids.nbytes + self.points.nbytes)

    def __len__(self):
        return len(self.ids)


def process_block(tests: np.ndarray, block: TrainBlock, queues: QueueVector) -> QueueVector:
    """Offer every (test, train) pair of the block to the test's queue."""
    if len(block) and len(tests) and block.points.shape[1] != tests.shape[1]:
        raise DimMismatch("test and train dimensionality differ")
    if len(block) and len(tests):
        kernels.knn_block(tests, block.points, block.ids, queues.qd, queues.qi, queues.qn,
                          queues.k)
    return queues


class BlockSource:
    """Fetches a training block by origin rank when the ring cannot deliver it."""

    def __init__(self, ctx, train_file, manifest):
        self.ctx = ctx
        self.file = train_file
        self.manifest = manifest
        self.dims = train_file.dims
        self.disk_reads = 0
        self.remote_gets = 0
        self._own: TrainBlock | None = None

    def own(self) -> TrainBlock:
        """This rank's block, exposed for one-sided reads on first use."""
        if self._own is None:
            start, count = self.manifest[self.ctx.rank]
            raw = self.file.peek_range(start, count)
            self.ctx.create_window(TRAIN_WIN, len(raw), "static", raw)
            self._own = self._block(self.ctx.rank, raw)
        return self._own

    def _block(self, origin: int, raw: bytes) -> TrainBlock:
        start, count = self.manifest[origin]
        pts = np.frombuffer(raw, dtype="<f8").reshape(count, self.dims).astype(np.float64)
        return TrainBlock(origin, np.arange(start, start + count, dtype=np.int64), pts)

    def fetch(self, origin: int) -> TrainBlock:
        start, count = self.manifest[origin]
        if origin == self.ctx.rank:
            return self.own()
        if self.ctx.is_alive(origin):
            try:
                raw = self.ctx.get(TRAIN_WIN, origin, 0, self.file.shard_bytes(start, count))
                self.remote_gets += 1
                return self._block(origin, raw)
            except RankDead:
                pass
        with self.ctx.detached():
            raw = self.file.raw_range(start, count)
        self.disk_reads += 1
        return self._block(origin, raw)


def ring_step(ctx, block: TrainBlock, iteration: int, source: BlockSource | None = None
              ) -> TrainBlock:
    """Forward ``block`` to the ring successor and adopt the predecessor's.

    Ring positions are physical.  If the predecessor died before sending,
    the wanted block is fetched through ``source``.
    """
    p = ctx.size
    if p == 1:
        return block
    nxt, prv = (ctx.rank + 1) % p, (ctx.rank - 1) % p
    want = (ctx.rank - iteration) % p
    try:
        ctx.send(nxt, ("ring", iteration), block)
    except RankDead:
        pass
    try:
        got = ctx.recv(prv, ("ring", iteration))
    except RankDead:
        if source is None:
            raise
        got = source.fetch(want)
    return got


def run_knn(ctx, tests: np.ndarray, test_ids: Sequence[int], source: BlockSource, k: int,
            checkpoint_hook: Callable[[QueueVector, int], None] | None = None) -> QueueVector:
    """The P-iteration ring loop for one rank; returns its queue vector."""
    qv = QueueVector.empty(ctx.rank, k, test_ids)
    p = ctx.size
    block = source.own()
    ctx.progress(0, p, "iteration")
    for it in range(p):
        if it:
            block = ring_step(ctx, block, it, source)
        process_block(tests, block, qv)
        qv.tag = it + 1
        if checkpoint_hook is not None:
            checkpoint_hook(qv, it + 1)
        ctx.progress(it + 1, p, "iteration")
    return qv


def missing_origins(failed: int, tag: int, p: int) -> list[int]:
    """Origins whose blocks a queue vector with ``tag`` completed iterations has not seen."""
    return [(failed - j) % p for j in range(tag, p)]


def format_neighbors(results: dict[int, list[tuple[int, float]]]) -> str:
    """Canonical result text: ``test_id<TAB>train_id:distance,...`` sorted by test id."""
    lines = []
    for tid in sorted(results):
        cells = ",".join(f"{j}:{d!r}" for j, d in results[tid])
        lines.append(f"{tid}\t{cells}\n")
    return "".join(lines)


def parse_neighbors(text: str) -> dict[int, list[tuple[int, float]]]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        tid, cells = line.split("\t")
        pairs = []
        for cell in cells.split(","):
            if cell:
                j, d = cell.split(":")
                pairs.append((int(j), float(d)))
        out[int(tid)] = pairs
    return out
