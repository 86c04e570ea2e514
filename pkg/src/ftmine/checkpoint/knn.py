"""Checkpointing the KNN queue vector after every ring iteration.

The same three storage flavours as for FP-Growth:

* ``dft``  -- epoch files on disk, read back by the failed rank's successor;
* ``smft`` -- per-source window on the successor, sized through the resize
  handshake before each put;
* ``amft`` -- a window reserved once at start-up on every rank, written
  purely one-sided.  Queue vectors have a fixed size, so the reservation is
  exact.  It has two slots: slot 0 for the ring predecessor and slot 1 for
  the rank before it, which is where a critical checkpoint lands after the
  predecessor dies.  A source further away has no slot and runs degraded.

Each stored copy carries its iteration tag; the newest copy wins.
"""

from __future__ import annotations

import logging
import math
import struct
import time

from ..fabric import RankDead
from ..knn import QueueVector
from .base import RankStats
from .disk import DiskCheckpointStore, IoError
from .smft import _win, request_window, serve_resize_requests

log = logging.getLogger(__name__)

KNN_WIN = "knnq"
KNN_SLOTS = 2
_TAG = struct.Struct("<q")      # iteration tag + 1; 0 = empty


class KNNCheckpoint:
    """No-op base; also the per-iteration hook passed to :func:`ftmine.knn.run_knn`."""

    mode = "none"

    def __init__(self, ctx, k: int, n_tests: int, stats: RankStats | None = None, **options):
        self.ctx = ctx
        self.k = k
        # rows per rank are at most ceil(n_tests / P): enough for any source
        self.max_rows = math.ceil(n_tests / ctx.size) if ctx.size else n_tests
        self.stats = stats or RankStats()
        self.options = options
        self.target = ctx.successor()

    def setup(self):
        pass

    def teardown(self):
        self.ctx.set_progress_hook(None)

    def __call__(self, qv: QueueVector, tag: int):
        if self.mode == "none":
            return
        dead = self.ctx.poll_faults()
        critical = False
        if self.mode != "dft" and self.target in dead:
            self.target = self.ctx.successor()
            critical = True
            self.stats.critical += 1
        t0 = time.perf_counter()
        ok = False
        with self.ctx.label("ckpt"):
            while self.mode == "dft" or self.target is not None:
                try:
                    ok = self.checkpoint(qv, tag)
                    break
                except RankDead:
                    self.target = self.ctx.successor()
            if self.mode != "dft" and self.target is None:
                self.stats.degraded = True
        self.stats.ckpt_time += time.perf_counter() - t0
        self.stats.kinds[("critical-" if critical else "") + ("queue" if ok else "none")] += 1

    def knn_checkpoint(self, qv: QueueVector, tag: int) -> bool:
        return self.checkpoint(qv, tag)

    def checkpoint(self, qv: QueueVector, tag: int) -> bool:
        return False

    # -- holder side -------------------------------------------------------------

    def held(self, failed: int) -> int | None:
        """Iteration tag of the copy this rank holds for ``failed``, if any."""
        return None

    def take(self, failed: int) -> QueueVector:
        raise NotImplementedError

    def release(self, failed: int):
        pass


class DiskKNNCheckpoint(KNNCheckpoint):
    mode = "dft"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.root = self.options.get("ckpt_dir", "ckpt")
        self.read_delay = self.options.get("read_delay", 0.0)
        self.store = DiskCheckpointStore(self.root, self.ctx.rank, read_delay=self.read_delay)
        self._loaded: dict[int, QueueVector] = {}

    def checkpoint(self, qv, tag):
        payload = qv.serialize()
        try:
            with self.ctx.detached():
                self.store.write(payload, tag)
        except IoError as exc:
            log.warning("%s; keeping the previous epoch", exc)
            return False
        self.stats.ckpt_bytes += len(payload)
        return True

    def held(self, failed):
        if self.ctx.successor(failed) != self.ctx.rank:
            return None
        store = DiskCheckpointStore(self.root, failed, read_delay=self.read_delay)
        with self.ctx.detached():
            ckpt = store.latest()
        self.stats.disk_reads += store.reads
        if ckpt is None:
            return None
        self._loaded[failed] = QueueVector.deserialize(ckpt.payload)
        return ckpt.ct

    def take(self, failed):
        return self._loaded[failed]

    def release(self, failed):
        self._loaded.pop(failed, None)


class SMFTKNNCheckpoint(KNNCheckpoint):
    mode = "smft"

    def setup(self):
        self.ctx.set_progress_hook(lambda: serve_resize_requests(self.ctx))

    def checkpoint(self, qv, tag):
        ctx, target = self.ctx, self.target
        payload = qv.serialize()
        name, epoch = request_window(ctx, target, "knnq", _TAG.size + len(payload))
        ctx.put(name, target, _TAG.size, payload, epoch)
        ctx.flush(target)
        ctx.put(name, target, 0, _TAG.pack(tag + 1), epoch)
        self.stats.ckpt_bytes += len(payload)
        return True

    def _local(self, failed):
        try:
            return self.ctx.local_window(_win("knnq", failed))
        except KeyError:
            return None

    def held(self, failed):
        win = self._local(failed)
        if win is None or win.capacity < _TAG.size:
            return None
        (tag1,) = _TAG.unpack_from(win.buf, 0)
        return tag1 - 1 if tag1 > 0 else None

    def take(self, failed):
        return QueueVector.deserialize(bytes(self._local(failed).buf[_TAG.size:]))

    def release(self, failed):
        self.ctx.free_window(_win("knnq", failed))


class AMFTKNNCheckpoint(KNNCheckpoint):
    mode = "amft"

    @property
    def slot_size(self) -> int:
        return _TAG.size + QueueVector.serialized_size(self.max_rows, self.k)

    def setup(self):
        self.ctx.create_window(KNN_WIN, KNN_SLOTS * self.slot_size, "static")

    def _slot(self, src: int, holder: int) -> int | None:
        slot = (holder - src) % self.ctx.size - 1
        return slot if 0 <= slot < KNN_SLOTS else None

    def checkpoint(self, qv, tag):
        ctx, target = self.ctx, self.target
        slot = self._slot(ctx.rank, target)
        if slot is None:
            self.stats.degraded = True
            return False
        payload = qv.serialize()
        off = slot * self.slot_size
        ctx.put(KNN_WIN, target, off + _TAG.size, payload)
        ctx.flush(target)
        ctx.put(KNN_WIN, target, off, _TAG.pack(tag + 1))
        self.stats.ckpt_bytes += len(payload)
        return True

    def held(self, failed):
        slot = self._slot(failed, self.ctx.rank)
        if slot is None:
            return None
        buf = self.ctx.local_window(KNN_WIN).buf
        (tag1,) = _TAG.unpack_from(buf, slot * self.slot_size)
        return tag1 - 1 if tag1 > 0 else None

    def take(self, failed):
        off = self._slot(failed, self.ctx.rank) * self.slot_size + _TAG.size
        buf = self.ctx.local_window(KNN_WIN).buf
        return QueueVector.deserialize(bytes(buf[off:off + self.slot_size - _TAG.size]))

    def release(self, failed):
        slot = self._slot(failed, self.ctx.rank)
        if slot is not None:
            self.ctx.local_write(KNN_WIN, slot * self.slot_size, _TAG.pack(0))


KNN_STRATEGIES = {
    "none": KNNCheckpoint,
    "dft": DiskKNNCheckpoint,
    "smft": SMFTKNNCheckpoint,
    "amft": AMFTKNNCheckpoint,
}
