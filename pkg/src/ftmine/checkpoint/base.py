"""Per-rank plumbing shared by all FP-Growth checkpoint strategies."""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field

from .. import dataset
from ..fabric import RankDead
from .policy import CheckpointKind, CheckpointPolicy, MetadataRecord, should_checkpoint

log = logging.getLogger(__name__)

TRANS_WIN = "trans"
CTRL_WIN = "ctrl"
LS_PTR_OFF = 0
TCO_OFF = 8          # bytes of checkpoint data resident in this rank's trans window
SLOTS_OFF = 16
MAX_SLOTS = 4
CTRL_SIZE = SLOTS_OFF + MAX_SLOTS * MetadataRecord.SIZE


@dataclass
class RankStats:
    ckpt_time: float = 0.0
    ckpt_bytes: int = 0
    kinds: Counter = field(default_factory=Counter)
    critical: int = 0
    degraded: bool = False
    peak_resident: int = 0
    disk_records: int = 0
    disk_reads: int = 0

    def as_dict(self) -> dict:
        return {
            "ckpt_time": self.ckpt_time,
            "ckpt_bytes": self.ckpt_bytes,
            "kinds": dict(self.kinds),
            "critical": self.critical,
            "degraded": self.degraded,
            "peak_resident": self.peak_resident,
            "disk_records": self.disk_records,
            "disk_reads": self.disk_reads,
        }


class TransactionWindow:
    """A rank's local shard, exposed for one-sided access.

    Layout is ``[processed | unprocessed]``; ``LS_PTR`` in the control window
    marks the boundary.  The processed prefix is what AMFT recycles for
    neighbours' checkpoints, so the owner never reads it again.
    """

    def __init__(self, ctx, shard: bytes, start: int, count: int):
        self.ctx = ctx
        self.start = start
        self.count = count
        self.capacity = len(shard)
        self.win = ctx.create_window(TRANS_WIN, self.capacity, "static", shard)
        self.ctrl = ctx.create_window(CTRL_WIN, CTRL_SIZE, "static")
        self.pos = 0
        self.processed = 0

    def next(self) -> tuple:
        buf = self.win.buf
        n = int.from_bytes(buf[self.pos:self.pos + 4], "little")
        size = 4 * (n + 1)
        (trans,) = dataset.decode_transactions(bytes(buf[self.pos:self.pos + size]), 1)
        self.pos += size
        self.processed += 1
        self.ctx.local_fetch_and_add(CTRL_WIN, LS_PTR_OFF, size)
        return trans

    def __iter__(self):
        while self.processed < self.count:
            yield self.next()

    @property
    def remaining(self) -> int:
        return self.count - self.processed

    @property
    def remaining_bytes(self) -> int:
        return self.capacity - self.pos

    def remaining_raw(self) -> bytes:
        return bytes(self.win.buf[self.pos:self.capacity])


def resident_bytes(world, rank: int) -> int:
    """Checkpoint bytes held + unprocessed shard bytes + control window, for ``rank``.

    In-window checkpoints (AMFT) are counted through the ``TCO`` cell;
    separately allocated checkpoint windows (SMFT) by their capacity.
    """
    try:
        trans = world.window(TRANS_WIN, rank)
        ctrl = world.window(CTRL_WIN, rank)
    except KeyError:
        return 0
    ls = int.from_bytes(ctrl.buf[LS_PTR_OFF:LS_PTR_OFF + 8], "little", signed=True)
    tco = int.from_bytes(ctrl.buf[TCO_OFF:TCO_OFF + 8], "little", signed=True)
    extra = sum(w.capacity for w in world.windows_of(rank) if w.name.startswith("smft."))
    return tco + extra + (trans.capacity - ls) + CTRL_SIZE


@dataclass
class HeldCheckpoint:
    """What a holder knows about a failed rank's last in-memory checkpoint."""

    holder: int
    meta: MetadataRecord


class FPStrategy:
    """No-op strategy; subclasses add checkpointing and holder-side recovery."""

    name = "none"
    storage = "none"   # "none" | "disk" | "memory"

    def __init__(self, ctx, twin: TransactionWindow, policy: CheckpointPolicy,
                 stats: RankStats | None = None, **options):
        self.ctx = ctx
        self.twin = twin
        self.policy = policy
        self.stats = stats or RankStats()
        self.target = ctx.successor()
        self.checkpointed = False
        self.options = options

    def setup(self):
        pass

    def teardown(self):
        self.ctx.set_progress_hook(None)

    def after_transaction(self, tree, processed: int):
        if self.storage == "none":
            return
        dead = self.ctx.poll_faults()
        if dead:
            self.on_faults(dead, tree, processed)
        if should_checkpoint(processed, self.policy):
            self.timed_checkpoint(tree, processed)

    def on_faults(self, dead: list[int], tree, processed: int):
        if self.target is not None and self.target in dead:
            self.critical_checkpoint(tree, processed)

    def critical_checkpoint(self, tree, processed: int):
        """Re-replicate to the next alive successor after the backup holder died."""
        if self.storage != "memory":
            return
        self.target = self.ctx.successor()
        if self.target is None:
            self.stats.degraded = True
            log.warning("rank %d: no alive successor, running without a replica", self.ctx.rank)
            return
        if not self.checkpointed:
            return
        self.stats.critical += 1
        self.timed_checkpoint(tree, processed, critical=True)

    def timed_checkpoint(self, tree, processed: int, critical: bool = False):
        t0 = time.perf_counter()
        kind = CheckpointKind.NONE
        with self.ctx.label("ckpt"):
            while self.target is not None or self.storage == "disk":
                try:
                    kind = self.checkpoint(tree, processed)
                    break
                except RankDead:
                    # target died mid-checkpoint: cascade to the next alive successor
                    self.target = self.ctx.successor()
                    if self.target is None:
                        self.stats.degraded = True
        self.stats.ckpt_time += time.perf_counter() - t0
        monitor = self.options.get("monitor")
        if monitor is not None and self.target is not None and kind is not CheckpointKind.NONE:
            monitor(self.target, resident_bytes(self.ctx.world, self.target))
        self.stats.kinds[f"critical-{kind.value}" if critical else kind.value] += 1
        if kind is not CheckpointKind.NONE:
            self.checkpointed = True

    def checkpoint(self, tree, processed: int) -> CheckpointKind:
        return CheckpointKind.NONE

    # -- holder side, used by recovery ----------------------------------------

    def held(self, failed: int) -> MetadataRecord | None:
        return None

    def take_tree(self, failed: int, order):
        raise NotImplementedError

    def take_transactions(self, failed: int, meta: MetadataRecord) -> list[tuple]:
        raise NotImplementedError

    def release(self, failed: int):
        pass

    def needs_critical(self, failed: int) -> bool:
        """True if this rank's backup holder was ``failed`` and it still has to re-replicate."""
        return self.storage == "memory" and self.target == failed
