"""Asynchronous memory-based checkpointing into a neighbour's processed prefix.

The source never talks to the target: it atomically reads the target's
``LS_PTR``, reads the slot table, reserves bytes through the ``TCO``
counter and puts its data, all one-sided.  Checkpoint data is confined to
``[0, LS_PTR)`` of the target's transaction window, so a rank never holds
more than its initial shard plus the fixed control window.
"""

from __future__ import annotations

from .. import dataset, fptree
from .base import (CTRL_SIZE, CTRL_WIN, LS_PTR_OFF, MAX_SLOTS, SLOTS_OFF, TCO_OFF,
                   TRANS_WIN, FPStrategy)
from .policy import CheckpointKind, MetadataRecord, amft_decide

SLOT_SIZE = MetadataRecord.SIZE


def _slots(ctrl: bytes) -> list[MetadataRecord]:
    return [MetadataRecord.unpack(ctrl, SLOTS_OFF + i * SLOT_SIZE) for i in range(MAX_SLOTS)]


class AMFTStrategy(FPStrategy):
    name = "amft"
    storage = "memory"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.complete_done = False
        self.trans_bytes = 0       # size of the transactions region written on the target
        self.sct = 0
        self.nct = 0
        self.my_bytes = 0          # bytes currently reserved on the target
        self.base: int | None = None
        self.slot: int | None = None
        self.slot_target: int | None = None

    def _bind(self, target: int, slots: list[MetadataRecord]) -> int | None:
        """Pick (or recover) this source's slot on ``target``; returns its base offset."""
        me = self.ctx.rank + 1
        if self.slot_target != target:
            # new target (first checkpoint or after a critical redirect)
            self.slot = self.base = None
            self.complete_done = False
            self.trans_bytes = self.nct = self.sct = self.my_bytes = 0
        for i, rec in enumerate(slots):
            if rec.src == me:
                self.slot = i
        if self.slot is None:
            for i, rec in enumerate(slots):
                if rec.empty:
                    self.slot = i
                    break
        if self.slot is None:
            return None
        if self.base is None:
            # start above any region pinned by another (dead) source
            self.base = max([r.end for i, r in enumerate(slots)
                             if not r.empty and i != self.slot] + [0])
        self.slot_target = target
        return self.base

    def checkpoint(self, tree, processed: int) -> CheckpointKind:
        ctx, target = self.ctx, self.target
        # atomic read of the target's progress pointer (delta 0), then its slot table
        ls_ptr = ctx.fetch_and_add(CTRL_WIN, target, LS_PTR_OFF, 0)
        slots = _slots(ctx.get(CTRL_WIN, target, 0, CTRL_SIZE))
        payload = fptree.serialize(tree)
        base = self._bind(target, slots)
        if base is None:
            return CheckpointKind.NONE
        # never grow into a region another source placed above ours
        limit = min([ls_ptr] + [r.base for i, r in enumerate(slots)
                                if not r.empty and i != self.slot and r.base >= base])
        free = limit - base - self.trans_bytes
        kind = amft_decide(free, len(payload), self.twin.remaining_bytes, self.complete_done)
        if kind is CheckpointKind.NONE:
            return kind

        remaining = b""
        if kind is CheckpointKind.COMPLETE:
            remaining = self.twin.remaining_raw()
        new_trans = len(remaining) if remaining else self.trans_bytes
        total = new_trans + len(payload)
        ctx.fetch_and_add(CTRL_WIN, target, TCO_OFF, total - self.my_bytes)
        self.my_bytes = total

        if kind is CheckpointKind.COMPLETE:
            ctx.put(TRANS_WIN, target, base, remaining)
            self.trans_bytes = len(remaining)
            self.sct = processed
            self.nct = self.twin.remaining
            self.complete_done = True
        ctx.put(TRANS_WIN, target, base + self.trans_bytes, payload)
        ctx.flush(target)
        meta = MetadataRecord(src=ctx.rank + 1, base=base, cf_ptr=self.trans_bytes,
                              cfs=len(payload), ct=processed - 1, sct=self.sct,
                              nct=self.nct, ls_ptr=ls_ptr)
        ctx.put(CTRL_WIN, target, SLOTS_OFF + self.slot * SLOT_SIZE, meta.pack())
        self.stats.ckpt_bytes += len(payload) + len(remaining)
        return kind

    # -- holder side ------------------------------------------------------------

    def _find(self, failed: int) -> tuple[int, MetadataRecord] | None:
        ctrl = self.twin.ctrl.buf
        for i, rec in enumerate(_slots(bytes(ctrl))):
            if rec.src == failed + 1:
                return i, rec
        return None

    def held(self, failed: int) -> MetadataRecord | None:
        hit = self._find(failed)
        return hit[1] if hit else None

    def take_tree(self, failed: int, order):
        _, meta = self._find(failed)
        lo = meta.base + meta.cf_ptr
        return fptree.deserialize(bytes(self.twin.win.buf[lo:lo + meta.cfs]), order)

    def take_transactions(self, failed: int, meta: MetadataRecord) -> list[tuple]:
        raw = bytes(self.twin.win.buf[meta.base:meta.base + meta.cf_ptr])
        return dataset.decode_transactions(raw, meta.nct)

    def release(self, failed: int):
        hit = self._find(failed)
        if hit is None:
            return
        i, meta = hit
        self.ctx.local_fetch_and_add(CTRL_WIN, TCO_OFF, -(meta.cf_ptr + meta.cfs))
        self.ctx.local_write(CTRL_WIN, SLOTS_OFF + i * SLOT_SIZE, bytes(SLOT_SIZE))
