"""Synchronous memory-based checkpointing (SMFT).

The target keeps one dynamic window per source for the tree, one for the
transactions and a fixed metadata window.  Before each put the source asks
the target to resize the window and waits for the new address (window
name and epoch).  The target answers from its progress hook, so the source
blocks until the target next enters the fabric.  The payload itself goes
out as a one-sided put, followed by a flush and then the metadata.
"""

from __future__ import annotations

from .. import dataset, fptree
from ..fabric import RankDead
from .base import FPStrategy
from .policy import CheckpointKind, MetadataRecord

REQ = "smft.req"
ADDR = "smft.addr"


def _win(kind: str, src: int) -> str:
    return f"smft.{kind}.{src}"


def serve_resize_requests(ctx):
    """Target side: resize the requested per-source windows and reply with their address.

    Installed as the progress hook, so it runs whenever the target enters the
    fabric; fabric ops inside it do not yield.
    """
    with ctx.label("ckpt"):
        for src in ctx.pending(REQ):
            kind, nbytes = ctx.recv(src, REQ)
            name = _win(kind, src)
            try:
                ctx.local_window(name)
            except KeyError:
                ctx.create_window(name, 0, "dynamic")
            win = ctx.resize_window(name, nbytes)
            try:
                ctx.send(src, ADDR, (name, win.epoch))
            except RankDead:
                pass


def request_window(ctx, target: int, kind: str, nbytes: int) -> tuple[str, int]:
    """Source side: blocking resize handshake; returns (window name, epoch)."""
    ctx.send(target, REQ, (kind, nbytes))
    return ctx.recv(target, ADDR)


class SMFTStrategy(FPStrategy):
    name = "smft"
    storage = "memory"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.trans_done_on: int | None = None   # target holding our one-time transaction copy
        self.sct = 0
        self.nct = 0
        self.trans_bytes = 0

    def setup(self):
        self.ctx.set_progress_hook(self._serve)

    # -- target side --------------------------------------------------------------

    def _serve(self):
        serve_resize_requests(self.ctx)

    # -- source side --------------------------------------------------------------

    def _handshake(self, kind: str, nbytes: int) -> tuple[str, int]:
        return request_window(self.ctx, self.target, kind, nbytes)

    def checkpoint(self, tree, processed: int) -> CheckpointKind:
        ctx, target = self.ctx, self.target
        if self.trans_done_on != target:
            self.sct = self.nct = self.trans_bytes = 0
            self.trans_done_on = None
        payload = fptree.serialize(tree)
        name, epoch = self._handshake("tree", len(payload))
        ctx.put(name, target, 0, payload, epoch)
        kind = CheckpointKind.PARTIAL
        remaining = self.twin.remaining_bytes
        done_bytes = self.twin.capacity - remaining
        if self.trans_done_on is None and done_bytes >= remaining:
            raw = self.twin.remaining_raw()
            self.nct = self.smft_trans_checkpoint(raw, self.twin.remaining)
            self.sct = processed
            self.trans_bytes = len(raw) if self.nct else 0
            self.trans_done_on = target
            kind = CheckpointKind.COMPLETE
            self.stats.ckpt_bytes += len(raw)
        ctx.flush(target)
        meta = MetadataRecord(src=ctx.rank + 1, cfs=len(payload), ct=processed - 1,
                              cf_ptr=self.trans_bytes, sct=self.sct, nct=self.nct)
        mname, mepoch = self._handshake("meta", MetadataRecord.SIZE)
        ctx.put(mname, target, 0, meta.pack(), mepoch)
        self.stats.ckpt_bytes += len(payload)
        return kind

    def smft_trans_checkpoint(self, raw: bytes, n_trans: int) -> int:
        """Store the unprocessed shard on the target; returns NCT."""
        if not raw:
            return 0
        name, epoch = self._handshake("trans", len(raw))
        self.ctx.put(name, self.target, 0, raw, epoch)
        return n_trans

    # -- holder side --------------------------------------------------------------

    def _local(self, kind: str, failed: int):
        try:
            return self.ctx.local_window(_win(kind, failed))
        except KeyError:
            return None

    def held(self, failed: int) -> MetadataRecord | None:
        win = self._local("meta", failed)
        if win is None or win.capacity < MetadataRecord.SIZE:
            return None
        rec = MetadataRecord.unpack(bytes(win.buf))
        return None if rec.empty else rec

    def take_tree(self, failed: int, order):
        meta = self.held(failed)
        return fptree.deserialize(bytes(self._local("tree", failed).buf[:meta.cfs]), order)

    def take_transactions(self, failed: int, meta: MetadataRecord) -> list[tuple]:
        return dataset.decode_transactions(bytes(self._local("trans", failed).buf), meta.nct)

    def release(self, failed: int):
        for kind in ("tree", "trans", "meta"):
            self.ctx.free_window(_win(kind, failed))
