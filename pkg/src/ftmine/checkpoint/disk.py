"""Disk-based checkpointing (DFT).

Each rank writes its serialized tree to ``ckpt/rank{r}/epoch{e}.tree`` and
then a 16-byte ``epoch{e}.meta`` (epoch, CT, crc32 of the tree, flag).  Both
go through write-then-rename, and the meta file is only renamed into place
after the tree file, so a reader that trusts the meta never sees a torn tree.
Two epochs are retained.
"""

from __future__ import annotations

import logging
import os
import struct
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

from .. import fptree
from .base import FPStrategy
from .policy import CheckpointKind, MetadataRecord

log = logging.getLogger(__name__)

_META = struct.Struct("<IiII")   # epoch, CT, checksum, flag
META_SIZE = _META.size
FLAG_COMPLETE = 1
KEEP_EPOCHS = 2


class IoError(OSError):
    pass


@dataclass(frozen=True)
class DiskCheckpoint:
    epoch: int
    ct: int
    payload: bytes


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class DiskCheckpointStore:
    """Epoch files for one rank under ``root/rank{r}``."""

    def __init__(self, root: str | os.PathLike, rank: int, keep: int = KEEP_EPOCHS,
                 read_delay: float = 0.0):
        self.dir = Path(root) / f"rank{rank}"
        self.rank = rank
        self.keep = keep
        self.read_delay = read_delay
        self.reads = 0
        self.next_epoch = 0
        self.dir.mkdir(parents=True, exist_ok=True)
        existing = self.epochs()
        if existing:
            self.next_epoch = existing[-1] + 1

    def _paths(self, epoch: int) -> tuple[Path, Path]:
        return self.dir / f"epoch{epoch}.tree", self.dir / f"epoch{epoch}.meta"

    def epochs(self) -> list[int]:
        out = []
        for p in self.dir.glob("epoch*.meta"):
            try:
                out.append(int(p.stem[len("epoch"):]))
            except ValueError:
                continue
        return sorted(out)

    def write(self, payload: bytes, ct: int) -> int:
        epoch = self.next_epoch
        tree_path, meta_path = self._paths(epoch)
        try:
            _atomic_write(tree_path, payload)
            _atomic_write(meta_path, _META.pack(epoch, ct, zlib.crc32(payload), FLAG_COMPLETE))
        except OSError as exc:
            raise IoError(f"rank {self.rank}: checkpoint epoch {epoch} failed: {exc}") from exc
        self.next_epoch += 1
        self._recycle()
        return epoch

    def _recycle(self):
        for epoch in self.epochs()[:-self.keep]:
            for p in self._paths(epoch):
                p.unlink(missing_ok=True)

    def read_meta(self, epoch: int) -> tuple[int, int, int, int] | None:
        _, meta_path = self._paths(epoch)
        try:
            raw = meta_path.read_bytes()
        except OSError:
            return None
        if len(raw) != META_SIZE:
            return None
        return _META.unpack(raw)

    def latest_meta(self) -> tuple[int, int] | None:
        """(epoch, CT) of the newest complete epoch, without reading the tree."""
        best = None
        for epoch in self.epochs():
            meta = self.read_meta(epoch)
            if meta is None or meta[3] != FLAG_COMPLETE:
                continue
            if best is None or (meta[1], meta[0]) > (best[1], best[0]):
                best = (meta[0], meta[1])
        return best

    def latest(self) -> DiskCheckpoint | None:
        """Newest epoch whose tree matches its meta checksum (highest CT wins)."""
        candidates = []
        for epoch in self.epochs():
            meta = self.read_meta(epoch)
            if meta is not None and meta[3] == FLAG_COMPLETE:
                candidates.append(meta)
        for ep, ct, crc, _ in sorted(candidates, key=lambda m: (m[1], m[0]), reverse=True):
            tree_path, _ = self._paths(ep)
            try:
                payload = tree_path.read_bytes()
            except OSError:
                continue
            self.reads += 1
            if self.read_delay:
                time.sleep(self.read_delay)
            if zlib.crc32(payload) == crc:
                return DiskCheckpoint(ep, ct, payload)
            log.warning("rank %d epoch %d: checksum mismatch, trying older", self.rank, ep)
        return None


class DFTStrategy(FPStrategy):
    name = "dft"
    storage = "disk"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        root = self.options.get("ckpt_dir", "ckpt")
        self.read_delay = self.options.get("read_delay", 0.0)
        self.store = DiskCheckpointStore(root, self.ctx.rank, read_delay=self.read_delay)
        self.root = root
        self._loaded: dict[int, DiskCheckpoint] = {}

    def checkpoint(self, tree, processed: int) -> CheckpointKind:
        payload = fptree.serialize(tree)
        try:
            with self.ctx.detached():
                self.store.write(payload, processed - 1)
        except IoError as exc:
            log.warning("%s; keeping the previous epoch", exc)
            return CheckpointKind.NONE
        self.stats.ckpt_bytes += len(payload)
        return CheckpointKind.PARTIAL

    # The recovery rank (ring successor of the failed rank) reads its files.

    def held(self, failed: int) -> MetadataRecord | None:
        if self.ctx.successor(failed) != self.ctx.rank:
            return None
        store = DiskCheckpointStore(self.root, failed, read_delay=self.read_delay)
        with self.ctx.detached():
            ckpt = store.latest()
        self.stats.disk_reads += store.reads
        if ckpt is None:
            return None
        self._loaded[failed] = ckpt
        return MetadataRecord(src=failed + 1, cfs=len(ckpt.payload), ct=ckpt.ct)

    def take_tree(self, failed: int, order):
        return fptree.deserialize(self._loaded[failed].payload, order)

    def release(self, failed: int):
        self._loaded.pop(failed, None)
