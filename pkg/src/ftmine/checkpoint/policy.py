"""Checkpoint scheduling, the AMFT decision rule and the metadata record."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, fields


class CheckpointKind(enum.Enum):
    COMPLETE = "complete"   # tree + remaining transactions
    PARTIAL = "partial"     # tree only
    NONE = "none"


@dataclass(frozen=True)
class CheckpointPolicy:
    checkpoints: int
    shard_len: int

    def __post_init__(self):
        if self.checkpoints < 1:
            raise ValueError("need at least one checkpoint per phase")

    @property
    def interval(self) -> int:
        return max(1, math.ceil(self.shard_len / self.checkpoints))


def should_checkpoint(processed: int, policy: CheckpointPolicy) -> bool:
    return processed > 0 and processed % policy.interval == 0


def amft_decide(free_bytes: int, tree_bytes: int, remaining_bytes: int,
                complete_done: bool) -> CheckpointKind:
    if not complete_done and free_bytes >= tree_bytes + remaining_bytes:
        return CheckpointKind.COMPLETE
    if free_bytes >= tree_bytes:
        return CheckpointKind.PARTIAL
    return CheckpointKind.NONE


_META = struct.Struct("<8q")


@dataclass
class MetadataRecord:
    """Describes the checkpoint a source rank holds in a target's memory.

    ``ct`` and ``sct`` are indices into the source's local shard; ``ct`` is
    the last transaction folded into the checkpointed tree (-1 = none).
    ``src`` is the source rank + 1 so that an all-zero record means "empty";
    ``base`` is where the source's region starts inside the target buffer.
    """

    src: int = 0
    base: int = 0
    cf_ptr: int = 0
    cfs: int = 0
    ct: int = -1
    sct: int = 0
    nct: int = 0
    ls_ptr: int = 0

    SIZE = _META.size

    def pack(self) -> bytes:
        return _META.pack(*(getattr(self, f.name) for f in fields(self)))

    @classmethod
    def unpack(cls, buf, offset: int = 0) -> "MetadataRecord":
        return cls(*_META.unpack_from(buf, offset))

    @property
    def source(self) -> int | None:
        return self.src - 1 if self.src else None

    @property
    def end(self) -> int:
        """One past the last byte of this source's region."""
        return self.base + self.cf_ptr + self.cfs

    @property
    def empty(self) -> bool:
        return self.src == 0
