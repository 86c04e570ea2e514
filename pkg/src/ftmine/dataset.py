"""Synthetic datasets, the indexed on-disk format, and rank partitioning.

File layout (all integers little-endian)::

    header   magic "FTMD" | u16 version | u16 kind | u64 n_records | u32 width | u32 0
    index    (n_records + 1) x u64 byte offsets into the data section
    data     transactions: u32 length, then length x u32 sorted item ids
             points:       width x f64 coordinates

``width`` is ``n_items`` for transaction files and the dimensionality for
point files.  The offset index lets recovery seek straight to any record.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

MAGIC = b"FTMD"
VERSION = 1
KIND_TRANSACTIONS = 0
KIND_POINTS = 1

_HEADER = struct.Struct("<4sHHQII")
_U32 = struct.Struct("<I")

Transaction = tuple  # sorted, duplicate-free tuple of item ids


class InvalidRange(ValueError):
    pass


class DatasetError(Exception):
    pass


class OutOfBounds(DatasetError, IndexError):
    pass


# -- record codecs (shared with the transaction windows) ---------------------

def record_size(trans: Sequence[int]) -> int:
    return 4 * (len(trans) + 1)


def encode_transactions(transactions: Iterable[Sequence[int]]) -> bytes:
    return kernels.encode_transactions(list(transactions))


def decode_transactions(buf, count: int | None = None) -> list[Transaction]:
    """Decode ``count`` length-prefixed transactions (all of ``buf`` if None)."""
    return kernels.decode_transactions(bytes(buf), -1 if count is None else count)


# -- partitioning ------------------------------------------------------------

@dataclass(frozen=True)
class PartitionManifest:
    ranges: tuple[tuple[int, int], ...]

    def __getitem__(self, rank: int) -> tuple[int, int]:
        return self.ranges[rank]

    def __len__(self):
        return len(self.ranges)

    def sizes(self) -> list[int]:
        return [c for _, c in self.ranges]

    def owner_of(self, index: int) -> int:
        for r, (start, count) in enumerate(self.ranges):
            if start <= index < start + count:
                return r
        raise OutOfBounds(index)


def split_even(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous (start, count) slices of ``range(n)``; earlier parts take the remainder."""
    if parts < 1:
        raise ValueError("need at least one part")
    base, extra = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        count = base + (1 if i < extra else 0)
        out.append((start, count))
        start += count
    return out


def partition(file: "DatasetFile | int", p: int) -> PartitionManifest:
    n = file if isinstance(file, int) else file.n_records
    return PartitionManifest(tuple(split_even(n, p)))


# -- the file ----------------------------------------------------------------

@dataclass
class IoStats:
    reads: int = 0
    records_read: int = 0
    bytes_read: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, records: int, nbytes: int):
        with self._lock:
            self.reads += 1
            self.records_read += records
            self.bytes_read += nbytes


class DatasetFile:
    """Read-only handle on an indexed dataset file.

    ``read_delay`` is the disk-latency shim: every read call sleeps that many
    seconds, which lets disk-bound recovery paths be told apart from
    memory-bound ones at desk scale.
    """

    def __init__(self, path: str | os.PathLike, read_delay: float = 0.0):
        self.path = Path(path)
        self.read_delay = read_delay
        self.stats = IoStats()
        raw = self.path.read_bytes()
        if len(raw) < _HEADER.size:
            raise DatasetError(f"{self.path}: truncated header")
        magic, version, kind, n, width, _ = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC or version != VERSION:
            raise DatasetError(f"{self.path}: not a dataset file")
        self.kind = kind
        self.n_records = n
        self.width = width
        idx_end = _HEADER.size + 8 * (n + 1)
        self._index = np.frombuffer(raw, dtype="<u8", count=n + 1, offset=_HEADER.size)
        self._data = raw[idx_end:]
        self._raw = raw

    @property
    def n_items(self) -> int:
        return self.width

    @property
    def dims(self) -> int:
        return self.width

    def __len__(self):
        return self.n_records

    def checksum(self) -> str:
        return hashlib.sha256(self._raw).hexdigest()

    def _span(self, start: int, count: int) -> tuple[int, int]:
        if start < 0 or count < 0 or start + count > self.n_records:
            raise OutOfBounds(f"[{start}, {start + count}) outside {self.n_records} records")
        return int(self._index[start]), int(self._index[start + count])

    def _account(self, count: int, nbytes: int):
        self.stats.add(count, nbytes)
        if self.read_delay:
            time.sleep(self.read_delay)

    def raw_range(self, start: int, count: int) -> bytes:
        """Encoded bytes of records ``[start, start+count)``; counted as one read."""
        lo, hi = self._span(start, count)
        self._account(count, hi - lo)
        return self._data[lo:hi]

    def read_range(self, start: int, count: int) -> list[Transaction]:
        if self.kind != KIND_TRANSACTIONS:
            raise DatasetError("not a transaction file")
        return decode_transactions(self.raw_range(start, count), count)

    def read_points(self, start: int, count: int) -> np.ndarray:
        if self.kind != KIND_POINTS:
            raise DatasetError("not a point file")
        return np.frombuffer(self.raw_range(start, count), dtype="<f8").reshape(count, self.width)

    def peek_range(self, start: int, count: int) -> bytes:
        """Like :meth:`raw_range` but not counted; used for initial shard loading."""
        lo, hi = self._span(start, count)
        return self._data[lo:hi]

    def shard_bytes(self, start: int, count: int) -> int:
        lo, hi = self._span(start, count)
        return hi - lo


def parallel_read_failed(file: DatasetFile, failed_range: tuple[int, int],
                         survivors: Sequence[int]) -> dict[int, tuple[int, int]]:
    """Split a failed shard into one contiguous read slice per survivor.

    Returns survivor -> (start, count); concatenating the slices in survivor
    order reproduces the failed range.  The caller on each survivor then reads
    its own slice with :meth:`DatasetFile.read_range`.
    """
    if not survivors:
        raise ValueError("need at least one survivor")
    start, count = failed_range
    if start < 0 or count < 0 or start + count > file.n_records:
        raise OutOfBounds(f"failed range {failed_range} outside file")
    slices = split_even(count, len(survivors))
    return {s: (start + off, n) for s, (off, n) in zip(sorted(survivors), slices)}


# -- writers and generators --------------------------------------------------

def _write(path, kind: int, width: int, records: list[bytes]) -> DatasetFile:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offsets = np.zeros(len(records) + 1, dtype="<u8")
    if records:
        offsets[1:] = np.cumsum([len(r) for r in records])
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, len(records), width, 0))
        fh.write(offsets.tobytes())
        for r in records:
            fh.write(r)
    os.replace(tmp, path)
    return DatasetFile(path)


def write_transactions(path, transactions: Sequence[Sequence[int]], n_items: int) -> DatasetFile:
    records = []
    for t in transactions:
        items = sorted(set(t))
        if not items:
            raise InvalidRange("empty transaction")
        if items[0] < 0 or items[-1] >= n_items:
            raise InvalidRange(f"item outside [0, {n_items})")
        records.append(_U32.pack(len(items)) + struct.pack(f"<{len(items)}I", *items))
    return _write(path, KIND_TRANSACTIONS, n_items, records)


def write_points(path, points: np.ndarray) -> DatasetFile:
    points = np.asarray(points, dtype="<f8")
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    return _write(path, KIND_POINTS, points.shape[1], [row.tobytes() for row in points])


def zipf_weights(n_items: int, exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n_items + 1, dtype=float) ** exponent
    return w / w.sum()


def generate_transactions(path, n_trans: int, n_items: int, len_range: tuple[int, int],
                          seed: int, zipf: float = 1.0) -> DatasetFile:
    """Market-basket style data with Zipf-skewed item popularity.

    Low item ids are the popular ones.  Lengths are uniform over ``len_range``
    (inclusive) and items within a transaction are distinct.
    """
    lo, hi = len_range
    if n_items < 1 or not 1 <= lo <= hi <= n_items:
        raise InvalidRange(f"length range {len_range} not within [1, {n_items}]")
    rng = np.random.default_rng(seed)
    weights = zipf_weights(n_items, zipf)
    out = []
    for _ in range(n_trans):
        k = int(rng.integers(lo, hi + 1))
        out.append(rng.choice(n_items, size=k, replace=False, p=weights).tolist())
    return write_transactions(path, out, n_items)


def generate_points(path, n_samples: int, dims: int, seed: int) -> DatasetFile:
    """Uniform points in ``[-1, 1]^dims``."""
    if dims < 1:
        raise ValueError("dims must be >= 1")
    rng = np.random.default_rng(seed)
    return write_points(path, rng.uniform(-1.0, 1.0, size=(n_samples, dims)))
