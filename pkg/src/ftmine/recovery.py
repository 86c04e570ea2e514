"""Restoring a failed rank's share of the work on the survivors.

FP-Growth has three cases, decided by what the backup holder has for the
failed rank:

* NoCheckpoint -- nothing usable; the whole shard is re-read from disk;
* TreeOnly     -- a tree checkpoint, so the holder merges it and only the
  transactions after CT are re-read from disk;
* TreeAndTrans -- a tree plus the unprocessed transactions in the holder's
  memory; nothing touches the disk.

Re-read or recovered transactions are spread evenly over the survivors,
which insert them straight into their local trees.  For KNN the failed
rank's test samples (and checkpointed queues) are either kept on the
recovery rank (OPR) or spread over all survivors (PPR); whoever gets them
replays the ring iterations the queues have not seen yet.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import dataset, fptree
from .checkpoint.policy import MetadataRecord
from .knn import BlockSource, QueueVector, missing_origins, process_block

log = logging.getLogger(__name__)


class RecoveryCase(enum.Enum):
    NO_CHECKPOINT = "NoCheckpoint"
    TREE_ONLY = "TreeOnly"
    TREE_AND_TRANS = "TreeAndTrans"
    OPR = "OPR"
    PPR = "PPR"


class MissingCheckpoint(Exception):
    pass


@dataclass(frozen=True)
class RecoveryPlan:
    failed: int
    recovery_rank: int
    case: RecoveryCase
    trans_source: str            # "disk" | "memory"
    replay_from: int             # local transaction index (FP) or iteration tag (KNN)
    holder: int | None = None
    meta: MetadataRecord | None = None


RedistributionMap = dict


def redistribute(items: Sequence[Any], survivors: Sequence[int]) -> RedistributionMap:
    """Deal ``items`` round-robin over ``survivors`` in rank order."""
    if not survivors:
        raise ValueError("need at least one survivor")
    order = sorted(survivors)
    out: dict[int, list] = {}
    for i, item in enumerate(items):
        out.setdefault(order[i % len(order)], []).append(item)
    return out


# -- event log ----------------------------------------------------------------

@dataclass
class RecoveryEvent:
    step: str
    failed: int
    case: str
    rank: int
    bytes_moved: int = 0
    disk_reads: int = 0
    records: int = 0

    def __str__(self):
        return (f"step={self.step} failed={self.failed} case={self.case} rank={self.rank} "
                f"bytes={self.bytes_moved} disk_reads={self.disk_reads} "
                f"records={self.records}")


@dataclass
class RecoveryLog:
    events: list[RecoveryEvent] = field(default_factory=list)

    def add(self, step: str, plan: RecoveryPlan, rank: int, **counters) -> RecoveryEvent:
        ev = RecoveryEvent(step, plan.failed, plan.case.value, rank, **counters)
        self.events.append(ev)
        log.debug("%s", ev)
        return ev

    def lines(self) -> list[str]:
        return [str(e) for e in self.events]

    def disk_records(self, failed: int) -> int:
        return sum(e.records for e in self.events if e.failed == failed and e.disk_reads)

    def disk_reads(self, failed: int | None = None) -> int:
        return sum(e.disk_reads for e in self.events if failed is None or e.failed == failed)


# -- FP-Growth ------------------------------------------------------------------

def plan_fp_recovery(failed: int, meta: MetadataRecord | None, recovery_rank: int,
                     holder: int | None = None) -> RecoveryPlan:
    if meta is None or meta.cfs == 0:
        return RecoveryPlan(failed, recovery_rank, RecoveryCase.NO_CHECKPOINT, "disk", 0)
    if meta.nct == 0:
        return RecoveryPlan(failed, recovery_rank, RecoveryCase.TREE_ONLY, "disk",
                            meta.ct + 1, holder, meta)
    return RecoveryPlan(failed, recovery_rank, RecoveryCase.TREE_AND_TRANS, "memory",
                        meta.ct + 1, holder, meta)


def gather_fp_plan(ctx, failed: int, strategy) -> RecoveryPlan:
    """Every survivor reports what it holds for ``failed``; the newest copy wins."""
    meta = strategy.held(failed)
    offers = ctx.allgather(meta.pack() if meta is not None else None)
    best: tuple[int, MetadataRecord] | None = None
    for r in sorted(offers):
        if offers[r] is None:
            continue
        rec = MetadataRecord.unpack(offers[r])
        if best is None or rec.ct > best[1].ct:
            best = (r, rec)
    if best is None:
        return plan_fp_recovery(failed, None, ctx.successor(failed))
    holder, meta = best
    return plan_fp_recovery(failed, meta, holder, holder)


def _read_disk_share(ctx, plan, data, lo: int, n: int, serial_master: bool,
                     log_: RecoveryLog) -> list[tuple]:
    """Fetch this rank's share of the failed shard's ``[lo, lo+n)`` from disk.

    ``serial_master`` models DFT: the master reads every survivor's slice in
    turn and ships it.  Otherwise each survivor reads its own slice.
    """
    survivors = ctx.alive
    slices = dataset.parallel_read_failed(data, (lo, n), survivors)
    tag = ("recover", plan.failed)
    if serial_master:
        master = ctx.master
        if ctx.rank == master:
            mine: list[tuple] = []
            for s in survivors:
                start, count = slices[s]
                if not count:
                    continue
                with ctx.detached():
                    raw = data.raw_range(start, count)
                log_.add("disk-read", plan, ctx.rank, bytes_moved=len(raw), disk_reads=1,
                         records=count)
                if s == master:
                    mine = dataset.decode_transactions(raw, count)
                else:
                    ctx.send(s, tag, raw)
            return mine
        start, count = slices[ctx.rank]
        if not count:
            return []
        raw = ctx.recv(master, tag)
        log_.add("receive", plan, ctx.rank, bytes_moved=len(raw), records=count)
        return dataset.decode_transactions(raw, count)
    start, count = slices[ctx.rank]
    if not count:
        return []
    with ctx.detached():
        raw = data.raw_range(start, count)
    log_.add("disk-read", plan, ctx.rank, bytes_moved=len(raw), disk_reads=1, records=count)
    return dataset.decode_transactions(raw, count)


def execute_fp_recovery(plan: RecoveryPlan, ctx, tree: fptree.FPTree, strategy, data,
                        manifest, log_: RecoveryLog) -> int:
    """Run one plan on this survivor; returns how many transactions it absorbed."""
    f, me = plan.failed, ctx.rank
    start, count = manifest[f]
    log_.add("plan", plan, me)
    if plan.case is not RecoveryCase.NO_CHECKPOINT and me == plan.recovery_rank:
        ftree = strategy.take_tree(f, tree.order)
        fptree.merge(tree, ftree)
        log_.add("merge-tree", plan, me, bytes_moved=plan.meta.cfs)

    n = count - plan.replay_from
    if plan.trans_source == "memory":
        tag = ("recover", f)
        if me == plan.recovery_rank:
            held = strategy.take_transactions(f, plan.meta)
            trans = held[plan.replay_from - plan.meta.sct:]
            rmap = redistribute(trans, ctx.alive)
            for s in ctx.alive:
                if s == me:
                    continue
                raw = dataset.encode_transactions(rmap.get(s, []))
                ctx.send(s, tag, raw)
                log_.add("send", plan, me, bytes_moved=len(raw), records=len(rmap.get(s, [])))
            mine = rmap.get(me, [])
        else:
            raw = ctx.recv(plan.recovery_rank, tag)
            mine = dataset.decode_transactions(raw)
    elif n > 0:
        mine = _read_disk_share(ctx, plan, data, start + plan.replay_from, n,
                                strategy.name == "dft", log_)
    else:
        mine = []
    tree.insert_many(mine)
    log_.add("replay", plan, me, records=len(mine))
    if me == plan.recovery_rank:
        strategy.release(f)
    return len(mine)


def fp_recover_all(ctx, failed: Sequence[int], tree, strategy, data, manifest,
                   log_: RecoveryLog) -> float:
    """Recover every failed rank in order; returns the seconds spent on this rank."""
    t0 = time.perf_counter()
    for f in sorted(failed):
        plan = gather_fp_plan(ctx, f, strategy)
        execute_fp_recovery(plan, ctx, tree, strategy, data, manifest, log_)
    ctx.barrier()
    return time.perf_counter() - t0


# -- KNN ------------------------------------------------------------------------

def gather_knn_plan(ctx, failed: int, ckpt, mode: str) -> RecoveryPlan:
    tag = ckpt.held(failed)
    offers = ctx.allgather(tag)
    best: tuple[int, int] | None = None
    for r in sorted(offers):
        t = offers[r]
        if t is not None and (best is None or t > best[1]):
            best = (r, t)
    case = RecoveryCase.PPR if mode == "ppr" else RecoveryCase.OPR
    if best is None:
        return RecoveryPlan(failed, ctx.successor(failed), case, "disk", 0)
    return RecoveryPlan(failed, best[0], case, "memory", best[1], best[0])


def _knn_replay(ctx, plan, pts: np.ndarray, qv: QueueVector, source: BlockSource,
                log_: RecoveryLog) -> QueueVector:
    reads_before = source.disk_reads
    # qv.tag, not plan.replay_from: a rejected checkpoint restarts from 0
    replayed = 0
    for origin in missing_origins(plan.failed, qv.tag, ctx.size):
        block = source.fetch(origin)
        process_block(pts, block, qv)
        replayed += block.points.nbytes
    qv.tag = ctx.size
    log_.add("replay", plan, ctx.rank, bytes_moved=replayed, records=len(qv),
             disk_reads=source.disk_reads - reads_before)
    return qv


def _load_failed_samples(ctx, plan, ckpt, test_file, test_manifest, k, log_):
    start, count = test_manifest[plan.failed]
    with ctx.detached():
        raw = test_file.raw_range(start, count)
    pts = np.frombuffer(raw, dtype="<f8").reshape(count, test_file.dims).astype(np.float64)
    log_.add("read-samples", plan, ctx.rank, bytes_moved=len(raw), disk_reads=1, records=count)
    qv = None
    if plan.holder is not None:
        try:
            qv = ckpt.take(plan.failed)
            ids = list(range(start, start + count))
            if qv.tag != plan.replay_from or qv.test_ids.tolist() != ids:
                raise MissingCheckpoint(f"checkpoint of rank {plan.failed} is inconsistent")
            log_.add("adopt-queues", plan, ctx.rank, records=len(qv))
        except (MissingCheckpoint, ValueError) as exc:
            log.warning("%s; recomputing its samples from iteration 0", exc)
            qv = None
    if qv is None:
        qv = QueueVector.empty(plan.failed, k, range(start, start + count))
    ckpt.release(plan.failed)
    return pts, qv


def knn_opr_recover(plan: RecoveryPlan, ctx, ckpt, test_file, test_manifest,
                    source: BlockSource, k: int, log_: RecoveryLog) -> QueueVector | None:
    """The recovery rank alone adopts and finishes the failed rank's samples."""
    if ctx.rank != plan.recovery_rank:
        return None
    pts, qv = _load_failed_samples(ctx, plan, ckpt, test_file, test_manifest, k, log_)
    return _knn_replay(ctx, plan, pts, qv, source, log_)


def knn_ppr_recover(plan: RecoveryPlan, ctx, ckpt, test_file, test_manifest,
                    source: BlockSource, k: int, log_: RecoveryLog) -> QueueVector:
    """The recovered samples and their queues are dealt out to all survivors."""
    tag = ("recover", plan.failed)
    if ctx.rank == plan.recovery_rank:
        pts, qv = _load_failed_samples(ctx, plan, ckpt, test_file, test_manifest, k, log_)
        rmap = redistribute(list(range(len(qv))), ctx.alive)
        for s in ctx.alive:
            rows = rmap.get(s, [])
            share = (pts[rows], qv.subset(rows))
            if s == ctx.rank:
                mine = share
            else:
                ctx.send(s, tag, share)
                log_.add("send", plan, ctx.rank, bytes_moved=share[0].nbytes, records=len(rows))
    else:
        mine = ctx.recv(plan.recovery_rank, tag)
    return _knn_replay(ctx, plan, mine[0], mine[1], source, log_)


def knn_recover_all(ctx, failed: Sequence[int], ckpt, test_file, test_manifest,
                    source: BlockSource, k: int, mode: str, log_: RecoveryLog
                    ) -> tuple[list[QueueVector], dict[int, int], float]:
    """Returns (recovered queue vectors on this rank, samples per failed rank, seconds)."""
    t0 = time.perf_counter()
    out, counts = [], {}
    for f in sorted(failed):
        plan = gather_knn_plan(ctx, f, ckpt, mode)
        fn = knn_ppr_recover if plan.case is RecoveryCase.PPR else knn_opr_recover
        qv = fn(plan, ctx, ckpt, test_file, test_manifest, source, k, log_)
        counts[f] = 0 if qv is None else len(qv)
        if qv is not None:
            out.append(qv)
    ctx.barrier()
    return out, counts, time.perf_counter() - t0
