"""One experiment: spawn a world, run an algorithm under a strategy, collect metrics."""

from __future__ import annotations

import hashlib
import logging
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import dataset, fptree, knn
from ..checkpoint import (FP_STRATEGIES, FT_MODES, KNN_STRATEGIES, CheckpointPolicy, RankStats,
                          TransactionWindow, resident_bytes)
from ..fabric import FaultSchedule, spawn_world
from ..recovery import RecoveryLog, fp_recover_all, knn_recover_all

log = logging.getLogger(__name__)

ALGOS = ("fpgrowth", "knn")
TRANS_FILE = "transactions.ftmd"
TRAIN_FILE = "train.ftmd"
TEST_FILE = "test.ftmd"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algo: str
    data: Path
    ft: str = "none"
    p: int = 4
    theta: float | None = None
    k: int | None = None
    ckpts: int = 4
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    seed: int = 0
    out: Path | None = None
    read_delay: float = 0.0
    knn_recovery: str = "ppr"
    trace: bool = False
    ckpt_dir: Path | None = None

    def validate(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if self.ft not in FT_MODES:
            raise ConfigError(f"unknown ft mode {self.ft!r}")
        if self.p < 1:
            raise ConfigError("need at least one process")
        if self.ckpts < 1:
            raise ConfigError("--ckpts must be >= 1")
        if self.algo == "fpgrowth":
            if self.k is not None:
                raise ConfigError("--k only applies to knn")
            if self.theta is None or not 0 < self.theta <= 1:
                raise ConfigError("--support must be in (0, 1]")
        else:
            if self.theta is not None:
                raise ConfigError("--support only applies to fpgrowth")
            if self.k is None or self.k < 1:
                raise ConfigError("--k must be >= 1")
        if self.knn_recovery not in ("opr", "ppr"):
            raise ConfigError("knn recovery must be opr or ppr")
        for e in self.faults.events:
            if not 0 <= e.rank < self.p:
                raise ConfigError(f"fault rank {e.rank} outside [0, {self.p})")
        if self.faults.events and len(self.faults) >= self.p:
            raise ConfigError("fault schedule would leave no rank alive")

    @property
    def param(self) -> float | int:
        return self.theta if self.algo == "fpgrowth" else self.k


@dataclass
class Metrics:
    total_time: float
    checkpoint_time: float
    recovery_time: float
    bytes_checkpointed: int
    disk_reads: int
    peak_ckpt_bytes_per_rank: int
    output_checksum: str


@dataclass
class RunResult:
    config: RunConfig
    metrics: Metrics
    text: str
    failed: list[int]
    events: list[str]
    rank_stats: dict[int, dict]
    peak_bytes: dict[int, int]          # rank -> peak (checkpoint + unprocessed + metadata) bytes
    shard_bytes: dict[int, int]
    failed_disk_records: dict[int, int]  # failed rank -> records of its shard re-read from disk
    failed_shard_records: dict[int, int]
    recovered_samples: dict[int, dict[int, int]]   # failed rank -> survivor -> samples
    trace: list = field(default_factory=list)

    @property
    def checksum(self) -> str:
        return self.metrics.output_checksum


def checksum(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class SpaceMonitor:
    """Peak footprint per rank, sampled after each checkpoint write lands."""

    def __init__(self):
        self.peak: dict[int, int] = {}
        self._lock = threading.Lock()

    def __call__(self, rank: int, nbytes: int):
        with self._lock:
            if nbytes > self.peak.get(rank, 0):
                self.peak[rank] = nbytes


@dataclass
class _Outcome:
    text: str | None
    stats: RankStats
    rec_time: float
    events: RecoveryLog
    recovered: dict[int, int] = field(default_factory=dict)


def _failed_list(ctx) -> list[int]:
    return ctx.bcast(sorted(set(range(ctx.size)) - set(ctx.alive)), ctx.master)


# -- FP-Growth ------------------------------------------------------------------

def _ring_merge(ctx, tree: fptree.FPTree) -> fptree.FPTree | None:
    """Pass trees down the chain of alive ranks towards the master."""
    alive = ctx.alive
    pos = alive.index(ctx.rank)
    if pos + 1 < len(alive):
        buf = ctx.recv(alive[pos + 1], "merge")
        fptree.merge(tree, fptree.deserialize(buf, tree.order))
    if pos > 0:
        ctx.send(alive[pos - 1], "merge", fptree.serialize(tree))
        return None
    return tree


def fp_rank(ctx, cfg: RunConfig, data: dataset.DatasetFile, manifest, ckpt_dir: str,
            monitor: SpaceMonitor) -> _Outcome:
    start, count = manifest[ctx.rank]
    shard = data.peek_range(start, count)
    twin = TransactionWindow(ctx, shard, start, count)
    monitor(ctx.rank, resident_bytes(ctx.world, ctx.rank))
    stats = RankStats()
    local = fptree.count_local(dataset.decode_transactions(shard, count), data.n_items)
    order = fptree.global_frequent(local, cfg.theta, data.n_records, ctx)

    policy = CheckpointPolicy(cfg.ckpts, count)
    strategy = FP_STRATEGIES[cfg.ft](ctx, twin, policy, stats, ckpt_dir=ckpt_dir,
                                     read_delay=cfg.read_delay, monitor=monitor)
    strategy.setup()
    tree = fptree.FPTree(order)
    ctx.progress(0, count)
    for i in range(count):
        tree.insert(twin.next())
        strategy.after_transaction(tree, i + 1)
        ctx.progress(i + 1, count)

    ctx.barrier()
    failed = _failed_list(ctx)
    events = RecoveryLog()
    rec_time = 0.0
    if failed:
        if any(strategy.needs_critical(f) for f in failed):
            strategy.critical_checkpoint(tree, count)
        rec_time = fp_recover_all(ctx, failed, tree, strategy, data, manifest, events)

    merged = _ring_merge(ctx, tree)
    text = None
    if merged is not None:
        text = fptree.format_itemsets(fptree.mine(merged, order.min_count))
    text = ctx.bcast(text, ctx.master)
    strategy.teardown()
    return _Outcome(text, stats, rec_time, events)


# -- KNN --------------------------------------------------------------------------

def _points(f: dataset.DatasetFile, start: int, count: int) -> np.ndarray:
    raw = f.peek_range(start, count)
    return np.frombuffer(raw, dtype="<f8").reshape(count, f.dims).astype(np.float64)


def knn_rank(ctx, cfg: RunConfig, train: dataset.DatasetFile, test: dataset.DatasetFile,
             train_man, test_man, ckpt_dir: str) -> _Outcome:
    start, count = test_man[ctx.rank]
    tests = _points(test, start, count)
    stats = RankStats()
    source = knn.BlockSource(ctx, train, train_man)
    source.own()
    ckpt = KNN_STRATEGIES[cfg.ft](ctx, cfg.k, test.n_records, stats, ckpt_dir=ckpt_dir,
                                  read_delay=cfg.read_delay)
    ckpt.setup()
    ctx.barrier()   # every rank's windows exist before anyone touches them
    qv = knn.run_knn(ctx, tests, range(start, start + count), source, cfg.k, ckpt)

    ctx.barrier()
    failed = _failed_list(ctx)
    events = RecoveryLog()
    rec_time = 0.0
    extra: list[knn.QueueVector] = []
    recovered: dict[int, int] = {}
    if failed:
        extra, recovered, rec_time = knn_recover_all(ctx, failed, ckpt, test, test_man, source,
                                                     cfg.k, cfg.knn_recovery, events)
    rows = qv.results()
    for q in extra:
        rows.update(q.results())
    text = None
    if ctx.rank == ctx.master:
        for r in ctx.alive:
            if r != ctx.rank:
                rows.update(ctx.recv(r, "gather"))
        text = knn.format_neighbors(rows)
    else:
        ctx.send(ctx.master, "gather", rows)
    ctx.barrier()
    ckpt.teardown()
    return _Outcome(text, stats, rec_time, events, recovered)


# -- driver -------------------------------------------------------------------------

def run_experiment(cfg: RunConfig) -> RunResult:
    cfg.validate()
    data_dir = Path(cfg.data)
    ft = cfg.ft
    if cfg.p == 1 and ft != "none":
        log.warning("single rank: fault tolerance disabled")
        ft = "none"
    run_cfg = replace(cfg, ft=ft)
    world = spawn_world(cfg.p, cfg.faults, cfg.seed, trace=cfg.trace)
    monitor = SpaceMonitor()

    with tempfile.TemporaryDirectory(prefix="ftmine-ckpt-") as tmp:
        ckpt_dir = str(cfg.ckpt_dir or tmp)
        t0 = time.perf_counter()
        if cfg.algo == "fpgrowth":
            data = dataset.DatasetFile(data_dir / TRANS_FILE, read_delay=cfg.read_delay)
            manifest = dataset.partition(data, cfg.p)
            outcomes = world.run(fp_rank, run_cfg, data, manifest, ckpt_dir, monitor)
            shard_bytes = {r: data.shard_bytes(*manifest[r]) for r in range(cfg.p)}
            shard_records = {r: manifest[r][1] for r in range(cfg.p)}
        else:
            train = dataset.DatasetFile(data_dir / TRAIN_FILE, read_delay=cfg.read_delay)
            test = dataset.DatasetFile(data_dir / TEST_FILE, read_delay=cfg.read_delay)
            train_man = dataset.partition(train, cfg.p)
            test_man = dataset.partition(test, cfg.p)
            outcomes = world.run(knn_rank, run_cfg, train, test, train_man, test_man, ckpt_dir)
            shard_bytes = {r: train.shard_bytes(*train_man[r]) for r in range(cfg.p)}
            shard_records = {r: test_man[r][1] for r in range(cfg.p)}
        total = time.perf_counter() - t0

    alive = [r for r in range(cfg.p) if outcomes[r] is not None]
    failed = [r for r in range(cfg.p) if outcomes[r] is None]
    master = min(alive)
    text = outcomes[master].text
    events = [ev for r in alive for ev in outcomes[r].events.events]
    stats = {r: outcomes[r].stats for r in alive}
    disk_records = {f: sum(e.records for e in events
                           if e.failed == f and e.disk_reads and e.step == "disk-read")
                    for f in failed}
    recovered = {f: {r: outcomes[r].recovered.get(f, 0) for r in alive} for f in failed}
    metrics = Metrics(
        total_time=total,
        checkpoint_time=max((s.ckpt_time for s in stats.values()), default=0.0),
        recovery_time=max((outcomes[r].rec_time for r in alive), default=0.0),
        bytes_checkpointed=sum(s.ckpt_bytes for s in stats.values()),
        disk_reads=sum(e.disk_reads for e in events) + sum(s.disk_reads for s in stats.values()),
        peak_ckpt_bytes_per_rank=max(monitor.peak.values(), default=0),
        output_checksum=checksum(text),
    )
    result = RunResult(
        config=cfg, metrics=metrics, text=text, failed=failed,
        events=[str(e) for e in events],
        rank_stats={r: s.as_dict() for r, s in stats.items()},
        peak_bytes=dict(monitor.peak), shard_bytes=shard_bytes,
        failed_disk_records=disk_records,
        failed_shard_records={f: shard_records[f] for f in failed},
        recovered_samples=recovered, trace=list(world.trace),
    )
    if cfg.out is not None:
        write_outputs(result, Path(cfg.out))
    return result


RESULT_FILE = "result.txt"
METRICS_FILE = "metrics.csv"
LOG_FILE = "recovery.log"


def write_outputs(result: RunResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / RESULT_FILE).write_text(result.text)
    (out / LOG_FILE).write_text("".join(line + "\n" for line in result.events))
    m = asdict(result.metrics)
    (out / METRICS_FILE).write_text(",".join(m) + "\n" + ",".join(str(v) for v in m.values())
                                    + "\n")
