"""Sweeps over (ft mode x P x parameter x fault) emitting one CSV row per cell."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from ..fabric import FaultSchedule
from .runner import RunConfig, run_experiment

log = logging.getLogger(__name__)

COLUMNS = ["algo", "ft", "p", "theta_or_k", "fault", "total_time", "ckpt_time", "rec_time",
           "bytes", "peak_bytes", "checksum", "overhead_pct", "rec_speedup", "status"]


def _row(cfg: RunConfig, fault: str) -> dict:
    row = {"algo": cfg.algo, "ft": cfg.ft, "p": cfg.p, "theta_or_k": cfg.param, "fault": fault,
           "total_time": "", "ckpt_time": "", "rec_time": "", "bytes": "", "peak_bytes": "",
           "checksum": "", "overhead_pct": "", "rec_speedup": "", "status": "ok"}
    try:
        m = run_experiment(cfg).metrics
    except Exception as exc:  # noqa: BLE001 - a broken cell must not stop the sweep
        log.exception("cell %s/%s/p=%d/%s failed", cfg.algo, cfg.ft, cfg.p, fault)
        row["status"] = f"error: {type(exc).__name__}: {exc}"
        return row
    row.update(total_time=m.total_time, ckpt_time=m.checkpoint_time, rec_time=m.recovery_time,
               bytes=m.bytes_checkpointed, peak_bytes=m.peak_ckpt_bytes_per_rank,
               checksum=m.output_checksum)
    return row


def annotate(rows: list[dict]) -> list[dict]:
    """Fill overhead% (vs ft=none, no fault) and DFT-relative recovery speedup."""
    def cell(r):
        return r["algo"], r["p"], r["theta_or_k"]

    baseline = {cell(r): r["total_time"] for r in rows
                if r["ft"] == "none" and r["fault"] == "none" and r["status"] == "ok"}
    dft_rec = {(cell(r), r["fault"]): r["rec_time"] for r in rows
               if r["ft"] == "dft" and r["status"] == "ok"}
    for r in rows:
        if r["status"] != "ok":
            continue
        base = baseline.get(cell(r))
        if r["fault"] == "none" and base:
            r["overhead_pct"] = 100.0 * (r["total_time"] - base) / base
        dft = dft_rec.get((cell(r), r["fault"]))
        if r["fault"] != "none" and r["ft"] != "none" and dft is not None and r["rec_time"]:
            r["rec_speedup"] = dft / r["rec_time"]
    return rows


def bench(algo: str, data: Path, fts: Sequence[str], ps: Sequence[int],
          params: Sequence[float | int], faults: Iterable[str] = (), ckpts: int = 4,
          seed: int = 0, read_delay: float = 0.0) -> list[dict]:
    """Run every cell sequentially; a fault spec like ``1@0.8`` also runs with no fault."""
    fault_specs = ["none"] + [f for f in faults if f != "none"]
    rows = []
    for p in ps:
        for param in params:
            for fault in fault_specs:
                for ft in fts:
                    base = RunConfig(algo=algo, data=Path(data), ft=ft, p=p, ckpts=ckpts,
                                     seed=seed, read_delay=read_delay)
                    if algo == "fpgrowth":
                        base = replace(base, theta=float(param))
                    else:
                        base = replace(base, k=int(param))
                    if fault != "none":
                        sched = FaultSchedule.parse([fault])
                        if any(e.rank >= p for e in sched.events):
                            continue
                        base = replace(base, faults=sched)
                    rows.append(_row(base, fault))
    return annotate(rows)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: (f"{v:.6f}" if isinstance(v, float) else v) for c, v in r.items()})
    return buf.getvalue()
