"""ftmine command line: gen, run, verify, bench.

Exit codes: 0 on success, 1 when a run or verification fails, 2 on bad usage.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .. import dataset
from ..checkpoint import FT_MODES
from ..fabric import FaultSchedule, InvalidSchedule
from . import bench as bench_mod
from .runner import (ALGOS, RESULT_FILE, TEST_FILE, TRAIN_FILE, TRANS_FILE, ConfigError,
                     RunConfig, run_experiment)
from .verify import TooLargeForOracle, verify as verify_result

DEFAULT_SUPPORT = 0.05
DEFAULT_K = 5


def _params(algo: str, support: float | None, k: int | None) -> tuple[float | None, int | None]:
    if algo == "knn":
        if support is not None:
            raise click.UsageError("--support only applies to --algo fpgrowth")
        return None, DEFAULT_K if k is None else k
    if k is not None:
        raise click.UsageError("--k only applies to --algo knn")
    return (DEFAULT_SUPPORT if support is None else support), None


def _schedule(specs) -> FaultSchedule:
    try:
        return FaultSchedule.parse(specs)
    except InvalidSchedule as exc:
        raise click.UsageError(str(exc)) from None


def _config(**kw) -> RunConfig:
    cfg = RunConfig(**kw)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from None
    return cfg


algo_opt = click.option("--algo", type=click.Choice(ALGOS), required=True)
data_opt = click.option("--data", type=click.Path(path_type=Path), required=True,
                        help="Dataset directory.")
support_opt = click.option("--support", type=float, default=None,
                           help=f"Relative min support for fpgrowth (default {DEFAULT_SUPPORT}).")
k_opt = click.option("--k", "k", type=int, default=None,
                     help=f"Neighbour count for knn (default {DEFAULT_K}).")
seed_opt = click.option("--seed", type=int, default=0)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool):
    """Fault-tolerant FP-Growth and KNN on an emulated one-sided fabric."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@algo_opt
@click.option("--out", type=click.Path(path_type=Path), required=True)
@seed_opt
@click.option("--n-trans", type=int, default=1000, show_default=True)
@click.option("--n-items", type=int, default=100, show_default=True)
@click.option("--min-len", type=int, default=2, show_default=True)
@click.option("--max-len", type=int, default=10, show_default=True)
@click.option("--zipf", type=float, default=1.0, show_default=True)
@click.option("--n-train", type=int, default=1000, show_default=True)
@click.option("--n-test", type=int, default=100, show_default=True)
@click.option("--dims", type=int, default=8, show_default=True)
def gen(algo, out, seed, n_trans, n_items, min_len, max_len, zipf, n_train, n_test, dims):
    """Generate a synthetic dataset directory."""
    out.mkdir(parents=True, exist_ok=True)
    try:
        if algo == "fpgrowth":
            f = dataset.generate_transactions(out / TRANS_FILE, n_trans, n_items,
                                              (min_len, max_len), seed, zipf)
            click.echo(f"wrote {f.n_records} transactions to {out / TRANS_FILE}")
        else:
            dataset.generate_points(out / TRAIN_FILE, n_train, dims, seed)
            dataset.generate_points(out / TEST_FILE, n_test, dims, seed + 1)
            click.echo(f"wrote {n_train} train / {n_test} test points to {out}")
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


@main.command()
@algo_opt
@data_opt
@click.option("--ft", type=click.Choice(FT_MODES), default="none", show_default=True)
@click.option("--procs", type=int, default=4, show_default=True)
@support_opt
@k_opt
@click.option("--ckpts", type=int, default=4, show_default=True)
@click.option("--fail", "fails", multiple=True, metavar="RANK@FRAC",
              help="Kill RANK once it has processed FRAC of its work; repeatable.")
@seed_opt
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--recovery", type=click.Choice(["opr", "ppr"]), default="ppr", show_default=True,
              help="KNN recovery policy.")
@click.option("--verify", "do_verify", is_flag=True, help="Check the output against the oracle.")
def run(algo, data, ft, procs, support, k, ckpts, fails, seed, out, recovery, do_verify):
    """Run one experiment and print its metrics."""
    theta, k = _params(algo, support, k)
    cfg = _config(algo=algo, data=data, ft=ft, p=procs, theta=theta, k=k, ckpts=ckpts,
                  faults=_schedule(fails), seed=seed, out=out, knn_recovery=recovery)
    try:
        result = run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"run failed: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)
    m = result.metrics
    click.echo(f"failed={result.failed} total={m.total_time:.4f}s ckpt={m.checkpoint_time:.4f}s "
               f"rec={m.recovery_time:.4f}s bytes={m.bytes_checkpointed} "
               f"peak={m.peak_ckpt_bytes_per_rank} checksum={m.output_checksum}")
    for line in result.events:
        click.echo(f"  {line}")
    if do_verify:
        if out is None:
            raise click.UsageError("--verify needs --out")
        _report(out / RESULT_FILE, data, algo, theta, k)


def _report(result, data, algo, theta, k):
    try:
        report = verify_result(result, data, algo, theta=theta, k=k)
    except TooLargeForOracle as exc:
        raise click.UsageError(str(exc)) from None
    click.echo(report.summary())
    if not report.passed:
        sys.exit(1)


@main.command()
@algo_opt
@data_opt
@click.option("--result", type=click.Path(exists=True, path_type=Path), required=True,
              help="result.txt from a previous run, or its output directory.")
@support_opt
@k_opt
def verify(algo, data, result, support, k):
    """Compare a result file with the brute-force oracle."""
    theta, k = _params(algo, support, k)
    if theta is not None and not 0 < theta <= 1:
        raise click.UsageError("--support must be in (0, 1]")
    if k is not None and k < 1:
        raise click.UsageError("--k must be >= 1")
    if result.is_dir():
        result = result / RESULT_FILE
    _report(result, data, algo, theta, k)


@main.command()
@algo_opt
@data_opt
@click.option("--ft", "fts", multiple=True, type=click.Choice(FT_MODES),
              help="Modes to sweep (default: all).")
@click.option("--procs", "procs", multiple=True, type=int, help="Process counts (default 4).")
@click.option("--support", "supports", multiple=True, type=float)
@click.option("--k", "ks", multiple=True, type=int)
@click.option("--ckpts", type=int, default=4, show_default=True)
@click.option("--fail", "fails", multiple=True, metavar="RANK@FRAC")
@seed_opt
@click.option("--read-delay", type=float, default=0.0, show_default=True,
              help="Seconds slept per dataset/checkpoint read.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="CSV path.")
def bench(algo, data, fts, procs, supports, ks, ckpts, fails, seed, read_delay, out):
    """Sweep ft modes, process counts, parameters and faults into a CSV."""
    if algo == "knn" and supports:
        raise click.UsageError("--support only applies to --algo fpgrowth")
    if algo == "fpgrowth" and ks:
        raise click.UsageError("--k only applies to --algo knn")
    params = list(supports or [DEFAULT_SUPPORT]) if algo == "fpgrowth" else list(ks or [DEFAULT_K])
    procs = list(procs or [4])
    # each --fail is its own cell; it is skipped for process counts too small to hold it
    for spec in [None, *fails]:
        for param in params:
            _config(algo=algo, data=data, p=max(procs), ckpts=ckpts,
                    faults=_schedule([spec] if spec else []),
                    theta=param if algo == "fpgrowth" else None,
                    k=param if algo == "knn" else None)
    rows = bench_mod.bench(algo, data, list(fts or FT_MODES), procs, params, fails,
                           ckpts=ckpts, seed=seed, read_delay=read_delay)
    text = bench_mod.to_csv(rows)
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)
        click.echo(f"wrote {len(rows)} rows to {out}")
    if any(r["status"] != "ok" for r in rows):
        sys.exit(1)


if __name__ == "__main__":
    main()
