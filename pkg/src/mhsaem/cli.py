"""``mhsaem`` command line: generate, train, sweep, eval.

Exit codes: 0 success, 1 invalid input, 2 numerical abort, 3 I/O failure.
"""

import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import io
from .config import (EvalConfig, GenerateConfig, SweepConfig, TrainConfig, build, merge,
                     read_document)
from .diagnostics import summarize
from .errors import NumericalAbort, ValidationError
from .model import dataset_loglik
from .synthgen import GenSpec, generate
from .trainers import default_init, run

log = logging.getLogger("mhsaem")

EXIT_OK, EXIT_INVALID, EXIT_ABORT, EXIT_IO = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "MHSAEM_OUTPUT_ROOT"


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _resolve_out(out, default_name):
    return Path(out) if out else output_root() / default_name


def _load_doc(config_path):
    return read_document(config_path) if config_path else {}


# -- generate ----------------------------------------------------------------

def generate_files(cfg, out):
    spec = GenSpec(cfg.D, cfg.K, cfg.N, cfg.omega, cfg.seed, cfg.mc_samples, cfg.tolerance)
    theta, X, labels, achieved = generate(spec)
    out.mkdir(parents=True, exist_ok=True)
    io.write_data(out / "data.csv", X, labels if cfg.labels else None)
    io.save_checkpoint(theta, out / "truth.json")
    io.write_json(out / "meta.json", {
        "spec": spec.as_dict(),
        "seed": spec.seed,
        "achieved_omega": achieved,
        "loglik_true": dataset_loglik(theta, X),
    })
    return achieved


# -- train -------------------------------------------------------------------

def _prior_rows(path, upto):
    if not path.exists():
        return []
    return [r for r in io.read_metrics(path) if r.t <= upto]


def _summary(records, loglik_true, N, cfg, completed, abort=None):
    have_ll = any(r.loglik is not None and np.isfinite(r.loglik) for r in records)
    summ = summarize(records, loglik_true, N) if have_ll else {
        "t95": None, "time95_s": None, "ae": None, "final_loglik": None,
        "total_evals": int(sum(r.eval_count for r in records)), "final_loglik_per_point": None}
    aars = [r.aar for r in records if r.aar is not None]
    summ.update({
        "algorithm": cfg.algorithm,
        "proposal": cfg.proposal if cfg.algorithm == "mhsaem" else None,
        "K": cfg.K, "B": cfg.B, "M": cfg.M, "T": cfg.T, "seed": cfg.seed,
        "iterations": records[-1].t if records else 0,
        "completed": completed,
        "aborted": abort,
        "final_aar": aars[-1] if aars else None,
        "aar_scope": "minibatch",
        "loglik_true": loglik_true,
    })
    return summ


def train_once(cfg, out, resume=None):
    """Run one training job, writing metrics, timing, summary and checkpoint
    files into ``out``.  Returns ``(summary, exit_code)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.data:
        raise ValidationError("train needs a data file")
    X, _ = io.read_data(cfg.data)
    tcfg = cfg.trainer_config()
    state = None
    theta_init = None
    if resume is not None:
        state, _ = io.load_state(resume)
    elif cfg.init:
        theta_init = io.load_checkpoint(cfg.init)
    else:
        theta_init = default_init(cfg.family, cfg.K, X.shape[1], cfg.seed)
    if theta_init is not None and theta_init.K != cfg.K:
        raise ValidationError(f"initial checkpoint has K={theta_init.K}, config says K={cfg.K}")
    loglik_true = dataset_loglik(io.load_checkpoint(cfg.truth), X) if cfg.truth else None

    earlier = _prior_rows(out / "metrics.csv", state.t) if state is not None else []
    if state is not None and earlier:
        times = io.read_timing(out / "timing.csv") if (out / "timing.csv").exists() else {}
        for r in earlier:
            r.wall_time_s = times.get(r.t)

    config_doc = cfg.model_dump()
    io.write_json(out / "config.json", config_doc)

    def checkpoint(rec, st):
        if cfg.checkpoint_every and rec.t % cfg.checkpoint_every == 0:
            io.save_state(st, out / "state.json", config_doc)

    family = theta_init.family if theta_init is not None else state.theta.family
    abort = None
    try:
        result = run(tcfg, family, X, theta_init, callbacks=[checkpoint], state=state,
                     stop_at=cfg.stop_at)
        records, final_state, completed = result.records, result.state, result.completed
        code = EXIT_OK
    except NumericalAbort as exc:
        records, final_state, completed = exc.records or [], None, False
        abort = str(exc)
        code = EXIT_ABORT
    records = earlier + records
    io.write_metrics(out / "metrics.csv", records, include_time=cfg.inline_timing)
    io.write_timing(out / "timing.csv", records)
    summ = _summary(records, loglik_true, X.shape[0], cfg, completed, abort)
    io.write_json(out / "summary.json", summ)
    if final_state is not None:
        io.save_checkpoint(final_state.theta, out / "checkpoint.json")
        if not completed or cfg.checkpoint_every:
            io.save_state(final_state, out / "state.json", config_doc)
    return summ, code


# -- sweep -------------------------------------------------------------------

SUMMARY_FIELDS = ("t95", "time95_s", "ae", "final_loglik_per_point", "total_evals")


def _cell_id(alg, K, B, M, D, seed):
    return f"{alg}_K{K}_B{B}_M{M}_D{D}_s{seed}"


def _run_cell(args):
    cell, train_doc, data_dir, out = args
    alg, K, B, M, D, seed = cell
    row = {"cell": _cell_id(*cell), "algorithm": alg, "K": K, "B": B, "M": M, "D": D,
           "seed": seed, "status": "ok"}
    try:
        doc = {**train_doc, "algorithm": alg, "K": K, "B": B, "M": M, "seed": seed,
               "data": str(data_dir / "data.csv"), "truth": str(data_dir / "truth.json")}
        cfg = build(TrainConfig, doc)
        summ, code = train_once(cfg, out / "cells" / row["cell"])
        if code != EXIT_OK:
            row["status"] = "aborted"
        row.update({k: summ.get(k) for k in SUMMARY_FIELDS})
    except Exception as exc:  # one failing cell must not stop the sweep
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _aggregate(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["algorithm"], r["K"], r["B"], r["M"], r["D"]), []).append(r)
    agg = []
    for key, members in groups.items():
        entry = dict(zip(("algorithm", "K", "B", "M", "D"), key))
        entry["n_seeds"] = len(members)
        for f in SUMMARY_FIELDS:
            vals = np.array([m[f] for m in members if m.get(f) is not None], dtype=float)
            for name, q in (("median", 50), ("p01", 1), ("p99", 99)):
                entry[f"{f}_{name}"] = float(np.percentile(vals, q)) if vals.size else None
        agg.append(entry)
    return agg


def _write_table(path, rows):
    import csv

    cols = list(rows[0]) if rows else []
    for r in rows:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r.get(k) for k in cols})


def sweep_files(cfg, out, workers=1):
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.grid
    datasets = {}
    for D, K in itertools.product(g.D, g.K):
        ddir = out / "data" / f"D{D}_K{K}"
        gen_cfg = cfg.data.model_copy(update={"D": D, "K": K})
        if not (ddir / "data.csv").exists():
            generate_files(gen_cfg, ddir)
        datasets[(D, K)] = ddir
    cells = list(itertools.product(g.algorithm, g.K, g.B, g.M, g.D, g.seed))
    jobs = [(c, cfg.train, datasets[(c[4], c[1])], out) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    _write_table(out / "sweep.csv", rows)
    _write_table(out / "aggregate.csv", _aggregate(rows))
    return rows


# -- click surface -----------------------------------------------------------

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Fit finite mixtures with Metropolis-Hastings stochastic-approximation EM
    and its baselines.  The output root defaults to $MHSAEM_OUTPUT_ROOT
    (or ./runs)."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("generate")
@click.option("--config", type=click.Path(dir_okay=False), help="YAML/JSON document with the fields below.")
@click.option("--d", "D", type=int, help="Data dimension D.")
@click.option("--k", "K", type=int, help="Number of components K.")
@click.option("--n", "N", type=int, help="Number of datapoints N.")
@click.option("--omega", type=float, help="Target maximum pairwise overlap in (0, 1).")
@click.option("--seed", type=int, help="Generator seed (required).")
@click.option("--mc-samples", type=int, help="Monte-Carlo draws per overlap estimate.")
@click.option("--tolerance", type=float, help="Relative tolerance on omega.")
@click.option("--labels/--no-labels", default=None, help="Write the 1-based label column.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def generate_cmd(config, out, **flags):
    """Generate a synthetic Gaussian-mixture dataset (data.csv, truth.json, meta.json)."""
    cfg = build(GenerateConfig, merge(_load_doc(config), flags))
    target = _resolve_out(out, f"data-D{cfg.D}-K{cfg.K}-N{cfg.N}-s{cfg.seed}")
    achieved = generate_files(cfg, target)
    click.echo(json.dumps({"out": str(target), "achieved_omega": achieved}))


def _train_options(f):
    opts = [
        click.option("--config", type=click.Path(dir_okay=False), help="YAML/JSON document with the fields below."),
        click.option("--data", help="Data CSV."),
        click.option("--k", "K", type=int, help="Number of model components."),
        click.option("--family", type=click.Choice(["gaussian", "sinh_arcsinh"]), help="Component family."),
        click.option("--algorithm", type=click.Choice(["em", "saem", "mcsaem", "ssaem", "tsaem", "mhsaem"]), help="Training algorithm."),
        click.option("--b", "B", type=int, help="Minibatch size B."),
        click.option("--m", "M", type=int, help="Samples (or selections) per datapoint M."),
        click.option("--t", "T", type=int, help="Iterations T."),
        click.option("--mbar", "Mbar", type=int, help="TSAEM nearest means (default M)."),
        click.option("--proposal", type=click.Choice(["uniform", "optimal", "tabular", "tabular_forgetting",
                                                       "u", "o", "t", "tf"]), help="MH proposal."),
        click.option("--proposal-floor", type=float, help="Tabular proposal probability floor."),
        click.option("--m-step", type=click.Choice(["suffstats", "gradient"]), help="M-step: closed-form statistics or gradient."),
        click.option("--optimizer", type=click.Choice(["plain", "adam"]), help="Gradient M-step optimizer."),
        click.option("--adam-beta1", type=float, help="Adam first-moment decay."),
        click.option("--adam-beta2", type=float, help="Adam second-moment decay."),
        click.option("--adam-eps", type=float, help="Adam denominator offset."),
        click.option("--schedule", "schedule__kind", type=click.Choice(["constant", "piecewise", "robbins-monro"]),
                     help="Step-size schedule kind."),
        click.option("--gamma", "schedule__value", type=float, help="Step size after warmup (or constant value)."),
        click.option("--warmup", "schedule__warmup", type=int, help="Iterations with step size 1."),
        click.option("--rm-exponent", "schedule__exponent", type=float, help="Robbins-Monro exponent in (0.5, 1]."),
        click.option("--anneal/--no-anneal", "anneal__enabled", default=None, help="Anti-annealing on/off."),
        click.option("--beta-min", "anneal__beta_min", type=float, help="Inverse temperature at t=1."),
        click.option("--beta-max", "anneal__beta_max", type=float, help="Peak inverse temperature."),
        click.option("--tau", "anneal__tau_fraction", type=float, help="Fraction of T at which beta peaks."),
        click.option("--seed", type=int, help="Run seed (required)."),
        click.option("--init", help="Initial parameter checkpoint."),
        click.option("--truth", help="Ground-truth checkpoint (enables the absolute error)."),
        click.option("--loglik-every", type=int, help="Log-likelihood cadence (0 disables)."),
        click.option("--bias-every", type=int, help="Gradient-bias cadence (0 disables)."),
        click.option("--checkpoint-every", type=int, help="Write state.json every n iterations."),
        click.option("--stop-at", type=int, help="Stop after this iteration, leaving a resumable state."),
        click.option("--inline-timing/--no-inline-timing", default=None,
                     help="Also write wall_time_s into metrics.csv (breaks byte-identical reruns)."),
        click.option("--accelerate/--no-accelerate", default=None,
                     help="Compiled kernels for Gaussian sampling paths (same draws either way)."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@cli.command("train")
@_train_options
@click.option("--resume", type=click.Path(dir_okay=False), help="Resume from a state.json.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def train_cmd(config, out, resume, **flags):
    """Train one model; writes metrics.csv, timing.csv, summary.json, checkpoint.json."""
    doc = _load_doc(config)
    if resume:
        _, stored = io.load_state(resume)
        stored = dict(stored or {})
        stored.pop("stop_at", None)  # a resumed run continues unless told otherwise
        doc = merge(stored, doc)
    cfg = build(TrainConfig, merge(doc, flags))
    target = _resolve_out(out, f"train-{cfg.algorithm}-K{cfg.K}-s{cfg.seed}")
    summ, code = train_once(cfg, target, resume)
    click.echo(json.dumps({"out": str(target), **{k: summ[k] for k in ("t95", "final_loglik", "completed")}}))
    if code:
        click.echo(f"aborted: {summ['aborted']}", err=True)
    return code


@cli.command("sweep")
@click.option("--config", type=click.Path(dir_okay=False), required=True,
              help="Document with keys seed, data (GenerateConfig), train (TrainConfig fields), "
                   "grid (lists: algorithm, K, B, M, D, seed).")
@click.option("--workers", type=int, default=1, show_default=True, help="Parallel cell processes.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def sweep_cmd(config, workers, out):
    """Run a grid of training cells; writes sweep.csv and aggregate.csv."""
    cfg = build(SweepConfig, read_document(config))
    target = _resolve_out(out, f"sweep-s{cfg.seed}")
    rows = sweep_files(cfg, target, workers)
    failed = sum(r["status"] != "ok" for r in rows)
    click.echo(json.dumps({"out": str(target), "cells": len(rows), "failed": failed}))


@cli.command("eval")
@click.option("--config", type=click.Path(dir_okay=False), help="YAML/JSON document with the fields below.")
@click.option("--checkpoint", help="Parameter checkpoint to evaluate.")
@click.option("--data", help="Data CSV.")
@click.option("--truth", help="Ground-truth checkpoint.")
@click.option("--metrics", help="metrics.csv of a run (adds t95 and the absolute error).")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the report here as JSON.")
def eval_cmd(config, out, **flags):
    """Evaluate a checkpoint on data (log-likelihood, optional t95/AE)."""
    cfg = build(EvalConfig, merge(_load_doc(config), flags))
    theta = io.load_checkpoint(cfg.checkpoint)
    X, _ = io.read_data(cfg.data)
    ll = dataset_loglik(theta, X)
    report = {"loglik": ll, "loglik_per_point": ll / X.shape[0], "N": X.shape[0], "K": theta.K}
    ll_true = None
    if cfg.truth:
        ll_true = dataset_loglik(io.load_checkpoint(cfg.truth), X)
        report["loglik_true"] = ll_true
        report["loglik_gap_per_point"] = (ll_true - ll) / X.shape[0]
    if cfg.metrics:
        report.update(summarize(io.read_metrics(cfg.metrics), ll_true, X.shape[0]))
    if out:
        io.write_json(out, report)
    click.echo(json.dumps(report))


def main(argv=None):
    try:
        code = cli.main(args=argv, prog_name="mhsaem", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INVALID
    except click.ClickException as exc:
        exc.show()
        return EXIT_INVALID
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except NumericalAbort as exc:
        click.echo(f"numerical abort: {exc}", err=True)
        return EXIT_ABORT
    except OSError as exc:
        name = getattr(exc, "filename", None)
        click.echo(f"I/O error{f' ({name})' if name else ''}: {exc.strerror or exc}", err=True)
        return EXIT_IO
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
