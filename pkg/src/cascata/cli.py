"""Command-line surface: fit, tune, grid, replay, gof, synth, scaling, report.

Every command reads plain JSON/CSV and writes plain CSV/JSON plus a
manifest capturing the library version, seeds, and a config snapshot, so
each output directory is a self-contained, reproducible run.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .calibration import ece
from .cascade import FrontierPoint, ThresholdVector, fit_from_dataset, load_model, save_model
from .dataset import PriceSheet, load_dataset, split, write_dataset, balanced_subsample
from .errors import CascataError
from .evaluation import auc, empirical_curve, model_curve
from .gof import kendall_transform_cvm, marginal_cvm, tau_matrix
from .gridsearch import GridSpec, grid_search
from .synth import (
    default_prices,
    emit_dataset,
    ground_truth_model,
    make_random_spec,
    spec_from_dict,
)
from .tuner import TuneConfig, adaptive_infill, sweep, tune_with_model_selection


def _read_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _tune_config(cfg: dict, seed: int | None) -> TuneConfig:
    t = cfg.get("tune", {})
    kwargs = {k: t[k] for k in (
        "lambda0", "growth_r", "infill_q", "fd_step", "max_lambda_steps",
        "restarts", "max_infill_depth") if k in t}
    return TuneConfig(seed=seed if seed is not None else cfg.get("seed", 0), **kwargs)


def _write_manifest(out_path: Path, command: str, seed, config_snapshot, outputs):
    manifest = {
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config_snapshot,
        "outputs": [str(o) for o in outputs],
    }
    path = out_path.parent / f"{out_path.stem}.manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _frontier_columns(models) -> list[str]:
    return [f"phi_{m}" for m in models[:-1]]


def write_frontier_csv(path, points: list[FrontierPoint], models) -> None:
    cols = (["lambda", "subcascade_id", "p_correct_model", "expected_cost_model",
             "objective", "source"] + _frontier_columns(models))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for fp in points:
            row = [
                "" if fp.lam is None else repr(fp.lam),
                ">".join(fp.subcascade),
                repr(fp.point.p_correct),
                repr(fp.point.expected_cost),
                "" if fp.objective is None else repr(fp.objective),
                fp.source,
            ]
            by_model = dict(zip(fp.subcascade[:-1], fp.thresholds.phi))
            row += ["" if m not in by_model else repr(by_model[m]) for m in models[:-1]]
            w.writerow(row)


def read_frontier_csv(path, models) -> list[FrontierPoint]:
    from .cascade import OperatingPoint

    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sub = tuple(row["subcascade_id"].split(">"))
            phi = tuple(float(row[f"phi_{m}"]) for m in sub[:-1])
            op = OperatingPoint(float(row["p_correct_model"]),
                                float(row["expected_cost_model"]))
            points.append(FrontierPoint(
                lam=float(row["lambda"]) if row["lambda"] else None,
                thresholds=ThresholdVector(phi), point=op,
                objective=float(row["objective"]) if row["objective"] else None,
                subcascade=sub, source=row.get("source", "tuner")))
    return points


def _split_from_config(ds, cfg, seed):
    n_train = int(cfg["n_train"])
    ds = split(ds, n_train, seed)
    sub = cfg.get("subsample_n")
    if sub:
        ds = balanced_subsample(ds, int(sub), seed)
    return ds


def _fail(exc: CascataError, as_json: bool):
    if as_json:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
    else:
        sys.stderr.write(f"error: {exc}\n")
    sys.exit(exc.exit_code)


@click.group()
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker threads for bootstrap replicates.")
@click.option("--json", "json_errors", is_flag=True,
              help="Machine-readable error JSON on stderr.")
@click.pass_context
def main(ctx, seed, threads, json_errors):
    """Fit, tune, and validate probabilistic cascade models."""
    if threads < 1:
        raise click.BadParameter("--threads must be >= 1")
    ctx.obj = {"seed": seed, "threads": threads, "json": json_errors}


def _guarded(ctx, fn):
    try:
        fn()
    except CascataError as exc:
        _fail(exc, ctx.obj["json"])


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "jsonl"]),
              show_default=True)
@click.pass_context
def fit(ctx, data, config_path, out, fmt):
    """Calibrate, fit marginals and all-pairs copulas, write the model file."""

    def run():
        cfg = _read_config(config_path)
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else cfg.get("seed", 0)
        ds = load_dataset(data, fmt, model_order=cfg.get("model_order"))
        ds = _split_from_config(ds, cfg, seed)
        prices = PriceSheet.from_config(cfg["prices"])
        cm = fit_from_dataset(ds, prices, cfg.get("task_kind", "multiple_choice"),
                              metadata={"seed": seed, "n_train": cfg["n_train"]})
        out_path = Path(out)
        save_model(cm, out_path)
        click.echo(f"model written to {out_path}")
        for m in cm.models:
            conf = cm.calibrators[m].predict(ds.column(m, "raw_confidence", "test"))
            rep = ece(conf, ds.column(m, "correct", "test"))
            click.echo(f"  {m}: test ECE = {rep.ece:.4f}")
        taus = tau_matrix(ds, cm.calibrators, subset="all")
        click.echo("test Kendall tau matrix (cascade order):")
        for row in taus:
            click.echo("  " + " ".join("   nan" if np.isnan(v) else f"{v:6.3f}" for v in row))
        _write_manifest(out_path, "fit", seed, cfg, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--subcascades/--full-only", default=True, show_default=True,
              help="Sweep all subcascades and merge, or the full cascade only.")
@click.pass_context
def tune(ctx, model_path, config_path, out, subcascades):
    """Trace the optimal error-cost frontier by continuous optimization."""

    def run():
        cfg = _read_config(config_path)
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else cfg.get("seed", 0)
        cm = load_model(model_path)
        tcfg = _tune_config(cfg, seed)
        if subcascades:
            points = tune_with_model_selection(cm, tcfg)
        else:
            points = sweep(cm, tcfg)
            points = adaptive_infill(points, cm, tcfg.infill_q, tcfg.max_infill_depth)
        out_path = Path(out)
        write_frontier_csv(out_path, points, cm.models)
        click.echo(f"{len(points)} frontier points written to {out_path}")
        _write_manifest(out_path, "tune", seed, cfg, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--mass-step", default=0.025, show_default=True)
@click.option("--timing-out", type=click.Path(), default=None,
              help="Also append a timing CSV row.")
@click.pass_context
def grid(ctx, model_path, out, mass_step, timing_out):
    """High-resolution grid-search baseline over quantile grids."""

    def run():
        cm = load_model(model_path)
        stats: dict = {}
        points = grid_search(cm, GridSpec(mass_step=mass_step), stats=stats)
        out_path = Path(out)
        write_frontier_csv(out_path, points, cm.models)
        click.echo(f"{len(points)} Pareto points from {stats['candidates']} candidates "
                   f"in {stats['seconds']:.2f}s -> {out_path}")
        if timing_out:
            _append_timing(timing_out, stats)
        _write_manifest(out_path, "grid", None, {"mass_step": mass_step}, [out_path])

    _guarded(ctx, run)


def _append_timing(path, stats: dict):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["k", "method", "candidates", "seconds"])
        w.writerow([stats["k"], stats["method"], stats["candidates"],
                    repr(stats["seconds"])])


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--frontier", "frontier_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "jsonl"]),
              show_default=True)
@click.pass_context
def replay(ctx, model_path, data, config_path, frontier_path, out, fmt):
    """Replay frontier thresholds on the held-out test split."""

    def run():
        cfg = _read_config(config_path)
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else cfg.get("seed", 0)
        cm = load_model(model_path)
        ds = load_dataset(data, fmt, model_order=cfg.get("model_order"))
        ds = _split_from_config(ds, cfg, seed)
        points = read_frontier_csv(frontier_path, cm.models)
        emp = empirical_curve(ds, cm, points)
        mod = model_curve(points)
        out_path = Path(out)
        costs = [p.cost for p in emp.points] + [p.cost for p in mod.points]
        lo, hi = min(costs), max(costs)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "subcascade_id", "cost", "normalized_cost", "error"]
                       + _frontier_columns(cm.models))
            for curve in (mod, emp):
                for p in curve.points:
                    by_model = dict(zip(p.subcascade[:-1], p.thresholds))
                    norm = 0.0 if hi <= lo else (p.cost - lo) / (hi - lo)
                    w.writerow([p.source, ">".join(p.subcascade), repr(p.cost),
                                repr(norm), repr(p.error)]
                               + ["" if m not in by_model else repr(by_model[m])
                                  for m in cm.models[:-1]])
        click.echo(f"replayed {len(points)} threshold rows -> {out_path}")
        click.echo(f"empirical AUC = {auc(emp):.6f}")
        _write_manifest(out_path, "replay", seed, cfg, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--bootstrap-b", default=1000, show_default=True)
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "jsonl"]),
              show_default=True)
@click.pass_context
def gof(ctx, model_path, data, config_path, out, bootstrap_b, fmt):
    """Marginal and copula Cramér-von Mises tests on the test split."""

    def run():
        cfg = _read_config(config_path)
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else cfg.get("seed", 0)
        cm = load_model(model_path)
        ds = load_dataset(data, fmt, model_order=cfg.get("model_order"))
        ds = _split_from_config(ds, cfg, seed)
        rows = []
        phis = {}
        for m in cm.models:
            phis[m] = np.asarray(cm.calibrators[m].predict(
                ds.column(m, "raw_confidence", "test")))
            res = marginal_cvm(cm.marginals[m], phis[m], B=bootstrap_b, seed=seed,
                               threads=ctx.obj["threads"])
            rows.append((f"marginal:{m}", res))
        for prev, cur in zip(cm.models, cm.models[1:]):
            pairs = np.column_stack([phis[prev], phis[cur]])
            res = kendall_transform_cvm(
                cm.copulas[(prev, cur)], pairs,
                marginals=(cm.marginals[prev], cm.marginals[cur]),
                B=bootstrap_b, seed=seed, threads=ctx.obj["threads"])
            rows.append((f"copula:{prev}>{cur}", res))
        out_path = Path(out)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "statistic", "normalized_statistic",
                        "p_value", "B", "n"])
            for name, res in rows:
                w.writerow([name, repr(res.statistic), repr(res.normalized),
                            repr(res.p_value), res.bootstrap_B, res.n])
        for name, res in rows:
            click.echo(f"  {name}: stat={res.statistic:.5g} p={res.p_value:.4f}")
        _write_manifest(out_path, "gof", seed, cfg, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="Synthetic chain spec JSON; omit for a random chain.")
@click.option("--k", default=3, show_default=True, help="Models in the random chain.")
@click.option("--n", default=1300, show_default=True, help="Queries to emit.")
@click.option("--out", required=True, type=click.Path())
@click.option("--truth-out", type=click.Path(), default=None)
@click.pass_context
def synth(ctx, spec_path, k, n, out, truth_out):
    """Emit a synthetic dataset (and its ground truth) from a chain spec."""

    def run():
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
        if spec_path:
            spec = spec_from_dict(_read_config(spec_path))
        else:
            spec = make_random_spec(k, seed=seed, n_queries=n)
        ds, truth = emit_dataset(spec)
        out_path = Path(out)
        write_dataset(ds, out_path)
        click.echo(f"{spec.n_queries} queries x {spec.k} models -> {out_path}")
        if truth_out:
            with open(truth_out, "w") as fh:
                json.dump(truth, fh, indent=2, sort_keys=True)
                fh.write("\n")
        _write_manifest(out_path, "synth", spec.seed, truth, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--max-k", default=4, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--mass-step", default=0.025, show_default=True)
@click.pass_context
def scaling(ctx, max_k, out, mass_step):
    """Runtime scaling of tuning vs grid search on synthetic chains."""

    def run():
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
        out_path = Path(out)
        if out_path.exists():
            out_path.unlink()
        for k in range(2, max_k + 1):
            spec = make_random_spec(k, seed=seed)
            cm = ground_truth_model(spec, default_prices(spec))
            counters: dict = {}
            t0 = time.perf_counter()
            pts = sweep(cm, TuneConfig(seed=seed), counters=counters)
            dt = time.perf_counter() - t0
            _append_timing(out_path, {"k": k, "method": "tuner",
                                      "candidates": counters.get("solves", len(pts)),
                                      "seconds": dt})
            stats: dict = {}
            try:
                grid_search(cm, GridSpec(mass_step=mass_step), stats=stats)
                _append_timing(out_path, stats)
            except CascataError as exc:
                click.echo(f"grid search skipped at k={k}: {exc}")
            click.echo(f"k={k}: tuner {dt:.1f}s, grid "
                       f"{stats.get('seconds', float('nan')):.1f}s")
        _write_manifest(out_path, "scaling", seed, {"max_k": max_k}, [out_path])

    _guarded(ctx, run)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--frontier", "frontier_path", type=click.Path(exists=True), default=None)
@click.option("--curves", "curves_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_context
def report(ctx, model_path, data, config_path, frontier_path, curves_path, out_dir):
    """Render figures (PNG) next to the delimited outputs of a run."""

    def run():
        from . import report as rpt

        outputs = rpt.render_report(
            model_path=model_path, data_path=data, config_path=config_path,
            frontier_path=frontier_path, curves_path=curves_path,
            out_dir=Path(out_dir),
            seed=ctx.obj["seed"])
        for o in outputs:
            click.echo(f"wrote {o}")

    _guarded(ctx, run)


if __name__ == "__main__":
    main()
