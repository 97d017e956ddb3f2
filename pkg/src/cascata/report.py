"""Figure rendering for run outputs: error-cost curves, marginal fits, taus.

Thin matplotlib layer over the CSV/JSON artifacts the other commands emit;
nothing here feeds back into fitting or tuning.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .cascade import load_model  # noqa: E402
from .dataset import load_dataset, split, balanced_subsample  # noqa: E402
from .gof import tau_matrix  # noqa: E402


def _load_curves_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def plot_error_cost(curves_rows=None, frontier_rows=None, out_path=None):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    if curves_rows:
        for source, style in (("model", "o-"), ("empirical", "s--")):
            pts = sorted(
                (float(r["cost"]), float(r["error"]))
                for r in curves_rows if r["source"] == source)
            if pts:
                ax.plot([c for c, _ in pts], [e for _, e in pts], style,
                        ms=3, lw=1.2, label=source)
    if frontier_rows:
        pts = sorted((float(r["expected_cost_model"]),
                      1.0 - float(r["p_correct_model"])) for r in frontier_rows)
        ax.plot([c for c, _ in pts], [e for _, e in pts], "^-", ms=3, lw=1.0,
                label="tuned frontier")
    ax.set_xlabel("cost per query")
    ax.set_ylabel("error rate")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=160)
    plt.close(fig)
    return out_path


def plot_marginals(cm, ds, out_path):
    k = len(cm.models)
    ncols = min(k, 3)
    nrows = (k + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.6 * ncols, 2.8 * nrows),
                             squeeze=False)
    for j, m in enumerate(cm.models):
        ax = axes[j // ncols][j % ncols]
        raw = ds.column(m, "raw_confidence", "test" if ds.split_tag else None)
        phis = np.asarray(cm.calibrators[m].predict(raw))
        mm = cm.marginals[m]
        ax.hist(phis, bins=30, density=True, alpha=0.45, label="test data")
        if not mm.degenerate and mm.continuous_weight > 0:
            span = mm.phi_max - mm.phi_min
            xs = np.linspace(mm.phi_min + 1e-4 * span, mm.phi_max - 1e-4 * span, 300)
            pdf = mm.continuous_weight * mm.mixture_pdf((xs - mm.phi_min) / span) / span
            ax.plot(xs, pdf, lw=1.4, label="fitted density")
        for w, x in ((mm.w_min, mm.phi_min), (mm.w_max, mm.phi_max)):
            if w > 0:
                ax.axvline(x, color="k", lw=0.8, ls=":")
        ax.set_title(m, fontsize=9)
    for j in range(k, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    axes[0][0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=160)
    plt.close(fig)
    return out_path


def plot_tau_heatmap(taus, models, out_path):
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(models), 0.8 + 0.8 * len(models)))
    im = ax.imshow(taus, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(models)), models, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(models)), models, fontsize=7)
    for i in range(len(models)):
        for j in range(len(models)):
            txt = "?" if np.isnan(taus[i, j]) else f"{taus[i, j]:.2f}"
            ax.text(j, i, txt, ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=160)
    plt.close(fig)
    return out_path


def render_report(model_path=None, data_path=None, config_path=None,
                  frontier_path=None, curves_path=None, out_dir: Path = None,
                  seed=None) -> list[Path]:
    """Render every figure the provided inputs support; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    curves_rows = _load_curves_csv(curves_path) if curves_path else None
    frontier_rows = _load_curves_csv(frontier_path) if frontier_path else None
    if curves_rows or frontier_rows:
        written.append(plot_error_cost(curves_rows, frontier_rows,
                                       out_dir / "error_cost.png"))

    if model_path and data_path and config_path:
        with open(config_path) as fh:
            cfg = json.load(fh)
        cm = load_model(model_path)
        ds = load_dataset(data_path, model_order=cfg.get("model_order"))
        use_seed = seed if seed is not None else cfg.get("seed", 0)
        ds = split(ds, int(cfg["n_train"]), use_seed)
        if cfg.get("subsample_n"):
            ds = balanced_subsample(ds, int(cfg["subsample_n"]), use_seed)
        written.append(plot_marginals(cm, ds, out_dir / "marginal_fits.png"))
        taus = tau_matrix(ds, cm.calibrators, subset="all")
        written.append(plot_tau_heatmap(taus, cm.models, out_dir / "tau_heatmap.png"))
    return written
