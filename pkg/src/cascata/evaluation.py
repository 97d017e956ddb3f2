"""Held-out replay of threshold policies, error-cost curves, and AUC.

Replay walks the real cascade on logged records: a model answers when its
calibrated confidence clears the threshold, otherwise the query moves down,
paying every visited model's actual token cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import CascadeModel, FrontierPoint, ThresholdVector
from .dataset import AlignedDataset
from .errors import SinglePoint
from .gridsearch import pareto_filter


@dataclass(frozen=True)
class CurvePoint:
    cost: float
    error: float
    thresholds: tuple[float, ...]
    source: str                      # "model" | "empirical"
    subcascade: tuple[str, ...]


@dataclass(frozen=True)
class ErrorCostCurve:
    points: tuple[CurvePoint, ...]
    normalization: tuple[float, float] | None = None


def replay(ds: AlignedDataset, cm: CascadeModel, thresholds,
           split: str = "test") -> tuple[float, float]:
    """Empirical (error_rate, mean_cost_per_query) of a threshold policy.

    Routing uses calibrated confidences from the fitted calibrators; cost
    sums the actual per-query token spend of every model visited.
    """
    if cm.prices is None:
        raise ValueError("cascade model carries no price sheet; cannot replay costs")
    phi = tuple(thresholds.phi) if isinstance(thresholds, ThresholdVector) else tuple(thresholds)
    if len(phi) != cm.k - 1:
        raise ValueError(f"expected {cm.k - 1} thresholds, got {len(phi)}")
    queries = ds.queries_in_split(split) if ds.split_tag else ds.queries
    if not queries:
        raise ValueError(f"no queries in split {split!r}")
    n = len(queries)
    k = cm.k
    conf = np.empty((n, k))
    correct = np.empty((n, k), dtype=bool)
    costs = np.empty((n, k))
    for j, m in enumerate(cm.models):
        recs = [ds.record(q, m) for q in queries]
        conf[:, j] = cm.calibrators[m].predict(np.array([r.raw_confidence for r in recs]))
        correct[:, j] = [r.correct for r in recs]
        costs[:, j] = [cm.prices.cost_of(r) for r in recs]
    answers = np.full(n, k - 1)
    decided = np.zeros(n, dtype=bool)
    for j in range(k - 1):
        takes = ~decided & (conf[:, j] > phi[j])
        answers[takes] = j
        decided |= takes
    cum_costs = np.cumsum(costs, axis=1)
    idx = np.arange(n)
    err = 1.0 - correct[idx, answers].mean()
    mean_cost = cum_costs[idx, answers].mean()
    return float(err), float(mean_cost)


def empirical_curve(ds: AlignedDataset, cm: CascadeModel,
                    frontier: list[FrontierPoint], split: str = "test") -> ErrorCostCurve:
    """Replay every frontier point on held-out data."""
    pts = []
    for fp in frontier:
        sub = cm.subcascade(fp.subcascade) if fp.subcascade != cm.models else cm
        err, cost = replay(ds, sub, fp.thresholds, split=split)
        pts.append(CurvePoint(cost=cost, error=err, thresholds=fp.thresholds.phi,
                              source="empirical", subcascade=fp.subcascade))
    return ErrorCostCurve(points=tuple(pts))


def model_curve(frontier: list[FrontierPoint]) -> ErrorCostCurve:
    pts = [CurvePoint(cost=fp.point.expected_cost, error=1.0 - fp.point.p_correct,
                      thresholds=fp.thresholds.phi, source="model",
                      subcascade=fp.subcascade)
           for fp in frontier]
    return ErrorCostCurve(points=tuple(pts))


def auc(curve: ErrorCostCurve, normalization: tuple[float, float] | None = None) -> float:
    """Trapezoidal area under the Pareto frontier of the curve.

    Costs are min-max normalized (by default over the curve's own Pareto
    range); the error extends as a constant beyond the extreme points so
    the integral always spans [0, 1].
    """
    pts = [(p.cost, p.error) for p in curve.points]
    if len(pts) < 2:
        raise SinglePoint("need at least two curve points")
    keep = pareto_filter([(1.0 - e, c) for c, e in pts])
    pts = [pts[i] for i in keep]
    norm = normalization or curve.normalization
    if norm is None:
        lo = min(c for c, _ in pts)
        hi = max(c for c, _ in pts)
    else:
        lo, hi = norm
    if hi <= lo:
        return float(min(e for _, e in pts))
    x = np.clip([(c - lo) / (hi - lo) for c, _ in pts], 0.0, 1.0)
    e = np.array([e for _, e in pts])
    order = np.lexsort((e, x))
    x, e = x[order], e[order]
    # collapse duplicate abscissas onto their lower envelope
    xs, es = [], []
    for xi, ei in zip(x, e):
        if xs and xi == xs[-1]:
            es[-1] = min(es[-1], ei)
        else:
            xs.append(float(xi))
            es.append(float(ei))
    xs = np.asarray(xs)
    es = np.asarray(es)
    total = xs[0] * es[0] + (1.0 - xs[-1]) * es[-1]
    total += float(np.trapezoid(es, xs))
    return float(total)


def compare_frontiers(a: ErrorCostCurve, b: ErrorCostCurve) -> float:
    """Percentage change in AUC of `a` relative to `b`; negative = a better.

    Both curves are normalized over the union of their cost ranges so the
    comparison is well defined.
    """
    if not a.points or not b.points:
        raise ValueError("both curves must be nonempty")
    costs = [p.cost for p in a.points] + [p.cost for p in b.points]
    norm = (min(costs), max(costs))
    auc_a = auc(a, normalization=norm)
    auc_b = auc(b, normalization=norm)
    return float(100.0 * (auc_a - auc_b) / auc_b)
