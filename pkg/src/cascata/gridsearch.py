"""High-resolution grid-search baseline over per-model quantile grids.

Candidates are the Cartesian product of per-model interior quantile grids
(2.5% probability-mass spacing by default, 40 points per dimension), scored
with the cascade model and reduced to the Pareto-optimal skyline.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .cascade import CascadeModel, FrontierPoint, ThresholdVector
from .errors import CandidateBudgetExceeded


@dataclass(frozen=True)
class GridSpec:
    mass_step: float = 0.025
    candidate_budget: int = 10_000_000

    def __post_init__(self):
        if not 0.0 < self.mass_step <= 0.5:
            raise ValueError("mass_step must be in (0, 0.5]")

    @property
    def points_per_dim(self) -> int:
        return int(np.ceil(1.0 / self.mass_step))


def grid_levels(spec: GridSpec) -> np.ndarray:
    """Interior probability-mass levels, centered in each mass increment."""
    g = spec.points_per_dim
    return (np.arange(g) + 0.5) / g


def model_grid(cm: CascadeModel, i: int, spec: GridSpec) -> np.ndarray:
    """Quantile grid of thresholds for model position i (1-based)."""
    m = cm.marginal_at(i)
    z = m.mixture_ppf(grid_levels(spec))
    return m.phi_min + z * (m.phi_max - m.phi_min)


def candidate_count(cm: CascadeModel, spec: GridSpec) -> int:
    return spec.points_per_dim ** (cm.k - 1)


def enumerate_candidates(cm: CascadeModel, spec: GridSpec):
    """Lazily yield all threshold combinations over the per-model grids."""
    if cm.k < 2:
        raise ValueError("grid search needs at least two models")
    grids = [model_grid(cm, i, spec) for i in range(1, cm.k)]
    for combo in itertools.product(*grids):
        yield ThresholdVector(phi=tuple(float(x) for x in combo))


def pareto_filter(points) -> list[int]:
    """Indices of points not dominated by any other.

    A point (p, c) is dominated when some other point has strictly higher
    p AND strictly lower c. Exact ties on both coordinates keep the first
    occurrence. Runs in O(n log n): sort by cost, sweep the running best p.
    """
    entries = [(float(p), float(c), i, None) for i, (p, c) in enumerate(points)]
    if not entries:
        raise ValueError("no points to filter")
    return sorted(idx for _, _, idx, _ in _pareto_merge(entries))


def _pareto_merge(entries: list[tuple[float, float, int, tuple]]) -> list[tuple]:
    """Skyline of (p, c, idx, payload) entries; idx breaks exact ties."""
    if not entries:
        return []
    entries = sorted(entries, key=lambda e: (e[1], e[2]))
    kept = []
    best_p = -np.inf
    seen: set[tuple[float, float]] = set()
    pos = 0
    while pos < len(entries):
        end = pos
        while end < len(entries) and entries[end][1] == entries[pos][1]:
            end += 1
        group = entries[pos:end]
        for p, c, idx, payload in group:
            if best_p > p or (p, c) in seen:
                continue
            seen.add((p, c))
            kept.append((p, c, idx, payload))
        best_p = max(best_p, max(p for p, _, _, _ in group))
        pos = end
    return kept


def grid_search(cm: CascadeModel, spec: GridSpec | None = None,
                stats: dict | None = None) -> list[FrontierPoint]:
    """Score every grid candidate and return the Pareto set sorted by cost.

    Evaluation streams with bounded memory: only the running skyline is
    retained between batches. `stats`, when given, receives the candidate
    count and wall-clock seconds for runtime-scaling measurements.
    """
    spec = spec or GridSpec()
    total = candidate_count(cm, spec)
    if total > spec.candidate_budget:
        raise CandidateBudgetExceeded(
            f"{total} candidates exceed the budget of {spec.candidate_budget}")
    start = time.perf_counter()
    skyline: list[tuple] = []
    batch: list[tuple] = []
    for idx, tv in enumerate(enumerate_candidates(cm, spec)):
        op = cm.evaluate(tv)
        batch.append((op.p_correct, op.expected_cost, idx, (tv, op)))
        if len(batch) >= 4096:
            skyline = _pareto_merge(skyline + batch)
            batch = []
    skyline = _pareto_merge(skyline + batch)
    elapsed = time.perf_counter() - start
    if stats is not None:
        stats.update({"k": cm.k, "method": "grid", "candidates": total,
                      "seconds": elapsed})
    points = [
        FrontierPoint(lam=None, thresholds=tv, point=op, objective=None,
                      subcascade=cm.models, source="grid")
        for _, _, _, (tv, op) in skyline
    ]
    points.sort(key=lambda fp: fp.point.expected_cost)
    return points
