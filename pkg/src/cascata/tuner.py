"""Threshold optimization: bounded quasi-Newton solves swept over lambda.

The scalarized objective (1 - P(correct)) + lambda * E[cost] is minimized
in per-model quantile coordinates (interior probability mass), which makes
the box constraints and finite-difference steps scale-free across
heterogeneous marginals. A geometric lambda schedule traces the efficient
frontier, with midpoint infill closing any coverage gaps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .cascade import (
    CascadeModel,
    FrontierPoint,
    ThresholdVector,
    objective_value,
)
from .errors import EmptySweep, OptimizerDiverged
from .gridsearch import pareto_filter


@dataclass(frozen=True)
class TuneConfig:
    lambda0: float | None = None      # default 1e-3 / sum of expected costs
    growth_r: float = 0.5
    infill_q: float = 0.1
    fd_step: float = 1e-4             # central-difference step, quantile mass
    max_lambda_steps: int = 60
    grad_tol: float = 1e-7
    max_iter: int = 200
    restarts: int = 3
    boundary_eps: float = 1e-6
    saturation_rtol: float = 1e-3
    max_infill_depth: int = 20
    fixpoint_stop: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.infill_q < 0.2:
            raise ValueError("infill_q must lie in (0, 0.2)")
        if self.growth_r <= 0.0:
            raise ValueError("growth_r must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def _default_lambda0(cm: CascadeModel) -> float:
    return 1e-3 / sum(cm.expected_costs[m] for m in cm.models)


class _QuantileSpace:
    """Bijection between interior-mass coordinates and threshold vectors."""

    def __init__(self, cm: CascadeModel, eps: float):
        self.cm = cm
        self.eps = eps
        self.dim = cm.k - 1
        self.marginals = [cm.marginal_at(i) for i in range(1, cm.k)]

    def to_phi(self, s: np.ndarray) -> tuple[float, ...]:
        out = []
        for m, sj in zip(self.marginals, s):
            z = float(m.mixture_ppf(float(np.clip(sj, self.eps, 1.0 - self.eps)))[0])
            out.append(m.phi_min + z * (m.phi_max - m.phi_min))
        return tuple(out)

    def to_s(self, phi) -> np.ndarray:
        out = []
        for m, pj in zip(self.marginals, phi):
            z = (pj - m.phi_min) / (m.phi_max - m.phi_min)
            out.append(float(np.clip(m.mixture_cdf(z), self.eps, 1.0 - self.eps)))
        return np.asarray(out)


def _central_gradient(fun, s, lo, hi, h):
    grad = np.empty_like(s)
    for j in range(s.size):
        hp = min(h, hi - s[j])
        hm = min(h, s[j] - lo)
        sp, sm = s.copy(), s.copy()
        sp[j] += hp
        sm[j] -= hm
        grad[j] = (fun(sp) - fun(sm)) / (hp + hm)
    return grad


def solve_single(cm: CascadeModel, lam: float, cfg: TuneConfig | None = None,
                 warm_start=None, rng=None, counters: dict | None = None) -> FrontierPoint:
    """Minimize the scalarized objective at one lambda.

    Runs L-BFGS-B from the warm start (when given), the per-coordinate
    median, and `restarts - 1` random quantile starts, and returns the
    best solution found.
    """
    cfg = cfg or TuneConfig()
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    if cm.k == 1:
        op = cm.evaluate(())
        return FrontierPoint(lam=lam, thresholds=ThresholdVector(()), point=op,
                             objective=objective_value(op, lam), subcascade=cm.models)
    space = _QuantileSpace(cm, cfg.boundary_eps)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    def fun(s: np.ndarray) -> float:
        if counters is not None:
            counters["objective_evals"] = counters.get("objective_evals", 0) + 1
        val = objective_value(cm.evaluate(space.to_phi(s)), lam)
        if not np.isfinite(val):
            raise OptimizerDiverged(f"objective is not finite at s={s}")
        return val

    lo, hi = cfg.boundary_eps, 1.0 - cfg.boundary_eps
    bounds = [(lo, hi)] * space.dim
    starts = []
    if warm_start is not None:
        phi = warm_start.phi if isinstance(warm_start, ThresholdVector) else warm_start
        starts.append(space.to_s(phi))
    starts.append(np.full(space.dim, 0.5))
    for _ in range(cfg.restarts - 1):
        starts.append(lo + (hi - lo) * rng.random(space.dim))

    best_s, best_val = None, np.inf
    for s0 in starts:
        if counters is not None:
            counters["solves"] = counters.get("solves", 0) + 1
        res = minimize(
            fun, s0, jac=lambda s: _central_gradient(fun, s, lo, hi, cfg.fd_step),
            method="L-BFGS-B", bounds=bounds,
            options={"maxiter": cfg.max_iter, "gtol": cfg.grad_tol, "ftol": 1e-14},
        )
        for cand in (np.clip(res.x, lo, hi), np.clip(s0, lo, hi)):
            val = fun(cand)
            if val < best_val:
                best_s, best_val = cand.copy(), val
    phi = space.to_phi(best_s)
    op = cm.evaluate(phi)
    return FrontierPoint(lam=lam, thresholds=ThresholdVector(phi), point=op,
                         objective=objective_value(op, lam), subcascade=cm.models)


def sweep(cm: CascadeModel, cfg: TuneConfig | None = None,
          counters: dict | None = None) -> list[FrontierPoint]:
    """Trace the frontier by growing lambda until the cost saturates.

    Each solve warm-starts from the previous optimum. Stops when the
    expected cost reaches the cheapest model's expected cost (within a
    relative tolerance) or after `max_lambda_steps`. Returns points sorted
    by expected cost.
    """
    cfg = cfg or TuneConfig()
    lam = cfg.lambda0 if cfg.lambda0 is not None else _default_lambda0(cm)
    if cm.k == 1:
        return [solve_single(cm, lam, cfg)]
    floor = cm.expected_costs[cm.models[0]] * (1.0 + cfg.saturation_rtol)
    rng = np.random.default_rng(cfg.seed)
    points: list[FrontierPoint] = []
    warm = None
    stable = 0
    for _ in range(cfg.max_lambda_steps):
        fp = solve_single(cm, lam, cfg, warm_start=warm, rng=rng, counters=counters)
        saturated = fp.point.expected_cost <= floor
        if saturated and not points:
            raise EmptySweep("lambda0 already saturates the cost constraint")
        if points and cfg.fixpoint_stop:
            prev = points[-1]
            same = (abs(prev.point.expected_cost - fp.point.expected_cost)
                    <= 1e-6 * max(prev.point.expected_cost, 1e-300)
                    and np.allclose(prev.thresholds.as_array(), fp.thresholds.as_array(),
                                    rtol=0.0, atol=1e-6))
            stable = stable + 1 if same else 0
        points.append(fp)
        warm = fp.thresholds
        if saturated or stable >= 2:
            # a fixpoint at the box corner cannot move as lambda grows further
            break
        lam *= 1.0 + cfg.growth_r
    return sorted(points, key=lambda p: p.point.expected_cost)


def adaptive_infill(points: list[FrontierPoint], cm: CascadeModel, q: float,
                    max_depth: int = 20) -> list[FrontierPoint]:
    """Insert evaluated midpoint thresholds until no quantile gap exceeds q.

    A gap between adjacent lambda solutions is the largest per-coordinate
    probability mass |F_j(phi_j') - F_j(phi_j)|. Midpoints are plain
    threshold averages, evaluated without re-optimization. Recursion stops
    at `max_depth` per original interval; residual gaps trigger a warning.
    """
    if cm.k == 1 or len(points) < 2:
        return list(points)
    pts = sorted(points, key=lambda p: (p.lam is None, p.lam if p.lam is not None else 0.0))
    marginals = [cm.marginal_at(i) for i in range(1, cm.k)]

    def gap(a: FrontierPoint, b: FrontierPoint) -> float:
        fa = [m.cdf(p) for m, p in zip(marginals, a.thresholds.phi)]
        fb = [m.cdf(p) for m, p in zip(marginals, b.thresholds.phi)]
        return max(abs(x - y) for x, y in zip(fa, fb))

    out = [pts[0]]
    stack = [(pts[i], pts[i + 1], 0) for i in range(len(pts) - 1)][::-1]
    residual = 0
    while stack:
        left, right, depth = stack.pop()
        if gap(left, right) <= q:
            out.append(right)
            continue
        if depth >= max_depth:
            residual += 1
            out.append(right)
            continue
        mid_phi = tuple(0.5 * (a + b) for a, b in
                        zip(left.thresholds.phi, right.thresholds.phi))
        mid_lam = 0.5 * ((left.lam or 0.0) + (right.lam or 0.0))
        op = cm.evaluate(mid_phi)
        mid = FrontierPoint(lam=mid_lam, thresholds=ThresholdVector(mid_phi), point=op,
                            objective=objective_value(op, mid_lam),
                            subcascade=cm.models, source="infill")
        stack.append((mid, right, depth + 1))
        stack.append((left, mid, depth + 1))
    if residual:
        warnings.warn(f"{residual} frontier gaps above q={q} remain at max infill depth",
                      stacklevel=2)
    return out


def tune_with_model_selection(cm: CascadeModel, cfg: TuneConfig | None = None,
                              counters: dict | None = None) -> list[FrontierPoint]:
    """Sweep every subcascade and return the Pareto-filtered union.

    Subcascades whose sweeps saturate immediately contribute nothing beyond
    points already covered by shorter subcascades and are skipped.
    """
    cfg = cfg or TuneConfig()
    merged: list[FrontierPoint] = []
    for sub in cm.subcascades():
        sub_cfg = cfg if cfg.lambda0 is not None else replace(
            cfg, lambda0=_default_lambda0(sub))
        if counters is not None:
            counters["sweeps"] = counters.get("sweeps", 0) + 1
        try:
            pts = sweep(sub, sub_cfg, counters=counters)
        except EmptySweep:
            continue
        pts = adaptive_infill(pts, sub, cfg.infill_q, cfg.max_infill_depth)
        merged.extend(
            replace(p, subcascade=sub.models) for p in pts
        )
    keep = pareto_filter([(p.point.p_correct, p.point.expected_cost) for p in merged])
    chosen = [merged[i] for i in keep]
    return sorted(chosen, key=lambda p: p.point.expected_cost)
