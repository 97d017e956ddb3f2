"""Gumbel copula: evaluation, rank-based fitting, sampling, Kendall transform.

A single parameter theta >= 1 controls upper-tail dependence; theta = 1 is
exact independence. Fitting inverts Kendall's tau via theta = 1/(1 - tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau

from .errors import ConditioningOnNullEvent, DegenerateInput, TauOutOfRange


@dataclass(frozen=True)
class GumbelCopula:
    theta: float
    tau: float | None = None
    clamped: bool = False

    def __post_init__(self):
        if not (self.theta >= 1.0 and np.isfinite(self.theta)):
            raise ValueError(f"theta must be finite and >= 1, got {self.theta}")

    def to_dict(self) -> dict:
        return {"theta": self.theta, "tau": self.tau, "clamped": self.clamped}

    @classmethod
    def from_dict(cls, d: dict) -> "GumbelCopula":
        tau = d.get("tau")
        return cls(theta=float(d["theta"]),
                   tau=None if tau is None else float(tau),
                   clamped=bool(d.get("clamped", False)))


def copula_cdf(c: GumbelCopula, u, v):
    """C(u, v) = exp(-((-ln u)^theta + (-ln v)^theta)^(1/theta))."""
    scalar = np.isscalar(u) and np.isscalar(v)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    u, v = np.broadcast_arrays(u, v)
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise ValueError("copula arguments must lie in [0, 1]")
    out = np.zeros(u.shape)
    pos = (u > 0) & (v > 0)
    if c.theta == 1.0:
        out[pos] = u[pos] * v[pos]
    else:
        x = -np.log(u[pos])
        y = -np.log(v[pos])
        out[pos] = np.exp(-(x ** c.theta + y ** c.theta) ** (1.0 / c.theta))
    # exact boundary identities, immune to pow rounding
    out = np.where((u >= 1.0) & pos, v, out)
    out = np.where((v >= 1.0) & pos, np.where(u >= 1.0, 1.0, u), out)
    return float(out[0]) if scalar else out


def kendall_tau(xs, ys) -> float:
    """Tie-adjusted tau-b, O(n log n)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size:
        raise ValueError("inputs must have equal length")
    if xs.size < 2:
        raise ValueError("need at least two pairs")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise DegenerateInput("tau is undefined when one variable is constant")
    tau = kendalltau(xs, ys, variant="b").statistic
    return float(tau)


def fit_theta(tau: float) -> GumbelCopula:
    """theta = 1/(1 - tau); negative tau clamps to independence with a flag."""
    if tau >= 1.0:
        raise TauOutOfRange(f"tau = {tau} >= 1 has no finite Gumbel parameter")
    if tau < 0.0:
        return GumbelCopula(theta=1.0, tau=tau, clamped=True)
    return GumbelCopula(theta=1.0 / (1.0 - tau), tau=tau)


def fit_copula(phis_prev, phis_cur, marginal_prev, marginal_cur) -> GumbelCopula:
    """Fit theta from observation pairs, restricted to interior pairs.

    Only pairs with both coordinates strictly inside their marginals'
    (phi_min, phi_max) enter the rank correlation; degenerate interiors
    fall back to independence with the clamp flag set.
    """
    x = np.asarray(phis_prev, dtype=float)
    y = np.asarray(phis_cur, dtype=float)
    keep = marginal_prev.is_interior(x) & marginal_cur.is_interior(y)
    if keep.sum() < 2:
        return GumbelCopula(theta=1.0, tau=None, clamped=True)
    try:
        tau = kendall_tau(x[keep], y[keep])
    except DegenerateInput:
        return GumbelCopula(theta=1.0, tau=None, clamped=True)
    return fit_theta(tau)


def conditional_event_prob(c: GumbelCopula, f_prev_at_a, f_cur_at_b):
    """P(cur <= b | prev <= a) = C(F_prev(a), F_cur(b)) / F_prev(a)."""
    scalar = np.isscalar(f_prev_at_a) and np.isscalar(f_cur_at_b)
    u = np.atleast_1d(np.asarray(f_prev_at_a, dtype=float))
    v = np.atleast_1d(np.asarray(f_cur_at_b, dtype=float))
    u, v = np.broadcast_arrays(u, v)
    if np.any(u <= 0.0):
        raise ConditioningOnNullEvent("conditioning event has zero probability")
    out = np.clip(copula_cdf(c, u, v) / u, 0.0, 1.0)
    out = np.atleast_1d(out)
    return float(out[0]) if scalar else out


def sample_pairs(c: GumbelCopula, n: int, seed) -> np.ndarray:
    """n pairs with uniform marginals and Gumbel dependence, shape (n, 2).

    Uses the Marshall-Olkin construction: a positive stable mixing variable
    S with index 1/theta (Chambers-Mallows-Stuck), then
    U_i = exp(-(E_i / S)^(1/theta)) for independent unit exponentials E_i.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if c.theta == 1.0:
        return rng.random((n, 2))
    alpha = 1.0 / c.theta
    s = _positive_stable(alpha, n, rng)
    e = rng.exponential(size=(n, 2))
    return np.exp(-((e / s[:, None]) ** alpha))


def _positive_stable(alpha: float, n: int, rng) -> np.ndarray:
    """One-sided alpha-stable draws with Laplace transform exp(-t^alpha)."""
    v = rng.uniform(0.0, np.pi, size=n)
    w = rng.exponential(size=n)
    return (np.sin(alpha * v) / np.sin(v) ** (1.0 / alpha)
            * (np.sin((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


def conditional_given_value(c: GumbelCopula, u, v):
    """h-function: P(V <= v | U = u) = dC(u, v)/du, for u, v in (0, 1)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if c.theta == 1.0:
        return np.broadcast_arrays(u, v)[1].copy()
    x = -np.log(u)
    y = -np.log(v)
    a = x ** c.theta + y ** c.theta
    return np.exp(-a ** (1.0 / c.theta)) * a ** (1.0 / c.theta - 1.0) * x ** (c.theta - 1.0) / u


def inverse_conditional_given_value(c: GumbelCopula, u, w) -> np.ndarray:
    """Solve h(v | u) = w for v by bisection; vectorized, |error| <= 1e-10."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    u, w = np.broadcast_arrays(u, w)
    if c.theta == 1.0:
        return w.copy()
    x = -np.log(u)
    xp = x ** c.theta
    xc = x ** (c.theta - 1.0) / u
    inv_theta = 1.0 / c.theta
    lo = np.full(u.shape, 1e-300)
    hi = np.full(u.shape, 1.0 - 1e-16)
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        a = xp + (-np.log(mid)) ** c.theta
        h = np.exp(-(a ** inv_theta)) * a ** (inv_theta - 1.0) * xc
        below = h < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def kendall_function(c: GumbelCopula, t):
    """K(t) = P(C(U, V) <= t) = t - t ln(t)/theta for t in (0, 1]."""
    scalar = np.isscalar(t)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((ts <= 0.0) | (ts > 1.0)):
        raise ValueError("t must lie in (0, 1]")
    out = ts - ts * np.log(ts) / c.theta
    return float(out[0]) if scalar else out
