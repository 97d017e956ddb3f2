"""Mixed discrete-continuous marginal distribution of calibrated confidence.

The law places point masses at the observed extremes of calibrated
confidence and a two-component scaled beta mixture on the open interval
between them. Fitting counts the endpoint masses and runs EM on the
rescaled interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, betaln, digamma, zeta

from .errors import TooFewInteriorPoints

_ENDPOINT_RTOL = 1e-12
_EM_TOL = 1e-9
_EM_MAX_ITER = 500
_MIN_INTERIOR = 10


@dataclass(frozen=True)
class MarginalModel:
    """Point masses at [phi_min, phi_max] plus a scaled two-beta mixture."""

    phi_min: float
    phi_max: float
    w_min: float
    w_max: float
    pi: float
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float
    interior_fallback: bool = False
    degenerate: bool = False
    em_loglik: tuple = field(default=(), repr=False, compare=False)

    @property
    def continuous_weight(self) -> float:
        if self.degenerate:
            return 0.0
        return max(0.0, 1.0 - self.w_min - self.w_max)

    def _z(self, phi):
        span = self.phi_max - self.phi_min
        return np.clip((np.asarray(phi, dtype=float) - self.phi_min) / span, 0.0, 1.0)

    def mixture_cdf(self, z):
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        return (self.pi * betainc(self.alpha1, self.beta1, z)
                + (1.0 - self.pi) * betainc(self.alpha2, self.beta2, z))

    def mixture_pdf(self, z):
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, 1e-300, 1.0 - 1e-16)
        out = np.zeros_like(zc)
        for w, a, b in ((self.pi, self.alpha1, self.beta1),
                        (1.0 - self.pi, self.alpha2, self.beta2)):
            if w > 0.0:
                out += w * np.exp((a - 1.0) * np.log(zc) + (b - 1.0) * np.log1p(-zc)
                                  - betaln(a, b))
        return np.where((z <= 0.0) | (z >= 1.0), 0.0, out)

    def mixture_ppf(self, t):
        """Inverse of the mixture CDF: coarse bisection, then safeguarded Newton."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = np.zeros_like(t)
        hi = np.ones_like(t)
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            below = self.mixture_cdf(mid) < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        z = 0.5 * (lo + hi)
        for _ in range(8):
            f = self.mixture_cdf(z) - t
            below = f < 0.0
            lo = np.where(below, z, lo)
            hi = np.where(below, hi, z)
            pdf = self.mixture_pdf(z)
            step = np.divide(f, np.maximum(pdf, 1e-300))
            z_new = z - step
            fallback = (z_new < lo) | (z_new > hi) | ~np.isfinite(z_new)
            z = np.where(fallback, 0.5 * (lo + hi), z_new)
        return np.clip(z, 0.0, 1.0)

    def cdf(self, phi):
        """Right-continuous mixed CDF; total over the real line."""
        scalar = np.isscalar(phi)
        x = np.atleast_1d(np.asarray(phi, dtype=float))
        if self.degenerate:
            out = np.where(x >= self.phi_min, 1.0, 0.0)
            return float(out[0]) if scalar else out
        out = np.zeros_like(x)
        at_or_above_min = x >= self.phi_min
        out[at_or_above_min] = self.w_min
        inside = at_or_above_min & (x < self.phi_max)
        out[inside] += self.continuous_weight * self.mixture_cdf(self._z(x[inside]))
        out[x >= self.phi_max] = 1.0
        return float(out[0]) if scalar else out

    def quantile(self, p):
        """Generalized inverse CDF: inf{phi : cdf(phi) >= p}."""
        scalar = np.isscalar(p)
        ps = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((ps < 0.0) | (ps > 1.0)):
            raise ValueError("probabilities must be in [0, 1]")
        if self.degenerate:
            out = np.full_like(ps, self.phi_min)
            return float(out[0]) if scalar else out
        c = self.continuous_weight
        out = np.empty_like(ps)
        low = ps <= self.w_min
        high = ps >= self.w_min + c
        mid = ~(low | high)
        out[low] = self.phi_min
        out[high] = self.phi_max
        if mid.any():
            t = (ps[mid] - self.w_min) / c
            z = self.mixture_ppf(t)
            out[mid] = self.phi_min + z * (self.phi_max - self.phi_min)
        return float(out[0]) if scalar else out

    def mean(self) -> float:
        if self.degenerate:
            return self.phi_min
        mz = (self.pi * self.alpha1 / (self.alpha1 + self.beta1)
              + (1.0 - self.pi) * self.alpha2 / (self.alpha2 + self.beta2))
        interior_mean = self.phi_min + mz * (self.phi_max - self.phi_min)
        return (self.w_min * self.phi_min + self.w_max * self.phi_max
                + self.continuous_weight * interior_mean)

    def sample(self, n: int, seed) -> np.ndarray:
        """n i.i.d. draws; deterministic under a fixed seed."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if self.degenerate:
            rng.random(n)
            return np.full(n, self.phi_min)
        u = rng.random(n)
        comp = rng.random(n)
        z1 = rng.beta(self.alpha1, self.beta1, size=n)
        z2 = rng.beta(self.alpha2, self.beta2, size=n)
        z = np.where(comp < self.pi, z1, z2)
        interior = self.phi_min + z * (self.phi_max - self.phi_min)
        out = np.where(u < self.w_min, self.phi_min,
                       np.where(u < self.w_min + self.w_max, self.phi_max, interior))
        return out

    def is_interior(self, phi) -> np.ndarray:
        """True where a value lies strictly between the endpoint atoms."""
        x = np.atleast_1d(np.asarray(phi, dtype=float))
        at_min = np.abs(x - self.phi_min) <= _ENDPOINT_RTOL * abs(self.phi_min)
        at_max = np.abs(x - self.phi_max) <= _ENDPOINT_RTOL * abs(self.phi_max)
        return (~at_min) & (~at_max) & (x > self.phi_min) & (x < self.phi_max)

    def to_dict(self) -> dict:
        return {
            "phi_min": self.phi_min, "phi_max": self.phi_max,
            "w_min": self.w_min, "w_max": self.w_max, "pi": self.pi,
            "alpha1": self.alpha1, "beta1": self.beta1,
            "alpha2": self.alpha2, "beta2": self.beta2,
            "interior_fallback": self.interior_fallback,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalModel":
        return cls(phi_min=float(d["phi_min"]), phi_max=float(d["phi_max"]),
                   w_min=float(d["w_min"]), w_max=float(d["w_max"]),
                   pi=float(d["pi"]), alpha1=float(d["alpha1"]), beta1=float(d["beta1"]),
                   alpha2=float(d["alpha2"]), beta2=float(d["beta2"]),
                   interior_fallback=bool(d.get("interior_fallback", False)),
                   degenerate=bool(d.get("degenerate", False)))


def _weighted_beta_mle(stats, start=None):
    """Weighted beta MLE from sufficient statistics, Newton on digamma scores.

    `stats` is (R, S_logz, S_log1mz, mean, var): the weighted count, weighted
    sums of log z and log(1-z), and the weighted first two moments. The
    weighted log-likelihood is (a-1)S1 + (b-1)S2 - R*ln B(a,b), so objective
    checks are O(1).
    """
    total, sum1, sum2, m, v = stats
    if total <= 1e-12:
        return start if start is not None else (1.0, 1.0)
    s1, s2 = sum1 / total, sum2 / total

    def loglik(a, b):
        return (a - 1.0) * sum1 + (b - 1.0) * sum2 - total * betaln(a, b)

    m = min(max(m, 1e-6), 1.0 - 1e-6)
    if v <= 0.0 or v >= m * (1.0 - m):
        a, b = 1.0, 1.0
    else:
        common = m * (1.0 - m) / v - 1.0
        a, b = max(m * common, 1e-3), max((1.0 - m) * common, 1e-3)
    best = (a, b)
    best_ll = loglik(a, b)
    if start is not None:
        start_ll = loglik(*start)
        if start_ll > best_ll:
            a, b = start
            best, best_ll = start, start_ll
    for _ in range(50):
        dg = digamma((a, b, a + b))
        g1 = dg[0] - dg[2] - s1
        g2 = dg[1] - dg[2] - s2
        tg = zeta(2, (a, b, a + b))  # trigamma
        j11 = tg[0] - tg[2]
        j22 = tg[1] - tg[2]
        det = j11 * j22 - tg[2] * tg[2]
        if not np.isfinite(det) or abs(det) < 1e-300:
            break
        da = -(j22 * g1 + tg[2] * g2) / det
        db = -(tg[2] * g1 + j11 * g2) / det
        scale = 1.0
        while scale > 1e-6 and (a + scale * da <= 0.0 or b + scale * db <= 0.0):
            scale *= 0.5
        a_new, b_new = a + scale * da, b + scale * db
        if a_new <= 0.0 or b_new <= 0.0:
            break
        a, b = min(a_new, 1e6), min(b_new, 1e6)
        if max(abs(scale * da), abs(scale * db)) < 1e-10:
            break
    if loglik(a, b) > best_ll:
        best = (a, b)
    return best


def _fit_beta_mixture(z: np.ndarray):
    """Two-component beta mixture EM on the rescaled interior values.

    The E-step quantities double as the log-likelihood trace entry of the
    just-updated parameters, so each iteration touches the data vectors a
    constant number of times; component sufficient statistics come from
    shared totals.
    """
    z = np.clip(z, 1e-15, 1.0 - 1e-15)
    logz, log1mz = np.log(z), np.log1p(-z)
    n = z.size
    tot_logz = float(logz.sum())
    tot_log1mz = float(log1mz.sum())
    tot_z = float(z.sum())
    tot_zz = float((z * z).sum())

    def both_component_stats(r1):
        n1 = float(r1.sum())
        n2 = n - n1
        rz = r1 * z
        sl1 = float((r1 * logz).sum())
        sm1 = float((r1 * log1mz).sum())
        sz1 = float(rz.sum())
        szz1 = float((rz * z).sum())

        def pack(total, sl, sm, sz, szz):
            if total <= 1e-12:
                return total, 0.0, 0.0, 0.5, 0.0
            mean = sz / total
            var = max(szz / total - mean * mean, 0.0)
            return total, sl, sm, mean, var

        return (pack(n1, sl1, sm1, sz1, szz1),
                pack(n2, tot_logz - sl1, tot_log1mz - sm1,
                     tot_z - sz1, tot_zz - szz1))

    split = np.median(z)
    r1 = (z <= split).astype(float)
    if r1.sum() in (0.0, float(n)):
        r1 = np.full(n, 0.5)
    pi = float(r1.mean())
    stats1, stats2 = both_component_stats(r1)
    a1, b1 = _weighted_beta_mle(stats1)
    a2, b2 = _weighted_beta_mle(stats2)

    trace = []
    for _ in range(_EM_MAX_ITER + 1):
        l1 = np.log(pi) + (a1 - 1.0) * logz + (b1 - 1.0) * log1mz - betaln(a1, b1)
        l2 = np.log1p(-pi) + (a2 - 1.0) * logz + (b2 - 1.0) * log1mz - betaln(a2, b2)
        lse = np.logaddexp(l1, l2)
        trace.append(float(lse.sum()))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < _EM_TOL:
            break
        if len(trace) > _EM_MAX_ITER:
            break
        r1 = np.exp(l1 - lse)
        pi = float(np.clip(r1.mean(), 1e-9, 1.0 - 1e-9))
        stats1, stats2 = both_component_stats(r1)
        a1, b1 = _weighted_beta_mle(stats1, start=(a1, b1))
        a2, b2 = _weighted_beta_mle(stats2, start=(a2, b2))
    return pi, a1, b1, a2, b2, tuple(trace)


def fit_marginal(phis) -> MarginalModel:
    """Fit the mixed distribution to calibrated confidences in (0, 1).

    Endpoints are the observed extremes; their masses come from counting
    exact (1e-12 relative) ties. Interiors with fewer than 10 points fall
    back to a single uniform component and set `interior_fallback`.
    """
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        raise ValueError("no observations")
    if np.any((phis <= 0.0) | (phis >= 1.0)):
        raise ValueError("calibrated confidences must lie strictly in (0, 1)")
    phi_min = float(phis.min())
    phi_max = float(phis.max())
    if abs(phi_max - phi_min) <= _ENDPOINT_RTOL * phi_max:
        return MarginalModel(phi_min=phi_min, phi_max=phi_min, w_min=1.0, w_max=0.0,
                             pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0,
                             degenerate=True)
    n = phis.size
    at_min = np.abs(phis - phi_min) <= _ENDPOINT_RTOL * abs(phi_min)
    at_max = np.abs(phis - phi_max) <= _ENDPOINT_RTOL * abs(phi_max)
    w_min = float(at_min.sum()) / n
    w_max = float(at_max.sum()) / n
    interior = phis[~at_min & ~at_max]
    z = (interior - phi_min) / (phi_max - phi_min)
    if interior.size == 0:
        if w_min + w_max < 1.0 - 1e-9:
            raise TooFewInteriorPoints("no interior mass to fit and weights do not sum to 1")
        return MarginalModel(phi_min=phi_min, phi_max=phi_max, w_min=w_min, w_max=w_max,
                             pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0,
                             interior_fallback=True)
    if interior.size < _MIN_INTERIOR:
        return MarginalModel(phi_min=phi_min, phi_max=phi_max, w_min=w_min, w_max=w_max,
                             pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0,
                             interior_fallback=True)
    pi, a1, b1, a2, b2, trace = _fit_beta_mixture(z)
    return MarginalModel(phi_min=phi_min, phi_max=phi_max, w_min=w_min, w_max=w_max,
                         pi=pi, alpha1=a1, beta1=b1, alpha2=a2, beta2=b2,
                         em_loglik=trace)
