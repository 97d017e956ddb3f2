"""Goodness-of-fit: Cramér-von Mises tests with parametric bootstrap.

Marginal fit is tested by the integrated squared distance between the
empirical CDF and the mixed model CDF, integrated against the model
measure (atoms summed directly, interior segments in closed form).
Copula fit is tested through the Kendall transform: the distribution of
the empirical copula values against the fitted copula's Kendall function.
Bootstrap replicates refit all parameters so the null accounts for
estimation noise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .copula import GumbelCopula, kendall_function, kendall_tau, fit_theta, sample_pairs
from .errors import DegenerateInput, TooFewPoints
from .marginal import MarginalModel, fit_marginal

_ENDPOINT_RTOL = 1e-12


def _bootstrap_stats(worker, B: int, threads: int) -> list[float]:
    """Replicate statistics in index order; deterministic for any thread count."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(worker, range(B)))
    return [worker(r) for r in range(B)]


@dataclass(frozen=True)
class GofResult:
    statistic: float
    normalized: float
    p_value: float
    bootstrap_B: int
    n: int

    @property
    def reject_at_05(self) -> bool:
        return self.p_value < 0.05


def marginal_cvm_statistic(m: MarginalModel, sample) -> float:
    """Exact integral of (empirical CDF - model CDF)^2 dF over the mixed law.

    Atoms contribute w * (Fhat - F)^2 at the endpoint masses; the interior
    integrates in closed form between consecutive order statistics after
    transforming to interior mixture mass, where the model CDF is linear.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    tol_min = _ENDPOINT_RTOL * abs(m.phi_min)
    tol_max = _ENDPOINT_RTOL * abs(m.phi_max)
    fhat_min = float(np.mean(x <= m.phi_min + tol_min))
    fhat_max = float(np.mean(x <= m.phi_max + tol_max))
    total = m.w_min * (fhat_min - m.w_min) ** 2 + m.w_max * (fhat_max - 1.0) ** 2
    c = m.continuous_weight
    if c <= 0.0:
        return total
    t = np.empty(n)
    below = x <= m.phi_min + tol_min
    above = x >= m.phi_max - tol_max
    inner = ~below & ~above
    t[below] = 0.0
    t[above] = 1.0
    span = m.phi_max - m.phi_min
    t[inner] = m.mixture_cdf((x[inner] - m.phi_min) / span)
    t = np.concatenate([[0.0], np.sort(t), [1.0]])
    i_over_n = np.arange(n + 1) / n
    a = i_over_n - m.w_min
    lo = a - c * t[:-1]
    hi = a - c * t[1:]
    total += float(np.sum(lo ** 3 - hi ** 3) / 3.0)
    return total


def marginal_cvm(m: MarginalModel, test_phis, B: int = 1000, seed: int = 0,
                 threads: int = 1) -> GofResult:
    """Marginal CvM test with a full-refit parametric bootstrap.

    `statistic` is the CvM integral; `normalized` is its square root (the
    scale usually reported for marginal fits).
    """
    test_phis = np.asarray(test_phis, dtype=float)
    n = test_phis.size
    if n < 20:
        raise TooFewPoints(f"need at least 20 observations, got {n}")
    observed = marginal_cvm_statistic(m, test_phis)

    def worker(r: int) -> float:
        rng = np.random.default_rng([seed, r])
        replicate = m.sample(n, rng)
        return marginal_cvm_statistic(fit_marginal(replicate), replicate)

    stats = _bootstrap_stats(worker, B, threads)
    p = (1.0 + sum(1 for s in stats if s >= observed)) / (B + 1.0)
    return GofResult(statistic=observed, normalized=float(np.sqrt(observed)),
                     p_value=p, bootstrap_B=B, n=n)


def _kendall_pseudo_obs(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Empirical copula value at each observation: V_i = mean(x<=x_i & y<=y_i)."""
    le_x = x[None, :] <= x[:, None]
    le_y = y[None, :] <= y[:, None]
    return (le_x & le_y).mean(axis=1)


def kendall_cvm_statistic(c: GumbelCopula, v_pseudo: np.ndarray) -> float:
    """n * integral of (K_n - K_theta)^2 dK_theta, exactly by segment sums."""
    n = v_pseudo.size
    s = kendall_function(c, np.sort(v_pseudo))
    s = np.concatenate([[0.0], s, [1.0]])
    i_over_n = np.arange(n + 1) / n
    lo = i_over_n - s[:-1]
    hi = i_over_n - s[1:]
    return float(n * np.sum(lo ** 3 - hi ** 3) / 3.0)


def kendall_transform_cvm(c: GumbelCopula, pairs, marginals=None,
                          B: int = 1000, seed: int = 0, threads: int = 1) -> GofResult:
    """Copula CvM test via the Kendall transform with parametric bootstrap.

    `pairs` holds (phi_prev, phi_cur) observations; when `marginals` is a
    pair of fitted marginal models, only interior pairs enter the test.
    Each bootstrap replicate resamples from the fitted copula and refits
    theta through Kendall's tau. `statistic` is n*CvM; `normalized` is
    sqrt(n)*CvM.
    """
    arr = np.asarray(pairs, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    if marginals is not None:
        m_prev, m_cur = marginals
        keep = m_prev.is_interior(x) & m_cur.is_interior(y)
        x, y = x[keep], y[keep]
    n = x.size
    if n < 30:
        raise TooFewPoints(f"need at least 30 interior pairs, got {n}")
    observed_int = kendall_cvm_statistic(c, _kendall_pseudo_obs(x, y)) / n

    def worker(r: int) -> float:
        rng = np.random.default_rng([seed, r])
        uv = sample_pairs(c, n, rng)
        tau_r = min(kendall_tau(uv[:, 0], uv[:, 1]), 1.0 - 1e-12)
        c_r = fit_theta(tau_r)
        return kendall_cvm_statistic(c_r, _kendall_pseudo_obs(uv[:, 0], uv[:, 1])) / n

    stats = _bootstrap_stats(worker, B, threads)
    p = (1.0 + sum(1 for s in stats if s >= observed_int)) / (B + 1.0)
    return GofResult(statistic=float(n * observed_int),
                     normalized=float(np.sqrt(n) * observed_int),
                     p_value=p, bootstrap_B=B, n=n)


SUBSET_ALL = "all"
SUBSET_BOTH_CORRECT = "both_correct"
SUBSET_BOTH_INCORRECT = "both_incorrect"
_SUBSET_MIN_N = 50


def tau_matrix(ds, calibrators, subset: str = SUBSET_ALL, split: str = "test") -> np.ndarray:
    """Pairwise Kendall's tau of calibrated confidences on the chosen subset.

    Filtered subsets (both correct / both incorrect) require at least 50
    qualifying queries per pair; cells below the cutoff are NaN. The
    diagonal is 1 by convention.
    """
    if subset not in (SUBSET_ALL, SUBSET_BOTH_CORRECT, SUBSET_BOTH_INCORRECT):
        raise ValueError(f"unknown subset {subset!r}")
    models = ds.model_order
    k = len(models)
    phis = {}
    corrects = {}
    for m in models:
        raw = ds.column(m, "raw_confidence", split)
        phis[m] = np.asarray(calibrators[m].predict(raw))
        corrects[m] = ds.column(m, "correct", split)
    out = np.full((k, k), np.nan)
    np.fill_diagonal(out, 1.0)
    for i in range(k):
        for j in range(i + 1, k):
            mi, mj = models[i], models[j]
            if subset == SUBSET_BOTH_CORRECT:
                mask = corrects[mi] & corrects[mj]
            elif subset == SUBSET_BOTH_INCORRECT:
                mask = ~corrects[mi] & ~corrects[mj]
            else:
                mask = np.ones(phis[mi].size, dtype=bool)
            if subset != SUBSET_ALL and mask.sum() < _SUBSET_MIN_N:
                continue
            if mask.sum() < 2:
                continue
            try:
                tau = kendall_tau(phis[mi][mask], phis[mj][mask])
            except DegenerateInput:
                continue
            out[i, j] = out[j, i] = tau
    return out
