"""Confidence calibration: feature transforms, logistic fits, ECE, diagnostics.

Raw confidence signals are spread out by hyperparameter-free log transforms
(with infinities clamped to the training extremes), then mapped to a
probability of correctness by a per-model logistic regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import (
    AllInfinite,
    EmptyInput,
    SingleClassTrainingSet,
    SingularInformation,
)

MULTIPLE_CHOICE = "multiple_choice"
GENERATION = "generation"

_IRLS_TOL = 1e-8
_IRLS_MAX_ITER = 100
_SEPARATION_PENALTY = 1e-4


def transform(p_raw: float, task_kind: str) -> float:
    """Feature transform of a raw confidence; +inf at the blow-up endpoints.

    Multiple choice uses log(1/(1-p)). Generation uses log(1/(1-p)) for
    p >= 1/2 and log(1/p) below, which agree at p = 1/2.
    """
    if not 0.0 <= p_raw <= 1.0:
        raise ValueError(f"raw confidence {p_raw} outside [0, 1]")
    if task_kind == MULTIPLE_CHOICE:
        return math.inf if p_raw == 1.0 else -math.log1p(-p_raw)
    if task_kind == GENERATION:
        if p_raw >= 0.5:
            return math.inf if p_raw == 1.0 else -math.log1p(-p_raw)
        return math.inf if p_raw == 0.0 else -math.log(p_raw)
    raise ValueError(f"unknown task_kind {task_kind!r}")


def transform_array(p_raw: np.ndarray, task_kind: str) -> np.ndarray:
    return np.asarray([transform(float(p), task_kind) for p in np.asarray(p_raw, dtype=float)])


def clamp_infinite(xis) -> tuple[np.ndarray, float, float]:
    """Replace +/-inf features by the extreme finite values; returns bounds."""
    xis = np.asarray(xis, dtype=float)
    finite = np.isfinite(xis)
    if not finite.any():
        raise AllInfinite("no finite feature values to clamp to")
    xi_min = float(xis[finite].min())
    xi_max = float(xis[finite].max())
    out = xis.copy()
    out[np.isposinf(xis)] = xi_max
    out[np.isneginf(xis)] = xi_min
    return out, xi_min, xi_max


def _irls(X: np.ndarray, y: np.ndarray, penalty: float = 0.0):
    """Logistic MLE by iteratively reweighted least squares.

    Returns (beta, hessian, converged). `penalty` adds an L2 ridge on all
    coefficients (used only for the separation fallback).
    """
    n, p = X.shape
    beta = np.zeros(p)
    converged = False
    for _ in range(_IRLS_MAX_ITER):
        eta = X @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = X.T @ (y - mu) - penalty * beta
        hess = (X.T * w) @ X + penalty * np.eye(p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation(str(exc)) from exc
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            return beta, hess, False
        if np.max(np.abs(step)) < _IRLS_TOL:
            converged = True
            break
    eta = X @ beta
    mu = expit(eta)
    w = mu * (1.0 - mu)
    hess = (X.T * w) @ X + penalty * np.eye(p)
    return beta, hess, converged


@dataclass(frozen=True)
class Calibrator:
    """Fitted logistic map from a raw confidence signal to P(correct)."""

    task_kind: str
    intercept: float
    slope: float
    xi_min: float
    xi_max: float
    separation_flag: bool = False

    def feature(self, p_raw: float) -> float:
        xi = transform(p_raw, self.task_kind)
        return min(max(xi, self.xi_min), self.xi_max)

    def predict(self, p_raw) -> np.ndarray | float:
        """Calibrated confidence phi, strictly inside (0, 1) for any p_raw in [0, 1]."""
        scalar = np.isscalar(p_raw)
        xs = np.atleast_1d(np.asarray(p_raw, dtype=float))
        xi = np.clip(transform_array(xs, self.task_kind), self.xi_min, self.xi_max)
        phi = np.clip(expit(self.intercept + self.slope * xi), 1e-15, 1.0 - 1e-15)
        return float(phi[0]) if scalar else phi

    def to_dict(self) -> dict:
        return {
            "task_kind": self.task_kind,
            "intercept": self.intercept,
            "slope": self.slope,
            "xi_min": self.xi_min,
            "xi_max": self.xi_max,
            "separation_flag": self.separation_flag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        return cls(task_kind=d["task_kind"], intercept=float(d["intercept"]),
                   slope=float(d["slope"]), xi_min=float(d["xi_min"]),
                   xi_max=float(d["xi_max"]),
                   separation_flag=bool(d.get("separation_flag", False)))


def fit_calibrator(p_raw, labels, task_kind: str) -> Calibrator:
    """Fit the per-model logistic calibrator on training observations.

    Features are transformed and inf-clamped first; the clamp bounds are
    stored so test-time blow-ups map to the same feature values. On perfect
    separation the fit falls back to a small L2 ridge and flags it.
    """
    labels = np.asarray(labels, dtype=float)
    if labels.min() == labels.max():
        raise SingleClassTrainingSet("training labels are all identical")
    xi, xi_min, xi_max = clamp_infinite(transform_array(p_raw, task_kind))
    X = np.column_stack([np.ones_like(xi), xi])

    separated = _is_separated(xi, labels)
    if not separated:
        beta, _, converged = _irls(X, labels)
        poorly_scaled = not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 30.0
        if converged and not poorly_scaled:
            return Calibrator(task_kind, float(beta[0]), float(beta[1]),
                              xi_min, xi_max, separation_flag=False)
    beta, _, _ = _irls(X, labels, penalty=_SEPARATION_PENALTY)
    return Calibrator(task_kind, float(beta[0]), float(beta[1]),
                      xi_min, xi_max, separation_flag=True)


def _is_separated(xi: np.ndarray, labels: np.ndarray) -> bool:
    """One-feature perfect separation: class feature ranges do not overlap."""
    pos = xi[labels > 0.5]
    neg = xi[labels < 0.5]
    return pos.min() > neg.max() or neg.min() > pos.max()


@dataclass(frozen=True)
class EceReport:
    """Decile-binned expected calibration error."""

    ece: float
    bins: list[tuple[float, float, float, float, int]]


def ece(confidences, labels, n_bins: int = 10) -> EceReport:
    """ECE with bin edges at the empirical deciles of the confidences.

    Duplicate decile edges are merged into wider bins, so point masses
    (for example many confidences exactly 1.0) land in a single bin.
    """
    conf = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if conf.size == 0:
        raise EmptyInput("no observations")
    if conf.shape != y.shape:
        raise ValueError("confidences and labels must have equal length")
    edges = np.unique(np.quantile(conf, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size == 1:
        edges = np.array([edges[0], edges[0]])
    # bin j covers (edges[j], edges[j+1]]; the lowest value joins bin 0
    idx = np.searchsorted(edges[1:-1], conf, side="left")
    n = conf.size
    total = 0.0
    bins = []
    for j in range(edges.size - 1):
        mask = idx == j
        count = int(mask.sum())
        if count == 0:
            continue
        mean_conf = float(conf[mask].mean())
        acc = float(y[mask].mean())
        total += (count / n) * abs(mean_conf - acc)
        bins.append((float(edges[j]), float(edges[j + 1]), mean_conf, acc, count))
    return EceReport(ece=total, bins=bins)


def ancestor_regression(labels, markov_conf, ancestor_conf):
    """Two-predictor logistic regression of correctness on ancestor confidences.

    Returns (coefficients, wald_log10_p) where both arrays are ordered as
    (intercept, markov predictor, earlier ancestor). Wald p-values come from
    the inverse observed information at the MLE.
    """
    y = np.asarray(labels, dtype=float)
    x1 = np.asarray(markov_conf, dtype=float)
    x2 = np.asarray(ancestor_conf, dtype=float)
    if y.size < 25:
        raise ValueError("need at least 25 observations")
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValueError("predictors must be finite")
    if y.min() == y.max():
        raise SingleClassTrainingSet("labels are all identical")
    X = np.column_stack([np.ones_like(x1), x1, x2])
    if np.linalg.matrix_rank(X.T @ X) < X.shape[1]:
        raise SingularInformation("design matrix is rank deficient")
    beta, hess, _ = _irls(X, y)
    cond = np.linalg.cond(hess)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformation("observed information is numerically singular")
    cov = np.linalg.inv(hess)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    log10_p = (np.log(2.0) + norm.logsf(np.abs(z))) / np.log(10.0)
    return beta, log10_p
