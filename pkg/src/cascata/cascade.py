"""Joint cascade model and its O(k) operating-point evaluation.

Bundles per-model calibrators, marginals, pairwise copulas, and expected
costs; computes the cascade's probability of correctness and expected cost
by a single forward pass over models, with conditional-correctness
integrals evaluated as Riemann-Stieltjes sums over quantile grids plus
explicit endpoint jumps.
"""

from __future__ import annotations

import itertools
import threading
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calibration import Calibrator
from .copula import GumbelCopula, conditional_event_prob, copula_cdf
from .dataset import PriceSheet
from .errors import ConditioningOnNullEvent, MissingPairCopula
from .marginal import MarginalModel

GRID_POINTS = 512
_TABLE_CACHE_CAP = 8192


class OperatingPoint(NamedTuple):
    p_correct: float
    expected_cost: float


def objective_value(point: OperatingPoint, lam: float) -> float:
    """(1 - P(correct)) + lambda * E[cost]."""
    return (1.0 - point.p_correct) + lam * point.expected_cost


@dataclass(frozen=True)
class ThresholdVector:
    """Deferral thresholds phi_1..phi_{k-1}, each interior to its marginal."""

    phi: tuple[float, ...]

    def __len__(self):
        return len(self.phi)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=float)


@dataclass(frozen=True)
class FrontierPoint:
    """One operating point on an error-cost frontier."""

    lam: float | None
    thresholds: ThresholdVector
    point: OperatingPoint
    objective: float | None
    subcascade: tuple[str, ...]
    source: str = "tuner"


def _as_thresholds(t, k: int) -> tuple[float, ...]:
    phi = tuple(t.phi) if isinstance(t, ThresholdVector) else tuple(float(x) for x in t)
    if len(phi) != k - 1:
        raise ValueError(f"expected {k - 1} thresholds for a {k}-model cascade, got {len(phi)}")
    return phi


@dataclass
class _MarginalGrid:
    """Fixed quantile-spaced interior nodes of one marginal."""

    phi: np.ndarray   # node locations, phi_min..phi_max
    v: np.ndarray     # full mixed CDF at the nodes (continuous branch)
    mids: np.ndarray  # segment midpoints of phi


def _build_grid(m: MarginalModel) -> _MarginalGrid | None:
    if m.degenerate or m.continuous_weight <= 0.0:
        return None
    t = np.linspace(0.0, 1.0, GRID_POINTS)
    z = m.mixture_ppf(t)
    z[0], z[-1] = 0.0, 1.0
    phi = m.phi_min + z * (m.phi_max - m.phi_min)
    v = m.w_min + m.continuous_weight * t
    return _MarginalGrid(phi=phi, v=v, mids=0.5 * (phi[:-1] + phi[1:]))


class _IntegralTable:
    """Tail sums of the conditional correctness integral for one (pair, u_a)."""

    __slots__ = ("g", "tail", "jump_min", "jump_max")

    def __init__(self, grid: _MarginalGrid | None, m: MarginalModel,
                 cop: GumbelCopula | None, u_a: float):
        if grid is None:
            g0 = _cond_cdf_value(cop, u_a, m.w_min)
            self.g = None
            self.tail = None
            self.jump_min = g0
            self.jump_max = 1.0 - g0
            return
        if cop is None:
            g = grid.v.copy()
        else:
            g = np.clip(copula_cdf(cop, np.full_like(grid.v, u_a), grid.v) / u_a, 0.0, 1.0)
        seg = grid.mids * np.diff(g)
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        self.g = g
        self.tail = tail
        self.jump_min = g[0]
        self.jump_max = 1.0 - g[-1]


def _cond_cdf_value(cop: GumbelCopula | None, u_a: float, v: float) -> float:
    if cop is None:
        return v
    return float(np.clip(copula_cdf(cop, u_a, v) / u_a, 0.0, 1.0))


class CascadeModel:
    """Ordered models with calibrators, marginals, pair copulas, and costs.

    Immutable after assembly; `evaluate` is pure and safe to call from
    concurrent workers (the internal memo table is lock-protected and does
    not affect results).
    """

    def __init__(self, models, calibrators, marginals, copulas, expected_costs,
                 prices: PriceSheet | None = None, metadata: dict | None = None):
        self.models = tuple(models)
        if not self.models:
            raise ValueError("cascade needs at least one model")
        self.calibrators = dict(calibrators)
        self.marginals = dict(marginals)
        self.copulas = {tuple(k): v for k, v in copulas.items()}
        self.expected_costs = {m: float(expected_costs[m]) for m in self.models}
        self.prices = prices
        self.metadata = dict(metadata or {})
        for m in self.models:
            if m not in self.marginals:
                raise ValueError(f"no marginal for model {m!r}")
        for prev, cur in zip(self.models, self.models[1:]):
            if (prev, cur) not in self.copulas:
                raise MissingPairCopula((prev, cur))
        costs = [self.expected_costs[m] for m in self.models]
        if any(c <= 0.0 for c in costs):
            raise ValueError("expected costs must be strictly positive")
        if any(b < a for a, b in zip(costs, costs[1:])):
            warnings.warn("expected costs are not nondecreasing in cascade order",
                          stacklevel=2)
        self._grids = {m: _build_grid(self.marginals[m]) for m in self.models}
        self._tables: dict = {}
        self._lock = threading.Lock()

    @property
    def k(self) -> int:
        return len(self.models)

    def marginal_at(self, i: int) -> MarginalModel:
        return self.marginals[self.models[i - 1]]

    def copula_between(self, i: int, j: int) -> GumbelCopula:
        key = (self.models[i - 1], self.models[j - 1])
        if key not in self.copulas:
            raise MissingPairCopula(key)
        return self.copulas[key]

    def _table(self, prev_id, cur_id, u_a: float) -> _IntegralTable:
        key = (prev_id, cur_id, u_a)
        with self._lock:
            hit = self._tables.get(key)
        if hit is not None:
            return hit
        cop = None if prev_id is None else self.copulas[(prev_id, cur_id)]
        table = _IntegralTable(self._grids[cur_id], self.marginals[cur_id], cop, u_a)
        with self._lock:
            if len(self._tables) >= _TABLE_CACHE_CAP:
                self._tables.pop(next(iter(self._tables)))
            self._tables[key] = table
        return table

    def _validate_threshold(self, i: int, phi: float) -> None:
        m = self.marginal_at(i)
        if m.degenerate or m.continuous_weight <= 0.0:
            raise ValueError(
                f"model {self.models[i - 1]!r} has no interior; thresholds must be interior")
        if not (m.phi_min < phi < m.phi_max):
            raise ValueError(
                f"threshold {phi} for model {self.models[i - 1]!r} outside "
                f"({m.phi_min}, {m.phi_max})")

    def conditional_correctness_integral(self, i: int, a, b) -> float:
        """E[Phi_i ; Phi_i > b | Phi_{i-1} <= a]; `b=None` is the -inf sentinel.

        For i = 1 the conditioning vanishes and `a` is ignored.
        """
        cur_id = self.models[i - 1]
        m = self.marginals[cur_id]
        if i == 1:
            prev_id, u_a = None, 1.0
        else:
            prev_id = self.models[i - 2]
            prev_m = self.marginals[prev_id]
            self._validate_threshold(i - 1, float(a))
            u_a = float(prev_m.cdf(float(a)))
            if u_a <= 0.0:
                raise ConditioningOnNullEvent("F_{i-1}(a) = 0")
        table = self._table(prev_id, cur_id, u_a)
        if b is None:
            out = m.phi_max * table.jump_max + m.phi_min * table.jump_min
            if table.tail is not None:
                out += table.tail[0]
            return float(out)
        b = float(b)
        grid = self._grids[cur_id]
        if grid is None:
            # atoms only: the top jump always clears b, the bottom one rarely
            if b >= m.phi_max:
                raise ValueError(f"b={b} must lie below phi_max={m.phi_max}")
            out = m.phi_max * table.jump_max
            if b < m.phi_min:
                out += m.phi_min * table.jump_min
            return float(out)
        self._validate_threshold(i, b)
        j = int(np.searchsorted(grid.phi, b, side="right")) - 1
        j = min(max(j, 0), GRID_POINTS - 2)
        cop = None if prev_id is None else self.copulas[(prev_id, cur_id)]
        g_b = _cond_cdf_value(cop, u_a, float(m.cdf(b)))
        partial = 0.5 * (b + grid.phi[j + 1]) * (table.g[j + 1] - g_b)
        return float(partial + table.tail[j + 1] + m.phi_max * table.jump_max)

    def evaluate(self, thresholds) -> OperatingPoint:
        """Probability of correctness and expected cost at given thresholds.

        Single forward pass: cumulative transition probability and
        cumulative cost carry the shared prefixes of every summand.
        """
        k = self.k
        phi = _as_thresholds(thresholds, k)
        for i, p in enumerate(phi, start=1):
            self._validate_threshold(i, p)
        costs = [self.expected_costs[m] for m in self.models]

        cum_cost = costs[0]
        cum_trans = 1.0
        b1 = phi[0] if k >= 2 else None
        correctness = self.conditional_correctness_integral(1, None, b1)
        f1 = float(self.marginal_at(1).cdf(b1)) if k >= 2 else 0.0
        cost_total = (1.0 - f1) * cum_cost
        cum_trans *= f1

        for i in range(2, k + 1):
            cum_cost += costs[i - 1]
            a = phi[i - 2]
            b = phi[i - 1] if i < k else None
            prev_m = self.marginal_at(i - 1)
            u_a = float(prev_m.cdf(a))
            if u_a <= 0.0:
                raise ConditioningOnNullEvent("F_{i-1}(a) = 0")
            if b is None:
                cond_cdf = 0.0
            else:
                cop = self.copula_between(i - 1, i)
                v_b = float(self.marginal_at(i).cdf(b))
                cond_cdf = conditional_event_prob(cop, u_a, v_b)
            correctness += cum_trans * self.conditional_correctness_integral(i, a, b)
            cost_total += cum_trans * (1.0 - cond_cdf) * cum_cost
            cum_trans *= cond_cdf
        return OperatingPoint(p_correct=float(correctness), expected_cost=float(cost_total))

    def subcascade(self, member_ids) -> "CascadeModel":
        """Materialize the ordered subcascade with the given member models."""
        members = tuple(member_ids)
        order = {m: i for i, m in enumerate(self.models)}
        if any(m not in order for m in members):
            raise ValueError(f"unknown models in {members}")
        if list(members) != sorted(members, key=order.__getitem__) or not members:
            raise ValueError("subcascade members must be a nonempty ordered subset")
        copulas = {}
        for prev, cur in zip(members, members[1:]):
            if (prev, cur) not in self.copulas:
                raise MissingPairCopula((prev, cur))
            copulas[(prev, cur)] = self.copulas[(prev, cur)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return CascadeModel(
                models=members,
                calibrators={m: self.calibrators[m] for m in members if m in self.calibrators},
                marginals={m: self.marginals[m] for m in members},
                copulas=copulas,
                expected_costs={m: self.expected_costs[m] for m in members},
                prices=self.prices,
                metadata=self.metadata,
            )

    def subcascades(self) -> list["CascadeModel"]:
        """All 2^k - 1 nonempty ordered subsets, wired with their pair copulas."""
        out = []
        for size in range(1, self.k + 1):
            for members in itertools.combinations(self.models, size):
                out.append(self.subcascade(members))
        return out

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "calibrators": {m: c.to_dict() for m, c in self.calibrators.items()},
            "marginals": {m: mm.to_dict() for m, mm in self.marginals.items()},
            "copulas": [
                {"pair": list(pair), **cop.to_dict()} for pair, cop in sorted(self.copulas.items())
            ],
            "expected_costs": dict(self.expected_costs),
            "prices": None if self.prices is None else {
                m: {"input": self.prices.gamma_in[m], "output": self.prices.gamma_out[m]}
                for m in self.models
            },
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeModel":
        prices = None
        if d.get("prices"):
            prices = PriceSheet.from_config(d["prices"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(
                models=d["models"],
                calibrators={m: Calibrator.from_dict(c) for m, c in d["calibrators"].items()},
                marginals={m: MarginalModel.from_dict(mm) for m, mm in d["marginals"].items()},
                copulas={tuple(e["pair"]): GumbelCopula.from_dict(e) for e in d["copulas"]},
                expected_costs=d["expected_costs"],
                prices=prices,
                metadata=d.get("metadata", {}),
            )


def save_model(cm: CascadeModel, path) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(cm.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> CascadeModel:
    import json

    with open(path) as fh:
        return CascadeModel.from_dict(json.load(fh))


def fit_from_dataset(ds, prices: PriceSheet, task_kind: str,
                     metadata: dict | None = None) -> CascadeModel:
    """Fit the full joint model on the train split of an aligned dataset.

    Calibrators, marginals, and copulas all use the same training data;
    copulas are fitted for every ordered model pair so subcascades can be
    evaluated later.
    """
    from .calibration import fit_calibrator
    from .copula import fit_copula
    from .dataset import expected_cost_per_model
    from .marginal import fit_marginal

    split = "train" if ds.split_tag else None
    calibrators = {}
    marginals = {}
    train_phis = {}
    for m in ds.model_order:
        raw = ds.column(m, "raw_confidence", split)
        labels = ds.column(m, "correct", split)
        cal = fit_calibrator(raw, labels, task_kind)
        phis = np.asarray(cal.predict(raw))
        calibrators[m] = cal
        marginals[m] = fit_marginal(phis)
        train_phis[m] = phis
    copulas = {}
    for i, prev in enumerate(ds.model_order):
        for cur in ds.model_order[i + 1:]:
            copulas[(prev, cur)] = fit_copula(
                train_phis[prev], train_phis[cur], marginals[prev], marginals[cur])
    costs = dict(zip(ds.model_order, expected_cost_per_model(ds, prices)))
    return CascadeModel(models=ds.model_order, calibrators=calibrators,
                        marginals=marginals, copulas=copulas,
                        expected_costs=costs, prices=prices, metadata=metadata)
