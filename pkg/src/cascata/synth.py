"""Synthetic ground-truth generation from a specified confidence chain.

Draws dependent calibrated-confidence vectors from the chain (first
marginal, then successive conditional draws through each pair copula),
converts them to query logs whose raw confidences invert a known reference
calibrator, and can materialize the exact ground-truth cascade model.
These generators back the oracle and acceptance suites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logit

from .calibration import MULTIPLE_CHOICE, Calibrator
from .cascade import CascadeModel
from .copula import GumbelCopula, inverse_conditional_given_value
from .dataset import AlignedDataset, PriceSheet, QueryRecord
from .marginal import MarginalModel

_ENDPOINT_RTOL = 1e-12


@dataclass(frozen=True)
class SynthSpec:
    marginals: tuple[MarginalModel, ...]
    thetas: tuple[float, ...]
    input_tokens: tuple[int, ...]
    output_tokens: tuple[int, ...]
    n_queries: int
    seed: int
    model_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        k = len(self.marginals)
        if len(self.thetas) != k - 1:
            raise ValueError("need k-1 copula parameters")
        if any(t < 1.0 for t in self.thetas):
            raise ValueError("copula parameters must be >= 1")
        if len(self.input_tokens) != k or len(self.output_tokens) != k:
            raise ValueError("token constants must cover every model")
        if not self.model_ids:
            object.__setattr__(self, "model_ids",
                               tuple(f"model{i + 1}" for i in range(k)))

    @property
    def k(self) -> int:
        return len(self.marginals)

    def copulas(self) -> tuple[GumbelCopula, ...]:
        return tuple(GumbelCopula(theta=t) for t in self.thetas)


def reference_calibrator(m: MarginalModel) -> Calibrator:
    """Monotone logistic calibrator whose inverse generates raw confidences.

    Slope 1 and an intercept below logit(phi_min) keep the inverse feature
    map positive over the marginal's support.
    """
    intercept = float(logit(m.phi_min)) - 2.0
    return Calibrator(task_kind=MULTIPLE_CHOICE, intercept=intercept, slope=1.0,
                      xi_min=0.0, xi_max=60.0)


def raw_from_phi(phi, cal: Calibrator) -> np.ndarray:
    """Invert the calibrator chain: phi -> feature -> raw confidence."""
    xi = (logit(np.asarray(phi, dtype=float)) - cal.intercept) / cal.slope
    return -np.expm1(-xi)


def _randomized_pit(m: MarginalModel, phi: np.ndarray, rng) -> np.ndarray:
    """CDF values of draws; atoms spread uniformly over their jump interval."""
    f_hi = m.cdf(phi)
    f_lo = f_hi.copy()
    at_min = np.abs(phi - m.phi_min) <= _ENDPOINT_RTOL * abs(m.phi_min)
    at_max = np.abs(phi - m.phi_max) <= _ENDPOINT_RTOL * abs(m.phi_max)
    f_lo[at_min] = f_hi[at_min] - m.w_min
    f_lo[at_max] = f_hi[at_max] - m.w_max
    u = f_lo + rng.random(phi.size) * (f_hi - f_lo)
    return np.clip(u, 1e-12, 1.0 - 1e-12)


def sample_chain(spec: SynthSpec, n: int | None = None, rng=None) -> np.ndarray:
    """Draw confidence vectors, shape (n, k), from the dependent chain."""
    n = spec.n_queries if n is None else n
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(spec.seed)
    out = np.empty((n, spec.k))
    out[:, 0] = spec.marginals[0].sample(n, rng)
    for i in range(1, spec.k):
        cop = GumbelCopula(theta=spec.thetas[i - 1])
        u = _randomized_pit(spec.marginals[i - 1], out[:, i - 1], rng)
        w = rng.random(n)
        v = inverse_conditional_given_value(cop, u, w)
        out[:, i] = spec.marginals[i].quantile(v)
    return out


def emit_dataset(spec: SynthSpec) -> tuple[AlignedDataset, dict]:
    """Materialize query logs plus the ground-truth parameters behind them.

    Correctness is Bernoulli(phi) per model; raw confidence inverts the
    reference calibrator so refitting the pipeline recovers the chain.
    """
    rng = np.random.default_rng(spec.seed)
    phis = sample_chain(spec, rng=rng)
    n = spec.n_queries
    records = {}
    queries = tuple(f"q{i:06d}" for i in range(n))
    cals = [reference_calibrator(m) for m in spec.marginals]
    for j, mid in enumerate(spec.model_ids):
        raw = raw_from_phi(phis[:, j], cals[j])
        correct = rng.random(n) < phis[:, j]
        for i, q in enumerate(queries):
            records[(q, mid)] = QueryRecord(
                query_id=q, model_id=mid, raw_confidence=float(raw[i]),
                correct=bool(correct[i]), input_tokens=spec.input_tokens[j],
                output_tokens=spec.output_tokens[j])
    ds = AlignedDataset(model_order=spec.model_ids, queries=queries,
                        records=records, split_tag={})
    truth = {
        "model_ids": list(spec.model_ids),
        "marginals": [m.to_dict() for m in spec.marginals],
        "thetas": list(spec.thetas),
        "input_tokens": list(spec.input_tokens),
        "output_tokens": list(spec.output_tokens),
        "n_queries": spec.n_queries,
        "seed": spec.seed,
        "reference_calibrators": [c.to_dict() for c in cals],
    }
    return ds, truth


def spec_from_dict(d: dict) -> SynthSpec:
    return SynthSpec(
        marginals=tuple(MarginalModel.from_dict(m) for m in d["marginals"]),
        thetas=tuple(float(t) for t in d["thetas"]),
        input_tokens=tuple(int(t) for t in d["input_tokens"]),
        output_tokens=tuple(int(t) for t in d["output_tokens"]),
        n_queries=int(d["n_queries"]),
        seed=int(d["seed"]),
        model_ids=tuple(d.get("model_ids", ())),
    )


def ground_truth_model(spec: SynthSpec, prices: PriceSheet) -> CascadeModel:
    """Exact CascadeModel for the chain, with all-pairs copulas.

    Adjacent pairs carry the chain's own parameters. Non-adjacent pairs get
    a Gumbel parameter from the product of intermediate taus, a simple
    attenuation heuristic that keeps subcascade evaluation well defined.
    """
    ids = spec.model_ids
    copulas = {}
    for i in range(spec.k):
        for j in range(i + 1, spec.k):
            if j == i + 1:
                theta = spec.thetas[i]
            else:
                taus = [1.0 - 1.0 / spec.thetas[l] for l in range(i, j)]
                theta = 1.0 / (1.0 - float(np.prod(taus))) if taus else 1.0
            copulas[(ids[i], ids[j])] = GumbelCopula(theta=theta)
    costs = {
        mid: prices.gamma_in[mid] * spec.input_tokens[j]
        + prices.gamma_out[mid] * spec.output_tokens[j]
        for j, mid in enumerate(ids)
    }
    cals = {mid: reference_calibrator(spec.marginals[j]) for j, mid in enumerate(ids)}
    return CascadeModel(models=ids, calibrators=cals,
                        marginals=dict(zip(ids, spec.marginals)),
                        copulas=copulas, expected_costs=costs, prices=prices,
                        metadata={"source": "synthetic", "seed": spec.seed})


def make_random_spec(k: int, seed: int, n_queries: int = 1000,
                     endpoint_masses: bool = True) -> SynthSpec:
    """Random but well-conditioned chain spec for property and oracle tests."""
    rng = np.random.default_rng(seed)
    marginals = []
    for _ in range(k):
        phi_min = float(rng.uniform(0.02, 0.30))
        phi_max = float(rng.uniform(0.70, 0.98))
        if endpoint_masses:
            w_min = float(rng.uniform(0.0, 0.2))
            w_max = float(rng.uniform(0.0, 0.25))
        else:
            w_min = w_max = 0.0
        marginals.append(MarginalModel(
            phi_min=phi_min, phi_max=phi_max, w_min=w_min, w_max=w_max,
            pi=float(rng.uniform(0.25, 0.75)),
            alpha1=float(rng.uniform(0.8, 6.0)), beta1=float(rng.uniform(0.8, 6.0)),
            alpha2=float(rng.uniform(0.8, 6.0)), beta2=float(rng.uniform(0.8, 6.0))))
    thetas = tuple(float(rng.uniform(1.0, 3.0)) for _ in range(k - 1))
    # sorted token budgets keep per-model costs nondecreasing under the
    # geometric default prices, matching size-ordered cascades
    toks_in = tuple(sorted(int(rng.integers(50, 400)) * (j + 1) for j in range(k)))
    toks_out = tuple(sorted(int(rng.integers(20, 200)) * (j + 1) for j in range(k)))
    return SynthSpec(marginals=tuple(marginals), thetas=thetas,
                     input_tokens=toks_in, output_tokens=toks_out,
                     n_queries=n_queries, seed=seed)


def default_prices(spec: SynthSpec, base: float = 1e-6) -> PriceSheet:
    """Prices growing with model position, mimicking size-ordered cascades."""
    gin = {mid: base * (3.0 ** j) for j, mid in enumerate(spec.model_ids)}
    gout = {mid: 2.0 * base * (3.0 ** j) for j, mid in enumerate(spec.model_ids)}
    return PriceSheet(gamma_in=gin, gamma_out=gout)
