import numpy as np
import pytest

from cascata.calibration import MULTIPLE_CHOICE, Calibrator
from cascata.cascade import CascadeModel
from cascata.copula import GumbelCopula
from cascata.dataset import PriceSheet
from cascata.errors import SinglePoint
from cascata.evaluation import (
    CurvePoint,
    ErrorCostCurve,
    auc,
    compare_frontiers,
    replay,
)
from cascata.marginal import MarginalModel
from cascata.synth import default_prices, emit_dataset, ground_truth_model, make_random_spec
from conftest import make_dataset

IDENTITY_CAL = Calibrator(MULTIPLE_CHOICE, 0.0, 1.0, 0.0, 20.0)


def curve(points, source="model"):
    return ErrorCostCurve(points=tuple(
        CurvePoint(cost=c, error=e, thresholds=(), source=source, subcascade=("m",))
        for c, e in points))


def tiny_cascade(prices=None):
    """Two uniform models over raw-confidence space with identity-ish calibration."""
    m1 = MarginalModel(phi_min=0.2, phi_max=0.9, w_min=0.0, w_max=0.0,
                       pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0)
    m2 = MarginalModel(phi_min=0.3, phi_max=0.95, w_min=0.0, w_max=0.0,
                       pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0)
    prices = prices or PriceSheet(gamma_in={"m1": 1e-6, "m2": 4e-6},
                                  gamma_out={"m1": 2e-6, "m2": 8e-6})
    return CascadeModel(
        models=("m1", "m2"),
        calibrators={"m1": IDENTITY_CAL, "m2": IDENTITY_CAL},
        marginals={"m1": m1, "m2": m2},
        copulas={("m1", "m2"): GumbelCopula(theta=1.5)},
        expected_costs={"m1": 1e-4, "m2": 8e-4},
        prices=prices)


def phi_of_raw(p):
    return IDENTITY_CAL.predict(p)


class TestReplay:
    def hand_dataset(self):
        # three queries; confidences chosen so exactly q2 defers at 0.55
        rows = [
            ("q1", "m1", 0.80, 1, 100, 10), ("q1", "m2", 0.90, 1, 100, 30),
            ("q2", "m1", 0.30, 0, 200, 20), ("q2", "m2", 0.85, 1, 200, 60),
            ("q3", "m1", 0.70, 0, 150, 15), ("q3", "m2", 0.95, 1, 150, 45),
        ]
        ds = make_dataset(rows)
        ds.split_tag.update({q: "test" for q in ds.queries})
        return ds

    def test_three_query_hand_computation(self):
        cm = tiny_cascade()
        ds = self.hand_dataset()
        thr = 0.55  # calibrated space: phi(0.30) < 0.55 < phi(0.70)
        phi_thr = float(phi_of_raw(thr))
        err, cost = replay(ds, cm, [phi_thr])
        # q1, q3 answered by m1 (correctness 1, 0); q2 deferred to m2 (1)
        assert err == pytest.approx(1.0 / 3.0)
        prices = cm.prices
        c_q1 = prices.cost_of(ds.record("q1", "m1"))
        c_q2 = prices.cost_of(ds.record("q2", "m1")) + prices.cost_of(ds.record("q2", "m2"))
        c_q3 = prices.cost_of(ds.record("q3", "m1"))
        assert cost == pytest.approx((c_q1 + c_q2 + c_q3) / 3.0)

    def test_threshold_below_everything_matches_single_model(self):
        cm = tiny_cascade()
        ds = self.hand_dataset()
        low_phi = float(phi_of_raw(0.05))
        err, cost = replay(ds, cm, [low_phi])
        accs = [ds.record(q, "m1").correct for q in ds.queries]
        assert err == pytest.approx(1.0 - np.mean(accs))
        solo = np.mean([cm.prices.cost_of(ds.record(q, "m1")) for q in ds.queries])
        assert cost == pytest.approx(solo)

    def test_cost_monotone_in_thresholds(self, rng):
        spec = make_random_spec(3, seed=201)
        ds, _ = emit_dataset(spec)
        ds.split_tag.update({q: "test" for q in ds.queries})
        cm = ground_truth_model(spec, default_prices(spec))
        base = np.array([0.3, 0.3])
        for _ in range(5):
            s = rng.uniform(0.05, 0.9, 2)
            t_lo = [float(cm.marginal_at(i + 1).quantile(
                cm.marginal_at(i + 1).w_min + s[i] * cm.marginal_at(i + 1).continuous_weight))
                for i in range(2)]
            j = int(rng.integers(2))
            s_hi = s.copy()
            s_hi[j] = min(s_hi[j] + 0.1, 0.99)
            t_hi = list(t_lo)
            m = cm.marginal_at(j + 1)
            t_hi[j] = float(m.quantile(m.w_min + s_hi[j] * m.continuous_weight))
            _, c_lo = replay(ds, cm, t_lo)
            _, c_hi = replay(ds, cm, t_hi)
            assert c_hi >= c_lo - 1e-12


class TestAuc:
    def test_two_point_trapezoid(self):
        assert auc(curve([(0.0, 0.5), (1.0, 0.1)])) == pytest.approx(0.3)

    def test_flat_curve(self):
        assert auc(curve([(1.0, 0.2), (2.0, 0.2), (5.0, 0.2)])) == pytest.approx(0.2)

    def test_single_point_raises(self):
        with pytest.raises(SinglePoint):
            auc(curve([(1.0, 0.5)]))

    def test_bounded_in_unit_interval(self, rng):
        for _ in range(20):
            pts = [(float(c), float(e)) for c, e in
                   zip(rng.uniform(0, 5, 10), rng.uniform(0, 1, 10))]
            assert 0.0 <= auc(curve(pts)) <= 1.0

    def test_invariant_to_duplicates_and_order(self, rng):
        pts = [(1.0, 0.4), (2.0, 0.3), (3.0, 0.25)]
        base = auc(curve(pts))
        assert auc(curve(pts + pts)) == pytest.approx(base)
        assert auc(curve(pts[::-1])) == pytest.approx(base)

    def test_dominated_points_do_not_change_auc(self):
        pts = [(1.0, 0.4), (2.0, 0.3)]
        with_dominated = pts + [(2.5, 0.9)]  # dominated by (2.0, 0.3)
        assert auc(curve(with_dominated)) == pytest.approx(auc(curve(pts)))


class TestCompare:
    def test_identical_curves(self):
        a = curve([(1.0, 0.4), (2.0, 0.2)])
        assert compare_frontiers(a, a) == pytest.approx(0.0)

    def test_halved_error_gives_minus_fifty(self):
        a = curve([(1.0, 0.2), (2.0, 0.1)])
        b = curve([(1.0, 0.4), (2.0, 0.2)])
        assert compare_frontiers(a, b) == pytest.approx(-50.0)

    def test_model_vs_empirical_consistency_k2(self):
        spec = make_random_spec(2, seed=210, n_queries=40_000)
        ds, _ = emit_dataset(spec)
        ds.split_tag.update({q: "test" for q in ds.queries})
        cm = ground_truth_model(spec, default_prices(spec))
        m = cm.marginal_at(1)
        rng = np.random.default_rng(0)
        for _ in range(4):
            t = float(m.quantile(m.w_min + rng.uniform(0.1, 0.9) * m.continuous_weight))
            op = cm.evaluate([t])
            err, _ = replay(ds, cm, [t])
            p_emp = 1.0 - err
            se = np.sqrt(op.p_correct * (1 - op.p_correct) / spec.n_queries)
            assert abs(op.p_correct - p_emp) <= 3 * se