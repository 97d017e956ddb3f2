import threading

import numpy as np
import pytest

from cascata.cascade import CascadeModel, load_model, save_model
from cascata.copula import GumbelCopula, conditional_event_prob, sample_pairs
from cascata.errors import MissingPairCopula
from cascata.marginal import MarginalModel
from cascata.synth import default_prices, ground_truth_model, make_random_spec


def direct_prop1(cm, thresholds):
    """Naive nested-product summation of the correctness/cost decompositions.

    Independent of the single-pass recurrence: every summand recomputes its
    product prefix from scratch.
    """
    k = cm.k
    phi = list(thresholds)

    def full_cdf(i, b):
        return 0.0 if b is None else float(cm.marginal_at(i).cdf(b))

    def cond(i, a, b):
        cop = cm.copula_between(i - 1, i)
        return conditional_event_prob(cop, full_cdf(i - 1, a), full_cdf(i, b))

    costs = [cm.expected_costs[m] for m in cm.models]
    b1 = phi[0] if k >= 2 else None
    p_total = cm.conditional_correctness_integral(1, None, b1)
    c_total = (1.0 - full_cdf(1, b1)) * costs[0]
    for i in range(2, k + 1):
        prefix = full_cdf(1, phi[0])
        for j in range(2, i):
            prefix *= cond(j, phi[j - 2], phi[j - 1])
        b = phi[i - 1] if i < k else None
        p_total += prefix * cm.conditional_correctness_integral(i, phi[i - 2], b)
        cc = 0.0 if b is None else cond(i, phi[i - 2], b)
        c_total += prefix * (1.0 - cc) * sum(costs[:i])
    return p_total, c_total


def interior_threshold(cm, i, mass):
    m = cm.marginal_at(i)
    return float(m.quantile(m.w_min + mass * m.continuous_weight))


def random_thresholds(cm, rng, lo=0.05, hi=0.95):
    return [interior_threshold(cm, i, float(rng.uniform(lo, hi)))
            for i in range(1, cm.k)]


class TestIntegral:
    def test_sentinel_independence_gives_marginal_mean(self):
        spec = make_random_spec(2, seed=3)
        spec = spec.__class__(marginals=spec.marginals, thetas=(1.0,),
                              input_tokens=spec.input_tokens,
                              output_tokens=spec.output_tokens,
                              n_queries=10, seed=0)
        cm = ground_truth_model(spec, default_prices(spec))
        a = interior_threshold(cm, 1, 0.5)
        val = cm.conditional_correctness_integral(2, a, None)
        assert val == pytest.approx(spec.marginals[1].mean(), abs=2e-4)

    def test_point_mass_only_marginal(self):
        atoms = MarginalModel(phi_min=0.4, phi_max=0.9, w_min=0.0, w_max=1.0,
                              pi=1.0, alpha1=1.0, beta1=1.0, alpha2=1.0, beta2=1.0)
        lower = MarginalModel(phi_min=0.1, phi_max=0.8, w_min=0.0, w_max=0.0,
                              pi=1.0, alpha1=2.0, beta1=2.0, alpha2=2.0, beta2=2.0)
        cm = CascadeModel(models=("a", "b"), calibrators={},
                          marginals={"a": lower, "b": atoms},
                          copulas={("a", "b"): GumbelCopula(theta=1.5)},
                          expected_costs={"a": 1.0, "b": 2.0})
        a = interior_threshold(cm, 1, 0.5)
        for b in (0.45, 0.6, 0.89, 0.2):
            assert cm.conditional_correctness_integral(2, a, b) == pytest.approx(0.9)
        assert cm.conditional_correctness_integral(2, a, None) == pytest.approx(0.9)

    def test_conditional_integral_against_monte_carlo(self):
        beta22 = MarginalModel(phi_min=0.1, phi_max=0.9, w_min=0.0, w_max=0.0,
                               pi=1.0, alpha1=2.0, beta1=2.0, alpha2=2.0, beta2=2.0)
        cop = GumbelCopula(theta=2.0)
        cm = CascadeModel(models=("a", "b"), calibrators={},
                          marginals={"a": beta22, "b": beta22},
                          copulas={("a", "b"): cop},
                          expected_costs={"a": 1.0, "b": 2.0})
        a = b = float(beta22.quantile(0.5))
        val = cm.conditional_correctness_integral(2, a, b)

        n = 2_000_000
        uv = sample_pairs(cop, n, 17)
        keep = uv[:, 0] <= beta22.cdf(a)
        phi2 = beta22.quantile(uv[keep, 1])
        contrib = np.where(phi2 > b, phi2, 0.0)
        mc = contrib.mean()
        se = contrib.std() / np.sqrt(contrib.size)
        assert abs(val - mc) <= 3 * se


class TestEvaluate:
    def test_single_model_degenerates(self):
        spec = make_random_spec(1, seed=5)
        cm = ground_truth_model(spec, default_prices(spec))
        op = cm.evaluate(())
        assert op.p_correct == pytest.approx(spec.marginals[0].mean(), abs=2e-4)
        assert op.expected_cost == pytest.approx(cm.expected_costs[cm.models[0]])

    def test_accept_everything_limit(self):
        spec = make_random_spec(2, seed=8, endpoint_masses=False)
        cm = ground_truth_model(spec, default_prices(spec))
        t = interior_threshold(cm, 1, 1e-6)
        op = cm.evaluate([t])
        assert op.p_correct == pytest.approx(spec.marginals[0].mean(), abs=1e-3)
        assert op.expected_cost == pytest.approx(
            cm.expected_costs[cm.models[0]], rel=1e-3)

    @pytest.mark.parametrize("k", [2, 3, 4, 5])
    def test_matches_direct_summation(self, k, rng):
        for trial in range(5):
            spec = make_random_spec(k, seed=1000 * k + trial)
            cm = ground_truth_model(spec, default_prices(spec))
            phi = random_thresholds(cm, rng)
            op = cm.evaluate(phi)
            p2, c2 = direct_prop1(cm, phi)
            assert abs(op.p_correct - p2) <= 1e-10
            assert abs(op.expected_cost - c2) <= 1e-10

    def test_monte_carlo_consistency_k2(self):
        spec = make_random_spec(2, seed=77)
        cm = ground_truth_model(spec, default_prices(spec))
        from cascata.synth import sample_chain

        phis = sample_chain(spec, n=500_000, rng=np.random.default_rng(4))
        c1 = cm.expected_costs[cm.models[0]]
        c2 = cm.expected_costs[cm.models[1]]
        rng = np.random.default_rng(6)
        for _ in range(5):
            t = interior_threshold(cm, 1, float(rng.uniform(0.05, 0.95)))
            op = cm.evaluate([t])
            answered = phis[:, 0] > t
            pv = np.where(answered, phis[:, 0], phis[:, 1])
            cv = np.where(answered, c1, c1 + c2)
            assert abs(op.p_correct - pv.mean()) <= 3 * pv.std() / np.sqrt(pv.size)
            assert abs(op.expected_cost - cv.mean()) <= 3 * cv.std() / np.sqrt(cv.size)

    def test_monotone_cost_in_threshold_k2(self, rng):
        # exact at k=2: cost = C1 + C2 * F1(phi1)
        for trial in range(5):
            spec = make_random_spec(2, seed=300 + trial)
            cm = ground_truth_model(spec, default_prices(spec))
            masses = np.sort(rng.uniform(0.01, 0.99, 8))
            costs = [cm.evaluate([interior_threshold(cm, 1, s)]).expected_cost
                     for s in masses]
            assert np.all(np.diff(costs) >= -1e-9)

    def test_degenerate_threshold_drops_first_model(self):
        spec = make_random_spec(3, seed=21, endpoint_masses=False)
        cm = ground_truth_model(spec, default_prices(spec))
        base = random_thresholds(cm, np.random.default_rng(2))
        hi = interior_threshold(cm, 1, 1.0 - 1e-6)
        op_full = cm.evaluate([hi, base[1]])
        sub = cm.subcascade((cm.models[1], cm.models[2]))
        op_sub = sub.evaluate([base[1]])
        assert op_full.p_correct == pytest.approx(op_sub.p_correct, abs=1e-3)
        extra = cm.expected_costs[cm.models[0]]
        assert op_full.expected_cost - extra == pytest.approx(
            op_sub.expected_cost, rel=1e-3)

    def test_degenerate_threshold_drops_interior_model(self):
        # raising an interior threshold washes out its conditioning, so the
        # limit matches the skip subcascade when the skip pair is independent
        spec = make_random_spec(3, seed=21, endpoint_masses=False)
        spec = spec.__class__(marginals=spec.marginals, thetas=(1.0, 1.8),
                              input_tokens=spec.input_tokens,
                              output_tokens=spec.output_tokens,
                              n_queries=10, seed=0)
        cm = ground_truth_model(spec, default_prices(spec))
        assert cm.copulas[(cm.models[0], cm.models[2])].theta == 1.0
        base = random_thresholds(cm, np.random.default_rng(2))
        hi = interior_threshold(cm, 2, 1.0 - 1e-6)
        op_full = cm.evaluate([base[0], hi])
        sub = cm.subcascade((cm.models[0], cm.models[2]))
        op_sub = sub.evaluate([base[0]])
        assert op_full.p_correct == pytest.approx(op_sub.p_correct, abs=1e-3)

    def test_degenerate_threshold_truncates_cascade(self):
        spec = make_random_spec(3, seed=22, endpoint_masses=False)
        cm = ground_truth_model(spec, default_prices(spec))
        lo = interior_threshold(cm, 1, 1e-6)
        some = interior_threshold(cm, 2, 0.4)
        op_full = cm.evaluate([lo, some])
        sub = cm.subcascade((cm.models[0],))
        op_sub = sub.evaluate(())
        assert op_full.p_correct == pytest.approx(op_sub.p_correct, abs=1e-3)
        assert op_full.expected_cost == pytest.approx(op_sub.expected_cost, rel=1e-3)

    def test_thread_safety_of_memoized_evaluate(self):
        spec = make_random_spec(3, seed=33)
        cm = ground_truth_model(spec, default_prices(spec))
        rng = np.random.default_rng(0)
        vectors = [random_thresholds(cm, rng) for _ in range(40)]
        serial = [cm.evaluate(v) for v in vectors]
        cm2 = ground_truth_model(spec, default_prices(spec))
        results = [None] * len(vectors)

        def worker(idx):
            results[idx] = cm2.evaluate(vectors[idx])

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(len(vectors))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == serial


class TestSubcascades:
    def test_counts(self):
        for k, expected in ((2, 3), (5, 31)):
            spec = make_random_spec(k, seed=40 + k)
            cm = ground_truth_model(spec, default_prices(spec))
            assert len(cm.subcascades()) == expected

    def test_skip_pair_uses_direct_copula(self):
        spec = make_random_spec(3, seed=44)
        cm = ground_truth_model(spec, default_prices(spec))
        sub = cm.subcascade((cm.models[0], cm.models[2]))
        direct = cm.copulas[(cm.models[0], cm.models[2])]
        assert sub.copulas[(cm.models[0], cm.models[2])] is direct

    def test_missing_pair_copula_raises(self):
        spec = make_random_spec(3, seed=45)
        cm = ground_truth_model(spec, default_prices(spec))
        copulas = {k: v for k, v in cm.copulas.items()
                   if k != (cm.models[0], cm.models[2])}
        cm2 = CascadeModel(models=cm.models, calibrators=cm.calibrators,
                           marginals=cm.marginals, copulas=copulas,
                           expected_costs=cm.expected_costs)
        with pytest.raises(MissingPairCopula):
            cm2.subcascades()

    def test_costs_shared_by_reference(self):
        spec = make_random_spec(3, seed=46)
        cm = ground_truth_model(spec, default_prices(spec))
        sub = cm.subcascade((cm.models[1], cm.models[2]))
        assert sub.marginals[cm.models[1]] is cm.marginals[cm.models[1]]


class TestSerialization:
    def test_model_file_roundtrip(self, tmp_path):
        spec = make_random_spec(3, seed=50)
        cm = ground_truth_model(spec, default_prices(spec))
        path = tmp_path / "model.json"
        save_model(cm, path)
        cm2 = load_model(path)
        rng = np.random.default_rng(1)
        phi = random_thresholds(cm, rng)
        assert cm.evaluate(phi) == cm2.evaluate(phi)
        save_model(cm2, tmp_path / "model2.json")
        assert (tmp_path / "model.json").read_bytes() == (tmp_path / "model2.json").read_bytes()

    def test_nonmonotone_costs_warn_not_fail(self):
        spec = make_random_spec(2, seed=51)
        marg = dict(zip(("a", "b"), spec.marginals))
        with pytest.warns(UserWarning):
            CascadeModel(models=("a", "b"), calibrators={}, marginals=marg,
                         copulas={("a", "b"): GumbelCopula(theta=1.2)},
                         expected_costs={"a": 2.0, "b": 1.0})
