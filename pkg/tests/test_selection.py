import math
from itertools import combinations

import numpy as np
import pytest

from mixlasso.em import FittedModel
from mixlasso.model import BoundsBox, MixtureParams, ModelIndex, dimension
from mixlasso.selection import (
    PenaltySpec,
    complexity_bound,
    constant_a,
    constant_B,
    constant_c,
    count_models_upper,
    kraft_sum_check,
    kraft_weight,
    select_penalized,
    slope_heuristic,
    report_to_json,
)

# standard-deviation bounds A_Sigma = 2, a_Sigma = 0.05 as sigma^2 values
PAPER_BOUNDS = BoundsBox(A_beta=10.0, a_sigma2=0.0025, A_sigma2=4.0, tau=1.0, rho=0.5)


def dummy_fit(k, J, loglik, p=2, q=1):
    params = MixtureParams(
        pi=np.full(k, 1.0 / k), beta=np.zeros((k, p, q)), sigma2=np.ones((k, q))
    )
    return FittedModel(
        index=ModelIndex(k=k, J=frozenset(J)),
        params=params,
        loglik=loglik,
        n_iter=1,
        converged=True,
    )


class TestConstants:
    def test_c_value(self):
        c = constant_c()
        assert c == pytest.approx(0.099440, abs=1e-6)
        assert 0.0 < c < 1.0

    def test_c_rearrangement_identity(self):
        assert 8.0 * constant_c() / 5.0 + 2.0 ** (-0.25) == pytest.approx(1.0, abs=5e-16)

    def test_a_value(self):
        # independent re-evaluation of the printed expression
        c = 5.0 * (1.0 - 2.0 ** (-0.25)) / 8.0
        expected = math.sqrt(math.pi) + math.sqrt(
            math.log(math.sqrt(math.pi * math.e) * 2.0 ** (5.0 / 4.0) * 8.0 * math.e / math.sqrt(c))
        )
        assert constant_a() == pytest.approx(expected, abs=1e-12)
        assert constant_a() == pytest.approx(4.257, abs=1e-3)

    def test_B_term_by_term(self):
        # q=10, A_beta=10, A_Sigma=2, a_Sigma=0.05
        B = constant_B(PAPER_BOUNDS, q=10)
        t1 = math.sqrt(math.log(10.0))
        t2 = math.sqrt(math.log((10.0 / 2.0) * (2.0 / 0.05 + 0.5)))
        assert t1 == pytest.approx(1.5174, abs=1e-4)
        assert t2 == pytest.approx(2.3046, abs=1e-4)
        assert B == pytest.approx(t1 + t2 + constant_a(), abs=1e-12)

    def test_B_increasing_in_q(self):
        values = [constant_B(PAPER_BOUNDS, q) for q in (1, 2, 5, 10, 20)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_B_rejects_small_log_argument(self):
        tiny = BoundsBox(A_beta=0.01, a_sigma2=0.81, A_sigma2=1.0)
        with pytest.raises(ValueError, match="must exceed 1"):
            constant_B(tiny, q=2)
        with pytest.raises(ValueError):
            constant_B(PAPER_BOUNDS, q=0)


class TestComplexityBound:
    def test_log_term_vanishes_when_ratio_above_one(self):
        D, n, B = 30, 10, 2.0
        assert complexity_bound(D, n, B) == pytest.approx((D / n) * 2.0 * B * B, rel=1e-12)

    def test_log_term_at_exp_minus_one(self):
        n = 10
        B = math.sqrt(n / math.e)  # (1/n) B^2 = 1/e
        got = complexity_bound(1, n, B)
        assert got == pytest.approx((1 / n) * (2.0 * B * B + 1.0), rel=1e-12)

    def test_random_against_duplicate_formula(self, rng):
        for _ in range(50):
            D = int(rng.integers(1, 200))
            n = int(rng.integers(1, 500))
            B = float(rng.uniform(0.1, 8.0))
            ratio = (D / n) * B**2
            expected = (D / n) * (2.0 * B**2 + math.log(1.0 / min(ratio, 1.0)))
            assert complexity_bound(D, n, B) == pytest.approx(expected, rel=1e-12)


class TestKraftWeights:
    def test_saturated_branch_is_Dlog4e(self):
        # D - q^2 >= pq: the denominator clamps at pq
        p, q = 2, 3
        D = q * q + p * q + 5
        assert kraft_weight(D, p, q) == pytest.approx(D * math.log(4.0 * math.e), rel=1e-12)

    def test_substitution_example(self):
        got = kraft_weight(3, 2, 1)
        assert got == pytest.approx(3.0 * math.log(4.0 * math.e), rel=1e-12)
        assert got == pytest.approx(7.159, abs=1e-3)

    def test_increasing_in_D_on_saturated_branch(self):
        p, q = 3, 2
        start = q * q + p * q
        weights = [kraft_weight(D, p, q) for D in range(start, start + 10)]
        assert all(a < b for a, b in zip(weights, weights[1:]))

    @pytest.mark.parametrize("p,q", [(1, 1), (2, 2), (4, 4), (3, 1)])
    def test_kraft_sum_below_two(self, p, q):
        assert kraft_sum_check(p, q, 200) <= 2.0

    def test_truncation_monotone(self):
        assert kraft_sum_check(2, 2, 50) <= kraft_sum_check(2, 2, 100)


def brute_force_count(D, p, q):
    """Exact number of (k, J) with k(1 + |J| + q^2) - 1 = D."""
    total = 0
    for k in range(1, D + 2):
        if (D + 1) % k == 0:
            m = (D + 1) // k - 1 - q * q
            if 0 <= m <= p * q:
                total += math.comb(p * q, m)
    return total


class TestCountModels:
    def test_two_pq_branch(self):
        # p=2, q=1, D=4: pq = 2 <= D - q^2 = 3
        assert count_models_upper(4, 2, 1) == 4.0

    def test_massart_branch(self):
        # p=3, q=1, D=3: D - q^2 = 2 < pq = 3
        assert count_models_upper(3, 3, 1) == pytest.approx((3.0 * math.e / 2.0) ** 2, rel=1e-12)

    def test_dominates_exhaustive_enumeration(self):
        for p in (1, 2, 3):
            for q in (1, 2, 3):
                for D in range(1, 31):
                    assert count_models_upper(D, p, q) >= brute_force_count(D, p, q), (
                        p, q, D,
                    )


class TestTheoreticalPenalty:
    def spec(self, kappa=1.0, tau=1.0, n=20, p=10, q=10):
        bounds = BoundsBox(
            A_beta=PAPER_BOUNDS.A_beta,
            a_sigma2=PAPER_BOUNDS.a_sigma2,
            A_sigma2=PAPER_BOUNDS.A_sigma2,
            tau=tau,
            rho=0.5,
        )
        return PenaltySpec(kappa=kappa, bounds=bounds, n=n, p=p, q=q)

    def test_linear_in_kappa(self):
        from mixlasso.selection import theoretical_penalty

        idx = ModelIndex(k=2, J=frozenset({(j, z) for j in range(1, 5) for z in range(1, 6)}))
        assert theoretical_penalty(idx, self.spec(kappa=2.0)) == pytest.approx(
            2.0 * theoretical_penalty(idx, self.spec(kappa=1.0)), rel=1e-12
        )

    def test_tau_below_one_drops_out(self):
        from mixlasso.selection import theoretical_penalty

        idx = ModelIndex(k=1, J=frozenset({(1, 1)}))
        assert theoretical_penalty(idx, self.spec(tau=0.2)) == theoretical_penalty(
            idx, self.spec(tau=1.0)
        )
        assert theoretical_penalty(idx, self.spec(tau=3.0)) > theoretical_penalty(
            idx, self.spec(tau=1.0)
        )

    def test_duplicate_formula_oracle(self):
        from mixlasso.selection import theoretical_penalty

        # n=20, p=q=10, k=2, |J|=20, kappa=1, tau=1, paper-example bounds
        J = frozenset({(j, z) for j in range(1, 3) for z in range(1, 11)})
        idx = ModelIndex(k=2, J=J)
        spec = self.spec()
        D = 2 * (20 + 10 + 1) - 1
        B = constant_B(spec.bounds, 10)
        # D = 61 < q^2 = 100 here, so the Kraft denominator clamps at 1
        denom = max(min(D - 100, 100), 1)
        expected = 1.0 * D * (
            B**2
            - math.log(min((D / 20) * B**2, 1.0))
            + 1.0 * math.log(4.0 * math.e * 100 / denom)
        )
        assert theoretical_penalty(idx, spec) == pytest.approx(expected, rel=1e-12)


class TestSelectPenalized:
    def test_single_model_chosen(self):
        fit = dummy_fit(1, set(), -10.0)
        report = select_penalized([fit], lambda idx: 0.1, n=5)
        assert report.chosen == fit.index
        assert report.records[0].chosen

    def test_dominance(self):
        a = dummy_fit(1, set(), -10.0)
        b = dummy_fit(2, set(), -10.0)
        report = select_penalized([a, b], lambda idx: float(idx.k), n=5)
        assert report.chosen == a.index

    def test_three_model_exhaustive(self):
        fits = [
            dummy_fit(1, set(), -12.0),
            dummy_fit(2, {(1, 1)}, -8.0),
            dummy_fit(3, {(1, 1), (2, 1)}, -6.0),
        ]
        pen = lambda idx: 0.3 * idx.k
        n = 4
        crits = [-f.loglik / n + pen(f.index) for f in fits]
        report = select_penalized(fits, pen, n=n)
        assert report.chosen == fits[int(np.argmin(crits))].index

    def test_tie_broken_by_dimension_then_k_then_J(self):
        # identical criteria by construction: constant penalty, equal loglik
        a = dummy_fit(2, set(), -10.0)  # D = 2(0+1+1)-1 = 3
        b = dummy_fit(1, {(1, 1), (2, 1)}, -10.0)  # D = 1(2+2)-1 = 3
        c = dummy_fit(1, {(1, 1)}, -10.0)  # D = 2
        report = select_penalized([a, b, c], lambda idx: 1.0, n=5)
        assert report.chosen == c.index  # smallest D wins
        report2 = select_penalized([a, b], lambda idx: 1.0, n=5)
        assert report2.chosen == b.index  # equal D, smaller k wins
        d = dummy_fit(1, {(2, 1), (2, 2)}, -10.0, q=2)
        e = dummy_fit(1, {(1, 1), (2, 2)}, -10.0, q=2)
        # equal D and k: lexicographically smaller sorted J wins
        report3 = select_penalized([d, e], lambda idx: 1.0, n=5)
        assert report3.chosen == e.index

    def test_shift_invariance(self):
        fits = [
            dummy_fit(1, set(), -12.0),
            dummy_fit(2, {(1, 1)}, -8.0),
            dummy_fit(3, {(1, 1), (2, 1)}, -6.5),
        ]
        pen = lambda idx: 0.25 * idx.k
        base = select_penalized(fits, pen, n=4).chosen
        shifted = [
            dummy_fit(f.index.k, f.index.J, f.loglik + 37.0) for f in fits
        ]
        assert select_penalized(shifted, pen, n=4).chosen == base

    def test_joint_positive_rescaling_invariance(self):
        fits = [
            dummy_fit(1, set(), -12.0),
            dummy_fit(2, {(1, 1)}, -8.0),
            dummy_fit(3, {(2, 1)}, -6.5),
        ]
        pen = lambda idx: 0.25 * idx.k
        alpha = 3.7
        scaled_pen = lambda idx: alpha * pen(idx)
        scaled = [dummy_fit(f.index.k, f.index.J, alpha * f.loglik) for f in fits]
        assert (
            select_penalized(scaled, scaled_pen, n=4).chosen
            == select_penalized(fits, pen, n=4).chosen
        )

    def test_empty_collection_rejected(self):
        with pytest.raises(ValueError):
            select_penalized([], lambda idx: 0.0, n=5)

    def test_chosen_attains_minimum(self, rng):
        for _ in range(30):
            m = int(rng.integers(1, 12))
            fits = [
                dummy_fit(
                    int(rng.integers(1, 4)),
                    {(int(j), 1) for j in rng.choice(5, size=rng.integers(0, 5), replace=False) + 1},
                    float(rng.normal(scale=5.0)),
                    p=5,
                )
                for _ in range(m)
            ]
            pen = lambda idx: 0.1 * dimension(idx.k, len(idx.J), 1)
            report = select_penalized(fits, pen, n=7)
            best = min(r.criterion for r in report.records)
            chosen_rec = next(r for r in report.records if r.chosen)
            assert chosen_rec.criterion == best


class TestSlopeHeuristic:
    def make_linear_collection(self, s, c, n):
        # -loglik/n = c - s * D/n exactly, across 8 distinct dimensions
        fits = []
        for size in range(8):
            J = {(j, 1) for j in range(1, size + 1)}
            D = dimension(1, size, 1)
            loglik = -n * (c - s * D / n)
            fits.append(dummy_fit(1, J, loglik, p=10))
        return fits

    def test_exact_linear_recovery(self):
        n = 50
        s, c = 1.3, 2.0
        fits = self.make_linear_collection(s, c, n)
        report = slope_heuristic(fits, n)
        assert report.kappa_hat == pytest.approx(2.0 * s, abs=1e-9)
        assert not report.fallback
        dims = [r.D for r in report.records]
        chosen = next(r for r in report.records if r.chosen)
        assert chosen.D < max(dims)  # the maximal model is never chosen

    def test_loglik_shift_leaves_choice(self):
        n = 50
        fits = self.make_linear_collection(0.9, 1.0, n)
        base = slope_heuristic(fits, n).chosen
        shifted = [dummy_fit(f.index.k, f.index.J, f.loglik + 11.0, p=10) for f in fits]
        assert slope_heuristic(shifted, n).chosen == base

    def test_fallback_below_five_dimensions(self):
        n = 30
        fits = [
            dummy_fit(1, set(), -20.0),
            dummy_fit(1, {(1, 1)}, -18.0),
            dummy_fit(1, {(1, 1), (2, 1)}, -17.0),
        ]
        report = slope_heuristic(fits, n)
        assert report.fallback
        assert report.kappa_hat is None
        assert report.method == "slope"
        # BIC-style penalty: criterion = -loglik/n + D log n / (2n)
        for rec in report.records:
            expected = -rec.loglik / n + rec.D * math.log(n) / (2 * n)
            assert rec.criterion == pytest.approx(expected, rel=1e-12)

    def test_report_json_shape(self):
        fits = [dummy_fit(1, set(), -5.0), dummy_fit(2, {(1, 1)}, -4.0)]
        report = select_penalized(fits, lambda idx: 0.5, n=3, method="theoretical")
        obj = report_to_json(report)
        assert obj["method"] == "theoretical"
        assert len(obj["records"]) == 2
        assert sum(r["chosen"] for r in obj["records"]) == 1
