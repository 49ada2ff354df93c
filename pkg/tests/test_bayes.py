import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repconf.bayes import (
    BetaParams,
    ConvergenceError,
    adaptive_max_iter,
    beta_hdi,
    beta_hdi_arrays,
    beta_mean,
    beta_pdf,
    beta_quantile,
    posterior_update,
    reg_inc_beta,
)

from oracles import beta_cdf_trapz, beta_hdi_scan, beta_quantile_grid

shapes = st.floats(min_value=1.01, max_value=500, allow_nan=False)


class TestPosteriorUpdate:
    def test_known_update(self):
        assert posterior_update(BetaParams(5, 5), 10, 10) == BetaParams(15, 5)

    def test_zero_evidence_is_identity(self):
        prior = BetaParams(200, 200)
        assert posterior_update(prior, 0, 0) == prior

    def test_mixed_evidence(self):
        assert posterior_update(BetaParams(1, 1), 3, 7) == BetaParams(4, 5)

    @pytest.mark.parametrize("y,n", [(-1, 3), (4, 3)])
    def test_rejects_impossible_counts(self, y, n):
        with pytest.raises(ValueError):
            posterior_update(BetaParams(1, 1), y, n)

    @given(
        st.floats(1e-3, 1e4),
        st.floats(1e-3, 1e4),
        st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=8),
    )
    def test_sequential_equals_pooled(self, a, b, batches):
        batches = [(min(y, n), n) for y, n in batches]
        seq = BetaParams(float(a), float(b))
        for y, n in batches:
            seq = posterior_update(seq, y, n)
        pooled = posterior_update(
            BetaParams(float(a), float(b)), sum(y for y, _ in batches), sum(n for _, n in batches)
        )
        assert seq == pooled
        assert (seq.a, seq.b) == (pooled.a, pooled.b)

    def test_chained_rounding_case(self):
        # naive step-by-step addition rounds twice here
        assert (0.01 + 2) + 14 != 0.01 + 16
        seq = posterior_update(posterior_update(BetaParams(0.01, 1), 2, 2), 14, 14)
        assert seq == posterior_update(BetaParams(0.01, 1), 16, 16)


class TestBetaParams:
    @pytest.mark.parametrize("a,b", [(0, 1), (1, -2), (math.nan, 1), (1, math.inf)])
    def test_invalid(self, a, b):
        with pytest.raises(ValueError):
            BetaParams(a, b)

    def test_mean(self):
        assert beta_mean(BetaParams(85, 25)) == pytest.approx(0.7727, abs=1e-4)
        assert BetaParams(15, 5).mean == 0.75

    def test_pdf_against_closed_form(self):
        # Beta(2, 2) density is 6 x (1 - x)
        for x in (0.1, 0.5, 0.73):
            assert beta_pdf(x, 2, 2) == pytest.approx(6 * x * (1 - x), rel=1e-12)
        assert beta_pdf(0.0, 2, 2) == 0.0


class TestRegIncBeta:
    def test_uniform(self):
        for x in (0.0, 0.2, 0.9, 1.0):
            assert reg_inc_beta(x, 1, 1) == pytest.approx(x, abs=1e-15)

    def test_closed_forms(self):
        x = 0.3
        # I_x(a, 1) = x^a and I_x(1, b) = 1 - (1 - x)^b
        assert reg_inc_beta(x, 4.5, 1) == pytest.approx(x**4.5, rel=1e-13)
        assert reg_inc_beta(x, 1, 3.2) == pytest.approx(1 - (1 - x) ** 3.2, rel=1e-13)

    def test_left_skewed_value(self):
        # Beta(15, 5) has mean 0.75 and negative skew, so its CDF at the mean is below 1/2
        v = reg_inc_beta(0.75, 15, 5)
        assert v == pytest.approx(beta_cdf_trapz(0.75, 15, 5), abs=1e-9)
        assert v == pytest.approx(0.46542, abs=5e-6)

    @pytest.mark.parametrize("a,b", [(2, 3), (30, 70), (500, 480), (1.2, 900)])
    def test_against_trapezoid(self, a, b):
        for x in np.linspace(0.02, 0.98, 7):
            assert abs(reg_inc_beta(x, a, b) - beta_cdf_trapz(x, a, b, n=200_001)) < 1e-8

    @given(shapes, shapes, st.floats(0.0, 1.0))
    def test_symmetry(self, a, b, x):
        assert reg_inc_beta(x, a, b) + reg_inc_beta(1 - x, b, a) == pytest.approx(1.0, abs=1e-12)

    @given(shapes, shapes)
    @settings(max_examples=50)
    def test_monotone_in_x(self, a, b):
        xs = np.linspace(0, 1, 41)
        vals = [reg_inc_beta(x, a, b) for x in xs]
        assert all(v2 >= v1 - 1e-15 for v1, v2 in zip(vals, vals[1:]))
        assert vals[0] == 0.0 and vals[-1] == 1.0

    def test_large_shapes_converge(self):
        assert reg_inc_beta(0.5, 1e5, 1e5) == pytest.approx(0.5, abs=1e-9)

    def test_cap_exceeded_raises(self):
        with pytest.raises(ConvergenceError):
            reg_inc_beta(0.5, 3e5, 3e5)
        with pytest.raises(ConvergenceError):
            reg_inc_beta(0.3, 4, 6, max_iter=2)

    def test_adaptive_cap(self):
        cap = adaptive_max_iter(3e5, 3e5)
        assert cap > 300
        assert adaptive_max_iter(5, 5) == 300
        assert reg_inc_beta(0.5, 3e5, 3e5, max_iter=cap) == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("x", [-0.1, 1.1])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            reg_inc_beta(x, 2, 2)


class TestQuantile:
    def test_known(self):
        assert beta_quantile(BetaParams(15, 5), 0.025) == pytest.approx(0.54435, abs=5e-5)
        assert beta_quantile(BetaParams(15, 5), 0.025) == pytest.approx(
            beta_quantile_grid(15, 5, 0.025), abs=1e-6
        )

    def test_endpoints(self):
        p = BetaParams(3, 4)
        assert beta_quantile(p, 0.0) == 0.0
        assert beta_quantile(p, 1.0) == 1.0

    @given(shapes, shapes, st.floats(0.001, 0.999))
    @settings(max_examples=200)
    def test_round_trip(self, a, b, q):
        x = beta_quantile(BetaParams(a, b), q)
        assert abs(reg_inc_beta(x, a, b) - q) <= 1e-9

    def test_median_of_symmetric(self):
        assert beta_quantile(BetaParams(7.5, 7.5), 0.5) == pytest.approx(0.5, abs=1e-12)


class TestHdi:
    def test_symmetric_known(self):
        h = beta_hdi(BetaParams(5, 5))
        np.testing.assert_allclose([h.lo, h.hi], [0.2120085, 0.7879915], atol=1e-6)
        assert h.lo + h.hi == pytest.approx(1.0, abs=1e-7)

    def test_matches_scan(self):
        for a, b in [(15, 5), (2.5, 40), (85, 25), (500, 300)]:
            h = beta_hdi(BetaParams(a, b))
            lo, hi = beta_hdi_scan(a, b)
            assert h.width <= (hi - lo) + 1e-5
            assert h.lo == pytest.approx(lo, abs=1e-4)

    @given(st.floats(2.0, 500), st.floats(2.0, 500))
    @settings(max_examples=60)
    def test_mass_and_equal_density(self, a, b):
        h = beta_hdi(BetaParams(a, b))
        assert reg_inc_beta(h.hi, a, b) - reg_inc_beta(h.lo, a, b) == pytest.approx(0.95, abs=1e-8)
        # interior optimum: endpoint densities agree
        f_lo, f_hi = beta_pdf(h.lo, a, b), beta_pdf(h.hi, a, b)
        assert f_lo == pytest.approx(f_hi, rel=1e-3, abs=1e-6)

    @given(shapes, shapes)
    @settings(max_examples=60)
    def test_not_wider_than_equal_tailed(self, a, b):
        p = BetaParams(a, b)
        h = beta_hdi(p)
        eq = beta_quantile(p, 0.975) - beta_quantile(p, 0.025)
        assert h.width <= eq + 1e-9

    def test_more_evidence_narrows(self):
        w = [beta_hdi(BetaParams(5 + n, 5 + n)).width for n in (0, 10, 100, 1000)]
        assert all(x > y for x, y in zip(w, w[1:]))

    def test_boundary_shape_falls_back_to_equal_tailed(self):
        p = BetaParams(1.0, 3.0)
        h = beta_hdi(p)
        assert h.lo == pytest.approx(beta_quantile(p, 0.025), abs=1e-12)
        assert h.hi == pytest.approx(beta_quantile(p, 0.975), abs=1e-12)

    def test_huge_cell_with_adaptive_cap(self):
        a, b = np.array([2e6]), np.array([1e6])
        lo, hi = beta_hdi_arrays(a, b, max_iter=adaptive_max_iter(a, b))
        sd = math.sqrt(2e6 * 1e6 / (3e6**2 * (3e6 + 1)))
        assert hi[0] - lo[0] == pytest.approx(2 * 1.959964 * sd, rel=1e-4)

    def test_arrays_match_scalar(self):
        a = np.array([5.0, 15.0, 200.0, 1.0])
        b = np.array([5.0, 5.0, 260.0, 2.0])
        lo, hi = beta_hdi_arrays(a, b)
        for i in range(a.size):
            h = beta_hdi(BetaParams(a[i], b[i]))
            assert (lo[i], hi[i]) == (h.lo, h.hi)

    @pytest.mark.parametrize("mass", [0.0, 1.0, 1.5])
    def test_bad_mass(self, mass):
        with pytest.raises(ValueError):
            beta_hdi(BetaParams(2, 2), mass)
