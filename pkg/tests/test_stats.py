import math

import numpy as np
import pytest
from scipy import integrate, special, stats as sps

from dcox.errors import NonPositiveVariance
from dcox.model import make_dataset
from dcox.pooled import fit_pooled
from dcox.stats import (
    chi_square_upper_tail, global_null_test, model_fit_stats, normal_cdf, normal_quantile, parameter_table,
)
from support import COVARIATES, example_spec


def chi2_sf_by_quadrature(x, df):
    # P(X > x) = 1 - int_0^x f(t) dt; substitute t = u^2 to remove the t^(df/2-1) singularity
    k = df / 2.0
    norm = 1.0 / (2.0 ** k * math.gamma(k))
    integrand = lambda u: 2.0 * u * norm * u ** (2 * k - 2) * math.exp(-u * u / 2.0)
    head, _ = integrate.quad(integrand, 0.0, math.sqrt(x), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - head


class TestChiSquareTail:
    @pytest.mark.parametrize("x, df, expected", [(3.316518, 1, 0.0686), (10.311876, 1, 0.0013), (3.841459, 1, 0.05)])
    def test_reference_values(self, x, df, expected):
        assert round(chi_square_upper_tail(x, df), 4) == expected

    @pytest.mark.parametrize("df", [1, 2, 3, 5])
    @pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 2.5, 5.0, 9.0, 15.0, 25.0, 40.0])
    def test_against_quadrature(self, x, df):
        assert chi_square_upper_tail(x, df) == pytest.approx(chi2_sf_by_quadrature(x, df), abs=1e-8)

    @pytest.mark.parametrize("df", [1, 2, 3, 7, 12])
    def test_against_scipy(self, df):
        for x in np.linspace(0.0, 60.0, 61):
            assert chi_square_upper_tail(x, df) == pytest.approx(sps.chi2.sf(x, df), rel=1e-9, abs=1e-15)

    def test_zero(self):
        assert chi_square_upper_tail(0.0, 3) == 1.0

    def test_two_df_closed_form(self):
        assert chi_square_upper_tail(4.0, 2) == pytest.approx(math.exp(-2.0), rel=1e-13)

    def test_bad_df(self):
        with pytest.raises(ValueError):
            chi_square_upper_tail(1.0, 0)


class TestNormal:
    @pytest.mark.parametrize("prob", [1e-10, 1e-4, 0.01, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999, 1 - 1e-9])
    def test_quantile_against_scipy(self, prob):
        assert normal_quantile(prob) == pytest.approx(sps.norm.ppf(prob), rel=1e-12, abs=1e-14)

    def test_two_sided_95(self):
        assert round(normal_quantile(0.975), 6) == 1.959964

    def test_cdf_inverts_quantile(self):
        for prob in (0.001, 0.2, 0.5, 0.9):
            assert normal_cdf(normal_quantile(prob)) == pytest.approx(prob, rel=1e-12)

    def test_cdf_against_erfc(self):
        for x in (-6.0, -1.0, 0.0, 2.0):
            assert normal_cdf(x) == pytest.approx(0.5 * special.erfc(-x / math.sqrt(2)), rel=1e-13)

    @pytest.mark.parametrize("prob", [0.0, 1.0, -0.1])
    def test_quantile_domain(self, prob):
        with pytest.raises(ValueError):
            normal_quantile(prob)


class TestFitStats:
    def test_example1(self):
        s = model_fit_stats(-1351.366779 / 2, -1322.465221 / 2, 3, 114)
        assert s.aic == pytest.approx(1328.465221, abs=1e-6)
        assert s.bic == pytest.approx(1336.673816, abs=1e-6)
        assert s.aic_null == s.bic_null == pytest.approx(1351.366779, abs=1e-9)

    def test_no_covariates(self):
        s = model_fit_stats(-10.0, -10.0, 0, 5)
        assert s.aic == s.bic == s.neg2loglik_fit == 20.0

    def test_single_event(self):
        assert model_fit_stats(-3.0, -2.0, 2, 1).bic == 4.0

    def test_no_events(self):
        with pytest.raises(ValueError):
            model_fit_stats(0.0, 0.0, 1, 0)

    def test_global_test(self):
        t = global_null_test(-1351.366779 / 2, -1322.465221 / 2, 3)
        assert t.chisq == pytest.approx(28.901558, abs=1e-6)
        assert t.df == 3 and t.pvalue < 1e-4

    def test_equal_logliks(self):
        t = global_null_test(-5.0, -5.0, 2)
        assert t.chisq == 0.0 and t.pvalue == 1.0

    def test_tiny_negative_clamped(self):
        assert global_null_test(-5.0, -5.0 - 1e-10, 1).chisq == 0.0


class TestParameterTable:
    def test_fin_row(self, rossi):
        # the reference statistic is computed from unrounded estimates
        fit = fit_pooled(make_dataset(*rossi), example_spec(1)).fit
        row = parameter_table(fit.beta_hat, fit.covariance, COVARIATES)[0]
        assert row.name == "fin"
        assert row.chisq == pytest.approx(3.316518, abs=5e-6)
        assert row.hazard_ratio == pytest.approx(0.707198, abs=5e-7)
        assert row.ci_lower == pytest.approx(0.4870936, abs=5e-7)
        assert row.ci_upper == pytest.approx(1.0267629, abs=5e-7)
        assert round(row.pvalue, 4) == 0.0686

    def test_prio_hazard_ratio(self):
        (row,) = parameter_table([0.096662], [[0.0272 ** 2]], ["prio"])
        assert row.hazard_ratio == pytest.approx(1.101488, abs=5e-7)

    def test_unit_interval(self):
        (row,) = parameter_table([0.0], [[1.0]], ["x"])
        assert row.ci_lower == pytest.approx(math.exp(-1.959964), rel=1e-6)
        assert row.ci_upper == pytest.approx(math.exp(1.959964), rel=1e-6)
        assert row.chisq == 0.0 and row.pvalue == 1.0

    def test_alpha_widens(self):
        (narrow,) = parameter_table([0.3], [[0.04]], ["x"], alpha=0.1)
        (wide,) = parameter_table([0.3], [[0.04]], ["x"], alpha=0.01)
        assert wide.ci_lower < narrow.ci_lower < narrow.hazard_ratio < narrow.ci_upper < wide.ci_upper

    @pytest.mark.parametrize("var", [0.0, -1e-3, float("nan")])
    def test_non_positive_variance(self, var):
        with pytest.raises(NonPositiveVariance):
            parameter_table([0.1, 0.2], [[1.0, 0.0], [0.0, var]], ["a", "b"])
