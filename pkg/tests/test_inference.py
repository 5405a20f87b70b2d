import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from panelcorr.exceptions import (ConfigError, DegenerateVariance,
                                  RankDeficientConstraint)
from panelcorr.inference import Constraint, bfgs_maximize, chi2_sf, maximize
from panelcorr.inference import test as run_test
from panelcorr.inference import test_all as run_all
from panelcorr.inference import wald_statistic
from panelcorr.model import ModelSpec
from panelcorr.profiler import sanitize_panel
from panelcorr.simulate import DgpDesign, generate

from conftest import load_fixture


def ar1(seed=0, n=40, t=10):
    design = DgpDesign.from_name("gaussian-ae-dynamic", N=n, T=t)
    return generate(design, seed)[0]


def within(a):
    return a - a.mean(axis=1, keepdims=True) - a.mean(axis=0, keepdims=True) + a.mean()


def test_gaussian_raw_estimate_is_the_within_estimator():
    data = ar1()
    spec = ModelSpec(family="gaussian", lag_order=1)
    fit = maximize(data, spec, "raw")
    yd, ld = within(data.y), within(data.y_lag)
    rho = (yd * ld).sum() / (ld * ld).sum()
    assert fit.converged
    assert fit.theta_hat[0] == pytest.approx(rho, abs=1e-7)
    # unit error variance: textbook within-estimator standard error
    assert fit.se[0] == pytest.approx(1.0 / np.sqrt((ld * ld).sum()), rel=1e-8)


def test_gaussian_sum_zero_both_keeps_grand_mean():
    data = ar1(seed=1)
    spec = ModelSpec(family="gaussian", lag_order=1, identification="sum_zero_both")
    fit = maximize(data, spec, "raw")
    y, lag = data.y, data.y_lag
    yd, ld = within(y), within(lag)
    nt = y.size
    rho = (((yd * ld).sum() + nt * y.mean() * lag.mean())
           / ((ld * ld).sum() + nt * lag.mean() ** 2))
    assert fit.theta_hat[0] == pytest.approx(rho, abs=1e-7)


def test_standard_error_one_parameter_example():
    # H = -0.25 per observation with 100 observations: se = 1 / sqrt(25) = 0.2
    from panelcorr.inference import EstimateResult, standard_errors
    res = EstimateResult(np.zeros(1), "raw", 0.0, None, np.array([[-0.25]]), None,
                         True, nobs=100)
    np.testing.assert_allclose(standard_errors(res), [0.2])
    res.hessian_theta = np.array([[0.1]])
    assert np.isnan(standard_errors(res)).all()
    assert res.flags["indefinite_hessian"]


@pytest.mark.parametrize("x, df, p", [(3.841, 1, 0.05), (6.635, 1, 0.01),
                                      (5.991, 2, 0.05)])
def test_chi2_critical_values(x, df, p):
    assert chi2_sf(x, df) == pytest.approx(p, abs=5e-5)


@given(a=st.floats(0, 50), b=st.floats(0, 50), df=st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_p_value_monotone(a, b, df):
    lo, hi = sorted((a, b))
    assert chi2_sf(hi, df) <= chi2_sf(lo, df)
    assert chi2_sf(a, df) == pytest.approx(chi2.sf(a, df), rel=1e-9, abs=1e-300)


def test_negative_statistic_clipped():
    assert chi2_sf(-1.0, 1) == 1.0


def test_point_null_skips_optimisation():
    data = ar1()
    spec = ModelSpec(family="gaussian", lag_order=1)
    fit = maximize(data, spec, "corrected", constraint=Constraint.point([0.5]))
    assert fit.flags["optimization_skipped"]
    assert fit.theta_hat[0] == 0.5


def test_gaussian_trinity_is_exact():
    # the profiled gaussian likelihood is quadratic in theta
    data = ar1(seed=2)
    spec = ModelSpec(family="gaussian", lag_order=1)
    res = run_all(data, spec, Constraint.point([0.45]), objective="raw")
    stats = [r.statistic for r in res]
    assert stats[0] == pytest.approx(stats[1], rel=1e-6)
    assert stats[0] == pytest.approx(stats[2], rel=1e-6)


def logit_panel(seed=4):
    design = DgpDesign.from_name("logit-ae-dynamic", N=40, T=10)
    data = generate(design, seed)[0]
    spec = ModelSpec(family="logit", lag_order=1)
    return sanitize_panel(data, spec)[0], spec


def test_lr_non_negative_and_restricted_below_unrestricted():
    data, spec = logit_panel()
    fits = {}
    for null in ("rho", "beta"):
        c = Constraint.linear([[1.0, 0.0]] if null == "rho" else [[0.0, 1.0]], [0.0])
        for obj in ("raw", "corrected"):
            r = run_all(data, spec, c, objective=obj, kinds=("LR",), fits=fits)[0]
            assert r.statistic >= 0
            assert 0 <= r.p_value <= 1
    assert set(fits) == {"raw", "corrected"}


def test_lr_vanishes_at_the_estimate():
    data, spec = logit_panel()
    fit = maximize(data, spec, "raw")
    r = run_test(data, spec, Constraint.point(fit.theta_hat), objective="raw", kind="LR")
    assert r.statistic == pytest.approx(0.0, abs=1e-8)


def test_wald_invariant_to_linear_rescaling():
    data, spec = logit_panel()
    a = run_test(data, spec, Constraint.linear([[1.0, 0.0]], [0.5]), "raw", "Wald")
    b = run_test(data, spec, Constraint.linear([[4.0, 0.0]], [2.0]), "raw", "Wald")
    assert a.statistic == pytest.approx(b.statistic, rel=1e-10)


def test_general_constraint_matches_linear():
    data, spec = logit_panel()
    lin = Constraint.linear([[1.0, -1.0]], [0.0])
    gen = Constraint.general(lambda th: [th[0] - th[1]], 1)
    a = run_test(data, spec, lin, "raw", "LR")
    b = run_test(data, spec, gen, "raw", "LR")
    assert a.statistic == pytest.approx(b.statistic, rel=1e-4, abs=1e-6)


def test_constraint_validation():
    with pytest.raises(RankDeficientConstraint):
        Constraint.linear([[1.0, 1.0], [2.0, 2.0]], [0.0, 0.0])
    with pytest.raises(ConfigError):
        Constraint.linear([[1.0, 1.0]], [0.0, 1.0])
    with pytest.raises(ConfigError):
        Constraint.point([0.1, 0.2, 0.3]).check(2)


def test_degenerate_variance():
    with pytest.raises(DegenerateVariance):
        wald_statistic(10, np.array([1.0]), np.array([[1.0]]), np.zeros((1, 1)))


def test_bfgs_on_concave_quadratic():
    a = np.array([[-2.0, 0.5], [0.5, -1.0]])
    b = np.array([1.0, -1.0])
    x, f, g, it, conv = bfgs_maximize(lambda x: 0.5 * x @ a @ x + b @ x,
                                      lambda x: a @ x + b, np.zeros(2))
    assert conv
    np.testing.assert_allclose(x, np.linalg.solve(-a, b), atol=1e-7)


def test_corrected_moves_rho_up_in_dynamic_logit():
    data, spec = logit_panel(seed=8)
    raw = maximize(data, spec, "raw")
    cor = maximize(data, spec, "corrected")
    assert cor.converged and np.all(np.isfinite(cor.se))
    assert cor.theta_hat[0] > raw.theta_hat[0]


def test_corrected_lag_se_below_raw_on_lfp_fixture():
    data, spec = load_fixture("lfp_like")
    data, _ = sanitize_panel(data, spec)
    raw = maximize(data, spec, "raw")
    cor = maximize(data, spec, "corrected")
    assert raw.converged and cor.converged
    assert cor.se[0] < raw.se[0]
