import filecmp
import math

import numpy as np
import pytest

from panelcorr.exceptions import ConfigError
from panelcorr.model import IndexModel, link_terms
from panelcorr.objectives import InfeasibleObjective
from panelcorr.simulate import (DEFAULT_DELTAS, DgpDesign, MCConfig, generate,
                                infeasible_loglik, monte_carlo, read_report,
                                report_to_dict, write_report)


def test_default_delta_grid():
    assert len(DEFAULT_DELTAS) == 31
    assert DEFAULT_DELTAS[0] == -0.3 and DEFAULT_DELTAS[-1] == 0.3
    assert 0.0 in DEFAULT_DELTAS


def test_design_names_round_trip():
    for name in ("logit-ds-dynamic", "probit-ae-static", "logit-hs-static",
                 "probit-ls-dynamic"):
        assert DgpDesign.from_name(name).name == name
    with pytest.raises(ConfigError):
        DgpDesign.from_name("logit-xx-dynamic")


def test_generate_is_deterministic():
    d = DgpDesign.from_name("logit-ds-dynamic", N=10, T=6)
    a, ta = generate(d, 5)
    b, tb = generate(d, 5)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(ta.mean_y, tb.mean_y)
    c, _ = generate(d, 6)
    assert not np.array_equal(a.u, c.u)


def test_zero_effect_design_has_half_mean():
    data, truth = generate(DgpDesign.from_name("logit-hs-static", N=400, T=50), 0)
    assert abs(truth.mean_y.mean() - 0.5) < 0.01
    assert np.all(truth.alpha0 == 0) and np.all(truth.gamma0 == 0)


def test_ar_covariate_autocorrelation():
    d = DgpDesign.from_name("logit-ae-static", N=400, T=60, effect_law="zeros")
    data, _ = generate(d, 1)
    x = data.x[:, 10:, 0]
    r = np.corrcoef(x[:, 1:].ravel(), x[:, :-1].ravel())[0, 1]
    assert r == pytest.approx(0.5, abs=0.02)
    assert x.var() == pytest.approx(0.5 / (1 - 0.25), rel=0.05)


def test_expected_loglik_at_zero_index():
    assert link_terms("logit", 0.5, 0.0)[0] == pytest.approx(math.log(0.5))
    assert link_terms("probit", 0.5, 0.0)[0] == pytest.approx(math.log(0.5))


def test_pseudo_true_effects_recover_zero_truth():
    d = DgpDesign.from_name("probit-hs-static", N=30, T=12)
    data, truth = generate(d, 2)
    model = IndexModel(d.spec(), data)
    obj = InfeasibleObjective(model, truth.mean_y)
    prof = obj.pseudo_true(truth.theta0)
    np.testing.assert_allclose(prof.alpha_hat, 0.0, atol=1e-9)
    np.testing.assert_allclose(prof.gamma_hat, 0.0, atol=1e-9)


def test_pseudo_true_effects_recover_additive_truth():
    # additive design: the expected likelihood is maximised at the true index
    d = DgpDesign.from_name("logit-ae-static", N=20, T=8)
    data, truth = generate(d, 3)
    model = IndexModel(d.spec(), data)
    prof = InfeasibleObjective(model, truth.mean_y).pseudo_true(truth.theta0)
    fitted = prof.alpha_hat[:, None] + prof.gamma_hat[None, :]
    true = truth.alpha0[:, None] + truth.gamma0[None, :]
    np.testing.assert_allclose(fitted - fitted.mean(), true - true.mean(), atol=1e-8)


def test_infeasible_function_matches_objective():
    d = DgpDesign.from_name("logit-ds-dynamic", N=15, T=6)
    data, truth = generate(d, 4)
    val, _ = infeasible_loglik(truth, data, truth.theta0)
    obj = InfeasibleObjective(IndexModel(d.spec(), data), truth.mean_y)
    assert val == pytest.approx(obj.value(truth.theta0), rel=1e-12)


def small_config(**kw):
    base = dict(design=DgpDesign.from_name("logit-ae-dynamic", N=12, T=6),
                replications=4, delta_grid=(-0.1, 0.0, 0.1), kinds=("LR", "Wald"),
                master_seed=3)
    base.update(kw)
    return MCConfig(**base)


def test_monte_carlo_report(tmp_path):
    rep = monte_carlo(small_config())
    assert rep.n_used + rep.n_excluded == 4
    assert len(rep.rejection) == 3 * 2 * 3
    for row in rep.rejection:
        assert math.isnan(row["rate"]) or 0 <= row["rate"] <= 1
    assert "threads" not in rep.config
    write_report(rep, tmp_path)
    back = read_report(tmp_path)
    a, b = report_to_dict(rep), report_to_dict(back)
    assert _same(a, b)


def _same(a, b):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and math.isnan(a):
        return isinstance(b, float) and math.isnan(b)
    return a == b


def test_threads_do_not_change_outputs(tmp_path):
    write_report(monte_carlo(small_config(threads=1)), tmp_path / "one")
    write_report(monte_carlo(small_config(threads=2)), tmp_path / "two")
    for f in ("rejection.csv", "estimates.csv", "replications.jsonl", "manifest.json"):
        assert filecmp.cmp(tmp_path / "one" / f, tmp_path / "two" / f, shallow=False)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(delta_grid=(0.1, 0.2))
    with pytest.raises(ConfigError):
        small_config(kinds=("F",))
    with pytest.raises(ConfigError):
        small_config(replications=0)
