import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bctm.em import EmConfig, _invert_information, fit_em, mstep_maximize, profile_fit, standard_errors
from bctm.exceptions import BctmError, DomainError, LikelihoodDegenerateError
from bctm.likelihood import BctmLikelihood, numerical_hessian
from bctm.model import BctmParameters, KnotGrid
from bctm.simulation import SimScenario, _simulation_init, generate_dataset, select_cutpoints_quantile
from conftest import QN, make_dataset

OPTS = [EmConfig(), QN]
INIT = BctmParameters(0.5, [0.5, 0.5], [0.0, 0.0], [0.0])


def sim(alpha, rep, n=200, B=1):
    sc = SimScenario(alpha_true=alpha, n=n, B_fit=B)
    data = generate_dataset(sc, rep)
    return data, select_cutpoints_quantile(data, B), _simulation_init(sc, rep)


# -- M-step ----------------------------------------------------------------------------


@pytest.mark.parametrize("config", OPTS, ids=["simplex", "qn"])
def test_mstep_separable_quadratic(config):
    c = np.array([0.4, 0.3, 0.2, 0.1, -0.5, 0.2])
    res = mstep_maximize(lambda t: -np.sum((t - c) ** 2), INIT, config)
    assert res.progressed
    assert_allclose(res.params.to_vector(), c, atol=1e-5)


@pytest.mark.parametrize("config", OPTS, ids=["simplex", "qn"])
def test_mstep_active_bound(config):
    c = np.array([1.3, 0.3, -0.2, 0.1, -0.5, 0.2])
    res = mstep_maximize(lambda t: -np.sum((t - c) ** 2), INIT, config)
    v = res.params.to_vector()
    assert_allclose(v[[0, 2]], [1.0, 0.0], atol=config.optimizer_tol)
    assert_allclose(v[[1, 3, 4, 5]], c[[1, 3, 4, 5]], atol=1e-5)


def test_mstep_no_progress_returns_init():
    c = INIT.to_vector()
    res = mstep_maximize(lambda t: -np.sum((t - c) ** 2), INIT)
    assert_allclose(res.params.to_vector(), c)
    assert res.value >= -1e-10


def test_mstep_rejects_nonfinite_start():
    with pytest.raises(BctmError):
        mstep_maximize(lambda t: float("nan"), INIT)


def test_first_mstep_improves_q():
    data, knots, init = sim(0.5, 0)
    lik = BctmLikelihood(data, knots)
    th = init.to_vector()
    w = lik.weights(th)
    res = mstep_maximize(lambda t: lik.q(t, w), init)
    assert res.progressed
    assert lik.q(res.params.to_vector(), w) > lik.q(th, w)


# -- full fits ---------------------------------------------------------------------------


def test_trace_nondecreasing_and_bounds(sim_fit):
    assert sim_fit.converged
    assert np.all(np.diff(sim_fit.loglik_trace) >= -1e-8)
    p = sim_fit.theta_hat
    assert 0 <= p.alpha <= 1 and np.all(p.psi >= 0)
    assert sim_fit.n_params == 1 + 2 + 3 + 2
    assert_allclose(sim_fit.aic, 2 * sim_fit.n_params - 2 * sim_fit.loglik)


def test_fixed_point(sim_data):
    sc, data, knots = sim_data
    # at the default tol = 1e-3 a restart still gains ~2e-5; the fixed point needs a tight tol
    cfg = EmConfig(optimizer=QN.optimizer, tol=1e-6)
    fit = fit_em(data, knots, _simulation_init(sc, 0), cfg, compute_se=False)
    refit = fit_em(data, knots, fit.theta_hat, cfg, compute_se=False)
    assert fit.converged and refit.converged
    assert refit.n_em_iters <= 2
    assert abs(refit.loglik - fit.loglik) < 1e-6


def test_simplex_and_qn_agree(sim_data, sim_fit):
    sc, data, knots = sim_data
    fit = fit_em(data, knots, _simulation_init(sc, 0), EmConfig(), compute_se=False)
    assert np.all(np.diff(fit.loglik_trace) >= -1e-8)
    assert abs(fit.loglik - sim_fit.loglik) < 1e-3


def test_determinism(sim_data, sim_fit):
    sc, data, knots = sim_data
    again = fit_em(data, knots, _simulation_init(sc, 0), QN)
    assert np.array_equal(again.theta_hat.to_vector(), sim_fit.theta_hat.to_vector())
    assert np.array_equal(again.se, sim_fit.se)
    assert again.loglik_trace == sim_fit.loglik_trace


def test_max_iters_reached_not_converged(sim_data):
    sc, data, knots = sim_data
    fit = fit_em(data, knots, _simulation_init(sc, 0), EmConfig(optimizer=QN.optimizer, max_em_iters=2), compute_se=False)
    assert fit.n_em_iters == 2 and not fit.converged


def test_degenerate_start_reports_iteration():
    data = make_dataset([0.0, 1.0, 2.0], [1.0, 2.0, np.inf])
    init = BctmParameters(0.5, [0.0, 0.0, 1.0], [0.0], [])
    with pytest.raises(LikelihoodDegenerateError) as err:
        fit_em(data, KnotGrid([0.0, 1.0, 3.0]), init)
    assert err.value.iteration == 0 and err.value.index == 0


def test_dimension_mismatch(sim_data):
    _, data, knots = sim_data
    with pytest.raises(DomainError):
        fit_em(data, knots, INIT)


# -- standard errors ---------------------------------------------------------------------


def test_se_matches_inverse_hessian(sim_data, sim_fit):
    _, data, knots = sim_data
    lik = BctmLikelihood(data, knots)
    th = sim_fit.theta_hat.to_vector()
    info = -numerical_hessian(lik.observed, th, lower=[0, 0, 0] + [-np.inf] * 5)
    assert_allclose(sim_fit.vcov, np.linalg.inv(info), rtol=1e-8)
    assert_allclose(sim_fit.se, np.sqrt(np.diag(np.linalg.inv(info))), rtol=1e-8)
    assert not sim_fit.boundary.any() and not sim_fit.singular


def test_boundary_alpha_flagged():
    data, knots, init = sim(0.0, 2)
    fit = fit_em(data, knots, init, QN)
    assert fit.theta_hat.alpha < 1e-6
    assert fit.boundary[0]
    assert np.isfinite(fit.se[0]) and fit.se[0] > 0


def test_exponential_rate_se():
    rng = np.random.default_rng(4)
    n, rate = 500, 0.5
    t = rng.exponential(1 / rate, n)
    # width 1e-4: at 1e-7 the log of the survival gap is too noisy for a 1e-4 Hessian step
    data = make_dataset(np.r_[t, 1.0], np.r_[t + 1e-4, np.inf])
    knots = KnotGrid([0.0, float(t.max() + 1e-4)])
    lik = BctmLikelihood(data, knots)
    # constant hazard lam, susceptible fraction numerically 1
    f = lambda v: lik.observed(np.array([1.0, v[0], v[0], 40.0]))
    lam_hat = n / t.sum()
    se = math.sqrt(1.0 / -numerical_hessian(f, [lam_hat])[0, 0])
    assert abs(se / (lam_hat / math.sqrt(n)) - 1) < 0.05
    assert abs(se / (rate / math.sqrt(n)) - 1) < 0.10


def test_singular_information_uses_pinv():
    vcov, singular = _invert_information(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert singular
    assert_allclose(vcov, np.linalg.pinv([[1.0, 1.0], [1.0, 1.0]]))


def test_standard_errors_requires_finite_loglik():
    data = make_dataset([0.0, 1.0, 2.0], [1.0, 2.0, np.inf])
    with pytest.raises(LikelihoodDegenerateError):
        standard_errors(BctmParameters(0.5, [0.0, 0.0, 1.0], [0.0], []), data, KnotGrid([0.0, 1.0, 3.0]))


# -- profile -------------------------------------------------------------------------------


def test_profile_singleton_equals_frozen_fit(sim_data):
    sc, data, knots = sim_data
    init = _simulation_init(sc, 0)
    prof = profile_fit(data, knots, init, QN, alpha_grid=[0.3])
    direct = fit_em(data, knots, init, QN, fix_alpha=0.3)
    assert prof.best.loglik == direct.loglik
    assert np.array_equal(prof.best.theta_hat.to_vector(), direct.theta_hat.to_vector())
    assert prof.table == [(0.3, direct.loglik, None)]


def test_profile_not_better_than_simultaneous(sim_data, sim_fit):
    sc, data, knots = sim_data
    prof = profile_fit(data, knots, _simulation_init(sc, 0), QN)
    assert [a for a, _, _ in prof.table] == pytest.approx(np.linspace(0, 1, 11))
    assert prof.best.loglik <= sim_fit.loglik + 1e-3


@pytest.mark.slow
def test_profile_argmax_at_alpha_one():
    # the profile is nearly flat at n = 200 (argmax 0.5, 0, 0, 0.7 over reps 0-3)
    best = [profile_fit(*sim(1.0, rep, n=1000), QN).best.fixed_alpha for rep in range(4)]
    assert sum(a >= 0.7 for a in best) >= 3


def test_profile_grid_validation(sim_data):
    sc, data, knots = sim_data
    with pytest.raises(DomainError):
        profile_fit(data, knots, _simulation_init(sc, 0), QN, alpha_grid=[1.5])
    with pytest.raises(DomainError):
        profile_fit(data, knots, _simulation_init(sc, 0), QN, alpha_grid=[])


def test_config_validation():
    for bad in (dict(tol=0), dict(alpha_bounds=(0.5, 0.2)), dict(optimizer="newton"), dict(max_em_iters=0)):
        with pytest.raises(DomainError):
            EmConfig(**bad)
