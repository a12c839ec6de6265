import numpy as np
import pytest

from pgmm import (
    ContinuousUpdating,
    Dogmatic,
    FixedMatrix,
    GaussianLocal,
    PluginAtPoint,
    QuasiPosterior,
    log_quasi_posterior,
    q_criterion,
    sample_moments,
)
from pgmm.errors import ContractError
from pgmm.moment_model import moment_covariance


def test_zero_at_moment_value(sim_iv):
    model, data = sim_iv
    m = sample_moments(model, data, [0.3])
    assert q_criterion(model, data, None, [0.3], m) == pytest.approx(0.0, abs=1e-12)


def test_toy_fixed_weight_by_hand(toy_iv):
    model, data = toy_iv
    assert q_criterion(model, data, FixedMatrix(np.eye(1)), [1.0], [0.0]) == pytest.approx(-2.0)


def test_monotone_along_rays(sim_iv):
    model, data = sim_iv
    m = sample_moments(model, data, [0.4])
    vals = [q_criterion(model, data, None, [0.4], m + t * np.array([0.7])) for t in (0.1, 0.2, 0.5, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_cue_weight_is_inverse_covariance(sim_iv):
    model, data = sim_iv
    qp = QuasiPosterior(model, data)
    om = moment_covariance(model, data, [0.2])
    assert np.allclose(qp.weighting_matrix(np.array([0.2])), np.linalg.inv(om), rtol=1e-10)


def test_plugin_weight_frozen(sim_iv):
    model, data = sim_iv
    qp = QuasiPosterior(model, data, PluginAtPoint([0.5]))
    om = moment_covariance(model, data, [0.5])
    for th in (0.0, 0.5, 1.0):
        assert np.allclose(qp.weighting_matrix(np.array([th])), np.linalg.inv(om), rtol=1e-10)


def test_dogmatic_prior_gives_ch_posterior(sim_iv):
    model, data = sim_iv
    mu0 = np.array([0.1])
    for th in (0.3, 0.5):
        lp = log_quasi_posterior(model, data, None, None, Dogmatic(mu0), [th], mu0)
        ref = 0.5 * q_criterion(model, data, None, [th], mu0) - np.log(20.0)
        assert lp == pytest.approx(ref)
    assert log_quasi_posterior(model, data, None, None, Dogmatic(mu0), [0.3], [0.2]) == -np.inf


def test_outside_box_is_minus_inf(sim_iv):
    model, data = sim_iv
    lp = log_quasi_posterior(model, data, None, None, GaussianLocal([0.0], [[1.0]], 1000), [50.0], [0.0])
    assert lp == -np.inf


def test_gaussian_local_independent_formula(sim_iv):
    model, data = sim_iv
    W = np.array([[0.2]])
    prior = GaussianLocal([0.05], [[2.0]], data.T)
    d, x, y = data.column("d"), data.column("x"), data.column("y")
    for th, mu in [(0.4, 0.0), (0.5, 0.1), (0.6, -0.2)]:
        m = np.mean(d * (y - x * th))
        q = -data.T * (m - mu) * W[0, 0] * (m - mu)
        var = 2.0 / data.T
        lpmu = -0.5 * np.log(2 * np.pi * var) - 0.5 * (mu - 0.05) ** 2 / var
        ref = 0.5 * q + lpmu - np.log(20.0)
        got = log_quasi_posterior(model, data, FixedMatrix(W), None, prior, [th], [mu])
        assert got == pytest.approx(ref, rel=1e-12)


def test_difference_identity(sim_iv):
    model, data = sim_iv
    prior = GaussianLocal([0.0], [[1.0]], data.T)
    qp = QuasiPosterior(model, data, None, None, prior)
    th, a, b = np.array([0.45]), np.array([0.05]), np.array([-0.1])
    lhs = qp.log_posterior(th, a) - qp.log_posterior(th, b)
    rhs = 0.5 * (qp.q_criterion(th, a) - qp.q_criterion(th, b)) + prior.log_density(a) - prior.log_density(b)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_quadratic_in_mu_under_fixed_weight(toy_iv):
    model, data = toy_iv
    qp = QuasiPosterior(model, data, FixedMatrix(np.eye(1)), None, GaussianLocal([0.0], [[1.0]], 2))
    mus = np.linspace(-1, 1, 9)
    vals = np.array([qp.log_posterior(np.array([0.5]), np.array([m])) for m in mus])
    second = np.diff(vals, 2)
    assert np.ptp(second) < 1e-9


def test_batch_terms_match_single(sim_iv):
    model, data = sim_iv
    for scheme in (None, FixedMatrix(np.eye(1) * 3.0), PluginAtPoint([0.5])):
        qp = QuasiPosterior(model, data, scheme)
        thetas = np.array([[0.1], [0.5], [0.9]])
        mbar, factors, ok = qp.theta_terms_batch(thetas)
        assert ok.all()
        for i, th in enumerate(thetas):
            m1, f1 = qp.theta_terms(th)
            assert np.allclose(mbar[i], m1, rtol=1e-12)
            r = m1 - 0.05
            assert qp.quad(r, f1) == pytest.approx(float(QuasiPosterior.quad_batch(r[None], factors[i:i + 1])[0]),
                                                   rel=1e-9)


def test_scheme_contracts(sim_iv):
    model, data = sim_iv
    with pytest.raises(ContractError):
        FixedMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        QuasiPosterior(model, data, FixedMatrix(np.eye(2)))
    with pytest.raises(ContractError):
        QuasiPosterior(model, data, "cue")
    with pytest.raises(ContractError):
        QuasiPosterior(model, data, ContinuousUpdating(), None, GaussianLocal(np.zeros(2), np.eye(2), 10))
