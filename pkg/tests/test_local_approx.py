import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgmm import (
    Dataset,
    FunctionModel,
    LinearIvLogNormal,
    LinearIvModel,
    OptConfig,
    gaussian_approx,
    gmm_estimate,
    local_interval,
)
from pgmm.errors import ContractError, NumericalError, OptimizationError, RankError
from pgmm.local_approx import LocalApprox, compute_a_hat, gmm_objective

from conftest import random_spd


def three_inverse(omega, lam):
    oi = np.linalg.inv(omega)
    return oi - oi @ np.linalg.inv(np.linalg.inv(lam) + oi) @ oi


def test_scalar_woodbury():
    assert compute_a_hat([[1.0]], [[1.0]])[0, 0] == pytest.approx(0.5)


def test_random_pair_inverts_sum():
    rng = np.random.default_rng(0)
    om, lam = random_spd(rng, 4), random_spd(rng, 4)
    assert np.allclose(compute_a_hat(om, lam) @ (om + lam), np.eye(4), atol=1e-9)


def test_efficient_limit_of_a_hat():
    rng = np.random.default_rng(1)
    om = random_spd(rng, 3)
    a = compute_a_hat(om, 1e-10 * np.eye(3))
    oi = np.linalg.inv(om)
    assert np.linalg.norm(a - oi) <= 1e-6 * np.linalg.norm(oi)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_woodbury_property(q, seed):
    rng = np.random.default_rng(seed)
    om, lam = random_spd(rng, q), random_spd(rng, q)
    a = compute_a_hat(om, lam)
    assert np.abs(a @ (om + lam) - np.eye(q)).max() <= 1e-8
    assert np.abs(a - three_inverse(om, lam)).max() <= 1e-8 * max(1.0, np.abs(a).max())


def test_a_hat_rejects_indefinite():
    with pytest.raises(NumericalError):
        compute_a_hat([[-1.0]], [[0.5]])


def test_exactly_identified_iv_closed_form(sim_iv):
    model, data = sim_iv
    th = gmm_estimate(model, data, [[1.0]])
    d, x, y = data.column("d"), data.column("x"), data.column("y")
    assert th[0] == pytest.approx((d @ y) / (d @ x), abs=1e-6)
    obj = gmm_objective(model, data, [[1.0]], None)
    assert obj(th) <= 1e-10


def test_overidentified_matches_grid_search():
    rng = np.random.default_rng(4)
    T = 500
    z1, z2 = rng.standard_normal(T), rng.standard_normal(T)
    x = z1 + 0.5 * z2 + rng.standard_normal(T)
    y = 0.8 * x + 0.3 * z2 + rng.standard_normal(T)
    data = Dataset(np.column_stack([y, x, z1, z2]), ("y", "x", "z1", "z2"))
    model = LinearIvModel("y", ["x"], instruments=["z1", "z2"], intercept=False, theta_box=[[-2, 3]])
    lam = np.diag([0.1, 2.0])
    th = gmm_estimate(model, data, lam)
    obj = gmm_objective(model, data, lam, None)
    grid = np.linspace(-2, 3, 2000)
    best = grid[np.argmin([obj(np.array([g])) for g in grid])]
    assert abs(th[0] - best) <= grid[1] - grid[0]


def _linear_sim(k_extra, seed, T=400):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((T, 1 + k_extra))
    x = d[:, :1] @ np.ones((1, 1)) + rng.standard_normal((T, 1))
    y = x[:, 0] + rng.standard_normal(T)
    names = ["y", "x"] + [f"d{j}" for j in range(1 + k_extra)]
    data = Dataset(np.column_stack([y, x, d]), tuple(names))
    return LinearIvModel("y", ["x"], instruments=names[2:]), data


def test_efficient_gmm_limit_of_variance(sim_iv):
    model, data = sim_iv
    ap = gaussian_approx(model, data, 1e-10 * np.eye(1))
    eff = ap.efficient_variance
    assert np.linalg.norm(ap.V - eff) / np.linalg.norm(eff) <= 1e-5


def test_exactly_identified_variance_gap():
    model, data = _linear_sim(0, 5)
    lam = np.array([[0.5, 0.1], [0.1, 2.0]])
    ap = gaussian_approx(model, data, lam)
    gi = np.linalg.inv(ap.G_hat)
    assert np.allclose(ap.V - ap.V_bar, gi @ lam @ gi.T, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_variance_orderings(seed):
    rng = np.random.default_rng(seed)
    model, data = _linear_sim(int(rng.integers(0, 3)), seed)
    lam = random_spd(rng, model.q, cond=20.0) * rng.uniform(0.01, 5.0)
    ap = gaussian_approx(model, data, lam)
    assert np.linalg.eigvalsh(ap.V - ap.V_bar).min() >= -1e-8
    assert np.linalg.eigvalsh(ap.V - ap.efficient_variance).min() >= -1e-8


def test_local_interval_half_width():
    ap = LocalApprox(np.array([0.0]), np.array([[1.0]]), np.array([[1.0]]), np.eye(1), np.eye(1), 1,
                     np.eye(1))
    lo, hi = local_interval(ap, 0, 0.05)
    assert hi == pytest.approx(1.959964, abs=1e-5)
    assert lo == pytest.approx(-1.959964, abs=1e-5)
    ap4 = LocalApprox(np.array([0.0]), np.array([[1.0]]), np.array([[1.0]]), np.eye(1), np.eye(1), 4,
                      np.eye(1))
    assert (local_interval(ap4, 0)[1]) == pytest.approx(hi / 2.0)
    with pytest.raises(ContractError):
        local_interval(ap, np.zeros(1))


def test_interval_monotone_in_lambda():
    model, data = _linear_sim(0, 6)
    small = gaussian_approx(model, data, np.diag([0.1, 0.1]))
    big = gaussian_approx(model, data, np.diag([0.1, 0.1]) + np.array([[0.5, 0.2], [0.2, 0.3]]),
                          theta_hat=small.theta_hat)
    for j in range(2):
        a, b = local_interval(small, j), local_interval(big, j)
        assert b[1] - b[0] >= a[1] - a[0] - 1e-12


def test_rank_error_on_flat_moments():
    data = Dataset(np.random.default_rng(0).standard_normal((50, 1)), ("z",))
    model = FunctionModel(lambda rows, th: np.column_stack([rows[:, 0], rows[:, 0] ** 2]), 1, 2,
                          [[-1, 1]], vectorized=True)
    with pytest.raises(RankError) as err:
        gaussian_approx(model, data, np.eye(2), theta_hat=[0.0])
    assert err.value.smallest_singular_value is not None


def test_nonsmooth_path_and_frozen_weighting():
    from pgmm import MedianRegLogNormal

    dgp = MedianRegLogNormal(T=300)
    data = dgp.simulate(np.random.default_rng(0))
    model = dgp.model(0.5)
    th = gmm_estimate(model, data, None, opt_cfg=OptConfig(n_starts=2))
    assert np.all(np.abs(th - dgp.true_theta(0.5)) < 0.5)
    lin, ldata = _linear_sim(1, 7)
    a = gmm_estimate(lin, ldata, np.eye(3) * 0.1, opt_cfg=OptConfig(weighting="frozen"))
    b = gmm_estimate(lin, ldata, np.eye(3) * 0.1)
    assert np.allclose(a, b, atol=0.05)


def test_optimization_error_carries_best_point():
    data = Dataset(np.random.default_rng(0).standard_normal((20, 1)), ("z",))
    model = FunctionModel(lambda rows, th: (rows[:, 0] - th[0])[:, None] * np.ones((1, 1)), 1, 1,
                          [[-1, 1]], vectorized=True)
    with pytest.raises(OptimizationError) as err:
        gmm_estimate(model, data, None, opt_cfg=OptConfig(max_iter=1, n_starts=2))
    assert err.value.best_x is not None


def test_to_json_roundtrip(sim_iv):
    import json

    model, data = sim_iv
    ap = gaussian_approx(model, data, np.eye(1))
    d = json.loads(ap.to_json())
    assert set(d) >= {"theta_hat", "V", "V_bar", "intervals"}
    assert d["intervals"]["beta_x"] == list(local_interval(ap, 0))


@pytest.mark.parametrize("k_extra", [0, 2])
def test_batched_objective_matches_scalar(k_extra):
    model, data = _linear_sim(k_extra, 9)
    rng = np.random.default_rng(9)
    lam = random_spd(rng, model.q)
    thetas = rng.uniform(-2, 2, (6, model.k))
    for a_fixed in (None, np.eye(model.q)):
        obj = gmm_objective(model, data, lam, np.full(model.q, 0.01), a_fixed)
        assert np.allclose(obj.batch(thetas), [obj(t) for t in thetas], rtol=1e-9, atol=0)
    fm = FunctionModel(lambda rows, th: rows[:, :2] - th[0], 1, 2, [[-3, 3]], vectorized=True)
    fdata = Dataset(rng.standard_normal((50, 2)), ("a", "b"))
    obj = gmm_objective(fm, fdata, np.eye(2), None)
    pts = np.array([[-1.0], [0.2], [2.5]])
    assert np.allclose(obj.batch(pts), [obj(t) for t in pts], rtol=1e-9, atol=0)
