import numpy as np
import pytest
from scipy import stats

from pgmm import (
    ChainConfig,
    PluginAtPoint,
    UniformBox,
    UniformEllipse,
    sample_conditional_theta,
)
from pgmm.errors import ContractError, RankError
from pgmm.inference import (
    MAX_BOX_CORNERS,
    IntervalEstimate,
    bayes_decision,
    box_mu_grid,
    ellipse_mu_grid,
    hpd_interval,
    hpd_region,
    j_tilde,
    posterior_quantile_interval,
    t4_interval,
    union_interval,
)

CFG = ChainConfig(n_draws=6000, burn_in=1500, thin=2, seed=21)


# -- hpd_interval -------------------------------------------------------------------

def test_hpd_interval_ties_take_leftmost_window():
    assert hpd_interval(np.arange(1, 101), 0.05) == (1.0, 95.0)


def test_hpd_interval_normal_and_exponential():
    rng = np.random.default_rng(0)
    lo, hi = hpd_interval(rng.standard_normal(200_000), 0.05)
    assert abs(lo + 1.96) < 0.03 and abs(hi - 1.96) < 0.03
    # the exponential density decreases, so the shortest window starts at 0
    lo, hi = hpd_interval(rng.exponential(size=200_000), 0.05)
    assert lo < 1e-3 and abs(hi + np.log(0.05)) < 0.05


def test_hpd_interval_holds_required_share():
    x = np.random.default_rng(1).gamma(2.0, size=1001)
    lo, hi = hpd_interval(x, 0.1)
    assert np.sum((x >= lo) & (x <= hi)) >= np.ceil(0.9 * x.size)


def test_hpd_interval_contracts():
    with pytest.raises(ContractError):
        hpd_interval(np.arange(50), 0.05)
    with pytest.raises(ContractError):
        hpd_interval(np.arange(200), 1.0)


# -- hpd_region ---------------------------------------------------------------------

def test_hpd_region_gaussian_boundary():
    x = np.random.default_rng(2).standard_normal((20_000, 1))
    region = hpd_region(x, alpha=0.05)
    assert region.contains([0.0]) and region.contains([1.85]) and region.contains([-1.85])
    assert not region.contains([2.15]) and not region.contains([-2.15])
    assert abs(region.coverage_fraction - 0.95) < 0.001


def test_hpd_region_two_dim_member_share():
    rng = np.random.default_rng(3)
    x = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 2]], 5000)
    region = hpd_region(x, alpha=0.1)
    assert abs(region.coverage_fraction - 0.9) < 0.002
    # boundary of the 90% ellipse sits at chi2(2) quantile 4.605 of the Mahalanobis norm
    P = np.linalg.inv([[1, 0.5], [0.5, 2]])
    inside = np.array([1.0, 0.0]) * np.sqrt(3.6 / P[0, 0])
    outside = np.array([1.0, 0.0]) * np.sqrt(5.8 / P[0, 0])
    assert region.contains(inside) and not region.contains(outside)


def test_hpd_region_degenerate():
    x = np.full((500, 2), 0.3)
    region = hpd_region(x)
    assert region.degenerate
    assert region.contains([0.3, 0.3]) and not region.contains([0.3, 0.31])


def test_hpd_region_misaligned_log_post():
    with pytest.raises(ContractError):
        hpd_region(np.zeros((10, 1)) + np.arange(10)[:, None], log_post=np.zeros(9))


# -- per-mu intervals ---------------------------------------------------------------

def test_quantile_interval_equivariance():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4000, 2))
    base = posterior_quantile_interval(x, 0, 0.1)
    scaled = posterior_quantile_interval(x, [3.0, 0.0], 0.1)
    shifted = posterior_quantile_interval(x + [2.0, 0.0], 0, 0.1)
    assert np.allclose([scaled.lo, scaled.hi], [3 * base.lo, 3 * base.hi])
    assert np.allclose([shifted.lo, shifted.hi], [base.lo + 2, base.hi + 2])
    assert base.method == "quantile" and base.level == pytest.approx(0.9)


def test_t4_reduces_to_normal_interval_when_information_equality_holds():
    rng = np.random.default_rng(5)
    T = 400
    C = np.array([[0.02, 0.005], [0.005, 0.01]])
    x = rng.multivariate_normal([1.0, -1.0], C, 10_000)
    cov = np.cov(x, rowvar=False)
    jt = np.linalg.inv(T * cov)
    iv = t4_interval(x, 0, 0.05, jt, T)
    half = stats.norm.ppf(0.975) * np.sqrt(cov[0, 0])
    assert iv.lo == pytest.approx(x[:, 0].mean() - half, rel=1e-10)
    assert iv.hi == pytest.approx(x[:, 0].mean() + half, rel=1e-10)


def test_t4_sandwich_inflates_with_jtilde():
    x = np.random.default_rng(6).standard_normal((5000, 1)) * 0.1
    T = 100
    jt = np.atleast_2d(1 / (T * np.var(x, ddof=1)))
    base = t4_interval(x, 0, 0.05, jt, T)
    bigger = t4_interval(x, 0, 0.05, 4 * jt, T)
    assert bigger.width == pytest.approx(2 * base.width, rel=1e-10)


def test_t4_singular_chain():
    x = np.column_stack([np.arange(200.0), 2 * np.arange(200.0)])
    with pytest.raises(RankError):
        t4_interval(x, 0, 0.05, np.eye(2), 100)


def test_t3_and_t4_agree_under_plugin_weighting(sim_iv):
    model, data = sim_iv
    mu = np.array([0.0])
    scheme = PluginAtPoint([0.5])
    d = sample_conditional_theta(model, data, scheme, None, mu,
                                 ChainConfig(n_draws=20_000, burn_in=3000, thin=2, seed=3))
    t3 = posterior_quantile_interval(d, 0, 0.05)
    t4 = t4_interval(d, 0, 0.05, j_tilde(model, data, scheme, d.theta_draws.mean(axis=0)), data.T)
    assert abs(t3.width / t4.width - 1) < 0.1
    assert abs((t3.lo + t3.hi) - (t4.lo + t4.hi)) / 2 < 0.1 * t3.width


def test_interval_estimate_contracts():
    with pytest.raises(ContractError):
        IntervalEstimate(1.0, 0.0, 0.95, "hpd")
    with pytest.raises(ContractError):
        IntervalEstimate(0.0, 1.0, 1.0, "hpd")
    with pytest.raises(ContractError):
        IntervalEstimate(0.0, 1.0, 0.9, "wald")
    iv = IntervalEstimate(0.0, 2.0, 0.9, "hpd")
    assert iv.width == 2.0 and iv.contains(2.0) and not iv.contains(2.1)
    assert '"lo": 0.0' in iv.to_json()


# -- union --------------------------------------------------------------------------

def test_union_single_point_is_conditional_interval(sim_iv):
    model, data = sim_iv
    mu = np.array([0.05])
    u = union_interval(model, data, mu_grid=[mu], cfg=CFG)
    d = sample_conditional_theta(model, data, None, None, mu, CFG)
    q = posterior_quantile_interval(d, 0, 0.05)
    assert (u.lo, u.hi) == (q.lo, q.hi)
    assert u.method == "t3_union" and u.mu_grid_size == 1


def test_union_drops_duplicates(sim_iv):
    model, data = sim_iv
    a, b = np.array([-0.05]), np.array([0.05])
    u1 = union_interval(model, data, mu_grid=[a, b], cfg=CFG)
    u2 = union_interval(model, data, mu_grid=[a, a, b, b], cfg=CFG)
    assert (u1.lo, u1.hi, u1.mu_grid_size) == (u2.lo, u2.hi, u2.mu_grid_size)


def test_union_nested_grids_and_monotone_in_box(sim_iv):
    model, data = sim_iv
    small = [np.array([0.0]), np.array([0.02])]
    big = small + [np.array([-0.04]), np.array([0.06])]
    u_s = union_interval(model, data, mu_grid=small, cfg=CFG)
    u_b = union_interval(model, data, mu_grid=big, cfg=CFG)
    assert u_b.lo <= u_s.lo and u_b.hi >= u_s.hi
    widths = [union_interval(model, data, support=UniformBox([-b], [b]), cfg=CFG).width
              for b in (0.01, 0.05, 0.1)]
    assert widths[0] < widths[1] < widths[2]


def test_union_t4_and_workers_match(sim_iv):
    model, data = sim_iv
    grid = [np.array([v]) for v in np.linspace(-0.05, 0.05, 11)]
    one = union_interval(model, data, mu_grid=grid, per_mu_method="t4", cfg=CFG, workers=1)
    two = union_interval(model, data, mu_grid=grid, per_mu_method="t4", cfg=CFG, workers=2)
    assert (one.lo, one.hi) == (two.lo, two.hi) and one.method == "t4_union"
    assert [p["seed"] for p in one.details["per_mu"]] == [CFG.seed ^ i for i in range(11)]


def test_union_grid_outside_support(sim_iv):
    model, data = sim_iv
    with pytest.raises(ContractError):
        union_interval(model, data, mu_grid=[np.array([0.5])], support=UniformBox([-0.1], [0.1]), cfg=CFG)
    with pytest.raises(ContractError):
        union_interval(model, data, cfg=CFG)


def test_box_grid_shape_and_cap():
    grid, desc = box_mu_grid([-1, -2], [1, 2])
    assert len(grid) == 1 + 4 + 4
    assert any(np.array_equal(g, [1.0, -2.0]) for g in grid)
    grid, desc = box_mu_grid(-np.ones(8), np.ones(8))
    assert len(grid) == 1 + 16 + MAX_BOX_CORNERS
    assert desc["corners_total"] == 256 and desc["n_corners"] == MAX_BOX_CORNERS
    with pytest.raises(ContractError):
        box_mu_grid([1.0], [0.0])


def test_ellipse_grid_on_boundary():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    prior = UniformEllipse(S, 3.0)
    grid, _ = ellipse_mu_grid(S, 3.0)
    assert len(grid) == 5
    P = np.linalg.inv(S)
    for g in grid[1:]:
        assert g @ P @ g == pytest.approx(3.0)
        assert prior.in_support(g * (1 - 1e-9))


# -- decisions ----------------------------------------------------------------------

class _Draws:
    def __init__(self, theta):
        self.theta_draws = theta
        self.mu_draws = np.zeros((theta.shape[0], 1))


def test_bayes_decision_squared_and_absolute_loss():
    x = np.random.default_rng(7).exponential(size=(2001, 1))
    d = bayes_decision(_Draws(x), lambda th, mu, d: ((th - d) ** 2).sum(axis=1))
    assert d[0] == pytest.approx(x.mean(), abs=1e-6)
    cands = np.sort(x[:, 0])[::50, None]
    d = bayes_decision(_Draws(x), lambda th, mu, d: np.abs(th - d).sum(axis=1), candidates=cands)
    med = np.median(x)
    assert abs(d[0] - med) <= np.max(np.diff(cands[:, 0]))
    with pytest.raises(ContractError):
        bayes_decision(_Draws(x), lambda th, mu, d: th[:, 0], candidates=[])
