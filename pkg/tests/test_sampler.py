import numpy as np
import pytest
from scipy import stats

from pgmm import (
    BernoulliTreatment,
    ChainConfig,
    Dataset,
    Dogmatic,
    FixedMatrix,
    FunctionModel,
    Gaussian,
    GaussianLocal,
    GaussianTheta,
    LinearIvLogNormal,
    MedianRegLogNormal,
    PosteriorDraws,
    UniformBox,
    sample_conditional_theta,
    sample_joint,
    sample_moments,
)
from pgmm.errors import ContractError, EvaluationError, InitializationError
from pgmm.sampler import sample_conditional_batch, split_rhat

from conftest import batch_means_se, gaussian_oracle

SHORT = ChainConfig(n_draws=4000, burn_in=1000, thin=2, seed=11)


def test_chain_config_contracts():
    for bad in (dict(n_draws=0), dict(thin=0), dict(burn_in=-1), dict(target_accept=1.0),
                dict(seed=-1), dict(seed=2**64), dict(init_theta="center"), dict(n_draws=3, thin=5)):
        with pytest.raises(ContractError):
            ChainConfig(**bad)
    cfg = ChainConfig()
    assert (cfg.n_draws, cfg.burn_in, cfg.thin, cfg.target_accept) == (50_000, 10_000, 5, 0.234)
    assert cfg.replace(seed=3).seed == 3 and cfg.seed == 0


def test_exact_gaussian_target_moments(sim_iv):
    model, data = sim_iv
    W = np.array([[0.15]])
    tp = GaussianTheta([0.3], [[0.5]])
    mp = GaussianLocal([0.0], [[3.0]], data.T)
    draws = sample_joint(model, data, FixedMatrix(W), tp, mp,
                         ChainConfig(n_draws=20_000, burn_in=4000, thin=1, seed=5))
    mean, cov = gaussian_oracle(model, data, W, tp.mean, tp.cov, mp.mean, mp.cov)
    x = np.column_stack([draws.theta_draws, draws.mu_draws])
    se = batch_means_se(x)
    assert np.all(np.abs(x.mean(axis=0) - mean) < 4 * se)
    c = x - mean
    prods = (c[:, :, None] * c[:, None, :]).reshape(len(c), -1)
    se = batch_means_se(prods)
    assert np.all(np.abs(prods.mean(axis=0) - cov.ravel()) < 4 * se)


def test_dogmatic_mu_is_constant(toy_iv):
    model, data = toy_iv
    d = sample_joint(model, data, None, None, Dogmatic([0.25]), SHORT)
    assert np.all(d.mu_draws == 0.25)
    assert d.diagnostics["mu_sampled"] is False


def test_seed_determinism(sim_iv):
    model, data = sim_iv
    prior = GaussianLocal([0.0], [[1.0]], data.T)
    a = sample_joint(model, data, None, None, prior, SHORT)
    b = sample_joint(model, data, None, None, prior, SHORT)
    c = sample_joint(model, data, None, None, prior, SHORT.replace(seed=12))
    assert np.array_equal(a.theta_draws, b.theta_draws) and np.array_equal(a.mu_draws, b.mu_draws)
    assert not np.array_equal(a.theta_draws, c.theta_draws)


def test_conditional_matches_joint_under_dogmatic(sim_iv):
    model, data = sim_iv
    mu = np.array([0.05])
    cfg = ChainConfig(n_draws=30_000, burn_in=3000, thin=3, seed=1)
    a = sample_conditional_theta(model, data, None, None, mu, cfg)
    b = sample_joint(model, data, None, None, Dogmatic(mu), cfg.replace(seed=2))
    ks = stats.ks_2samp(a.theta_draws[:, 0], b.theta_draws[:, 0]).statistic
    n = a.n
    # asymptotic 1% critical value of the two-sample statistic
    assert ks < 1.628 * np.sqrt(2.0 / n)
    assert np.all(a.mu_draws == mu)


def test_conditional_mode_near_target(sim_iv):
    model, data = sim_iv
    th = np.array([0.6])
    mu = sample_moments(model, data, th)
    d = sample_conditional_theta(model, data, None, None, mu, SHORT)
    i = int(np.argmax(d.log_post))
    assert abs(d.theta_draws[i, 0] - 0.6) < 0.02


def test_batch_equals_single_runs(sim_iv):
    model, data = sim_iv
    mus = [np.array([-0.1]), np.array([0.0]), np.array([0.1])]
    batch = sample_conditional_batch(model, data, None, None, mus, SHORT, seeds=[3, 4, 5])
    for mu, seed, b in zip(mus, (3, 4, 5), batch):
        single = sample_conditional_theta(model, data, None, None, mu, SHORT.replace(seed=seed))
        assert np.allclose(single.theta_draws, b.theta_draws, rtol=0, atol=1e-12)


@pytest.mark.parametrize("dgp,tau,prior", [
    (LinearIvLogNormal(0.5, 0.2, 500), None, GaussianLocal([0.0], [[1.0]], 500)),
    (MedianRegLogNormal(T=300), 0.5, GaussianLocal(np.zeros(4), np.eye(4), 300)),
    (BernoulliTreatment(gamma=1.0), 0.5, GaussianLocal(np.zeros(2), 10 * np.eye(2), 300)),
])
def test_acceptance_band_and_support(dgp, tau, prior):
    data = dgp.simulate(np.random.default_rng(0))
    model = dgp.model(tau)
    d = sample_joint(model, data, None, None, prior, ChainConfig(n_draws=6000, burn_in=3000, thin=3, seed=2))
    assert 0.10 <= d.accept_rate <= 0.50
    assert np.all(np.isfinite(d.log_post))
    box = model.theta_box
    assert np.all((d.theta_draws >= box[:, 0]) & (d.theta_draws <= box[:, 1]))


def test_bounded_mu_support_never_left(sim_iv):
    model, data = sim_iv
    prior = UniformBox([-0.05], [0.05])
    d = sample_joint(model, data, None, None, prior, SHORT)
    assert np.all(np.abs(d.mu_draws) <= 0.05)


def test_binned_detailed_balance():
    # a frozen random-walk Metropolis chain is reversible, so transitions between
    # any partition of the state space are symmetric in stationarity
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal((400, 1)), ("z",))
    model = FunctionModel(lambda rows, th: (rows[:, 0] - th[0])[:, None], 1, 1, [[-1, 1]], vectorized=True)
    d = sample_conditional_theta(model, data, FixedMatrix(np.eye(1)), None, [0.0],
                                 ChainConfig(n_draws=200_000, burn_in=2000, thin=1, seed=8))
    x = d.theta_draws[:, 0]
    edges = np.quantile(x, [0.2, 0.4, 0.6, 0.8])
    s = np.digitize(x, edges)
    counts = np.zeros((5, 5))
    np.add.at(counts, (s[:-1], s[1:]), 1)
    # batch the off-diagonal asymmetries to get a standard error that respects autocorrelation
    n_b = 40
    L = len(s) // n_b
    asym = []
    for b in range(n_b):
        seg = s[b * L:(b + 1) * L]
        c = np.zeros((5, 5))
        np.add.at(c, (seg[:-1], seg[1:]), 1)
        asym.append((c - c.T)[np.triu_indices(5, 1)])
    asym = np.array(asym)
    se = asym.std(axis=0, ddof=1) * np.sqrt(n_b)
    diff = (counts - counts.T)[np.triu_indices(5, 1)]
    assert np.all(np.abs(diff) <= 3 * se + 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_moments_raise():
    data = Dataset(np.ones((10, 1)), ("z",))
    model = FunctionModel(lambda rows, th: np.full((rows.shape[0], 1), np.nan), 1, 1, [[-1, 1]],
                          vectorized=True)
    with pytest.raises(EvaluationError):
        sample_joint(model, data, FixedMatrix(np.eye(1)), None, Gaussian([0.0], [[1.0]]), SHORT)


class _EmptySupport(UniformBox):
    def log_density(self, mu):
        return -np.inf

    def log_density_batch(self, mus):
        return np.full(len(mus), -np.inf)


def test_initialization_error():
    data = Dataset(np.ones((10, 1)), ("z",))
    model = FunctionModel(lambda rows, th: (rows[:, 0] - th[0])[:, None], 1, 1, [[-1, 1]], vectorized=True)
    with pytest.raises(InitializationError):
        sample_joint(model, data, FixedMatrix(np.eye(1)), None, _EmptySupport([-1.0], [1.0]), SHORT)


def test_start_outside_box_is_redrawn():
    data = Dataset(np.ones((10, 1)), ("z",))
    model = FunctionModel(lambda rows, th: (rows[:, 0] - th[0])[:, None], 1, 1, [[-1, 1]], vectorized=True)
    d = sample_joint(model, data, FixedMatrix(np.eye(1)), None, Dogmatic([0.0]),
                     SHORT.replace(init_theta=np.array([5.0])))
    assert d.diagnostics["init_retries"] >= 1
    assert np.all(np.abs(d.theta_draws) <= 1)


def test_stuck_window_recorded():
    data = Dataset(np.random.default_rng(0).standard_normal((100, 1)), ("z",))
    model = FunctionModel(lambda rows, th: (rows[:, 0] - th[0])[:, None], 1, 1, [[-1, 1]], vectorized=True)
    # an absurdly concentrated target with a huge fixed proposal rejects almost everything
    d = sample_joint(model, data, FixedMatrix(np.eye(1) * 1e8), None, Dogmatic([0.0]),
                     ChainConfig(n_draws=200, burn_in=1000, thin=1, adapt_window=50, theta_scale=[1.0],
                                 init_theta=np.array([0.3])))
    assert d.diagnostics["stuck_windows"]


def test_csv_roundtrip(tmp_path, sim_iv):
    model, data = sim_iv
    d = sample_joint(model, data, None, None, GaussianLocal([0.0], [[1.0]], data.T), SHORT)
    path = tmp_path / "draws.csv"
    d.to_csv(path)
    head = path.read_text().splitlines()[0]
    assert head == "iteration,theta_1,mu_1,log_post"
    back = PosteriorDraws.from_csv(path)
    assert np.array_equal(back.theta_draws, d.theta_draws)
    assert np.array_equal(back.log_post, d.log_post)
    assert np.array_equal(back.iterations, d.iterations)


def test_draws_are_read_only(sim_iv):
    model, data = sim_iv
    d = sample_conditional_theta(model, data, None, None, [0.0], SHORT)
    with pytest.raises(ValueError):
        d.theta_draws[0, 0] = 1.0


def test_split_rhat():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4000, 2))
    assert np.all(np.abs(split_rhat(iid) - 1.0) < 0.01)
    drift = np.linspace(0, 5, 4000)[:, None] + rng.standard_normal((4000, 1))
    assert split_rhat(drift)[0] > 1.5
