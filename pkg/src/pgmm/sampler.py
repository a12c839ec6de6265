"""Adaptive random-walk Metropolis for the joint and conditional quasi-posteriors.

The chain state is ``(theta, mu)``.  Each iteration updates the theta block
and then, unless mu is held fixed, the mu block, each with a Gaussian
random-walk proposal whose per-coordinate scales are fixed at construction
and multiplied by a scalar step size.  The log step size of each block follows
a Robbins-Monro recursion toward ``target_accept`` during burn-in and is frozen
afterwards, so the retained draws come from a time-homogeneous Markov chain.

Several chains on the same dataset can advance in lockstep
(:func:`sample_conditional_batch`): their moment evaluations are stacked into
one array operation.  Each chain owns its random stream, so a chain's draws
do not depend on which other chains share the batch beyond floating-point
rounding in the stacked linear algebra.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .criterion import QuasiPosterior
from .errors import ContractError, InitializationError, NumericalError, OptimizationError
from .local_approx import OptConfig, gmm_estimate
from .priors import FlatOnBox, GaussianTheta

__all__ = [
    "ChainConfig",
    "PosteriorDraws",
    "sample_joint",
    "sample_conditional_theta",
    "sample_conditional_batch",
    "split_rhat",
]

MAX_INIT_TRIES = 1000


@dataclass
class ChainConfig:
    """Run-length, seeding and proposal settings for one chain.

    ``n_draws`` counts post-burn-in iterations; ``n_draws // thin`` draws are
    retained.  ``theta_scale`` and ``mu_scale`` override the per-coordinate
    proposal scales that are otherwise seeded from the priors.
    """

    n_draws: int = 50_000
    burn_in: int = 10_000
    thin: int = 5
    seed: int = 0
    init_theta: object = "auto"
    init_mu: object = "prior-mean"
    target_accept: float = 0.234
    adapt_window: int = 500
    theta_scale: object = None
    mu_scale: object = None

    def __post_init__(self):
        for name in ("n_draws", "thin", "adapt_window"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be a positive integer")
        if int(self.burn_in) < 0:
            raise ContractError("burn_in must be nonnegative")
        if self.n_draws // self.thin < 1:
            raise ContractError("thin exceeds n_draws; nothing would be retained")
        if not 0.0 < self.target_accept < 1.0:
            raise ContractError("target_accept must lie in (0, 1)")
        if int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")
        if isinstance(self.init_theta, str) and self.init_theta != "auto":
            raise ContractError("init_theta must be a vector or 'auto'")
        if isinstance(self.init_mu, str) and self.init_mu != "prior-mean":
            raise ContractError("init_mu must be a vector or 'prior-mean'")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.n_draws

    def replace(self, **changes) -> "ChainConfig":
        d = asdict(self)
        d.update(changes)
        return ChainConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, np.ndarray):
                d[key] = val.tolist()
        return d


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws of one chain plus sampler diagnostics."""

    theta_draws: np.ndarray
    mu_draws: np.ndarray
    log_post: np.ndarray
    accept_rate: float
    seed: int
    iterations: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("theta_draws", "mu_draws", "log_post"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        it = np.array(self.iterations, dtype=np.int64)
        it.setflags(write=False)
        object.__setattr__(self, "iterations", it)

    @property
    def n(self) -> int:
        return self.theta_draws.shape[0]

    @property
    def k(self) -> int:
        return self.theta_draws.shape[1]

    @property
    def q(self) -> int:
        return self.mu_draws.shape[1]

    def rhat(self) -> np.ndarray:
        """Split-chain R-hat of each theta coordinate."""
        return split_rhat(self.theta_draws)

    def header(self):
        return (["iteration"] + [f"theta_{j + 1}" for j in range(self.k)]
                + [f"mu_{j + 1}" for j in range(self.q)] + ["log_post"])

    def to_csv(self, path) -> None:
        """Write ``iteration, theta_1..k, mu_1..q, log_post`` with full precision."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for i in range(self.n):
                writer.writerow([str(int(self.iterations[i]))]
                                + [repr(float(v)) for v in self.theta_draws[i]]
                                + [repr(float(v)) for v in self.mu_draws[i]]
                                + [repr(float(self.log_post[i]))])

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        """Read a file written by :meth:`to_csv`; diagnostics are not stored there."""
        from .errors import DataError

        try:
            with Path(path).open(newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                body = np.array([[float(v) for v in row] for row in reader if row])
        except (OSError, StopIteration, ValueError) as exc:
            raise DataError(f"cannot read draws from {path}: {exc}") from exc
        kth = [i for i, h in enumerate(header) if h.startswith("theta_")]
        kmu = [i for i, h in enumerate(header) if h.startswith("mu_")]
        if header[0] != "iteration" or header[-1] != "log_post" or not kth or body.ndim != 2:
            raise DataError(f"{path} is not a draws file")
        return cls(body[:, kth], body[:, kmu], body[:, -1], float("nan"), -1,
                   body[:, 0].astype(np.int64))

    def summary(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "accept_rate": self.accept_rate,
            "theta_mean": self.theta_draws.mean(axis=0).tolist(),
            "theta_sd": self.theta_draws.std(axis=0, ddof=1).tolist(),
            "mu_mean": self.mu_draws.mean(axis=0).tolist(),
            "rhat": self.rhat().tolist(),
            "diagnostics": self.diagnostics,
        }


def split_rhat(x) -> np.ndarray:
    """Split-chain potential scale reduction factor.

    ``x`` is an n x d draw matrix of one chain or a sequence of such
    matrices; every chain is cut into two halves.
    """
    chains = [np.asarray(x, dtype=float)] if np.ndim(x) == 2 else [np.asarray(c, float) for c in x]
    halves = []
    for c in chains:
        h = c.shape[0] // 2
        if h < 2:
            raise ContractError("need at least 4 draws per chain for split R-hat")
        halves += [c[:h], c[h:2 * h]]
    n = min(len(h) for h in halves)
    arr = np.stack([h[:n] for h in halves])  # m x n x d
    means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    return np.where(w > 0, r, 1.0)


# -- setup helpers ---------------------------------------------------------------

def _theta_scale(qp: QuasiPosterior, cfg: ChainConfig):
    if cfg.theta_scale is not None:
        s = np.broadcast_to(np.asarray(cfg.theta_scale, dtype=float), (qp.model.k,)).copy()
    elif isinstance(qp.theta_prior, GaussianTheta):
        s = qp.theta_prior.scale() / 5.0
    else:
        s = (qp._hi - qp._lo) / 20.0
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ContractError("theta proposal scales must be positive")
    return s


def _mu_scale(mu_prior, cfg: ChainConfig, q):
    if cfg.mu_scale is not None:
        s = np.broadcast_to(np.asarray(cfg.mu_scale, dtype=float), (q,)).copy()
    else:
        s = np.asarray(mu_prior.scale(), dtype=float) / 5.0
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ContractError("mu proposal scales must be positive")
    return s


def _auto_theta(qp: QuasiPosterior, mu):
    """GMM point at mu for smooth models, else a model pilot or the box center."""
    model, data = qp.model, qp.data
    if model.smooth:
        try:
            return gmm_estimate(model, data, None, mu, OptConfig(n_starts=2))
        except (OptimizationError, NumericalError, np.linalg.LinAlgError):
            return model.box_center
    pilot = getattr(model, "pilot_theta", None)
    if pilot is not None:
        try:
            th = np.asarray(pilot(data), dtype=float)
            if th.shape == (model.k,) and np.all(np.isfinite(th)):
                return np.clip(th, qp._lo, qp._hi)
        except (np.linalg.LinAlgError, ValueError):
            pass
    return model.box_center


def _log_theta_prior(qp: QuasiPosterior, thetas, inbox):
    prior = qp.theta_prior
    if isinstance(prior, FlatOnBox):
        return np.where(inbox, -prior._logvol, -np.inf)
    out = np.full(len(thetas), -np.inf)
    for b in np.flatnonzero(inbox):
        out[b] = prior._logpdf(thetas[b])
    return out


def _log_mu_prior(mu_prior, mus):
    if mu_prior is None:
        return np.zeros(len(mus))
    return np.array([mu_prior._logpdf(m) if mu_prior.in_support(m) else -np.inf for m in mus])


def _log_post_batch(qp, thetas, mus, mu_prior):
    """Full log quasi-posterior at B points, with the cached theta terms."""
    inbox = np.all((thetas >= qp._lo) & (thetas <= qp._hi), axis=1)
    mbar, F, ok = qp.theta_terms_batch(np.where(inbox[:, None], thetas, qp.model.box_center))
    lp = _log_theta_prior(qp, thetas, inbox & ok) + _log_mu_prior(mu_prior, mus)
    with np.errstate(invalid="ignore"):
        ll = -0.5 * qp.T * qp.quad_batch(mbar - mus, F)
    ll = np.where(ok, ll, -np.inf)
    return ll + lp, ll, mbar, F


def _initial_point(qp, mu_prior, cfg, mu_fixed, rng):
    """First state with finite log posterior, or InitializationError."""
    k, q = qp.model.k, qp.model.q
    if mu_fixed is not None:
        mu = mu_fixed
    elif isinstance(cfg.init_mu, str):
        mu = np.asarray(mu_prior.mean, dtype=float)
    else:
        mu = np.asarray(cfg.init_mu, dtype=float)
        if mu.shape != (q,):
            raise ContractError(f"init_mu must have length {q}")
    if isinstance(cfg.init_theta, str):
        theta = _auto_theta(qp, mu)
    else:
        theta = np.asarray(cfg.init_theta, dtype=float)
        if theta.shape != (k,):
            raise ContractError(f"init_theta must have length {k}")
    lp = _log_post_batch(qp, theta[None], mu[None], mu_prior)[0][0]
    tries = 0
    while not np.isfinite(lp):
        if tries == MAX_INIT_TRIES:
            raise InitializationError(
                f"no initial point with finite log posterior after {MAX_INIT_TRIES} prior draws")
        theta = qp.theta_prior.sample(rng) if not isinstance(qp.theta_prior, FlatOnBox) \
            else qp._lo + (qp._hi - qp._lo) * rng.random(k)
        if mu_fixed is None:
            mu = mu_prior.sample(rng)
        lp = _log_post_batch(qp, theta[None], mu[None], mu_prior)[0][0]
        tries += 1
    return theta, mu, tries


# -- the lockstep core -------------------------------------------------------------

def _run(qp: QuasiPosterior, mu_prior, cfg: ChainConfig, seeds, mu_fixed_list):
    """Advance len(seeds) chains in lockstep; mu is sampled only when
    ``mu_fixed_list`` is None (one chain) and the prior is not dogmatic."""
    model = qp.model
    k, q = model.k, model.q
    B = len(seeds)
    sample_mu = mu_fixed_list is None and not getattr(mu_prior, "is_dogmatic", False)
    if mu_fixed_list is None and mu_prior is not None and mu_prior.is_dogmatic:
        mu_fixed_list = [mu_prior.mu0] * B
        mu_prior = None
    n_iter, burn, thin = cfg.total_iterations, cfg.burn_in, cfg.thin
    n_keep = cfg.n_draws // thin

    thetas = np.empty((B, k))
    mus = np.empty((B, q))
    init_tries = []
    z_theta = np.empty((n_iter, B, k))
    u_theta = np.empty((n_iter, B))
    if sample_mu:
        z_mu = np.empty((n_iter, B, q))
        u_mu = np.empty((n_iter, B))
    for b, seed in enumerate(seeds):
        init_ss, prop_ss = np.random.SeedSequence(int(seed)).spawn(2)
        mu_fixed = None if mu_fixed_list is None else np.asarray(mu_fixed_list[b], dtype=float)
        thetas[b], mus[b], tries = _initial_point(
            qp, mu_prior, cfg, mu_fixed, np.random.default_rng(init_ss))
        init_tries.append(tries)
        rng = np.random.default_rng(prop_ss)
        z_theta[:, b] = rng.standard_normal((n_iter, k))
        u_theta[:, b] = np.log(rng.random(n_iter))
        if sample_mu:
            z_mu[:, b] = rng.standard_normal((n_iter, q))
            u_mu[:, b] = np.log(rng.random(n_iter))

    scale_theta = _theta_scale(qp, cfg)
    scale_mu = _mu_scale(mu_prior, cfg, q) if sample_mu else None
    log_step = np.zeros((2, B))
    step_theta = np.tile(scale_theta, (B, 1))
    step_mu = np.tile(scale_mu, (B, 1)) if sample_mu else None
    lp, ll, mbar, F = _log_post_batch(qp, thetas, mus, mu_prior)
    lp_mu = _log_mu_prior(mu_prior, mus)
    F = np.array(F)

    keep_theta = np.empty((n_keep, B, k))
    keep_mu = np.empty((n_keep, B, q))
    keep_lp = np.empty((n_keep, B))
    keep_it = np.empty(n_keep, dtype=np.int64)
    accepted = np.zeros((2, B))
    window = np.zeros((2, B))
    stuck = [[] for _ in range(B)]
    target = cfg.target_accept
    blocks = ("theta", "mu")
    lo, hi = qp._lo, qp._hi
    center = model.box_center
    half_t = -0.5 * qp.T
    flat = isinstance(qp.theta_prior, FlatOnBox)
    flat_lp = -qp.theta_prior._logvol if flat else 0.0
    kept = 0

    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(n_iter):
            adapting = it < burn

            # theta block
            prop = thetas + step_theta * z_theta[it]
            inbox = ((prop >= lo) & (prop <= hi)).all(axis=1)
            all_in = inbox.all()
            mbar_p, F_p, ok = qp.theta_terms_batch(prop if all_in else
                                                   np.where(inbox[:, None], prop, center))
            r = mbar_p - mus
            z = np.matmul(F_p, r[:, :, None])[:, :, 0]
            ll_p = half_t * (z * z).sum(axis=1)
            if flat:
                prior_p = flat_lp
                if not all_in:
                    ll_p[~inbox] = -np.inf
            else:
                prior_p = _log_theta_prior(qp, prop, inbox)
            if not ok.all():
                ll_p[~ok] = -np.inf
            lp_p = ll_p + prior_p + lp_mu
            log_r = lp_p - lp
            acc = u_theta[it] < log_r
            if acc.any():
                thetas[acc] = prop[acc]
                lp[acc] = lp_p[acc]
                ll[acc] = ll_p[acc]
                mbar[acc] = mbar_p[acc]
                F[acc] = F_p[acc]
            if adapting:
                gain = (it + 1.0) ** -0.6
                a = np.exp(np.minimum(np.nan_to_num(log_r, nan=-np.inf), 0.0))
                log_step[0] += gain * (a - target)
                step_theta = np.exp(log_step[0])[:, None] * scale_theta
            else:
                accepted[0] += acc
            window[0] += acc

            # mu block, reusing the theta terms
            if sample_mu:
                prop_mu = mus + step_mu * z_mu[it]
                lpm_p = _log_mu_prior(mu_prior, prop_mu)
                z = np.matmul(F, (mbar - prop_mu)[:, :, None])[:, :, 0]
                ll_p = half_t * (z * z).sum(axis=1)
                lp_p = np.where(np.isfinite(lpm_p), ll_p + lpm_p, -np.inf) + (lp - ll - lp_mu)
                log_r = lp_p - lp
                acc = u_mu[it] < log_r
                if acc.any():
                    mus[acc] = prop_mu[acc]
                    lp[acc] = lp_p[acc]
                    ll[acc] = ll_p[acc]
                    lp_mu[acc] = lpm_p[acc]
                if adapting:
                    a = np.exp(np.minimum(np.nan_to_num(log_r, nan=-np.inf), 0.0))
                    log_step[1] += gain * (a - target)
                    step_mu = np.exp(log_step[1])[:, None] * scale_mu
                else:
                    accepted[1] += acc
                window[1] += acc

            if (it + 1) % cfg.adapt_window == 0:
                for blk in range(1 + sample_mu):
                    for b in np.flatnonzero(window[blk] == 0):
                        stuck[b].append(f"{blocks[blk]} block: no acceptances in iterations "
                                        f"{it + 1 - cfg.adapt_window}-{it}")
                window[:] = 0

            if not adapting and (it - burn + 1) % thin == 0 and kept < n_keep:
                keep_theta[kept] = thetas
                keep_mu[kept] = mus
                keep_lp[kept] = lp
                keep_it[kept] = it
                kept += 1

    n_post = max(cfg.n_draws, 1)
    out = []
    for b, seed in enumerate(seeds):
        rates = {"theta": float(accepted[0, b] / n_post)}
        if sample_mu:
            rates["mu"] = float(accepted[1, b] / n_post)
        diag = {
            "accept_rates": rates,
            "step_sizes": {blocks[j]: float(np.exp(log_step[j, b])) for j in range(1 + sample_mu)},
            "proposal_scales": {"theta": scale_theta.tolist(),
                                **({"mu": scale_mu.tolist()} if sample_mu else {})},
            "init_retries": init_tries[b],
            "stuck_windows": stuck[b],
            "mu_sampled": bool(sample_mu),
            "config": cfg.to_dict() | {"seed": int(seed)},
        }
        out.append(PosteriorDraws(
            theta_draws=keep_theta[:, b], mu_draws=keep_mu[:, b], log_post=keep_lp[:, b],
            accept_rate=float(np.mean(list(rates.values()))), seed=int(seed),
            iterations=keep_it, diagnostics=diag,
        ))
    return out


def _posterior(model, data, scheme, theta_prior, mu_prior=None):
    if isinstance(model, QuasiPosterior):
        return model
    return QuasiPosterior(model, data, scheme, theta_prior, mu_prior)


def sample_joint(model, data, scheme=None, theta_prior=None, mu_prior=None,
                 cfg: ChainConfig | None = None) -> PosteriorDraws:
    """Sample the joint quasi-posterior of ``(theta, mu)``.

    With a :class:`~pgmm.priors.Dogmatic` prior the mu block is skipped and
    mu stays at the prior point.

    Parameters
    ----------
    model : MomentModel
    data : Dataset
    scheme : weighting scheme, default continuous updating
    theta_prior : ThetaPrior, default flat on the box
    mu_prior : MuPrior
        Required; sets the dimension-q support of mu.
    cfg : ChainConfig

    Returns
    -------
    PosteriorDraws
    """
    if mu_prior is None:
        raise ContractError("sample_joint needs a mu prior")
    cfg = ChainConfig() if cfg is None else cfg
    qp = _posterior(model, data, scheme, theta_prior, mu_prior)
    return _run(qp, mu_prior, cfg, [cfg.seed], None)[0]


def sample_conditional_theta(model, data, scheme=None, theta_prior=None, mu_fixed=None,
                             cfg: ChainConfig | None = None) -> PosteriorDraws:
    """Sample theta from the quasi-posterior conditional on ``mu = mu_fixed``."""
    cfg = ChainConfig() if cfg is None else cfg
    qp = _posterior(model, data, scheme, theta_prior)
    mu = _check_mu(mu_fixed, qp.model.q)
    return _run(qp, None, cfg, [cfg.seed], [mu])[0]


def sample_conditional_batch(model, data, scheme=None, theta_prior=None, mu_list=(),
                             cfg: ChainConfig | None = None, seeds=None):
    """Conditional chains at several mu values, advanced in lockstep.

    ``seeds`` defaults to ``cfg.seed XOR i`` for the i-th mu value.
    """
    cfg = ChainConfig() if cfg is None else cfg
    qp = _posterior(model, data, scheme, theta_prior)
    mus = [_check_mu(m, qp.model.q) for m in mu_list]
    if not mus:
        raise ContractError("mu_list is empty")
    if seeds is None:
        seeds = [int(cfg.seed) ^ i for i in range(len(mus))]
    if len(seeds) != len(mus):
        raise ContractError("need one seed per mu value")
    return _run(qp, None, cfg, list(seeds), mus)


def _check_mu(mu, q):
    if mu is None:
        raise ContractError("mu_fixed is required")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape != (q,) or not np.all(np.isfinite(mu)):
        raise ContractError(f"mu must be a finite vector of length {q}")
    return mu

