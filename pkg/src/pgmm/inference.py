"""Posterior summaries and the union-of-intervals frequentist constructions.

* :func:`hpd_interval` - shortest window holding a 1 - alpha share of draws.
* :func:`hpd_region` - highest-density set of the theta marginal, with the
  density estimated by a product Gaussian kernel.
* :func:`posterior_quantile_interval` and :func:`t4_interval` - per-mu
  intervals from a conditional chain.
* :func:`union_interval` - union of per-mu intervals over a grid of mu values.
* :func:`bayes_decision` - minimizer of the quasi-posterior expected loss.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .criterion import ContinuousUpdating, FixedMatrix, QuasiPosterior
from .errors import ContractError, InitializationError, PgmmError, RankError
from .moment_model import moment_covariance, numerical_jacobian
from .priors import UniformBox, UniformEllipse
from .sampler import ChainConfig, PosteriorDraws, sample_conditional_batch

__all__ = [
    "IntervalEstimate",
    "HpdRegion",
    "hpd_interval",
    "hpd_region",
    "silverman_bandwidth",
    "posterior_quantile_interval",
    "t4_interval",
    "j_tilde",
    "union_interval",
    "box_mu_grid",
    "ellipse_mu_grid",
    "support_mu_grid",
    "bayes_decision",
]

METHODS = ("hpd", "quantile", "local", "t3_union", "t4_union", "t4")
MIN_HPD_SAMPLES = 100
MAX_BOX_CORNERS = 64
UNION_CHUNK = 8


@dataclass
class IntervalEstimate:
    """A scalar interval with its level, method and provenance."""

    lo: float
    hi: float
    level: float
    method: str
    mu_grid_size: int = 0
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ContractError(f"interval endpoints out of order: {self.lo} > {self.hi}")
        if not 0.0 < self.level < 1.0:
            raise ContractError("level must lie in (0, 1)")
        if self.method not in METHODS:
            raise ContractError(f"unknown interval method {self.method!r}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> bool:
        return bool(self.lo <= x <= self.hi)

    def to_dict(self) -> dict:
        return {"method": self.method, "level": self.level, "lo": self.lo, "hi": self.hi,
                "mu_grid_size": self.mu_grid_size, **self.details}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")


def hpd_interval(samples, alpha=0.05):
    """Shortest interval containing ``ceil((1 - alpha) n)`` of the samples.

    Among equally short windows the one with the smallest left endpoint wins.

    Returns
    -------
    (lo, hi) : tuple of float
    """
    _check_alpha(alpha)
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < MIN_HPD_SAMPLES:
        raise ContractError(f"hpd_interval needs at least {MIN_HPD_SAMPLES} samples, got {n}")
    m = math.ceil((1.0 - alpha) * n - 1e-9)
    if m > n or m < 1:
        raise ContractError("not enough samples for the requested mass")
    widths = x[m - 1:] - x[: n - m + 1]
    i = int(np.argmin(widths))  # first minimum = smallest left endpoint
    return float(x[i]), float(x[i + m - 1])


# -- highest-density region ---------------------------------------------------------

def silverman_bandwidth(x) -> np.ndarray:
    """Per-coordinate rule of thumb ``0.9 min(sd, IQR / 1.34) n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    spread = np.minimum(sd, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, sd)
    return 0.9 * spread * n ** (-0.2)


def _kde(centers, bw, points, chunk=2048):
    """Product Gaussian kernel density of ``centers`` evaluated at ``points``."""
    n, d = centers.shape
    scaled_c = centers / bw
    norm_const = -0.5 * d * np.log(2 * np.pi) - np.log(bw).sum() - np.log(n)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        p = points[start:start + chunk] / bw
        sq = ((p[:, None, :] - scaled_c[None, :, :]) ** 2).sum(axis=2)
        m = sq.min(axis=1)
        out[start:start + chunk] = np.log(np.exp(-0.5 * (sq - m[:, None])).sum(axis=1)) - 0.5 * m
    return np.exp(out + norm_const)


@dataclass
class HpdRegion:
    """Highest quasi-posterior density set of the theta marginal."""

    density_threshold: float
    member_draws: np.ndarray
    level: float
    bandwidth: np.ndarray
    centers: np.ndarray = field(repr=False)
    degenerate: bool = False

    def density(self, theta) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(theta, dtype=float))
        if self.degenerate:
            return np.where(np.all(pts == self.centers[0], axis=1), np.inf, 0.0)
        return _kde(self.centers, self.bandwidth, pts)

    def contains(self, theta) -> bool:
        """Whether theta's estimated density reaches the threshold."""
        if self.degenerate:
            return bool(np.array_equal(np.ravel(theta), self.centers[0]))
        return bool(self.density(theta)[0] >= self.density_threshold)

    @property
    def coverage_fraction(self) -> float:
        return self.member_draws.size / self.centers.shape[0]


def hpd_region(draws, log_post=None, alpha=0.05, bandwidth=None) -> HpdRegion:
    """HPD region ``{theta : p(theta) >= c}`` with ``c`` the alpha-quantile of the
    estimated density over the draws.

    Parameters
    ----------
    draws : PosteriorDraws or (n, k) array of theta draws
    log_post : n-vector, optional
        Log posterior of the draws.  Used only to check alignment and to pick
        the anchor point of a degenerate region; the theta marginal itself is
        estimated by the kernel density.
    alpha : float
    bandwidth : k-vector, optional
        Overrides the Silverman rule.
    """
    _check_alpha(alpha)
    theta = draws.theta_draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if theta.ndim == 1:
        theta = theta[:, None]
    n = theta.shape[0]
    if log_post is None and isinstance(draws, PosteriorDraws):
        log_post = draws.log_post
    if log_post is not None and len(log_post) != n:
        raise ContractError("log_post is not aligned with the draws")
    level = 1.0 - alpha
    bw = silverman_bandwidth(theta) if bandwidth is None else \
        np.broadcast_to(np.asarray(bandwidth, float), (theta.shape[1],)).copy()
    if np.all(theta == theta[0]) or np.any(bw <= 0):
        anchor = int(np.argmax(log_post)) if log_post is not None else 0
        return HpdRegion(np.inf, np.arange(n), level, np.zeros(theta.shape[1]),
                         theta[anchor:anchor + 1].copy(), degenerate=True)
    dens = _kde(theta, bw, theta)
    cut = int(math.floor(alpha * n))
    threshold = float(np.sort(dens)[min(cut, n - 1)])
    members = np.flatnonzero(dens >= threshold)
    return HpdRegion(threshold, members, level, bw, theta.copy())


# -- per-mu intervals ---------------------------------------------------------------

def _projection(draws, eta):
    theta = draws.theta_draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if theta.ndim == 1:
        theta = theta[:, None]
    k = theta.shape[1]
    if isinstance(eta, (int, np.integer)):
        e = np.zeros(k)
        e[eta] = 1.0
        eta = e
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (k,) or not np.any(eta):
        raise ContractError("eta must be a nonzero k-vector or a coordinate index")
    return theta, eta


def posterior_quantile_interval(cond_draws, eta, alpha=0.05) -> IntervalEstimate:
    """Equal-tailed ``[c(alpha/2), c(1 - alpha/2)]`` of ``eta' theta``."""
    _check_alpha(alpha)
    theta, eta = _projection(cond_draws, eta)
    proj = theta @ eta
    lo, hi = np.quantile(proj, [alpha / 2.0, 1.0 - alpha / 2.0])
    return IntervalEstimate(float(lo), float(hi), 1.0 - alpha, "quantile")


def t4_interval(cond_draws, eta, alpha, j_tilde_omega_w, T) -> IntervalEstimate:
    """Sandwich interval from the chain covariance.

    ``J^-1 = T Cov(theta draws)``; the half-width is
    ``z sqrt(eta' J^-1 Jt J^-1 eta / T)`` around the posterior mean of
    ``eta' theta``.
    """
    _check_alpha(alpha)
    theta, eta = _projection(cond_draws, eta)
    k = theta.shape[1]
    cov = np.atleast_2d(np.cov(theta, rowvar=False))
    sv = np.linalg.svd(cov, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], np.finfo(float).tiny):
        raise RankError(f"chain covariance is singular (smallest singular value {sv[-1]:.3g})",
                        float(sv[-1]))
    jt = np.atleast_2d(np.asarray(j_tilde_omega_w, dtype=float))
    if jt.shape != (k, k):
        raise ContractError(f"J tilde must be {k} x {k}")
    j_inv = T * cov
    v = eta @ j_inv @ jt @ j_inv @ eta
    center = float(np.mean(theta @ eta))
    half = norm.ppf(1.0 - alpha / 2.0) * math.sqrt(max(float(v), 0.0) / T)
    return IntervalEstimate(center - half, center + half, 1.0 - alpha, "t4")


def j_tilde(model, data, scheme, theta) -> np.ndarray:
    """``G' W Omega W G`` at theta, the plug-in for :func:`t4_interval`."""
    qp = QuasiPosterior(model, data, scheme)
    theta = np.asarray(theta, dtype=float)
    G = numerical_jacobian(model, data, theta)
    omega = moment_covariance(model, data, theta)
    if isinstance(qp.scheme, ContinuousUpdating):
        WG = np.linalg.solve(omega, G)
        out = G.T @ WG
    else:
        W = qp.weighting_matrix(theta) if not isinstance(qp.scheme, FixedMatrix) else qp.scheme.W
        WG = W @ G
        out = WG.T @ omega @ WG
    return 0.5 * (out + out.T)


# -- mu grids ----------------------------------------------------------------------

def box_mu_grid(lo, hi, max_corners=MAX_BOX_CORNERS):
    """Center, the 2q face midpoints and up to ``max_corners`` corners of a box.

    Corners are enumerated in binary order (lower bound first) and truncated
    at the cap.  Returns ``(grid, description)``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(lo > hi):
        raise ContractError("box needs lo <= hi componentwise")
    q = lo.size
    center = 0.5 * (lo + hi)
    grid = [center]
    for j in range(q):
        for end in (lo, hi):
            p = center.copy()
            p[j] = end[j]
            grid.append(p)
    corners = itertools.islice(itertools.product(*zip(lo, hi)), max_corners)
    n_corners = 0
    for c in corners:
        grid.append(np.array(c, dtype=float))
        n_corners += 1
    desc = {"pattern": "box center + face midpoints + corners", "q": q,
            "n_corners": n_corners, "corner_cap": max_corners,
            "corners_total": 2 ** q, "lo": lo.tolist(), "hi": hi.tolist()}
    return grid, desc


def ellipse_mu_grid(S, radius2):
    """Center and the 2q endpoints of the principal axes of an ellipse."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    vals, vecs = np.linalg.eigh(S)
    q = S.shape[0]
    grid = [np.zeros(q)]
    r = math.sqrt(radius2)
    for j in range(q):
        axis = vecs[:, j] * math.sqrt(max(vals[j], 0.0)) * r
        grid += [-axis, axis]
    return grid, {"pattern": "ellipse center + principal axis endpoints", "q": q,
                  "radius2": float(radius2)}


def support_mu_grid(prior, max_corners=MAX_BOX_CORNERS):
    """Automatic grid on the boundary of a bounded mu support."""
    if isinstance(prior, UniformBox):
        return box_mu_grid(prior.lo, prior.hi, max_corners)
    if isinstance(prior, UniformEllipse):
        return ellipse_mu_grid(prior.S, prior.radius2)
    raise ContractError("automatic mu grids need a bounded support (UniformBox or UniformEllipse)")


def _dedupe(grid):
    out, seen = [], set()
    for p in grid:
        key = tuple(np.asarray(p, dtype=float).ravel().tolist())
        if key not in seen:
            seen.add(key)
            out.append(np.array(key))
    return out


def _union_chunk(args):
    model, data, scheme, theta_prior, mus, seeds, cfg = args
    return _run_points(model, data, scheme, theta_prior, mus, seeds, cfg)


def _run_points(model, data, scheme, theta_prior, mus, seeds, cfg):
    """Conditional chains at ``mus``; chains whose start fails come back None."""
    try:
        return sample_conditional_batch(model, data, scheme, theta_prior, mus, cfg, seeds)
    except InitializationError:
        out = []
        for m, s in zip(mus, seeds):
            try:
                out.append(sample_conditional_batch(model, data, scheme, theta_prior, [m], cfg, [s])[0])
            except InitializationError:
                out.append(None)
        return out


def union_interval(model, data, scheme=None, theta_prior=None, mu_grid=None, eta=0,
                   alpha=0.05, per_mu_method="t3", cfg: ChainConfig | None = None,
                   support=None, workers=1, j_tilde_fn=None) -> IntervalEstimate:
    """Union over a mu grid of per-mu conditional intervals.

    Parameters
    ----------
    mu_grid : list of q-vectors, or None
        ``None`` builds an automatic grid on the boundary of ``support``.
        Exact duplicates are dropped before seeding.
    eta : int or k-vector
    per_mu_method : {"t3", "t4"}
        Posterior quantile interval, or the chain-covariance sandwich
        interval with ``J tilde`` evaluated at the conditional posterior mean.
    support : MuPrior, optional
        Bounded support; grid points outside it are rejected.
    workers : int
        Grid chunks are spread over this many processes.  Chain ``i`` always
        uses seed ``cfg.seed XOR i``, and the result does not depend on
        the worker count.

    Returns
    -------
    IntervalEstimate
        ``details`` holds the per-mu intervals, seeds, the grid description
        and any grid points skipped because no valid start was found.
    """
    _check_alpha(alpha)
    if per_mu_method not in ("t3", "t4"):
        raise ContractError("per_mu_method must be 't3' or 't4'")
    cfg = ChainConfig() if cfg is None else cfg
    grid_desc = {"pattern": "user list"}
    if mu_grid is None:
        if support is None:
            raise ContractError("need mu_grid or a bounded support")
        mu_grid, grid_desc = support_mu_grid(support)
    grid = _dedupe(mu_grid)
    if not grid:
        raise ContractError("mu grid is empty")
    if support is not None:
        for p in grid:
            if not support.in_support(p):
                raise ContractError(f"grid point {p.tolist()} lies outside the mu support")
    seeds = [int(cfg.seed) ^ i for i in range(len(grid))]

    # chunks have a fixed size so batched floating point does not depend on workers
    workers = max(1, int(workers))
    jobs = [(model, data, scheme, theta_prior, grid[i:i + UNION_CHUNK], seeds[i:i + UNION_CHUNK], cfg)
            for i in range(0, len(grid), UNION_CHUNK)]
    if workers == 1 or len(jobs) == 1:
        chains = [c for job in jobs for c in _union_chunk(job)]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            chains = [c for part in ex.map(_union_chunk, jobs) for c in part]

    per_mu, skipped = [], []
    lo, hi = np.inf, -np.inf
    for i, (p, draws) in enumerate(zip(grid, chains)):
        if draws is None:
            skipped.append({"index": i, "mu": p.tolist()})
            continue
        try:
            if per_mu_method == "t3":
                iv = posterior_quantile_interval(draws, eta, alpha)
            else:
                center = draws.theta_draws.mean(axis=0)
                jt = (j_tilde_fn or (lambda th: j_tilde(model, data, scheme, th)))(center)
                iv = t4_interval(draws, eta, alpha, jt, data.T)
        except PgmmError as exc:
            raise type(exc)(f"grid point {i} (mu={p.tolist()}): {exc}") from exc
        per_mu.append({"index": i, "mu": p.tolist(), "lo": iv.lo, "hi": iv.hi,
                       "seed": seeds[i], "accept_rate": draws.accept_rate})
        lo, hi = min(lo, iv.lo), max(hi, iv.hi)
    if not per_mu:
        raise InitializationError("no grid point produced a valid conditional chain")
    method = "t3_union" if per_mu_method == "t3" else "t4_union"
    return IntervalEstimate(float(lo), float(hi), 1.0 - alpha, method, len(grid), {
        "per_mu": per_mu, "skipped": skipped, "grid": grid_desc,
        "base_seed": int(cfg.seed), "seed_rule": "base_seed XOR grid index",
    })


# -- decision rule ------------------------------------------------------------------

def bayes_decision(draws, loss, d0=None, candidates=None, bounds=None):
    """Decision minimizing the average of ``loss(theta, mu, d)`` over the draws.

    ``loss`` is called with the (n, k) theta matrix, the (n, q) mu matrix and
    one decision, and returns n losses.  With ``candidates`` the minimum is
    taken over that finite set; otherwise Nelder-Mead runs from ``d0``
    (default: the posterior mean of theta).
    """
    theta, mu = draws.theta_draws, draws.mu_draws

    def risk(d):
        return float(np.mean(loss(theta, mu, np.asarray(d, dtype=float))))

    if candidates is not None:
        cands = [np.asarray(c, dtype=float) for c in candidates]
        if not cands:
            raise ContractError("candidate set is empty")
        risks = [risk(c) for c in cands]
        return cands[int(np.argmin(risks))]
    x0 = theta.mean(axis=0) if d0 is None else np.asarray(d0, dtype=float)
    res = optimize.minimize(risk, np.atleast_1d(x0), method="Nelder-Mead", bounds=bounds,
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20_000})
    return res.x
