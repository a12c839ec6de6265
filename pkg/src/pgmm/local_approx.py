"""Gaussian approximation to the quasi-posterior under a local Gaussian prior.

With ``mu ~ N(mu0, Lambda / T)`` and a flat prior on theta, the quasi-posterior
for theta is approximately ``N(theta_hat, V / T)`` where ``theta_hat``
minimizes ``(m(theta) - mu0)' A (m(theta) - mu0)`` with
``A = (Omega + Lambda)^-1`` and ``V = (G' A G)^-1``.  The frequentist
sampling variance of ``theta_hat`` is the sandwich ``V G' A Omega A G V``,
which is never larger than ``V``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import norm, qmc

from .errors import ContractError, NumericalError, OptimizationError, RankError
from .moment_model import (
    Dataset,
    MomentModel,
    covariance_from_contributions,
    moment_covariance,
    numerical_jacobian,
)

__all__ = [
    "LocalApprox",
    "OptConfig",
    "as_lambda",
    "compute_a_hat",
    "gmm_objective",
    "gmm_estimate",
    "gaussian_approx",
    "local_interval",
]


def as_lambda(lam, q) -> np.ndarray:
    """Accept a scalar, a diagonal vector or a full q x q matrix."""
    if lam is None:
        return np.zeros((q, q))
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        return float(lam) * np.eye(q)
    if lam.ndim == 1:
        if lam.shape[0] != q:
            raise ContractError(f"Lambda diagonal needs {q} entries")
        return np.diag(lam)
    if lam.shape != (q, q):
        raise ContractError(f"Lambda must be {q} x {q}")
    return lam


def _factor(a, what):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None


def compute_a_hat(omega_hat, lam) -> np.ndarray:
    """Misspecification-adjusted weighting matrix ``(Omega + Lambda)^-1``.

    By the Woodbury identity this equals
    ``Omega^-1 - Omega^-1 (Lambda^-1 + Omega^-1)^-1 Omega^-1``; the solve
    against a Cholesky factor of ``Omega + Lambda`` is far better
    conditioned than the three-inverse form.
    """
    omega_hat = np.atleast_2d(np.asarray(omega_hat, dtype=float))
    q = omega_hat.shape[0]
    lam = as_lambda(lam, q)
    _factor(omega_hat, "Omega")
    chol = _factor(omega_hat + lam, "Omega + Lambda")
    inv_l = np.linalg.solve(chol, np.eye(q))
    a_hat = inv_l.T @ inv_l
    return 0.5 * (a_hat + a_hat.T)


@dataclass
class OptConfig:
    """Optimizer settings for :func:`gmm_estimate`.

    ``method`` is ``"auto"`` (quasi-Newton for smooth models, Nelder-Mead
    otherwise), ``"quasi-newton"`` or ``"nelder-mead"``.  ``weighting`` is
    ``"continuous"`` (A recomputed at every theta) or ``"frozen"`` (A fixed
    at an identity-weighted pilot estimate).  ``extra_starts`` are tried in
    addition to the Latin-hypercube starts, as is the model's
    ``pilot_theta(data)`` when it defines one.
    """

    n_starts: int = 5
    tol: float = 1e-8
    max_iter: int = 10_000
    method: str = "auto"
    weighting: str = "continuous"
    seed: int = 0
    extra_starts: tuple = ()


def gmm_objective(model, data, lam, mu0, a_fixed=None):
    """Return ``theta -> (m(theta) - mu0)' A_theta (m(theta) - mu0)``."""
    lam = as_lambda(lam, model.q)
    mu0 = np.zeros(model.q) if mu0 is None else np.asarray(mu0, dtype=float)
    g_fn = model.contribution_fn(data)

    def objective(theta):
        g = g_fn(theta)
        r = g.mean(axis=0) - mu0
        if not np.all(np.isfinite(r)):
            return np.inf
        if a_fixed is not None:
            return float(r @ a_fixed @ r)
        omega = covariance_from_contributions(g)
        try:
            chol = np.linalg.cholesky(omega + lam)
        except np.linalg.LinAlgError:
            return np.inf
        z = np.linalg.solve(chol, r)
        return float(z @ z)

    stats_fn = getattr(model, "batch_moment_stats", None)
    if stats_fn is not None:
        stats_fn = stats_fn(data)
    else:
        gb_fn = model.batch_contribution_fn(data)

        def stats_fn(thetas):
            g = gb_fn(thetas)
            return g.mean(axis=1), np.einsum("bti,btj->bij", g, g) / g.shape[1]

    def batch(thetas):
        """Objective at each row of ``thetas``; same formula as ``objective``."""
        mbar, raw = stats_fn(thetas)
        r = mbar - mu0
        out = np.full(len(thetas), np.inf)
        ok = np.all(np.isfinite(r), axis=1) & np.all(np.isfinite(raw), axis=(1, 2))
        if a_fixed is not None:
            out[ok] = np.einsum("bi,ij,bj->b", r[ok], a_fixed, r[ok])
            return out
        om = raw[ok] - mbar[ok, :, None] * mbar[ok, None, :]
        om = 0.5 * (om + np.swapaxes(om, 1, 2))
        ridge = 1e-8 * np.trace(om, axis1=1, axis2=2) / model.q
        ridge = np.where(ridge > 0, ridge, 1e-12)
        mats = om + ridge[:, None, None] * np.eye(model.q) + lam
        idx = np.flatnonzero(ok)
        try:
            z = np.linalg.solve(np.linalg.cholesky(mats), r[ok][:, :, None])[:, :, 0]
            out[idx] = np.einsum("bi,bi->b", z, z)
        except np.linalg.LinAlgError:
            for i, b in enumerate(idx):
                try:
                    zb = np.linalg.solve(np.linalg.cholesky(mats[i]), r[b])
                except np.linalg.LinAlgError:
                    continue
                out[b] = zb @ zb
        return out

    objective.batch = batch
    return objective


def _value_and_forward_gradient(objective, lo, hi):
    """``theta -> (f, grad)`` with one batched call per gradient.

    Forward differences with step ``sqrt(eps) max(1, |theta_j|)``, taken
    backwards when the forward point would leave the box.
    """
    h0 = np.sqrt(np.finfo(float).eps)

    def fg(theta):
        theta = np.asarray(theta, dtype=float)
        k = theta.size
        h = h0 * np.maximum(1.0, np.abs(theta))
        h = np.where(theta + h > hi, -h, h)
        pts = np.vstack([theta, theta + np.diag(h)])
        vals = objective.batch(np.clip(pts, lo, hi))
        f = vals[0]
        if not np.isfinite(f):
            return np.inf, np.zeros(k)
        return f, (vals[1:] - f) / h

    return fg


def _starts(model, data, cfg):
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    unit = qmc.LatinHypercube(d=model.k, seed=cfg.seed).random(cfg.n_starts)
    starts = list(lo + unit * (hi - lo))
    extra = [np.asarray(s, dtype=float) for s in cfg.extra_starts]
    pilot = getattr(model, "pilot_theta", None)
    if pilot is not None:
        try:
            extra.append(np.asarray(pilot(data), dtype=float))
        except (np.linalg.LinAlgError, ValueError):
            pass
    starts += [np.clip(s, lo, hi) for s in extra if s.shape == (model.k,) and np.all(np.isfinite(s))]
    return starts


def _minimize(objective, model, data, cfg: OptConfig):
    method = cfg.method
    if method == "auto":
        method = "quasi-newton" if model.smooth else "nelder-mead"
    bounds = [tuple(b) for b in model.theta_box]
    width = model.theta_box[:, 1] - model.theta_box[:, 0]
    results = []
    for x0 in _starts(model, data, cfg):
        if method == "quasi-newton":
            fun, jac = objective, None
            if hasattr(objective, "batch"):
                fun, jac = _value_and_forward_gradient(objective, model.theta_box[:, 0],
                                                       model.theta_box[:, 1]), True
            res = optimize.minimize(
                fun, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
                options={"gtol": cfg.tol, "ftol": 1e-15, "maxiter": cfg.max_iter},
            )
            exhausted = res.nit >= cfg.max_iter
        elif method == "nelder-mead":
            simplex = np.vstack([x0] + [x0 + np.eye(model.k)[j] * width[j] / 10.0
                                        for j in range(model.k)])
            simplex = np.clip(simplex, model.theta_box[:, 0], model.theta_box[:, 1])
            res = optimize.minimize(
                objective, x0, method="Nelder-Mead", bounds=bounds,
                options={"xatol": cfg.tol, "fatol": cfg.tol, "maxiter": cfg.max_iter,
                         "maxfev": 2 * cfg.max_iter, "initial_simplex": simplex,
                         "adaptive": model.k > 2},
            )
            exhausted = not res.success
        else:
            raise ContractError(f"unknown optimizer {cfg.method!r}")
        x = np.clip(res.x, model.theta_box[:, 0], model.theta_box[:, 1])
        results.append((float(objective(x)), tuple(x), not exhausted))
    ok = [r for r in results if r[2] and np.isfinite(r[0])]
    best = min(results, key=lambda r: (r[0], r[1]))
    if not ok:
        raise OptimizationError("no optimizer start converged", np.array(best[1]), best[0])
    fun, x, _ = min(ok, key=lambda r: (r[0], r[1]))
    return np.array(x), fun


def gmm_estimate(model: MomentModel, data: Dataset, lam, mu0=None, opt_cfg=None,
                 full_output=False):
    """GMM estimator weighted by ``A_theta = (Omega(theta) + Lambda)^-1``.

    Parameters
    ----------
    lam : scalar, vector or matrix, or None
        Local prior scale Lambda.  ``None`` gives efficient (CUE) GMM.
    mu0 : array_like, optional
        Prior center for mu; the moments are shifted by it.
    opt_cfg : OptConfig, optional

    Returns
    -------
    theta_hat : ndarray
        Best point over all starts (ties broken by the lexicographically
        smallest theta).  With ``full_output`` a ``(theta_hat, objective)``
        pair.
    """
    cfg = OptConfig() if opt_cfg is None else opt_cfg
    if cfg.weighting == "frozen":
        pilot, _ = _minimize(gmm_objective(model, data, None, mu0, np.eye(model.q)), model, data, cfg)
        a_fixed = compute_a_hat(moment_covariance(model, data, pilot), as_lambda(lam, model.q))
        objective = gmm_objective(model, data, lam, mu0, a_fixed)
    elif cfg.weighting == "continuous":
        objective = gmm_objective(model, data, lam, mu0)
    else:
        raise ContractError(f"unknown weighting option {cfg.weighting!r}")
    theta_hat, fun = _minimize(objective, model, data, cfg)
    return (theta_hat, fun) if full_output else theta_hat


@dataclass
class LocalApprox:
    """Gaussian approximation ``N(theta_hat, V / T)`` and its ingredients."""

    theta_hat: np.ndarray
    V: np.ndarray
    V_bar: np.ndarray
    A_hat: np.ndarray
    G_hat: np.ndarray
    T: int
    omega_hat: np.ndarray = field(repr=False)
    parameter_names: tuple = ()

    @property
    def efficient_variance(self) -> np.ndarray:
        """``(G' Omega^-1 G)^-1``, the efficient-GMM variance scale."""
        h = self.G_hat.T @ np.linalg.solve(self.omega_hat, self.G_hat)
        return np.linalg.inv(0.5 * (h + h.T))

    def intervals(self, alpha=0.05):
        return [local_interval(self, j, alpha) for j in range(len(self.theta_hat))]

    def to_dict(self, alpha=0.05) -> dict:
        names = self.parameter_names or tuple(f"theta_{j + 1}" for j in range(len(self.theta_hat)))
        return {
            "theta_hat": self.theta_hat.tolist(),
            "V": self.V.tolist(),
            "V_bar": self.V_bar.tolist(),
            "T": self.T,
            "level": 1.0 - alpha,
            "intervals": {n: list(iv) for n, iv in zip(names, self.intervals(alpha))},
        }

    def to_json(self, alpha=0.05, **kwargs) -> str:
        return json.dumps(self.to_dict(alpha), **kwargs)


def gaussian_approx(model: MomentModel, data: Dataset, lam, mu0=None, theta_hat=None,
                    opt_cfg=None) -> LocalApprox:
    """Build the local Gaussian approximation at ``theta_hat``.

    ``theta_hat`` defaults to :func:`gmm_estimate` with the same inputs.
    """
    lam = as_lambda(lam, model.q)
    if theta_hat is None:
        theta_hat = gmm_estimate(model, data, lam, mu0, opt_cfg)
    theta_hat = np.asarray(theta_hat, dtype=float)
    G = numerical_jacobian(model, data, theta_hat)
    omega = moment_covariance(model, data, theta_hat)
    A = compute_a_hat(omega, lam)
    H = G.T @ A @ G
    H = 0.5 * (H + H.T)
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], np.finfo(float).tiny):
        raise RankError(f"G'AG is numerically singular (smallest singular value {sv[-1]:.3g})",
                        float(sv[-1]))
    V = np.linalg.inv(H)
    V = 0.5 * (V + V.T)
    V_bar = V @ G.T @ A @ omega @ A @ G @ V
    V_bar = 0.5 * (V_bar + V_bar.T)
    names = tuple(getattr(model, "parameter_names", ()))
    return LocalApprox(theta_hat, V, V_bar, A, G, data.T, omega, names)


def local_interval(approx: LocalApprox, direction, alpha=0.05):
    """``eta' theta_hat -/+ z_{1-alpha/2} sqrt(eta' V eta / T)``.

    ``direction`` is a k-vector eta or an integer coordinate index.
    """
    k = len(approx.theta_hat)
    if isinstance(direction, (int, np.integer)):
        eta = np.zeros(k)
        eta[direction] = 1.0
    else:
        eta = np.asarray(direction, dtype=float)
    if eta.shape != (k,) or not np.any(eta):
        raise ContractError("direction must be a nonzero k-vector")
    center = float(eta @ approx.theta_hat)
    half = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(float(eta @ approx.V @ eta) / approx.T)
    return center - half, center + half
