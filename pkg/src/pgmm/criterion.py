"""GMM-type criterion and the unnormalized log quasi-posterior.

``Q_T(theta, mu) = -T (m(theta) - mu)' W (m(theta) - mu)`` with ``W`` either
the continuously updated inverse moment covariance, a fixed matrix, or the
inverse covariance frozen at a reference point.  The log quasi-posterior adds
the log priors to ``Q_T / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError
from .moment_model import (
    Dataset,
    MomentModel,
    _check_finite,
    default_ridge,
    moment_covariance,
)
from .priors import FlatOnBox

__all__ = [
    "ContinuousUpdating",
    "FixedMatrix",
    "PluginAtPoint",
    "QuasiPosterior",
    "q_criterion",
    "log_quasi_posterior",
]


@dataclass(frozen=True)
class ContinuousUpdating:
    """W = inverse moment covariance, recomputed at every theta."""

    ridge: float | None = None


@dataclass(frozen=True, eq=False)
class FixedMatrix:
    """A user-supplied positive-definite weighting matrix."""

    W: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape[0] != W.shape[1] or not np.allclose(W, W.T):
            raise ContractError("W must be a symmetric square matrix")
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError:
            raise ContractError("W must be positive definite") from None
        object.__setattr__(self, "W", W)


@dataclass(frozen=True, eq=False)
class PluginAtPoint:
    """Inverse moment covariance evaluated once at ``theta_ref``."""

    theta_ref: np.ndarray
    ridge: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta_ref", np.atleast_1d(np.asarray(self.theta_ref, float)))


def _chol(a, what):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite after regularization") from None


class QuasiPosterior:
    """Evaluator for ``Q_T`` and the log quasi-posterior on one dataset.

    The theta-dependent pieces (sample moments and the factor of the
    weighting matrix) are computed by :meth:`theta_terms` and can be reused
    across many values of mu, which is how the sampler's mu block stays
    cheap.
    """

    def __init__(self, model: MomentModel, data: Dataset, scheme=None,
                 theta_prior=None, mu_prior=None):
        model.check()
        self.model = model
        self.data = data
        self.T = data.T
        self.scheme = ContinuousUpdating() if scheme is None else scheme
        self.theta_prior = FlatOnBox(model.theta_box) if theta_prior is None else theta_prior
        if isinstance(self.theta_prior, FlatOnBox) and self.theta_prior.box is None:
            self.theta_prior = self.theta_prior.bind(model.theta_box)
        self.mu_prior = mu_prior
        self._g = model.contribution_fn(data)
        self._gb = None
        self._stats = None
        self._avg = np.full(data.T, 1.0 / data.T)
        self._lo = model.theta_box[:, 0]
        self._hi = model.theta_box[:, 1]
        if mu_prior is not None and mu_prior.dim != model.q:
            raise ContractError(f"mu prior has dimension {mu_prior.dim}, model has q={model.q}")
        if getattr(self.theta_prior, "dim", model.k) != model.k:
            raise ContractError("theta prior dimension does not match k")

        # factor F with r' W r = |F r|^2: F = L' for W = L L', and for
        # W = inv(Omega) with Omega = L L', F = inv(L) (triangular)
        self._fixed = None
        if isinstance(self.scheme, FixedMatrix):
            if self.scheme.W.shape != (model.q, model.q):
                raise ContractError("fixed W has the wrong dimension")
            self._fixed = _chol(self.scheme.W, "W").T
        elif isinstance(self.scheme, PluginAtPoint):
            omega = moment_covariance(model, data, self.scheme.theta_ref, self.scheme.ridge)
            self._fixed = np.linalg.inv(_chol(omega, "plug-in moment covariance"))
        elif not isinstance(self.scheme, ContinuousUpdating):
            raise ContractError(f"unknown weighting scheme {self.scheme!r}")

    # -- pieces ---------------------------------------------------------------
    def in_box(self, theta) -> bool:
        return bool(np.all(theta >= self._lo) and np.all(theta <= self._hi))

    def theta_terms(self, theta):
        """Return ``(m_hat, factor)`` at theta; see :meth:`quad`."""
        g = self._g(theta)
        mbar = self._avg @ g
        if not np.isfinite(mbar).all():
            _check_finite(g)
        if self._fixed is not None:
            return mbar, self._fixed
        dev = g - mbar
        omega = dev.T @ dev / self.T
        ridge = self.scheme.ridge
        if ridge is None:
            ridge = default_ridge(omega)
        omega.flat[:: self.model.q + 1] += ridge
        return mbar, np.linalg.inv(_chol(omega, "moment covariance"))

    def theta_terms_batch(self, thetas):
        """Vectorized :meth:`theta_terms` over the rows of ``thetas``.

        Returns ``(mbar, factors, ok)`` with shapes (B, q), (B, q, q) and (B,).
        ``ok`` is False where the moment covariance could not be factored;
        those factors are left as NaN.
        """
        thetas = np.atleast_2d(thetas)
        B, q = thetas.shape[0], self.model.q
        ok = np.ones(B, dtype=bool)
        if self._stats is None:
            fast = getattr(self.model, "batch_moment_stats", None)
            self._stats = fast(self.data) if fast is not None else False
            self._gb = self.model.batch_contribution_fn(self.data)
        if self._stats:
            mbar, second = self._stats(thetas)
            if not np.isfinite(second).all():
                for gi in self._gb(thetas):
                    _check_finite(gi)
            if self._fixed is not None:
                return mbar, np.broadcast_to(self._fixed, (B, q, q)), ok
            omega = second - mbar[:, :, None] * mbar[:, None, :]
        else:
            g = self._gb(thetas)
            mbar = np.einsum("t,btq->bq", self._avg, g)
            if not np.isfinite(mbar).all():
                for gi in g:
                    _check_finite(gi)
            if self._fixed is not None:
                return mbar, np.broadcast_to(self._fixed, (B, q, q)), ok
            dev = g - mbar[:, None, :]
            omega = np.matmul(dev.transpose(0, 2, 1), dev) / self.T
        ridge = self.scheme.ridge
        diag = omega.reshape(B, q * q)[:, :: q + 1]
        if ridge is None:
            tr = diag.sum(axis=1)
            ridge = np.where(tr > 0, 1e-8 * tr / q, 1e-12)[:, None]
        omega.reshape(B, q * q)[:, :: q + 1] = diag + ridge
        try:
            chol = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            chol = np.full_like(omega, np.nan)
            for b in range(B):
                try:
                    chol[b] = np.linalg.cholesky(omega[b])
                except np.linalg.LinAlgError:
                    ok[b] = False
            factors = np.full_like(omega, np.nan)
            if ok.any():
                factors[ok] = np.linalg.inv(chol[ok])
            return mbar, factors, ok
        return mbar, np.linalg.inv(chol), ok

    @staticmethod
    def quad_batch(resid, factors) -> np.ndarray:
        z = np.einsum("bij,bj->bi", factors, resid)
        return np.einsum("bi,bi->b", z, z)

    @staticmethod
    def quad(resid, factor) -> float:
        """``resid' W resid`` for a factor returned by :meth:`theta_terms`."""
        z = factor @ resid
        return float(z @ z)

    def weighting_matrix(self, theta) -> np.ndarray:
        """The q x q matrix W used at theta."""
        if isinstance(self.scheme, FixedMatrix):
            return self.scheme.W
        _, factor = self.theta_terms(theta)
        return factor.T @ factor

    # -- criterion ------------------------------------------------------------
    def q_criterion(self, theta, mu) -> float:
        theta = np.asarray(theta, dtype=float)
        mbar, factor = self.theta_terms(theta)
        return -self.T * self.quad(mbar - np.asarray(mu, dtype=float), factor)

    def log_theta_prior(self, theta) -> float:
        if not self.in_box(theta):
            return -np.inf
        return self.theta_prior.log_density(theta)

    def log_posterior(self, theta, mu) -> float:
        """``Q_T / 2 + log pi(theta) + log pi(mu)``; ``-inf`` off the support."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if theta.shape != (self.model.k,) or mu.shape != (self.model.q,):
            raise ContractError("theta or mu has the wrong dimension")
        lp = self.log_theta_prior(theta)
        if self.mu_prior is not None:
            lp += self.mu_prior.log_density(mu)
        if lp == -np.inf:
            return -np.inf
        return 0.5 * self.q_criterion(theta, mu) + lp


def q_criterion(model, data, scheme, theta, mu) -> float:
    """``Q_T(theta, mu)``, always <= 0."""
    return QuasiPosterior(model, data, scheme).q_criterion(theta, mu)


def log_quasi_posterior(model, data, scheme, theta_prior, mu_prior, theta, mu) -> float:
    """Unnormalized log quasi-posterior at ``(theta, mu)``."""
    return QuasiPosterior(model, data, scheme, theta_prior, mu_prior).log_posterior(theta, mu)
