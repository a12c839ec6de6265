"""Prior families for the misspecification vector mu and the parameter theta.

Every family is an immutable dataclass with ``log_density``, ``in_support``,
``sample`` and a ``scale`` vector used to seed random-walk proposal sizes.
The two data-driven builders reproduce the linear-IV and IVQR prior
calibrations: a Gaussian or elliptical prior scaled by the instrument second
moments, and a box/Gaussian prior scaled by a simulated moment bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, pi

import numpy as np
from scipy.special import gammainc

from .errors import ContractError
from .moment_model import Dataset

__all__ = [
    "Dogmatic",
    "Gaussian",
    "GaussianLocal",
    "UniformBox",
    "UniformEllipse",
    "FlatOnBox",
    "GaussianTheta",
    "log_density",
    "sample",
    "chi2_quantile",
    "build_linear_iv_prior",
    "build_ivqr_delta_prior",
]

LOG_2PI = log(2.0 * pi)


def _vec(x, name="x"):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ContractError(f"{name} must be a vector")
    return x


def _cholesky(cov, what):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ContractError(f"{what} must be square")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14 * np.abs(cov).max(initial=1.0)):
        raise ContractError(f"{what} must be symmetric")
    try:
        return cov, np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        raise ContractError(f"{what} is not positive definite") from None


class _Prior:
    dim: int

    is_dogmatic = False

    def _check(self, x):
        x = _vec(x)
        if x.shape[0] != self.dim:
            raise ContractError(f"expected a vector of length {self.dim}, got {x.shape[0]}")
        return x

    def _logpdf(self, x):
        """log_density without argument checking (hot loops only)."""
        return self.log_density(x)


class _GaussianBase(_Prior):
    """Shared Gaussian machinery; subclasses set ``mean`` and ``cov``."""

    def _setup(self, mean, cov, what):
        mean = _vec(mean, "mean")
        cov, chol = _cholesky(cov, what)
        if cov.shape[0] != mean.shape[0]:
            raise ContractError(f"{what} does not match the mean dimension")
        object.__setattr__(self, "_mean", mean)
        object.__setattr__(self, "_cov", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_ichol", np.linalg.inv(chol))
        object.__setattr__(self, "dim", mean.shape[0])
        half_logdet = float(np.log(np.diag(chol)).sum())
        object.__setattr__(self, "_lognorm", -0.5 * self.dim * LOG_2PI - half_logdet)

    @property
    def mean(self):
        return self._mean

    @property
    def cov(self):
        return self._cov

    def log_density(self, x):
        return self._logpdf(self._check(x))

    def _logpdf(self, x):
        z = self._ichol @ (x - self._mean)
        return self._lognorm - 0.5 * float(z @ z)

    def in_support(self, x):
        return True

    def sample(self, rng):
        return self._mean + self._chol @ rng.standard_normal(self.dim)

    def scale(self):
        return np.sqrt(np.diag(self._cov))

    def entropy(self):
        return 0.5 * self.dim * (1.0 + LOG_2PI) + float(np.log(np.diag(self._chol)).sum())


@dataclass(frozen=True, eq=False)
class Dogmatic(_Prior):
    """Point mass at ``mu0``: the moments are taken as known."""

    mu0: np.ndarray
    is_dogmatic = True

    def __post_init__(self):
        object.__setattr__(self, "mu0", _vec(self.mu0, "mu0"))
        object.__setattr__(self, "dim", self.mu0.shape[0])

    @property
    def mean(self):
        return self.mu0

    def log_density(self, x):
        x = self._check(x)
        return 0.0 if np.array_equal(x, self.mu0) else -np.inf

    def in_support(self, x):
        return bool(np.array_equal(self._check(x), self.mu0))

    def sample(self, rng):
        return self.mu0.copy()

    def scale(self):
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class Gaussian(_GaussianBase):
    """N(mu0, Sigma)."""

    mu0: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self._setup(self.mu0, self.Sigma, "Sigma")
        object.__setattr__(self, "mu0", self.mean)
        object.__setattr__(self, "Sigma", self.cov)


@dataclass(frozen=True, eq=False)
class GaussianLocal(_GaussianBase):
    """Local prior N(mu0, Lambda / T) whose spread shrinks with the sample size."""

    mu0: np.ndarray
    Lambda: np.ndarray
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ContractError("T must be positive")
        lam = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        self._setup(self.mu0, lam / self.T, "Lambda")
        object.__setattr__(self, "mu0", self.mean)
        object.__setattr__(self, "Lambda", lam)


@dataclass(frozen=True, eq=False)
class UniformBox(_Prior):
    """Uniform on the box [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape or np.any(lo >= hi) or not np.all(np.isfinite(lo + hi)):
            raise ContractError("UniformBox needs finite lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "dim", lo.shape[0])
        object.__setattr__(self, "_logvol", float(np.log(hi - lo).sum()))

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def in_support(self, x):
        x = self._check(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def log_density(self, x):
        return -self._logvol if self.in_support(x) else -np.inf

    def sample(self, rng):
        return self.lo + (self.hi - self.lo) * rng.random(self.dim)

    def scale(self):
        return (self.hi - self.lo) / np.sqrt(12.0)


@dataclass(frozen=True, eq=False)
class UniformEllipse(_Prior):
    """Uniform on ``{S^(1/2) c : c'c <= radius2}``."""

    S: np.ndarray
    radius2: float

    def __post_init__(self):
        S, chol = _cholesky(self.S, "S")
        if not self.radius2 > 0:
            raise ContractError("radius2 must be positive")
        q = S.shape[0]
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "dim", q)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_sqrt", (vecs * np.sqrt(vals)) @ vecs.T)
        # log volume = log|S|^(1/2) + log(unit-ball volume) + (q/2) log radius2
        logvol = (float(np.log(np.diag(chol)).sum()) + 0.5 * q * log(pi)
                  - lgamma(0.5 * q + 1.0) + 0.5 * q * log(self.radius2))
        object.__setattr__(self, "_logvol", logvol)

    @property
    def mean(self):
        return np.zeros(self.dim)

    def in_support(self, x):
        z = np.linalg.solve(self._chol, self._check(x))
        return bool(z @ z <= self.radius2)

    def log_density(self, x):
        return -self._logvol if self.in_support(x) else -np.inf

    def sample(self, rng):
        z = rng.standard_normal(self.dim)
        radius = np.sqrt(self.radius2) * rng.random() ** (1.0 / self.dim)
        return self._sqrt @ (radius * z / np.linalg.norm(z))

    def scale(self):
        # uniform on a ball of radius r has covariance r^2 / (q + 2) I
        return np.sqrt(np.diag(self.S) * self.radius2 / (self.dim + 2.0))


@dataclass(frozen=True, eq=False)
class FlatOnBox(_Prior):
    """Constant prior on the parameter box (normalized when the box is known)."""

    box: np.ndarray | None = None

    def __post_init__(self):
        if self.box is not None:
            box = np.asarray(self.box, dtype=float).reshape(-1, 2)
            object.__setattr__(self, "box", box)
            object.__setattr__(self, "dim", box.shape[0])
            object.__setattr__(self, "_logvol", float(np.log(box[:, 1] - box[:, 0]).sum()))

    def bind(self, box) -> "FlatOnBox":
        return FlatOnBox(box)

    def in_support(self, x):
        if self.box is None:
            return True
        x = self._check(x)
        return bool(np.all(x >= self.box[:, 0]) and np.all(x <= self.box[:, 1]))

    def log_density(self, x):
        if self.box is None:
            return 0.0
        return -self._logvol if self.in_support(x) else -np.inf

    def sample(self, rng):
        lo, hi = self.box[:, 0], self.box[:, 1]
        return lo + (hi - lo) * rng.random(self.dim)

    @property
    def mean(self):
        return self.box.mean(axis=1)

    def scale(self):
        return (self.box[:, 1] - self.box[:, 0]) / np.sqrt(12.0)


@dataclass(frozen=True, eq=False)
class GaussianTheta(_GaussianBase):
    """N(theta0, Sigma) prior on theta (restricted to the box by the criterion)."""

    theta0: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self._setup(self.theta0, self.Sigma, "Sigma")
        object.__setattr__(self, "theta0", self.mean)
        object.__setattr__(self, "Sigma", self.cov)


def log_density(prior, x) -> float:
    """Log prior density at ``x``; ``-inf`` outside the support."""
    return prior.log_density(x)


def sample(prior, rng) -> np.ndarray:
    """One draw from ``prior`` using the caller's generator."""
    return prior.sample(rng)


def chi2_quantile(p, df, tol=1e-12) -> float:
    """Quantile of the chi-square distribution by bisection on its CDF.

    The CDF is the regularized lower incomplete gamma ``P(df/2, x/2)``.
    """
    if not 0.0 < p < 1.0 or df <= 0:
        raise ContractError("need 0 < p < 1 and df > 0")
    cdf = lambda x: gammainc(0.5 * df, 0.5 * x)
    lo, hi = 0.0, max(1.0, float(df))
    while cdf(hi) < p:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _instrument_matrix(data: Dataset, cols, constant):
    parts = [np.ones((data.T, 1))] if constant else []
    parts.append(data.columns(list(cols)))
    w = np.hstack(parts)
    if w.shape[1] == 0:
        raise ContractError("no instrument columns given")
    return w


def build_linear_iv_prior(data: Dataset, instrument_cols, omega_d, c=1.0,
                          shape="gaussian", constant=False):
    """Prior on mu calibrated by instrument second moments.

    Parameters
    ----------
    data : Dataset
    instrument_cols : sequence of str
        Columns of the moment instrument vector w_t, in moment order.
    omega_d : array_like
        Diagonal (vector) or full q x q matrix of squared direct-effect bounds.
    c : float
        Positive scale multiplying the covariance.
    shape : {"gaussian", "uniform"}
        Gaussian N(0, c Sigma_T Omega_d Sigma_T') or the uniform prior on its
        68% highest-density ellipse.
    constant : bool
        Prepend a constant to w_t.

    Returns
    -------
    Gaussian or UniformEllipse
    """
    if not c > 0:
        raise ContractError("c must be positive; use Dogmatic for a point mass")
    w = _instrument_matrix(data, instrument_cols, constant)
    q = w.shape[1]
    sigma_t = w.T @ w / data.T
    omega_d = np.asarray(omega_d, dtype=float)
    if omega_d.ndim <= 1:
        omega_d = np.diag(np.broadcast_to(omega_d, (q,)))
    if omega_d.shape != (q, q):
        raise ContractError(f"omega_d must be {q} x {q}")
    cov = c * sigma_t @ omega_d @ sigma_t.T
    cov = 0.5 * (cov + cov.T)
    if np.linalg.matrix_rank(cov) < q:
        raise ContractError("Sigma_T Omega_d Sigma_T' is singular")
    if shape == "gaussian":
        return Gaussian(np.zeros(q), cov)
    if shape == "uniform":
        return UniformEllipse(cov, chi2_quantile(0.68, q))
    raise ContractError(f"unknown prior shape {shape!r}")


def ivqr_delta(data: Dataset, tau, residuals, gamma_cap, instrument_cols, effect_col,
               constant=True) -> np.ndarray:
    """Moment bound under a direct effect of ``effect_col`` capped at ``gamma_cap``.

    ``max over gamma in {-cap, cap} of |mean_t w_t (tau - 1{e_t + D_t gamma <= 0})|``
    taken componentwise.
    """
    w = _instrument_matrix(data, instrument_cols, constant)
    resid = np.asarray(residuals, dtype=float)
    if resid.shape != (data.T,):
        raise ContractError("residuals must have one entry per observation")
    d = data.column(effect_col)
    cap = abs(float(gamma_cap))
    if cap == 0:
        raise ContractError("gamma_cap must be nonzero")
    bounds = [np.abs(w.T @ (tau - (resid + d * g <= 0)) / data.T) for g in (-cap, cap)]
    return np.maximum(*bounds)


def build_ivqr_delta_prior(data: Dataset, tau, residuals, gamma_cap, c, shape="gaussian",
                           instrument_cols=(), effect_col=None, constant=True):
    """IVQR prior scaled by the simulated moment bound ``delta``.

    Returns ``Gaussian(0, diag(c delta / 3)^2)``, ``UniformBox(-c delta / 3,
    c delta / 3)``, or ``Dogmatic(0)`` when ``c == 0``.
    """
    if c < 0:
        raise ContractError("c must be nonnegative")
    if effect_col is None:
        raise ContractError("effect_col names the instrument with a direct effect")
    delta = ivqr_delta(data, tau, residuals, gamma_cap, instrument_cols, effect_col, constant)
    q = delta.shape[0]
    if c == 0:
        return Dogmatic(np.zeros(q))
    half = c * delta / 3.0
    if np.any(half <= 0):
        raise ContractError("moment bound is zero in some component")
    if shape == "gaussian":
        return Gaussian(np.zeros(q), np.diag(half ** 2))
    if shape == "uniform":
        return UniformBox(-half, half)
    raise ContractError(f"unknown prior shape {shape!r}")
