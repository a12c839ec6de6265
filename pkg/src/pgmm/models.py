"""Built-in moment models (linear IV, IV quantile regression) and simulators.

The simulators generate the synthetic designs used by the coverage studies:
a log-normal-instrument linear IV model, a heteroskedastic median/quantile
regression with a plausibly invalid regressor, and a Bernoulli-treatment
quantile model with an omitted interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ContractError, DataError
from .moment_model import Dataset, MomentModel

__all__ = [
    "LinearIvModel",
    "IvqrModel",
    "linear_iv_moments",
    "ivqr_moments",
    "two_stage_least_squares",
    "LinearIvLogNormal",
    "LinearIvFamily",
    "MedianRegLogNormal",
    "BernoulliTreatment",
    "simulate",
    "row_layout",
    "LOGNORMAL_SECOND_MOMENT",
]

# E[D^2] for log D ~ N(0, 1): E[exp(2 Z)] is the N(0, 1) mgf at 2, exp(2^2 / 2) = e^2.
LOGNORMAL_SECOND_MOMENT = float(np.exp(2.0))


def _names(cols) -> tuple[str, ...]:
    if cols is None:
        return ()
    if isinstance(cols, str):
        return (cols,)
    return tuple(cols)


def _default_box(k, halfwidth):
    return np.column_stack([np.full(k, -halfwidth), np.full(k, halfwidth)])


class _ScalarTimesInstrument:
    """Shared fast path for moments of the form ``g_t = s_t(theta) w_t``.

    The mean and raw second moment over a batch of thetas reduce to two
    matrix products against ``w`` and the row-wise outer products ``w w'``.
    """

    def _scalar_fn(self, data):
        raise NotImplementedError

    def batch_moment_stats(self, data):
        s_fn, w = self._scalar_fn(data)
        T, q = w.shape
        ww = (w[:, :, None] * w[:, None, :]).reshape(T, q * q) / T
        w_avg = w / T

        def stats(thetas):
            s = s_fn(thetas)
            return s @ w_avg, (s * s @ ww).reshape(-1, q, q)

        return stats


class LinearIvModel(_ScalarTimesInstrument, MomentModel):
    """Linear IV moments ``(1, D, W)' (Y - a - X b_X - W b_W)``.

    Parameter order is ``(intercept, endogenous..., controls...)``; the
    instrument vector is ``(1, instruments..., controls...)``.  With
    ``intercept=False`` the constant is dropped from both.
    """

    smooth = True

    def __init__(self, outcome, endogenous=(), controls=(), instruments=(),
                 intercept=True, theta_box=None, box_halfwidth=100.0):
        self.outcome = str(outcome)
        self.endogenous = _names(endogenous)
        self.controls = _names(controls)
        self.instruments = _names(instruments)
        self.intercept = bool(intercept)
        all_cols = (self.outcome,) + self.endogenous + self.controls + self.instruments
        if len(set(all_cols)) != len(all_cols):
            raise ContractError("outcome, endogenous, control and instrument columns must be distinct")
        self.k = int(self.intercept) + len(self.endogenous) + len(self.controls)
        self.q = int(self.intercept) + len(self.instruments) + len(self.controls)
        self.theta_box = (_default_box(self.k, box_halfwidth) if theta_box is None
                          else np.asarray(theta_box, dtype=float).reshape(-1, 2))
        self.check()

    @property
    def parameter_names(self):
        return (("alpha",) if self.intercept else ()) + tuple(
            f"beta_{c}" for c in self.endogenous + self.controls)

    def design(self, data: Dataset):
        """Return (y, regressors T x k, instruments T x q)."""
        if not data.has_columns((self.outcome,) + self.endogenous + self.controls + self.instruments):
            raise DataError("dataset is missing columns required by the linear IV model")
        ones = np.ones((data.T, 1)) if self.intercept else np.empty((data.T, 0))
        x = np.hstack([ones, data.columns(self.endogenous), data.columns(self.controls)])
        w = np.hstack([ones, data.columns(self.instruments), data.columns(self.controls)])
        return data.column(self.outcome), x, w

    def evaluate(self, z, theta):
        return linear_iv_moments(self, z, theta)

    def pilot_theta(self, data):
        """2SLS fit, used as an extra optimizer start."""
        y, x, w = self.design(data)
        return _tsls(y, x, w)[0]

    def contribution_fn(self, data):
        y, x, w = self.design(data)

        def fn(theta):
            return w * (y - x @ theta)[:, None]

        return fn

    def batch_contribution_fn(self, data):
        s_fn, w = self._scalar_fn(data)
        return lambda thetas: s_fn(thetas)[:, :, None] * w[None, :, :]

    def _scalar_fn(self, data):
        y, x, w = self.design(data)
        xt = np.ascontiguousarray(x.T)
        return (lambda thetas: y - thetas @ xt), w

    def contributions(self, data, theta):
        return self.contribution_fn(data)(np.asarray(theta, dtype=float))


class IvqrModel(_ScalarTimesInstrument, MomentModel):
    """IV quantile regression moments ``(1, D, W)' (tau - 1{Y <= a + X b_X + W b_W})``.

    ``treatment`` holds the (possibly endogenous) regressors X and
    ``instruments`` the excluded instruments D.  Exogenous regressors enter
    through ``controls`` and act as their own instruments.
    """

    smooth = False

    def __init__(self, tau, outcome, treatment=(), controls=(), instruments=(),
                 theta_box=None, box_halfwidth=100.0):
        if not 0.0 < tau < 1.0:
            raise ContractError("tau must lie strictly inside (0, 1)")
        self.tau = float(tau)
        self.outcome = str(outcome)
        self.treatment = _names(treatment)
        self.controls = _names(controls)
        self.instruments = _names(instruments)
        all_cols = (self.outcome,) + self.treatment + self.controls + self.instruments
        if len(set(all_cols)) != len(all_cols):
            raise ContractError("outcome, treatment, control and instrument columns must be distinct")
        self.k = 1 + len(self.treatment) + len(self.controls)
        self.q = 1 + len(self.instruments) + len(self.controls)
        self.theta_box = (_default_box(self.k, box_halfwidth) if theta_box is None
                          else np.asarray(theta_box, dtype=float).reshape(-1, 2))
        self.check()

    @property
    def parameter_names(self):
        return ("alpha",) + tuple(f"beta_{c}" for c in self.treatment + self.controls)

    def design(self, data: Dataset):
        if not data.has_columns((self.outcome,) + self.treatment + self.controls + self.instruments):
            raise DataError("dataset is missing columns required by the IVQR model")
        ones = np.ones((data.T, 1))
        x = np.hstack([ones, data.columns(self.treatment), data.columns(self.controls)])
        w = np.hstack([ones, data.columns(self.instruments), data.columns(self.controls)])
        return data.column(self.outcome), x, w

    def evaluate(self, z, theta):
        return ivqr_moments(self, z, theta)

    def pilot_theta(self, data):
        """Linear IV analog with the intercept moved to the residual tau-quantile."""
        y, x, w = self.design(data)
        coef, resid = _tsls(y, x, w)
        coef[0] += np.quantile(resid, self.tau)
        return coef

    def contribution_fn(self, data):
        y, x, w = self.design(data)
        tau = self.tau

        def fn(theta):
            return w * (tau - (y <= x @ theta))[:, None]

        return fn

    def batch_contribution_fn(self, data):
        s_fn, w = self._scalar_fn(data)
        return lambda thetas: s_fn(thetas)[:, :, None] * w[None, :, :]

    def _scalar_fn(self, data):
        y, x, w = self.design(data)
        xt = np.ascontiguousarray(x.T)
        tau = self.tau
        return (lambda thetas: tau - (y <= thetas @ xt)), w

    def contributions(self, data, theta):
        return self.contribution_fn(data)(np.asarray(theta, dtype=float))


def linear_iv_moments(spec: LinearIvModel, z, theta) -> np.ndarray:
    """Moments of one row.

    ``z`` is either a mapping from column name to value or an array in the
    order given by :func:`row_layout`.
    """
    theta = np.asarray(theta, dtype=float)
    y, x_parts, w_parts = _unpack_row(spec, z, spec.endogenous, spec.controls, spec.instruments)
    lead = [1.0] if spec.intercept else []
    x = np.array(lead + x_parts)
    w = np.array(lead + w_parts)
    return w * (y - x @ theta)


def ivqr_moments(spec: IvqrModel, z, theta) -> np.ndarray:
    """IVQR moments of one row; same row conventions as :func:`linear_iv_moments`."""
    theta = np.asarray(theta, dtype=float)
    y, x_parts, w_parts = _unpack_row(spec, z, spec.treatment, spec.controls, spec.instruments)
    x = np.array([1.0] + x_parts)
    w = np.array([1.0] + w_parts)
    return w * (spec.tau - float(y <= x @ theta))


def _unpack_row(spec, z, regressors, controls, instruments):
    if isinstance(z, dict):
        y = float(z[spec.outcome])
        reg = [float(z[c]) for c in regressors]
        ctl = [float(z[c]) for c in controls]
        ins = [float(z[c]) for c in instruments]
    else:
        z = np.asarray(z, dtype=float)
        n_r, n_c = len(regressors), len(controls)
        y = float(z[0])
        reg = list(z[1:1 + n_r])
        ctl = list(z[1 + n_r:1 + n_r + n_c])
        ins = list(z[1 + n_r + n_c:])
    return y, reg + ctl, ins + ctl


def row_layout(spec) -> tuple[str, ...]:
    """Column order expected by the per-row ``evaluate`` of a built-in model."""
    regressors = spec.endogenous if isinstance(spec, LinearIvModel) else spec.treatment
    return (spec.outcome,) + tuple(regressors) + tuple(spec.controls) + tuple(spec.instruments)


def two_stage_least_squares(data: Dataset, outcome, endogenous=(), controls=(),
                            instruments=(), intercept=True):
    """2SLS coefficients and residuals for the linear IV analog of a model.

    Returns
    -------
    coef : ndarray
        Ordered as in :class:`LinearIvModel`.
    resid : ndarray, shape (T,)
    """
    m = LinearIvModel(outcome, endogenous, controls, instruments, intercept=intercept)
    return _tsls(*m.design(data))


def _tsls(y, x, w):
    proj = w @ np.linalg.lstsq(w, x, rcond=None)[0]
    coef = np.linalg.lstsq(proj, y, rcond=None)[0]
    return coef, y - x @ coef


# --------------------------------------------------------------------------
# data-generating processes


@dataclass(frozen=True)
class LinearIvLogNormal:
    """``X = D + v``, ``Y = X theta + D gamma + eps`` with ``log D ~ N(0, 1)``."""

    theta_star: float = 0.0
    gamma: float = 0.0
    T: int = 1000

    def __post_init__(self):
        _check_dgp(self.T, [self.theta_star, self.gamma])

    def simulate(self, rng: np.random.Generator) -> Dataset:
        d = np.exp(rng.standard_normal(self.T))
        x = d + rng.standard_normal(self.T)
        y = x * self.theta_star + d * self.gamma + rng.standard_normal(self.T)
        return Dataset(np.column_stack([y, x, d]), ("y", "x", "d"))

    def model(self, tau=None, box_halfwidth=10.0) -> LinearIvModel:
        box = [[self.theta_star - box_halfwidth, self.theta_star + box_halfwidth]]
        return LinearIvModel("y", ["x"], instruments=["d"], intercept=False, theta_box=box)

    def true_theta(self, tau=None) -> np.ndarray:
        return np.array([self.theta_star])

    def mu_star(self) -> np.ndarray:
        """Population moment E[D (Y - X theta*)] = gamma E[D^2]."""
        return np.array([self.gamma * LOGNORMAL_SECOND_MOMENT])

    @classmethod
    def from_mu(cls, mu, T, theta_star=0.0, theta_slope=0.1) -> "LinearIvLogNormal":
        """DGP whose moment at the truth equals ``mu``.

        ``gamma = mu / E[D^2]`` and the structural slope moves with ``mu`` as
        ``theta_star + theta_slope * mu``.
        """
        mu = float(np.atleast_1d(mu)[0])
        return cls(theta_star + theta_slope * mu, mu / LOGNORMAL_SECOND_MOMENT, T)


@dataclass(frozen=True)
class LinearIvFamily:
    """The linear IV design indexed by the moment value ``mu`` at the truth.

    Used for two-stage coverage: nature draws ``mu`` and :meth:`dgp` returns
    the design whose structural slope satisfies ``E[D (Y - X theta)] = mu``.
    The fitted model's box stays centered at ``theta_star`` whatever mu is.
    """

    T: int = 1000
    theta_star: float = 0.0
    theta_slope: float = 0.1
    box_halfwidth: float = 10.0

    def dgp(self, mu) -> LinearIvLogNormal:
        return LinearIvLogNormal.from_mu(mu, self.T, self.theta_star, self.theta_slope)

    def model(self) -> LinearIvModel:
        return LinearIvLogNormal(self.theta_star, 0.0, self.T).model(box_halfwidth=self.box_halfwidth)

    def truth(self, mu) -> np.ndarray:
        return self.dgp(mu).true_theta()


@dataclass(frozen=True)
class MedianRegLogNormal:
    """``Y = a + X'b + s(X) eps + gamma X_3^2`` with ``s(X) = (1 + sum X) / 5``."""

    alpha_star: float = 0.0
    beta_star: tuple = (0.0, 0.0, 0.0)
    gamma: float = 0.0
    T: int = 300

    def __post_init__(self):
        object.__setattr__(self, "beta_star", tuple(float(b) for b in self.beta_star))
        if len(self.beta_star) != 3:
            raise ContractError("beta_star needs three entries")
        _check_dgp(self.T, [self.alpha_star, *self.beta_star, self.gamma])

    def simulate(self, rng):
        x = np.exp(rng.standard_normal((self.T, 3)))
        scale = (1.0 + x.sum(axis=1)) / 5.0
        u = scale * rng.standard_normal(self.T) + self.gamma * x[:, 2] ** 2
        y = self.alpha_star + x @ np.array(self.beta_star) + u
        return Dataset(np.column_stack([y, x]), ("y", "x1", "x2", "x3"))

    def model(self, tau=0.5, box_halfwidth=10.0) -> IvqrModel:
        return IvqrModel(tau, "y", controls=["x1", "x2", "x3"], box_halfwidth=box_halfwidth)

    def true_theta(self, tau=0.5) -> np.ndarray:
        # tau-quantile of s(X) eps is z_tau (1 + sum X) / 5: shifts every coefficient
        shift = norm.ppf(tau) / 5.0
        return np.array([self.alpha_star, *self.beta_star]) + shift


@dataclass(frozen=True)
class BernoulliTreatment:
    """``Y = a + D b + gamma D X + eps`` with ``D ~ Bernoulli(1/2)``.

    ``X`` is log-normal and omitted from the moment conditions.
    """

    alpha_star: float = 0.0
    beta_star: float = 1.0
    gamma: float = 0.0
    T: int = 300

    def __post_init__(self):
        _check_dgp(self.T, [self.alpha_star, self.beta_star, self.gamma])

    def simulate(self, rng):
        d = (rng.random(self.T) < 0.5).astype(float)
        x = np.exp(rng.standard_normal(self.T))
        y = self.alpha_star + d * self.beta_star + self.gamma * d * x + rng.standard_normal(self.T)
        return Dataset(np.column_stack([y, d, x]), ("y", "d", "x"))

    def model(self, tau=0.5, box_halfwidth=10.0) -> IvqrModel:
        return IvqrModel(tau, "y", controls=["d"], box_halfwidth=box_halfwidth)

    def true_theta(self, tau=0.5) -> np.ndarray:
        return np.array([self.alpha_star + norm.ppf(tau), self.beta_star])


def _check_dgp(T, params):
    if int(T) < 50:
        raise ContractError("simulated designs need T >= 50")
    if not np.all(np.isfinite(params)):
        raise ContractError("DGP parameters must be finite")


def simulate(dgp, seed) -> Dataset:
    """Draw one dataset from ``dgp``; identical seeds give identical data."""
    return dgp.simulate(np.random.default_rng(seed))
