"""Data container, moment-function contract and sample-moment utilities.

A :class:`MomentModel` maps an observation row ``z`` and a parameter vector
``theta`` to a ``q``-vector ``g(z, theta)``.  Everything downstream (criterion,
sampler, local approximation) only touches the model through
:func:`sample_moments`, :func:`moment_covariance` and
:func:`numerical_jacobian`, or through the vectorized ``contribution_fn``
closure when speed matters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DataError, EvaluationError, NumericalError

__all__ = [
    "Dataset",
    "MomentModel",
    "FunctionModel",
    "sample_moments",
    "moment_contributions",
    "moment_covariance",
    "default_ridge",
    "numerical_jacobian",
    "default_jacobian_steps",
]


@dataclass(frozen=True)
class Dataset:
    """T x d block of observations with named columns."""

    rows: np.ndarray
    column_names: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ContractError("rows must be a 2-d array")
        names = tuple(str(c) for c in self.column_names)
        if rows.shape[0] < 2:
            raise ContractError(f"need at least 2 observations, got {rows.shape[0]}")
        if rows.shape[1] < 1 or len(names) != rows.shape[1]:
            raise ContractError(
                f"{len(names)} column names for {rows.shape[1]} data columns"
            )
        if len(set(names)) != len(names):
            raise ContractError("column names must be unique")
        if not np.all(np.isfinite(rows)):
            bad = int(np.argwhere(~np.isfinite(rows))[0, 0])
            raise DataError(f"non-finite entry in data row {bad}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(names)})

    @property
    def T(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self._index[name]]
        except KeyError:
            raise DataError(f"column {name!r} not in dataset") from None

    def columns(self, names: Sequence[str]) -> np.ndarray:
        """Return a T x len(names) matrix (T x 0 for an empty list)."""
        if len(names) == 0:
            return np.empty((self.T, 0))
        return np.column_stack([self.column(n) for n in names])

    def has_columns(self, names: Sequence[str]) -> bool:
        return all(n in self._index for n in names)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read a CSV file with a header row and '.' decimals."""
        path = Path(path)
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                body = [row for row in reader if row]
        except (OSError, StopIteration) as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        try:
            values = np.array([[float(v) for v in row] for row in body])
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        if values.ndim != 2 or values.shape[1] != len(header):
            raise DataError(f"{path}: ragged rows or header mismatch")
        return cls(values, tuple(h.strip() for h in header))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names)
            writer.writerows(self.rows.tolist())


class MomentModel:
    """Base class for moment-condition models.

    Subclasses set ``k``, ``q``, ``theta_box`` and ``smooth`` and override
    :meth:`contributions` (vectorized, preferred) or :meth:`evaluate`
    (one row at a time).
    """

    k: int
    q: int
    theta_box: np.ndarray
    smooth: bool = True

    def evaluate(self, z, theta) -> np.ndarray:
        """g(z, theta) for a single observation row."""
        raise NotImplementedError

    def contributions(self, data: Dataset, theta) -> np.ndarray:
        """T x q matrix whose row t is g(Z_t, theta)."""
        theta = np.asarray(theta, dtype=float)
        return np.array([self.evaluate(z, theta) for z in data.rows], dtype=float)

    def contribution_fn(self, data: Dataset) -> Callable[[np.ndarray], np.ndarray]:
        """Closure ``theta -> contributions(data, theta)``.

        Built-in models override this to pre-extract their columns once.
        """
        return lambda theta: self.contributions(data, theta)

    def batch_contribution_fn(self, data: Dataset):
        """Closure ``thetas (B x k) -> B x T x q`` contributions.

        The default loops over :meth:`contribution_fn`; vectorized models
        override it so several chains can advance in lockstep.
        """
        fn = self.contribution_fn(data)
        return lambda thetas: np.stack([fn(t) for t in thetas])

    def check(self, data: Dataset | None = None) -> None:
        """Validate the static invariants (and the columns, if data is given)."""
        box = np.asarray(self.theta_box, dtype=float)
        if not (1 <= self.k <= self.q):
            raise ContractError(f"need q >= k >= 1, got k={self.k}, q={self.q}")
        if box.shape != (self.k, 2):
            raise ContractError(f"theta_box must be {self.k} x 2, got {box.shape}")
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
            raise ContractError("theta_box needs finite bounds with lower < upper")

    def in_box(self, theta) -> bool:
        box = self.theta_box
        return bool(np.all(theta >= box[:, 0]) and np.all(theta <= box[:, 1]))

    @property
    def box_center(self) -> np.ndarray:
        return self.theta_box.mean(axis=1)


class FunctionModel(MomentModel):
    """Wrap a plain function as a :class:`MomentModel`.

    Parameters
    ----------
    fn : callable
        ``fn(z, theta)`` returning a q-vector, or with ``vectorized=True``
        ``fn(rows, theta)`` returning a T x q matrix.
    k, q : int
    theta_box : array_like, shape (k, 2)
    smooth : bool
    vectorized : bool
    """

    def __init__(self, fn, k, q, theta_box, smooth=True, vectorized=False):
        self.fn = fn
        self.k = int(k)
        self.q = int(q)
        self.theta_box = np.asarray(theta_box, dtype=float).reshape(self.k, 2)
        self.smooth = bool(smooth)
        self.vectorized = bool(vectorized)
        self.check()

    def evaluate(self, z, theta):
        if self.vectorized:
            return np.asarray(self.fn(np.atleast_2d(z), theta), dtype=float)[0]
        return np.atleast_1d(np.asarray(self.fn(z, theta), dtype=float))

    def contributions(self, data, theta):
        theta = np.asarray(theta, dtype=float)
        if self.vectorized:
            out = np.asarray(self.fn(data.rows, theta), dtype=float)
            return out.reshape(data.T, self.q)
        return super().contributions(data, theta)


def _as_theta(model: MomentModel, theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (model.k,):
        raise ContractError(f"theta must have length {model.k}, got {theta.shape}")
    box = model.theta_box
    slack = 1e-12 * (1.0 + np.abs(box))
    if np.any(theta < box[:, 0] - slack[:, 0]) or np.any(theta > box[:, 1] + slack[:, 1]):
        raise ContractError(f"theta {theta} outside the parameter box")
    return theta


def _check_finite(g: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        row = int(np.argwhere(~np.isfinite(np.atleast_2d(g)))[0, 0])
        raise EvaluationError(f"non-finite moment value in row {row}", row=row)
    return g


def moment_contributions(model: MomentModel, data: Dataset, theta) -> np.ndarray:
    """T x q matrix of per-observation moments, checked for finiteness."""
    theta = _as_theta(model, theta)
    g = model.contributions(data, theta)
    if g.shape != (data.T, model.q):
        raise ContractError(f"model returned shape {g.shape}, expected {(data.T, model.q)}")
    return _check_finite(g)


def sample_moments(model: MomentModel, data: Dataset, theta) -> np.ndarray:
    """Sample moment vector ``(1/T) sum_t g(Z_t, theta)``."""
    return moment_contributions(model, data, theta).mean(axis=0)


def default_ridge(omega: np.ndarray) -> float:
    """Ridge added to the moment covariance when none is given.

    Relative size 1e-8 of the average variance; falls back to 1e-12 when the
    moments carry no variance at all.
    """
    q = omega.shape[0]
    r = 1e-8 * float(np.trace(omega)) / q
    return r if r > 0 else 1e-12


def covariance_from_contributions(g: np.ndarray, ridge: float | None = None):
    """Centered second moment of a T x q contribution matrix plus ``ridge * I``."""
    T, q = g.shape
    dev = g - g.mean(axis=0)
    omega = dev.T @ dev / T
    omega = 0.5 * (omega + omega.T)
    if ridge is None:
        ridge = default_ridge(omega)
    omega[np.diag_indices(q)] += ridge
    return omega


def moment_covariance(model: MomentModel, data: Dataset, theta, ridge=None) -> np.ndarray:
    """Covariance of the moment contributions at ``theta``.

    Parameters
    ----------
    ridge : float or None
        Added to the diagonal.  ``None`` uses :func:`default_ridge`.

    Returns
    -------
    ndarray, shape (q, q)
    """
    if ridge is not None and ridge < 0:
        raise ContractError("ridge must be nonnegative")
    omega = covariance_from_contributions(moment_contributions(model, data, theta), ridge)
    if not np.all(np.isfinite(omega)):
        raise NumericalError("moment covariance is not finite")
    return omega


def default_jacobian_steps(model: MomentModel, data: Dataset, theta) -> np.ndarray:
    """Per-coordinate finite-difference steps.

    Smooth models use ``1e-5 (1 + |theta_j|)``.  Indicator-based models use the
    much wider ``T^(-1/3) (1 + |theta_j|)`` so the difference quotient averages
    over many indicator jumps.
    """
    scale = 1.0 + np.abs(np.asarray(theta, dtype=float))
    base = 1e-5 if model.smooth else data.T ** (-1.0 / 3.0)
    return base * scale


def numerical_jacobian(model: MomentModel, data: Dataset, theta, step=None) -> np.ndarray:
    """Central-difference Jacobian of :func:`sample_moments`, shape (q, k).

    ``step`` is an absolute step (scalar or per-coordinate); ``None`` selects
    :func:`default_jacobian_steps`.  Where the box leaves less than one step
    on either side, a one-sided difference of full step pointing away from the
    nearer face is used instead.
    """
    theta = _as_theta(model, theta)
    if step is None:
        h = default_jacobian_steps(model, data, theta)
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), theta.shape).copy()
        if np.any(h <= 0):
            raise ContractError("step must be positive")
    lo, hi = model.theta_box[:, 0], model.theta_box[:, 1]
    jac = np.empty((model.q, model.k))
    for j in range(model.k):
        room_up = hi[j] - theta[j]
        room_dn = theta[j] - lo[j]
        e = np.zeros(model.k)
        if min(room_up, room_dn) >= h[j]:
            e[j] = h[j]
            up = sample_moments(model, data, theta + e)
            dn = sample_moments(model, data, theta - e)
            jac[:, j] = (up - dn) / (2.0 * h[j])
        else:
            # too close to a face for a central difference: step away from it
            sign = 1.0 if room_up >= room_dn else -1.0
            hj = min(h[j], max(room_up, room_dn))
            e[j] = sign * hj
            jac[:, j] = sign * (sample_moments(model, data, theta + e)
                                - sample_moments(model, data, theta)) / hj
    return jac
