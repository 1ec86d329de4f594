"""Preprocessing adapters that reduce richer mechanisms to a zero-mean variance problem.

* detrending hooks (identity, first-order differencing) for a smooth mean;
* autoregressive residualisation, alternating weighted least squares for
  the AR coefficients with a product-model fit on the innovations.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from .engine import PriscaFit, fit
from .model import InvalidInputError, ModelConfig, TimeSeries


class SingularDesignError(InvalidInputError):
    """The autoregressive design matrix is rank deficient."""


def identity_detrend(y: TimeSeries) -> TimeSeries:
    return y


def difference_detrend(y: TimeSeries) -> TimeSeries:
    """First-order differences ``y[t+1] - y[t]``, length ``T - 1``.

    A variance change whose first new observation is ``y[t]`` (1-based)
    shows up at differenced index ``t - 1`` or ``t``: the difference
    straddling the change mixes both regimes.
    """
    if y.has_counts:
        raise InvalidInputError("differencing is defined for single-sample series only")
    if y.T < 2:
        raise InvalidInputError("differencing needs at least two observations")
    return TimeSeries(np.diff(y.values))


def undifference(d: TimeSeries, first: float) -> np.ndarray:
    return first + np.concatenate(([0.0], np.cumsum(d.values)))


DETRENDERS: Dict[str, Callable[[TimeSeries], TimeSeries]] = {
    "identity": identity_detrend,
    "diff": difference_detrend,
}


@dataclass(frozen=True)
class ArSpec:
    order: int
    coefficients: Optional[np.ndarray] = None
    standard_errors: Optional[np.ndarray] = None
    max_outer_iter: int = 10
    tol: float = 1e-6

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 0:
            raise InvalidInputError(f"AR order must be a nonnegative integer, got {self.order}")
        if self.max_outer_iter < 1 or self.tol <= 0:
            raise InvalidInputError("max_outer_iter must be >= 1 and tol > 0")


@dataclass
class ArResult:
    spec: ArSpec
    residuals: TimeSeries
    fit: PriscaFit
    iterations: int
    converged: bool

    @property
    def index_offset(self) -> int:
        """Residual index ``i`` corresponds to original time ``i + order``."""
        return self.spec.order


def lag_matrix(values: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Design ``[y[t-1], ..., y[t-order]]`` and response ``y[t]`` for ``t > order``."""
    T = values.size
    X = np.column_stack([values[order - i : T - i] for i in range(1, order + 1)])
    return X, values[order:]


def weighted_least_squares(X: np.ndarray, z: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficients and standard errors minimising ``sum(w * (z - X @ beta)**2)``.

    Solved through a column-pivoted QR of the row-scaled design, which also
    exposes rank deficiency.
    """
    n, k = X.shape
    if n <= k:
        raise SingularDesignError(f"{n} rows cannot identify {k} coefficients")
    sw = np.sqrt(w)
    Xw, zw = X * sw[:, None], z * sw
    Q, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * max(n, k) * np.finfo(float).eps)) if diag[0] > 0 else 0
    if rank < k:
        raise SingularDesignError(
            f"autoregressive design has rank {rank} < {k}; pivot order {piv.tolist()}"
        )
    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ zw)
    beta = np.empty(k)
    beta[piv] = beta_piv
    resid = zw - Xw @ beta
    scale = resid @ resid / (n - k)
    r_inv = scipy.linalg.solve_triangular(R, np.eye(k))
    cov_piv = scale * r_inv @ r_inv.T
    se = np.empty(k)
    se[piv] = np.sqrt(np.diag(cov_piv))
    return beta, se


def ar_residualize(
    y: TimeSeries, spec: ArSpec, config: ModelConfig, fitter: Callable[[TimeSeries, ModelConfig], PriscaFit] = fit
) -> ArResult:
    """Alternate AR coefficient estimation and a product-model fit on the innovations.

    Each round regresses ``y[t]`` on its ``order`` lags by weighted least
    squares, weighting instant ``t`` by its current precision estimate
    (unit weights on the first round), then refits the product model on the
    innovations.  The first ``order`` instants have no innovation and are
    dropped, so detections live on an axis shifted by ``order``.  ``fitter``
    swaps in e.g. :func:`~prisca.engine.auto_fit`.
    """
    if y.has_counts:
        raise InvalidInputError("autoregressive residuals need a single-sample series")
    r = spec.order
    if r == 0:
        return ArResult(replace(spec, coefficients=np.empty(0), standard_errors=np.empty(0)), y, fitter(y, config), 0, True)
    if not r < y.T / 4:
        raise InvalidInputError(f"AR order {r} needs T > {4 * r}, got T={y.T}")

    X, z = lag_matrix(y.values, r)
    weights = np.ones(z.size)
    previous = None
    converged = False
    for it in range(1, spec.max_outer_iter + 1):
        phi, se = weighted_least_squares(X, z, weights)
        innovations = TimeSeries(z - X @ phi)
        result = fitter(innovations, config)
        weights = result.precision() / config.sigma2
        if previous is not None and np.max(np.abs(phi - previous)) < spec.tol:
            converged = True
            break
        previous = phi
    fitted = replace(spec, coefficients=phi, standard_errors=se)
    return ArResult(fitted, innovations, result, it, converged)
