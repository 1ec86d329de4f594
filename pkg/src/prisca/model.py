"""Exact conjugate posterior of the single variance-change model.

Observations are zero-mean Gaussians with baseline variance ``sigma2``.  A
single change at time ``t`` (1-based) rescales the precision of every
observation from ``t`` onward by ``s**2 ~ Gamma(a0, a0)``.  Everything below
works on per-instant sufficient statistics: the sum of squared observations
``ss[t]`` and the replicate count ``n[t]`` at each instant, so single-sample
and multi-observation series share one code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

LOG_2PI = float(np.log(2.0 * np.pi))


class InvalidInputError(ValueError):
    """Raised for malformed series or configuration values."""


@dataclass(frozen=True)
class TimeSeries:
    """Ordered real observations, optionally with several samples per instant.

    ``values`` is always stored flat.  When ``counts`` is given, the first
    ``counts[0]`` values belong to instant 1, the next ``counts[1]`` to
    instant 2, and so on.
    """

    values: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidInputError("time series must contain at least one value")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise InvalidInputError(f"non-finite value at position {bad + 1}")
        object.__setattr__(self, "values", values)
        if self.counts is not None:
            counts = np.asarray(self.counts)
            if counts.ndim != 1 or counts.size == 0:
                raise InvalidInputError("counts must be a non-empty 1-d sequence")
            if not np.all(counts == np.round(counts)) or np.any(counts < 1):
                raise InvalidInputError("counts must be positive integers")
            counts = counts.astype(np.int64)
            if int(counts.sum()) != values.size:
                raise InvalidInputError(
                    f"counts sum to {int(counts.sum())} but {values.size} values were given"
                )
            object.__setattr__(self, "counts", counts)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[float]]) -> "TimeSeries":
        """Build a multi-observation series from one sample list per instant."""
        counts = [len(g) for g in groups]
        flat = [float(v) for g in groups for v in g]
        return cls(np.asarray(flat), np.asarray(counts))

    @property
    def T(self) -> int:
        return self.values.size if self.counts is None else self.counts.size

    @property
    def has_counts(self) -> bool:
        return self.counts is not None

    def n_per_instant(self) -> np.ndarray:
        if self.counts is None:
            return np.ones(self.values.size)
        return self.counts.astype(float)

    def sum_squares(self) -> np.ndarray:
        """Per-instant sum of squared observations."""
        sq = self.values**2
        if self.counts is None:
            return sq
        starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))
        return np.add.reduceat(sq, starts)

    def groups(self) -> list:
        if self.counts is None:
            return [[float(v)] for v in self.values]
        ends = np.cumsum(self.counts)
        starts = ends - self.counts
        return [self.values[s:e].tolist() for s, e in zip(starts, ends)]


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters shared by the single-effect model and the product model.

    ``prior`` defaults to the uniform ``1/T`` categorical prior and is
    resolved against a concrete length with :meth:`log_prior`.
    """

    a0: float = 0.001
    sigma2: float = 1.0
    prior: Optional[np.ndarray] = None
    L: int = 1
    p: float = 0.9
    epsilon: float = 1e-3
    max_iter: int = 1000
    diffuse_fraction: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.a0) and self.a0 > 0):
            raise InvalidInputError(f"a0 must be positive and finite, got {self.a0}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidInputError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if int(self.L) != self.L or self.L < 1:
            raise InvalidInputError(f"L must be a positive integer, got {self.L}")
        if not 0 < self.p < 1:
            raise InvalidInputError(f"credible level p must lie in (0, 1), got {self.p}")
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidInputError("max_iter must be a positive integer")
        if not 0 < self.diffuse_fraction <= 1:
            raise InvalidInputError("diffuse_fraction must lie in (0, 1]")
        if self.prior is not None:
            prior = np.asarray(self.prior, dtype=float).ravel()
            if np.any(~np.isfinite(prior)) or np.any(prior <= 0):
                raise InvalidInputError("prior weights must be strictly positive")
            if abs(prior.sum() - 1.0) > 1e-12:
                raise InvalidInputError(f"prior weights sum to {prior.sum()!r}, not 1")
            object.__setattr__(self, "prior", prior)

    def log_prior(self, T: int) -> np.ndarray:
        if self.prior is None:
            return np.full(T, -np.log(T))
        if self.prior.size != T:
            raise InvalidInputError(f"prior has length {self.prior.size}, series has length {T}")
        return np.log(self.prior)


@dataclass(frozen=True)
class SingleEffectPosterior:
    """Posterior of one change location and its precision scale.

    ``alpha[t-1]`` is the posterior probability that the change sits at time
    ``t``; conditionally on that, ``s**2 ~ Gamma(a[t-1], b[t-1])`` (shape, rate).
    """

    alpha: np.ndarray
    a: np.ndarray
    b: np.ndarray
    log_marginals: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.alpha.size

    @property
    def s2_hat(self) -> np.ndarray:
        return self.a / self.b


def _suffix_sum(x: np.ndarray) -> np.ndarray:
    return np.cumsum(x[::-1])[::-1]


class _SeriesStats:
    """Terms of the closed-form posterior that depend only on counts and hyperparameters.

    They are shared by every effect and every sweep of a product-model fit.
    """

    def __init__(self, n: np.ndarray, log_prior: np.ndarray, a0: float, sigma2: float):
        self.n = n
        self.log_prior = log_prior
        self.a0 = a0
        self.sigma2 = sigma2
        self.suffix_n = _suffix_sum(n)
        self.a = a0 + 0.5 * self.suffix_n
        self.a.setflags(write=False)
        self.lgamma_a = gammaln(self.a)
        self.log_norm = -0.5 * self.suffix_n[0] * (LOG_2PI + np.log(sigma2))
        # a-only part of the marginal: prior normaliser plus lgamma(a_t)
        self.log_ml_base = self.log_norm + a0 * np.log(a0) - gammaln(a0) + self.lgamma_a

    def posterior(self, ss: np.ndarray) -> SingleEffectPosterior:
        """Closed-form posterior given per-instant squared sums ``ss``.

        The log marginal for a change at ``t`` is the Gaussian log-density of
        the left block at variance ``sigma2`` plus the Gamma-integrated right
        block::

            a0 log a0 - lgamma(a0) + lgamma(a_t) - a_t log b_t - (N_t / 2) log(2 pi sigma2)

        with ``N_t`` the number of samples from ``t`` onward.
        """
        suffix_ss = _suffix_sum(ss)
        left_ss = suffix_ss[0] - suffix_ss
        b = self.a0 + suffix_ss / (2.0 * self.sigma2)
        log_ml = self.log_ml_base - left_ss / (2.0 * self.sigma2) - self.a * np.log(b)
        log_post = log_ml + self.log_prior
        weights = np.exp(log_post - log_post.max())
        return SingleEffectPosterior(alpha=weights / weights.sum(), a=self.a, b=b, log_marginals=log_ml)


def _posterior_from_stats(ss, n, log_prior, a0, sigma2) -> SingleEffectPosterior:
    return _SeriesStats(n, log_prior, a0, sigma2).posterior(ss)


def _check_config(y: TimeSeries, config: ModelConfig):
    if not isinstance(y, TimeSeries):
        raise InvalidInputError("expected a TimeSeries")
    return config.log_prior(y.T)


def log_marginal_likelihood(y: TimeSeries, t: int, config: ModelConfig) -> float:
    """Log of ``P(y | change at t)`` with the scale integrated out.  ``t`` is 1-based."""
    if not 1 <= t <= y.T:
        raise InvalidInputError(f"change index {t} outside 1..{y.T}")
    _check_config(y, config)
    ss = y.sum_squares()
    n = y.n_per_instant()
    tail_ss = ss[t - 1 :].sum()
    tail_n = n[t - 1 :].sum()
    a_t = config.a0 + 0.5 * tail_n
    b_t = config.a0 + tail_ss / (2.0 * config.sigma2)
    return float(
        -0.5 * n.sum() * (LOG_2PI + np.log(config.sigma2))
        - ss[: t - 1].sum() / (2.0 * config.sigma2)
        + config.a0 * np.log(config.a0)
        - gammaln(config.a0)
        + gammaln(a_t)
        - a_t * np.log(b_t)
    )


def single_effect_posterior(y: TimeSeries, config: ModelConfig) -> SingleEffectPosterior:
    """Posterior over the change location and scale for a single-sample series.

    A series carrying replicate counts is routed to :func:`multi_obs_posterior`.
    """
    log_prior = _check_config(y, config)
    return _posterior_from_stats(
        y.sum_squares(), y.n_per_instant(), log_prior, config.a0, config.sigma2
    )


def multi_obs_posterior(y: TimeSeries, config: ModelConfig) -> SingleEffectPosterior:
    """Single-change posterior when each instant holds ``n_t`` replicate samples."""
    if not y.has_counts:
        raise InvalidInputError("multi_obs_posterior requires per-instant counts")
    return single_effect_posterior(y, config)


def expected_tau2(post: SingleEffectPosterior) -> np.ndarray:
    """Posterior mean of the squared precision scale at every instant.

    Entry ``t`` mixes the conditional means ``a_i / b_i`` of every change
    location ``i <= t`` with the neutral value 1 for changes not yet reached.
    """
    cum_alpha = np.cumsum(post.alpha)
    return np.cumsum(post.alpha * post.s2_hat) + np.clip(1.0 - cum_alpha, 0.0, None)
