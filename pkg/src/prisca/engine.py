"""Product of single scale effects fitted by residual-scaling coordinate ascent.

Each of the ``L`` effects is a single-change model.  The precision at time
``t`` is the product of the effects' squared scales; effect ``l`` is refitted
in closed form on the squared data rescaled by the expected squared scales of
all other effects.  This is block coordinate ascent on the mean-field ELBO,
so the objective never decreases.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln, xlogy

from .model import (
    LOG_2PI,
    InvalidInputError,
    ModelConfig,
    SingleEffectPosterior,
    TimeSeries,
    _SeriesStats,
    _suffix_sum,
    expected_tau2,
)
from .summaries import dedup_overlaps, detect  # noqa: F401  (re-exported)

logger = logging.getLogger(__name__)

_DIVISION_FLOOR = 1e-12


@dataclass
class PriscaFit:
    effects: List[SingleEffectPosterior]
    tau2_bar: np.ndarray
    elbo_trace: List[float]
    converged: bool
    iterations: int
    config: ModelConfig
    update_elbos: List[float] = field(default_factory=list, repr=False)
    capped: bool = False

    @property
    def L(self) -> int:
        return len(self.effects)

    @property
    def T(self) -> int:
        return self.tau2_bar.shape[1]

    @property
    def alpha(self) -> np.ndarray:
        return np.vstack([e.alpha for e in self.effects])

    def precision(self) -> np.ndarray:
        """Expected precision multiplier at each instant (product over effects)."""
        return np.prod(self.tau2_bar, axis=0)


def _exclusion_product(tau2_bar: np.ndarray, l: int) -> np.ndarray:
    return np.prod(np.delete(tau2_bar, l, axis=0), axis=0)


def _others(full_product: np.ndarray, tau2_bar: np.ndarray, l: int) -> np.ndarray:
    row = tau2_bar[l]
    if row.min() > _DIVISION_FLOOR:
        return full_product / row
    return _exclusion_product(tau2_bar, l)


def residuals(y: TimeSeries, tau2_bar, l: int) -> np.ndarray:
    """Squared data scaled by every effect's expected squared scale except ``l``.

    For multi-observation series the per-instant sum of squares is scaled.
    ``l`` is a 0-based effect position.
    """
    tau2_bar = np.atleast_2d(np.asarray(tau2_bar, dtype=float))
    if np.any(tau2_bar <= 0):
        raise InvalidInputError("expected squared scales must be strictly positive")
    if not 0 <= l < tau2_bar.shape[0]:
        raise InvalidInputError(f"effect index {l} outside 0..{tau2_bar.shape[0] - 1}")
    return y.sum_squares() * _others(np.prod(tau2_bar, axis=0), tau2_bar, l)


def _gamma_kl(a, b, a0):
    """KL(Gamma(a, b) || Gamma(a0, a0)), shape-rate parameterisation."""
    return (a - a0) * digamma(a) - gammaln(a) + gammaln(a0) + a0 * (np.log(b) - np.log(a0)) + a * (a0 - b) / b


class _ElboTerms:
    """ELBO evaluator for a fixed series; caches everything that depends on ``a`` only."""

    def __init__(self, ss: np.ndarray, stats: _SeriesStats):
        self.ss = ss
        self.stats = stats
        a, a0 = stats.a, stats.a0
        psi = digamma(a)
        self.half_n_psi = 0.5 * stats.suffix_n * psi
        # a-only part of KL(Gamma(a, b) || Gamma(a0, a0)) at b = 1
        self.kl_base = (a - a0) * psi - stats.lgamma_a + gammaln(a0) - a0 * np.log(a0) - a

    def __call__(self, alpha, a, b, tau2_bar) -> float:
        st = self.stats
        log_b = np.log(b)
        expected_log_det = np.sum(alpha * (self.half_n_psi - 0.5 * st.suffix_n * log_b))
        kl_gamma = self.kl_base + st.a0 * log_b + a * st.a0 / b
        kl = np.sum(xlogy(alpha, alpha) - alpha * st.log_prior + alpha * kl_gamma)
        data = np.sum(self.ss * np.prod(tau2_bar, axis=0)) / (2.0 * st.sigma2)
        return float(st.log_norm + expected_log_det - data - kl)


def _elbo_from_stats(ss, n, log_prior, alpha, a, b, tau2_bar, a0, sigma2) -> float:
    """Reference evaluation without caching; ``a`` may be arbitrary."""
    suffix_n = _suffix_sum(n)
    expected_log_det = np.sum(alpha * suffix_n * (digamma(a) - np.log(b)))
    data = np.sum(ss * np.prod(tau2_bar, axis=0)) / (2.0 * sigma2)
    kl = np.sum(xlogy(alpha, alpha) - alpha * log_prior + alpha * _gamma_kl(a, b, a0))
    const = -0.5 * suffix_n[0] * (LOG_2PI + np.log(sigma2))
    return float(const + 0.5 * expected_log_det - data - kl)


def elbo(effects, y: TimeSeries, config: ModelConfig) -> float:
    """Evidence lower bound of the mean-field posterior, constants included.

    ``effects`` is a :class:`PriscaFit` or any sequence of
    :class:`SingleEffectPosterior`; their ``a``/``b`` need not be the
    closed-form values, so the bound can be evaluated at arbitrary states.
    """
    if isinstance(effects, PriscaFit):
        effects = effects.effects
    effects = list(effects)
    alpha = np.vstack([e.alpha for e in effects])
    a = np.vstack([e.a for e in effects])
    b = np.vstack([e.b for e in effects])
    tau2_bar = np.vstack([expected_tau2(e) for e in effects])
    return _elbo_from_stats(
        y.sum_squares(), y.n_per_instant(), config.log_prior(y.T), alpha, a, b, tau2_bar, config.a0, config.sigma2
    )


def fit(
    y: TimeSeries,
    config: ModelConfig,
    *,
    order: Optional[Sequence[int]] = None,
    init_tau2: Optional[np.ndarray] = None,
    track_updates: bool = False,
) -> PriscaFit:
    """Fit ``config.L`` effects by backfitting until the ELBO stalls.

    Sweeps run over effects in ``order`` (ascending by default).  The run
    stops when the ELBO gain over a full sweep drops below
    ``config.epsilon`` or after ``config.max_iter`` sweeps; hitting the cap
    is reported through ``converged=False``.
    """
    T, L = y.T, config.L
    ss = y.sum_squares()
    n = y.n_per_instant()
    stats = _SeriesStats(n, config.log_prior(T), config.a0, config.sigma2)
    objective = _ElboTerms(ss, stats)
    order = list(range(L)) if order is None else list(order)
    if sorted(order) != list(range(L)):
        raise InvalidInputError("order must be a permutation of the effect indices")

    if init_tau2 is None:
        tau2_bar = np.ones((L, T))
    else:
        tau2_bar = np.array(init_tau2, dtype=float, copy=True)
        if tau2_bar.shape != (L, T) or np.any(tau2_bar <= 0):
            raise InvalidInputError(f"init_tau2 must be a positive ({L}, {T}) array")

    alpha = np.empty((L, T))
    a = np.broadcast_to(stats.a, (L, T))
    b = np.empty((L, T))
    effects: List[Optional[SingleEffectPosterior]] = [None] * L
    trace: List[float] = []
    update_elbos: List[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iter + 1):
        # fresh product once per sweep keeps division drift bounded
        product = np.prod(tau2_bar, axis=0)
        for l in order:
            others = _others(product, tau2_bar, l)
            post = stats.posterior(ss * others)
            row = expected_tau2(post)
            effects[l] = post
            tau2_bar[l] = row
            alpha[l], b[l] = post.alpha, post.b
            product = others * row
            if track_updates and all(e is not None for e in effects):
                update_elbos.append(objective(alpha, a, b, tau2_bar))
        trace.append(objective(alpha, a, b, tau2_bar))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.epsilon:
            converged = True
            break

    if not converged:
        logger.warning("fit stopped at max_iter=%d without ELBO convergence", config.max_iter)
    return PriscaFit(
        effects=list(effects),
        tau2_bar=tau2_bar,
        elbo_trace=trace,
        converged=converged,
        iterations=iterations,
        config=config,
        update_elbos=update_elbos,
    )


def max_auto_effects(T: int) -> int:
    """Cap on the effect count tried by :func:`auto_fit`.

    The number of changes separated by the localization spacing
    ``sqrt(T log T)`` that fit in a series of length ``T``.
    """
    if T < 3:
        return 1
    spacing = max(1, math.floor(math.sqrt(T * math.log(T))))
    return max(1, math.ceil(T / spacing))


def auto_fit(y: TimeSeries, config: ModelConfig, max_L: Optional[int] = None) -> PriscaFit:
    """Grow ``L`` from 1 until the detected change count stops rising.

    Every ``L`` is a cold start.  ``config.L`` is ignored.  When the cap is
    reached before the count plateaus, the last fit is returned with
    ``capped=True``.
    """
    cap = max_auto_effects(y.T) if max_L is None else int(max_L)
    previous_k = None
    result = None
    for L in range(1, cap + 1):
        result = fit(y, replace(config, L=L))
        k = detect(result).k_hat
        if previous_k is not None and k == previous_k:
            return result
        previous_k = k
    result.capped = True
    return result
