"""Independent reference computations used by the tests.

None of these reuse the package's closed forms: marginals come from
numerical quadrature, ELBOs from Monte Carlo over the variational
distribution, credible sets from exhaustive search.
"""
import itertools
import math

import numpy as np
from scipy import integrate, stats


def quad_log_marginal(groups, t, sigma2, a0):
    """log P(y | change at t) by quadrature over the precision scale.

    ``groups`` holds the samples of each instant; ``t`` is 1-based.  The
    integrand is evaluated with scalar ``math`` calls since quad calls it
    thousands of times.
    """
    left = np.array([v for g in groups[: t - 1] for v in g], dtype=float)
    right = np.array([v for g in groups[t - 1 :] for v in g], dtype=float)
    log_left = float(stats.norm.logpdf(left, scale=math.sqrt(sigma2)).sum())
    n, half_ss = right.size, float(np.sum(right**2)) / (2.0 * sigma2)
    log_gauss = -0.5 * n * math.log(2.0 * math.pi * sigma2)
    log_gamma_norm = a0 * math.log(a0) - math.lgamma(a0)

    def log_integrand(u):
        # u = log(lambda); Gamma(a0, a0) density times the Jacobian lambda
        lam = math.exp(u)
        return log_gauss + 0.5 * n * u - lam * half_ss + log_gamma_norm + a0 * u - a0 * lam

    # centre the integrand at its mode so the shifted integral is O(1)
    shape = a0 + n / 2.0
    u_star = math.log(shape / (a0 + half_ss))
    shift = log_integrand(u_star)
    f = lambda u: math.exp(log_integrand(u) - shift)  # noqa: E731
    # left tail decays like exp(shape * u), right tail doubly exponentially
    edges = u_star + np.array([-60.0 / shape - 40, -10, -2, 0, 2, 10, 60])
    total = sum(
        integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=500)[0] for lo, hi in zip(edges[:-1], edges[1:])
    )
    return log_left + shift + math.log(total)


def quad_alpha(groups, sigma2, a0, prior=None):
    T = len(groups)
    prior = np.full(T, 1.0 / T) if prior is None else np.asarray(prior)
    logs = np.array([quad_log_marginal(groups, t, sigma2, a0) for t in range(1, T + 1)]) + np.log(prior)
    w = np.exp(logs - logs.max())
    return w / w.sum()


def monte_carlo_elbo(y, alpha, a, b, a0, sigma2, n_draws, rng):
    """Mean and standard error of log p(y, theta) - log q(theta), theta ~ q.

    ``alpha``, ``a``, ``b`` are (L, T) arrays describing q; the product
    model's precision at t is the product of the s_l**2 with t_l <= t.
    """
    L, T = alpha.shape
    times = np.arange(1, T + 1)
    log_prec = np.zeros((n_draws, T))
    log_joint_minus_q = np.zeros(n_draws)
    for l in range(L):
        loc = rng.choice(T, size=n_draws, p=alpha[l])  # 0-based
        s2 = rng.gamma(a[l, loc], 1.0 / b[l, loc])
        log_prec += np.where(times[None, :] >= (loc + 1)[:, None], np.log(s2)[:, None], 0.0)
        log_joint_minus_q += (
            np.log(1.0 / T)
            + stats.gamma.logpdf(s2, a0, scale=1.0 / a0)
            - np.log(alpha[l, loc])
            - stats.gamma.logpdf(s2, a[l, loc], scale=1.0 / b[l, loc])
        )
    sd = np.sqrt(sigma2) * np.exp(-0.5 * log_prec)
    log_lik = stats.norm.logpdf(y[None, :], scale=sd).sum(axis=1)
    sample = log_lik + log_joint_minus_q
    return sample.mean(), sample.std(ddof=1) / np.sqrt(n_draws)


def monte_carlo_tau2(alpha, a, b, n_draws, rng):
    """Mean and standard error of the squared scale at every instant."""
    T = alpha.size
    loc = rng.choice(T, size=n_draws, p=alpha)
    s2 = rng.gamma(a[loc], 1.0 / b[loc])
    tau2 = np.where(np.arange(T)[None, :] >= loc[:, None], s2[:, None], 1.0)
    return tau2.mean(axis=0), tau2.std(axis=0, ddof=1) / np.sqrt(n_draws)


def minimal_set_size(alpha, p):
    """Smallest k such that some k-subset has mass > p.

    For each k the heaviest k-subset is the top-k of the sorted weights, so
    this scans prefixes of the sorted order, adding weights one at a time.
    """
    ordered = sorted(alpha, reverse=True)
    for k in range(1, len(ordered) + 1):
        if sum(ordered[:k]) > p:
            return k
    return len(ordered)


def exhaustive_minimal_set_size(alpha, p):
    """Same quantity by brute force over all subsets; small inputs only."""
    n = len(alpha)
    for k in range(1, n + 1):
        if any(sum(alpha[i] for i in c) > p for c in itertools.combinations(range(n), k)):
            return k
    return n
