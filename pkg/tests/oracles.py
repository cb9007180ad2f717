"""Independent oracles used across the test suite.

Everything here computes expectations by enumeration or deterministic
quadrature, never by the particle machinery under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm


class ToyChain:
    """Two-state Feynman-Kac chain with per-step potentials, fully enumerable.

    Target over paths x_{0:m}: mu(x0) G_0(x0) prod_{n>=1} P[x_{n-1}, x_n] G_n(x_n),
    up to the normalizing constant Z_m. Proposals in the tests are uniform.
    """

    def __init__(self, mu=(0.6, 0.4), transition=((0.7, 0.3), (0.4, 0.6)),
                 potentials=((1.0, 0.5), (0.9, 0.6))):
        self.mu = np.asarray(mu, dtype=float)
        self.P = np.asarray(transition, dtype=float)
        self.G0 = np.asarray(potentials[0], dtype=float)
        self.G = np.asarray(potentials[1], dtype=float)

    def potential(self, n, x):
        g = self.G0 if n == 0 else self.G
        return g[x]

    def path_weight(self, path):
        w = self.mu[path[0]] * self.G0[path[0]]
        for prev, cur in zip(path, path[1:]):
            w *= self.P[prev, cur] * self.G[cur]
        return w

    def enumerate_paths(self, m):
        return list(itertools.product((0, 1), repeat=m + 1))

    def exact_z(self, m):
        return sum(self.path_weight(p) for p in self.enumerate_paths(m))

    def exact_posterior(self, m):
        z = self.exact_z(m)
        return {p: self.path_weight(p) / z for p in self.enumerate_paths(m)}

    def exact_terminal_mean(self, m):
        post = self.exact_posterior(m)
        return sum(prob * p[-1] for p, prob in post.items())


def lognormal_logpdf(x, mean_log, var_log):
    return -0.5 * math.log(2.0 * math.pi * var_log) \
        - (math.log(x) - mean_log) ** 2 / (2.0 * var_log) - math.log(x)


def truncated_lognormal_call(s_prev, strike, lo, hi, rate, sigma, dt):
    """E[(S - K)_+ * 1{S in [lo, hi]}] and P(S in [lo, hi]) by quadrature."""
    mean = math.log(s_prev) + (rate - 0.5 * sigma ** 2) * dt
    sd = sigma * math.sqrt(dt)

    def z_of(s):
        return (math.log(s) - mean) / sd

    z_lo = z_of(lo) if lo > 0 else -np.inf
    z_hi = z_of(hi) if np.isfinite(hi) else np.inf
    prob = float(ndtr(z_hi) - ndtr(z_lo))
    # E[(S-K)+ 1{S in [a,b]}] = E[S 1{S >= max(K,a), S <= b}] - K P(...)
    z_k = z_of(max(strike, lo if lo > 0 else strike))
    z_eff_lo = max(z_k, z_lo)
    if z_eff_lo >= z_hi:
        return 0.0, prob
    es = math.exp(mean + 0.5 * sd ** 2) * float(ndtr(z_hi - sd) - ndtr(z_eff_lo - sd))
    pk = float(ndtr(z_hi) - ndtr(z_eff_lo))
    return es - strike * pk, prob


def barrier_price_quadrature_m2(spec, params, n_nodes=2000):
    """Two-period down-and-out call price by nested Gauss-Legendre quadrature.

    Integrates e^{-rT}(s2-K)+ over [a1,b1] x [a2,b2] against the product of
    one-period lognormal transitions. Infinite upper bounds are truncated at
    a quantile far beyond any payoff mass that matters at 1e-6 accuracy.
    """
    (a1, b1), (a2, b2) = spec.intervals
    dt1, dt2 = spec.period_dts()
    r, sigma = params.r, params.sigma

    def trans_pdf(s_next, s_prev, dt):
        mean = np.log(s_prev) + (r - 0.5 * sigma ** 2) * dt
        sd = sigma * math.sqrt(dt)
        return norm.pdf(np.log(s_next), mean, sd) / s_next

    def upper(s_prev, dt, b):
        hi = s_prev * math.exp((r - 0.5 * sigma ** 2) * dt + 8.5 * sigma * math.sqrt(dt))
        return min(b, hi) if np.isfinite(b) else hi

    x1, w1 = np.polynomial.legendre.leggauss(n_nodes)
    hi1 = upper(spec.s0, dt1, b1)
    s1 = 0.5 * (hi1 - a1) * (x1 + 1.0) + a1
    ws1 = 0.5 * (hi1 - a1) * w1
    total = 0.0
    x2, w2 = np.polynomial.legendre.leggauss(n_nodes)
    for s1_i, w1_i in zip(s1, ws1):
        hi2 = upper(s1_i, dt2, b2)
        lo2 = max(a2, spec.strike)
        if hi2 <= lo2:
            continue
        s2 = 0.5 * (hi2 - lo2) * (x2 + 1.0) + lo2
        ws2 = 0.5 * (hi2 - lo2) * w2
        inner = np.sum(ws2 * (s2 - spec.strike) * trans_pdf(s2, s1_i, dt2))
        total += w1_i * trans_pdf(s1_i, spec.s0, dt1) * inner
    return math.exp(-r * spec.maturity) * total


def asian_price_quadrature_m2(s0, strike, mu, dt, var1, var2, n_nodes=400):
    """Deterministic-volatility two-period cumulative-sum call by
    Gauss-Hermite quadrature: E[((s0 + S1 + S2)/2 - K)_+]."""
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / math.sqrt(2.0 * math.pi)
    s1 = s0 * np.exp(mu * dt + math.sqrt(var1) * z)
    total = 0.0
    for s1_i, w1_i in zip(s1, w):
        s2 = s1_i * np.exp(mu * dt + math.sqrt(var2) * z)
        payoff = np.maximum((s0 + s1_i + s2) / 2.0 - strike, 0.0)
        total += w1_i * float(np.sum(w * payoff))
    return total


def deterministic_vol_variances(v0, lam, dt, m):
    """sigma_tilde sequence when no volatility jumps ever arrive."""
    out = []
    bar = v0
    decay = math.exp(-lam * dt)
    for _ in range(m):
        new_bar = decay * bar
        out.append(bar - new_bar)
        bar = new_bar
    return out
