"""Market models: Black-Scholes transition/sampling utilities and the
gamma-OU stochastic-volatility construction (point-series volatility blocks,
integrated-variance recursion, shifted-lognormal cumulative-sum density).

All density functions return natural logs and broadcast over numpy arrays.
Samplers take an explicit numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

# Broadie-Glasserman-Kou continuity-correction constant for discretely
# monitored barriers.
BGK_BETA = 0.5826


@dataclass
class GbmParams:
    """Black-Scholes model: risk-free rate, volatility, initial price."""

    r: float
    sigma: float
    s0: float

    def __post_init__(self):
        if self.sigma <= 0 or self.s0 <= 0:
            raise ValueError("sigma and s0 must be positive")


@dataclass
class BnsParams:
    """Gamma-OU stochastic-volatility model parameters.

    ``mu`` is the log-price drift, ``lam`` the OU decay rate, ``nu`` the
    jump-intensity scale, ``v0`` the initial volatility state (defaults to
    ``nu``, a stationary-mean-scale choice; override if calibrated).
    """

    mu: float
    lam: float
    nu: float
    v0: float = None
    s0: float = 1.0

    def __post_init__(self):
        if self.lam <= 0 or self.nu <= 0:
            raise ValueError("lam and nu must be positive")
        if self.v0 is None:
            self.v0 = self.nu
        if self.v0 < 0 or self.s0 <= 0:
            raise ValueError("v0 must be >= 0 and s0 > 0")

    @property
    def y0(self):
        return math.log(self.s0)


@dataclass
class BnsVolBlock:
    """One period's 2-D Poisson point set driving the integrated volatility.

    ``a`` in (0, lam*nu*delta], ``r_times`` in [0, 1], both length ``n``.
    """

    n: int
    a: np.ndarray
    r_times: np.ndarray
    delta: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.r_times = np.asarray(self.r_times, dtype=float)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if len(self.a) != self.n or len(self.r_times) != self.n:
            raise ValueError("a and r_times must have length n")
        if np.any(self.r_times < 0) or np.any(self.r_times > 1):
            raise ValueError("r_times must lie in [0, 1]")


@dataclass
class VolState:
    """Volatility recursion state: end-of-period level and period variance."""

    sigma_bar: float
    sigma_tilde: float = 0.0

    def __post_init__(self):
        if self.sigma_bar < 0 or self.sigma_tilde < 0:
            raise ValueError("volatility states must be nonnegative")


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------

def gbm_log_transition(s_next, s_prev, dt, p):
    """Log-density of the one-period Black-Scholes transition (risk-neutral)."""
    s_next = np.asarray(s_next, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    if np.any(s_next <= 0) or np.any(s_prev <= 0) or dt <= 0:
        raise ValueError("prices and dt must be positive")
    var = p.sigma ** 2 * dt
    mean = np.log(s_prev) + (p.r - 0.5 * p.sigma ** 2) * dt
    x = np.log(s_next)
    out = -0.5 * np.log(2.0 * np.pi * var) - (x - mean) ** 2 / (2.0 * var) - x
    return out if out.ndim else float(out)


def _gbm_z_bounds(s_prev, interval, dt, p):
    lo, hi = interval
    mean = np.log(s_prev) + (p.r - 0.5 * p.sigma ** 2) * dt
    sd = p.sigma * math.sqrt(dt)
    # prices are positive, so any lower bound <= 0 is no constraint at all
    z_lo = (np.log(lo) - mean) / sd if lo > 0 else np.full_like(mean, -np.inf)
    z_hi = (np.log(hi) - mean) / sd if np.isfinite(hi) else np.full_like(mean, np.inf)
    return z_lo, z_hi


def gbm_survival_prob(s_prev, interval, dt, p):
    """P(S_next in [a, b] | s_prev) via normal CDF differences on log-scale."""
    s_prev = np.asarray(s_prev, dtype=float)
    lo, hi = interval
    if not lo < hi:
        raise ValueError("interval must satisfy a < b")
    z_lo, z_hi = _gbm_z_bounds(s_prev, interval, dt, p)
    prob = ndtr(z_hi) - ndtr(z_lo)
    prob = np.clip(prob, 0.0, 1.0)
    return prob if prob.ndim else float(prob)


def gbm_sample_conditioned(s_prev, interval, dt, p, rng, u=None):
    """Exact draw from the transition law truncated to [a, b].

    Inverse-CDF on the underlying normal; draws always satisfy the interval
    constraint. Raises when the survival probability vanishes.
    """
    s_prev = np.asarray(s_prev, dtype=float)
    z_lo, z_hi = _gbm_z_bounds(s_prev, interval, dt, p)
    c_lo, c_hi = ndtr(z_lo), ndtr(z_hi)
    if np.any(c_hi - c_lo <= 0.0):
        raise ValueError("zero survival probability: conditioning impossible")
    if u is None:
        u = rng.uniform(size=np.shape(s_prev) if np.ndim(s_prev) else None)
    z = ndtri(c_lo + u * (c_hi - c_lo))
    mean = np.log(s_prev) + (p.r - 0.5 * p.sigma ** 2) * dt
    out = np.exp(mean + p.sigma * math.sqrt(dt) * z)
    lo, hi = interval
    out = np.clip(out, lo if lo > 0 else None, hi if np.isfinite(hi) else None)
    return out if np.ndim(out) else float(out)


def bs_call_price(s0, k, r, sigma, t):
    """Vanilla Black-Scholes call."""
    sd = sigma * math.sqrt(t)
    d1 = (math.log(s0 / k) + (r + 0.5 * sigma ** 2) * t) / sd
    d2 = d1 - sd
    return s0 * ndtr(d1) - k * math.exp(-r * t) * ndtr(d2)


def bs_call_delta(s0, k, r, sigma, t):
    sd = sigma * math.sqrt(t)
    d1 = (math.log(s0 / k) + (r + 0.5 * sigma ** 2) * t) / sd
    return float(ndtr(d1))


def bgk_barrier_price(p, barrier, k, m, dt):
    """Down-and-out call under discrete monitoring, barrier-shift approximation.

    Continuous-barrier closed form evaluated at the barrier shifted by
    exp(-BGK_BETA * sigma * sqrt(dt)); accurate to a few cents for the
    desk-scale settings exercised here.
    """
    if barrier >= p.s0:
        raise ValueError("knocked out at start: barrier >= s0")
    t = m * dt
    if barrier <= 0:
        return bs_call_price(p.s0, k, p.r, p.sigma, t)
    h = barrier * math.exp(-BGK_BETA * p.sigma * math.sqrt(dt))
    if h >= k:
        raise NotImplementedError("only the barrier <= strike branch is supported")
    lam = (p.r + 0.5 * p.sigma ** 2) / p.sigma ** 2
    sd = p.sigma * math.sqrt(t)
    y1 = math.log(h ** 2 / (p.s0 * k)) / sd + lam * sd
    vanilla = bs_call_price(p.s0, k, p.r, p.sigma, t)
    knock_in = (p.s0 * (h / p.s0) ** (2.0 * lam) * ndtr(y1)
                - k * math.exp(-p.r * t) * (h / p.s0) ** (2.0 * lam - 2.0)
                * ndtr(y1 - sd))
    return vanilla - knock_in


# ---------------------------------------------------------------------------
# gamma-OU volatility blocks
# ---------------------------------------------------------------------------

def bns_sample_vol_block(p, dt, rng):
    """Sample one period's point set: n ~ Poisson(lam*nu*dt), points uniform."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    area = p.lam * p.nu * dt
    n = int(rng.poisson(area))
    # a = 0 has probability zero but would blow up log(area/a); sample in (0, area]
    a = area * (1.0 - rng.uniform(size=n))
    r = rng.uniform(size=n)
    return BnsVolBlock(n=n, a=a, r_times=r, delta=dt)


def bns_gamma_terms(block, lam_nu_delta, lam_delta):
    """The two jump-sum terms feeding the volatility recursion."""
    if block.n == 0:
        return 0.0, 0.0
    if np.any(block.a <= 0) or np.any(block.a > lam_nu_delta):
        raise ValueError("block points must lie in (0, lam*nu*delta]")
    logs = np.log(lam_nu_delta / block.a)
    g1 = math.exp(-lam_delta) * float(np.sum(logs * np.exp(lam_delta * block.r_times)))
    g2 = float(np.sum(logs))
    return g1, g2


def bns_advance_vol(prev, block, p):
    """Advance (sigma_bar, sigma_tilde) one period given the period's points.

    sigma_bar decays at rate lam and jumps by g1; sigma_tilde is the period's
    integrated variance g2 - sigma_bar_new + sigma_bar_old. Both stay
    nonnegative for any valid block.
    """
    lam_delta = p.lam * block.delta
    g1, g2 = bns_gamma_terms(block, p.lam * p.nu * block.delta, lam_delta)
    decay = math.exp(-lam_delta)
    sigma_bar = decay * prev.sigma_bar + g1
    sigma_tilde = g2 - sigma_bar + prev.sigma_bar
    return VolState(sigma_bar=sigma_bar, sigma_tilde=max(sigma_tilde, 0.0))


def bns_logprice_log_transition(y_next, y_prev, sigma_tilde, mu, dt):
    """Normal log-density of the period log-return: mean mu*dt, variance sigma_tilde."""
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    if np.any(sigma_tilde <= 0):
        raise ValueError("sigma_tilde must be positive (degenerate density otherwise)")
    y_next = np.asarray(y_next, dtype=float)
    mean = np.asarray(y_prev, dtype=float) + mu * dt
    out = -0.5 * np.log(2.0 * np.pi * sigma_tilde) - (y_next - mean) ** 2 / (2.0 * sigma_tilde)
    return out if out.ndim else float(out)


def shifted_lognormal_logpdf(nu_i, nu_prev, nu_prev2, sigma_tilde, mu, dt):
    """Log-density of a cumulative sum increment.

    The increment nu_i - nu_prev is lognormal with location
    log(nu_prev - nu_prev2) + mu*dt and variance sigma_tilde. Conventions:
    nu at index -1 is 0 and at index 0 is the spot, so the first increment is
    the first price.
    """
    nu_i = np.asarray(nu_i, dtype=float)
    nu_prev = np.asarray(nu_prev, dtype=float)
    nu_prev2 = np.asarray(nu_prev2, dtype=float)
    if np.any(nu_i <= nu_prev) or np.any(nu_prev <= nu_prev2):
        raise ValueError("cumulative sums must be strictly increasing")
    x = nu_i - nu_prev
    loc = np.log(nu_prev - nu_prev2) + mu * dt
    out = bns_logprice_log_transition(np.log(x), loc - mu * dt, sigma_tilde, mu, dt) - np.log(x)
    return out if np.ndim(out) else float(out)
