"""Likelihood-ratio sensitivities via a marginal-particle recursion.

Two signed measures are propagated side by side: the sensitivity measure
(signed weights) and the plain payoff-weighted flow (nonnegative weights).
Each step draws fresh particles from the self-normalized bootstrap mixture of
the previous cloud and reweights them with O(N^2) pairwise density sums, so
no resampling of paths ever happens and path degeneracy cannot occur.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import make_stream
from .models import GbmParams
from .report import RepRow, RunReport


@dataclass
class DifferentiableTransition:
    """Markov transition with an analytic parameter derivative.

    ``log_p(x_new, x_prev, step)`` and ``dlogp(x_new, x_prev, step)`` must
    broadcast (the recursion calls them on (N,1) x (1,N) grids);
    ``sample(x_prev, step, rng)`` draws elementwise; ``potential(x, step)``
    is the per-period factor (indicator, terminal payoff, ...), evaluated at
    steps 1..n_steps; ``x0`` is the deterministic starting point.
    """

    log_p: callable
    dlogp: callable
    sample: callable
    potential: callable
    x0: float
    n_steps: int


@dataclass
class SignedCloud:
    """Marginal particles with the two weight sets of the recursion."""

    states: np.ndarray
    lambda_weights: np.ndarray
    pi_weights: np.ndarray

    def __post_init__(self):
        if not (len(self.states) == len(self.lambda_weights) == len(self.pi_weights)):
            raise ValueError("weight vectors must match the particle count")
        if np.any(self.pi_weights < 0):
            raise ValueError("pi weights must be nonnegative")


@dataclass
class GreekTrace:
    lambda_totals: list = field(default_factory=list)
    pi_totals: list = field(default_factory=list)
    term_p: list = field(default_factory=list)
    term_dp: list = field(default_factory=list)


def _marginal_recursion(model, derivs, n_particles, seed, keep_terms=False):
    """Run the recursion once, tracking one lambda-weight vector per entry of
    ``derivs`` (they share particles, pairwise densities and pi weights)."""
    n = n_particles
    rng = make_stream(seed, "greeks", 1)
    x_prev = np.full(n, model.x0)
    x = model.sample(x_prev, 1, rng)
    phi = model.potential(x, 1)
    pi_w = phi / n
    lam_ws = [phi * d(x, x_prev, 1) / n for d in derivs]
    trace = GreekTrace()
    trace.lambda_totals.append([float(lw.sum()) for lw in lam_ws])
    trace.pi_totals.append(float(pi_w.sum()))

    for step in range(2, model.n_steps + 1):
        rng = make_stream(seed, "greeks", step)
        mass = np.abs(pi_w)
        total = mass.sum()
        if total == 0.0:
            raise RuntimeError(f"mixture proposal has no support at step {step}")
        mix = mass / total
        ancestors = rng.choice(n, size=n, p=mix)
        x_new = model.sample(x[ancestors], step, rng)

        log_p = model.log_p(x_new[:, None], x[None, :], step)
        log_p = np.asarray(log_p, dtype=float)
        # row-wise shift: the scale cancels between numerator and the mixture
        # density in the denominator, so this is exact, not an approximation
        shift = np.max(log_p, axis=1, keepdims=True)
        p_mat = np.exp(log_p - shift)
        d_mat = p_mat * np.asarray(derivs[0](x_new[:, None], x[None, :], step))
        psi = p_mat @ mix
        if np.any(psi <= 0.0):
            raise RuntimeError(f"proposal density vanished at a drawn point (step {step})")
        phi = model.potential(x_new, step)
        scale = phi / (n * psi)
        new_lams = []
        for i, d in enumerate(derivs):
            if i > 0:
                d_mat = p_mat * np.asarray(d(x_new[:, None], x[None, :], step))
            term_p = p_mat @ lam_ws[i]
            term_dp = d_mat @ pi_w
            new_lams.append(scale * (term_p + term_dp))
            if keep_terms and i == 0:
                trace.term_p.append(scale * term_p)
                trace.term_dp.append(scale * term_dp)
        pi_w = scale * (p_mat @ pi_w)
        lam_ws = new_lams
        x = x_new
        trace.lambda_totals.append([float(lw.sum()) for lw in lam_ws])
        trace.pi_totals.append(float(pi_w.sum()))

    clouds = [SignedCloud(states=x, lambda_weights=lw, pi_weights=pi_w)
              for lw in lam_ws]
    return clouds, trace


def greek_recursion_run(model, n_particles, seed, keep_terms=False):
    """Estimate of the parameter derivative: total mass of the signed measure
    after the final step. Returns (estimate, trace)."""
    clouds, trace = _marginal_recursion(model, [model.dlogp], n_particles, seed,
                                        keep_terms=keep_terms)
    return float(clouds[0].lambda_weights.sum()), trace


# ---------------------------------------------------------------------------
# Black-Scholes barrier sensitivities
# ---------------------------------------------------------------------------

def _bs_log_p(params, dt):
    c = params.r - 0.5 * params.sigma ** 2
    var = params.sigma ** 2 * dt

    def log_p(x_new, x_prev, step):
        # logs taken on the vector factors before broadcasting: the recursion
        # calls this on (N,1) x (1,N) grids and N^2 transcendentals dominate
        ln_new, ln_prev = np.log(x_new), np.log(x_prev)
        u = ln_new - ln_prev - c * dt
        return -0.5 * math.log(2.0 * math.pi * var) - u ** 2 / (2.0 * var) - ln_new

    return log_p


def bs_transition(params, spec, theta, terminal_payoff=True):
    """Differentiable Black-Scholes transition for the barrier payoff.

    ``theta`` is "s0" (only the first transition depends on it) or "sigma"
    (every transition does). The per-period factor is the barrier indicator,
    with the discounted call payoff multiplied in at the terminal step unless
    ``terminal_payoff`` is disabled (indicators only: the recursion then
    tracks the survival probability).
    """
    dts = spec.period_dts()
    if len(set(dts)) != 1:
        raise NotImplementedError("equal monitoring periods expected")
    dt = dts[0]
    c = params.r - 0.5 * params.sigma ** 2
    var = params.sigma ** 2 * dt
    log_p = _bs_log_p(params, dt)

    if theta == "s0":
        def dlogp(x_new, x_prev, step):
            if step != 1:
                return 0.0
            u = np.log(x_new) - np.log(x_prev) - c * dt
            return u / (var * x_prev)
    elif theta == "sigma":
        def dlogp(x_new, x_prev, step):
            u = np.log(x_new) - np.log(x_prev) - c * dt
            sig = params.sigma
            return -1.0 / sig - u / sig + u ** 2 / (sig ** 3 * dt)
    else:
        raise ValueError("theta must be 's0' or 'sigma'")

    def sample(x_prev, step, rng):
        z = rng.normal(size=len(x_prev))
        return x_prev * np.exp(c * dt + params.sigma * math.sqrt(dt) * z)

    def potential(x, step):
        lo, hi = spec.intervals[step - 1]
        inside = ((x >= lo) & (x <= hi)).astype(float)
        if terminal_payoff and step == spec.m:
            inside = inside * np.exp(-spec.rate * spec.maturity) \
                * np.maximum(x - spec.strike, 0.0)
        return inside

    return DifferentiableTransition(log_p=log_p, dlogp=dlogp, sample=sample,
                                    potential=potential, x0=spec.s0, n_steps=spec.m)


def barrier_delta_vega(spec, params, n_particles, reps, seed):
    """Delta and vega of the down-and-out call by the marginal recursion.

    Both sensitivities share one particle pass per repetition (the pairwise
    density matrix is the expensive part and is theta-independent).
    """
    model_d = bs_transition(params, spec, "s0")
    model_v = bs_transition(params, spec, "sigma")
    rows = []
    for rep in range(reps):
        t0 = time.perf_counter()
        clouds, _ = _marginal_recursion(model_d, [model_d.dlogp, model_v.dlogp],
                                        n_particles, seed + rep)
        wall_ms = (time.perf_counter() - t0) * 1e3
        delta = float(clouds[0].lambda_weights.sum())
        vega = float(clouds[1].lambda_weights.sum())
        rows.append(RepRow(rep=rep, seed=seed + rep, estimate=delta,
                           wall_ms=wall_ms,
                           extras={"delta": delta, "vega": vega}))
    report = RunReport(label="barrier-greeks", rows=rows,
                       config={"n_particles": n_particles, "m": spec.m,
                               "strike": spec.strike, "s0": spec.s0},
                       base_seed=seed)
    report.ess_traces = []
    return report


def finite_difference_greek(pricer, theta0, h, seed):
    """Central difference (f(theta+h) - f(theta-h)) / 2h under common random
    numbers: ``pricer(theta, seed)`` must be deterministic given the seed."""
    if h <= 0:
        raise ValueError("h must be positive")
    return (pricer(theta0 + h, seed) - pricer(theta0 - h, seed)) / (2.0 * h)
