"""Generic particle machinery: weighting, ESS, resampling, SIS/SIR loops,
normalizing-constant estimation and a common-space SMC-sampler loop.

Everything here is agnostic of the state type. A "states" object holds all N
particles collectively; it must support ``len(states)`` and be selectable by
an integer index array (numpy fancy indexing, a ``take(idx)`` method, or a
plain list). Weights live in natural-log space throughout: products of many
survival probabilities underflow in linear space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class DegenerateCloudError(RuntimeError):
    """All particle weights are zero (log-weights -inf): the run is broken."""

    def __init__(self, message="all particle weights are zero", step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


def _key_word(k):
    # process-independent 64-bit word; built-in hash() is salted per process
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(k).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_stream(seed, *key):
    """Counter-based generator for the sub-stream identified by ``key``.

    Streams derived from distinct (seed, key) tuples are independent, so the
    draws of one step/purpose never depend on how much randomness another
    consumed.
    """
    words = [_key_word(seed)] + [_key_word(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def take_states(states, idx):
    """Select particles ``idx`` (with repetition allowed) from a states object."""
    if hasattr(states, "take_particles"):
        return states.take_particles(idx)
    if isinstance(states, np.ndarray):
        return states[idx]
    if isinstance(states, (list, tuple)):
        return [states[i] for i in idx]
    raise TypeError(f"cannot index states of type {type(states).__name__}")


def _n_states(states):
    return len(states)


# ---------------------------------------------------------------------------
# weights and ESS
# ---------------------------------------------------------------------------

def normalize_weights(log_weights):
    """Normalize log-weights; returns ``(normalized, log_sum)``.

    ``normalized[i] = exp(lw[i] - logsumexp(lw))`` and ``log_sum`` is the log
    of the unnormalized sum, computed max-shifted for stability.

    Raises DegenerateCloudError if every entry is -inf.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateCloudError()
    log_sum = float(logsumexp(lw))
    return np.exp(lw - log_sum), log_sum


def ess(log_weights):
    """Effective sample size (sum w)^2 / sum w^2 of unnormalized weights."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateCloudError()
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


@dataclass
class ParticleCloud:
    """N weighted path-states with ancestry.

    ``states`` is the collective carrier (array, list or ensemble object),
    ``log_weights`` the natural-log weights (-inf allowed, not all at once),
    ``ancestors`` the index of each particle's parent in the previous
    generation, ``step_index`` the number of completed weighting steps.
    """

    states: object
    log_weights: np.ndarray
    ancestors: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.ancestors = np.asarray(self.ancestors, dtype=np.int64)
        n = _n_states(self.states)
        if n < 1:
            raise ValueError("need at least one particle")
        if len(self.log_weights) != n or len(self.ancestors) != n:
            raise ValueError("states, log_weights and ancestors must have equal length")
        if not np.any(np.isfinite(self.log_weights)):
            raise DegenerateCloudError(step=self.step_index)

    @property
    def n_particles(self):
        return len(self.log_weights)

    def normalized_weights(self):
        w, _ = normalize_weights(self.log_weights)
        assert np.all(w >= 0.0) and abs(w.sum() - 1.0) < 1e-12
        return w

    def ess(self):
        return ess(self.log_weights)


@dataclass
class ResampleConfig:
    """Resampling scheme, ESS trigger threshold and the seed of its stream."""

    scheme: str = "systematic"
    ess_threshold: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("systematic", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.scheme!r}")
        if self.ess_threshold < 0:
            raise ValueError("ess_threshold must be >= 0")


def systematic_indices(weights, n_out, u):
    """Systematic resampling indices for one uniform draw ``u`` in [0, 1).

    Grid points (u + k)/n_out, k = 0..n_out-1, are stepped through the weight
    CDF in the given particle order; particle i receives one copy per grid
    point landing in its CDF segment. Computed as differences of
    ceil(n_out * cdf_i - u), which is exact up to boundary ties of measure
    zero and immune to cumulative-sum rounding drift.
    """
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    marks = np.ceil(n_out * cdf - u).astype(np.int64)
    counts = np.diff(np.concatenate(([0], marks)))
    counts = np.maximum(counts, 0)
    return np.repeat(np.arange(len(w)), counts).astype(np.int64)


def multinomial_indices(weights, n_out, rng):
    w = np.asarray(weights, dtype=float)
    return rng.choice(len(w), size=n_out, replace=True, p=w / w.sum()).astype(np.int64)


def resample(cloud, cfg, rng=None):
    """Draw N replacement particles proportional to the weights.

    Output weights are uniform (log 1/N) and ancestors record the source
    indices. The systematic scheme uses a single uniform; expected replicate
    counts equal N w_i for both schemes.
    """
    if rng is None:
        rng = make_stream(cfg.rng_seed, "resample", cloud.step_index)
    w = cloud.normalized_weights()
    n = cloud.n_particles
    if cfg.scheme == "systematic":
        idx = systematic_indices(w, n, rng.uniform())
    else:
        idx = multinomial_indices(w, n, rng)
    return ParticleCloud(
        states=take_states(cloud.states, idx),
        log_weights=np.full(n, -np.log(n)),
        ancestors=idx,
        step_index=cloud.step_index,
    )


# ---------------------------------------------------------------------------
# incremental weights and the normalizing-constant estimator
# ---------------------------------------------------------------------------

@dataclass
class IncrementalWeight:
    """Incremental-weight callable, natural-log scale.

    ``fn(step, prev_states, new_states, rng) -> (N,) log-weights``. ``rng`` is
    only consumed when ``randomized`` is set; a randomized weight must be an
    unbiased estimate (in linear space) of the true weight.
    """

    fn: callable
    randomized: bool = False

    def __call__(self, step, prev_states, new_states, rng):
        return np.asarray(self.fn(step, prev_states, new_states, rng), dtype=float)


@dataclass
class ZEstimatorState:
    """Running pieces of the product-over-epochs normalizing-constant estimate.

    An epoch is the stretch between two resampling times. Per-particle
    log-products of incremental weights accumulate within the open epoch;
    closing an epoch records log((1/N) sum of products). Weighting step 0 is
    folded into the first epoch so the estimate covers the full product of
    incremental weights.
    """

    epoch_log_products: np.ndarray = None
    completed_epoch_log_means: list = field(default_factory=list)

    def start(self, n):
        self.epoch_log_products = np.zeros(n)

    def accumulate(self, log_incr):
        if self.epoch_log_products is None:
            self.start(len(log_incr))
        self.epoch_log_products = self.epoch_log_products + log_incr

    def close_epoch(self):
        n = len(self.epoch_log_products)
        self.completed_epoch_log_means.append(
            float(logsumexp(self.epoch_log_products) - np.log(n))
        )
        self.epoch_log_products = np.zeros(n)

    def log_estimate(self):
        total = sum(self.completed_epoch_log_means)
        if self.epoch_log_products is not None and np.any(self.epoch_log_products != 0.0):
            n = len(self.epoch_log_products)
            total += float(logsumexp(self.epoch_log_products) - np.log(n))
        return total


def estimate_z(state):
    """Normalizing-constant estimate: product of per-epoch mean products."""
    return float(np.exp(state.log_estimate()))


# ---------------------------------------------------------------------------
# SIS / SIR
# ---------------------------------------------------------------------------

@dataclass
class RunTrace:
    """Per-step ESS and the steps at which the cloud was resampled."""

    ess_per_step: list = field(default_factory=list)
    resample_steps: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _as_weight(fn):
    return fn if isinstance(fn, IncrementalWeight) else IncrementalWeight(fn)


def _step_fn(fns, step):
    """Support a single callable or a per-step sequence of callables."""
    if callable(fns):
        return fns
    return fns[step]


def sis_run(init_sampler, proposal, log_weight, n_steps, n_particles, seed):
    """Sequential importance sampling with no resampling.

    Step 0 draws ``init_sampler(n_particles, rng)`` and weights it; steps
    1..n_steps propagate with ``proposal(step, states, rng)`` and weight with
    ``log_weight(step, prev_states, new_states, rng)``.

    Returns (cloud, z_state, ess_trace); aborts with DegenerateCloudError
    carrying the failing step index.
    """
    cloud, z_state, trace = sir_run(
        init_sampler, proposal, log_weight, n_steps, n_particles, seed,
        ResampleConfig(ess_threshold=0.0, rng_seed=seed),
    )
    return cloud, z_state, trace.ess_per_step


def sir_run(init_sampler, proposal, log_weight, n_steps, n_particles, seed, cfg):
    """Sequential importance sampling with ESS-triggered resampling.

    Identical to ``sis_run`` except the cloud is resampled (and a
    normalizing-constant epoch closed) whenever the post-weighting ESS drops
    strictly below ``cfg.ess_threshold``. Returns (cloud, z_state, trace).
    """
    rng = make_stream(seed, "init")
    states = init_sampler(n_particles, rng)
    w0 = _as_weight(_step_fn(log_weight, 0))
    lw = w0(0, None, states, make_stream(seed, "weight", 0))
    if not np.any(np.isfinite(lw)):
        raise DegenerateCloudError(step=0)
    z_state = ZEstimatorState()
    z_state.start(n_particles)
    z_state.accumulate(lw)
    cloud = ParticleCloud(states, lw, np.arange(n_particles), step_index=0)
    trace = RunTrace()

    for step in range(0, n_steps + 1):
        if step > 0:
            prop = _step_fn(proposal, step)
            new_states = prop(step, cloud.states, make_stream(seed, "propose", step))
            wfn = _as_weight(_step_fn(log_weight, step))
            incr = wfn(step, cloud.states, new_states, make_stream(seed, "weight", step))
            lw = cloud.log_weights + incr
            if not np.any(np.isfinite(lw)):
                raise DegenerateCloudError(step=step)
            z_state.accumulate(incr)
            cloud = ParticleCloud(new_states, lw, np.arange(n_particles), step_index=step)
        step_ess = cloud.ess()
        trace.ess_per_step.append(step_ess)
        if step_ess < cfg.ess_threshold:
            z_state.close_epoch()
            cloud = resample(cloud, cfg, make_stream(cfg.rng_seed, "resample", step))
            trace.resample_steps.append(step)
    return cloud, z_state, trace


# ---------------------------------------------------------------------------
# SMC sampler (common state space)
# ---------------------------------------------------------------------------

def smc_sampler_run(cloud, log_targets, mutation_kernels, seed, cfg,
                    z_state=None, trace=None):
    """Anneal a cloud through a sequence of targets on a common space.

    ``log_targets[0]`` is the (unnormalized, log) density the input cloud
    already targets; for n = 1..p the cloud is reweighted by
    ``log_targets[n](x) - log_targets[n-1](x)`` at its current positions,
    resampled when ESS < cfg.ess_threshold, then moved through
    ``mutation_kernels[n-1]`` which must leave ``log_targets[n]`` invariant.
    The backward kernel implied by this weight is the time-reversal of the
    mutation, so the weight never depends on the mutation outcome.

    Mutation kernels are ``kernel(states, rng) -> states`` or
    ``-> (states, stats_dict)``; stats dicts are collected into
    ``trace.extras['mutation_stats']``.
    """
    n = cloud.n_particles
    if z_state is None:
        z_state = ZEstimatorState()
        z_state.start(n)
    if trace is None:
        trace = RunTrace()
    trace.extras.setdefault("mutation_stats", [])

    prev_logpi = np.asarray(log_targets[0](cloud.states), dtype=float)
    for step in range(1, len(log_targets)):
        cur_logpi = np.asarray(log_targets[step](cloud.states), dtype=float)
        incr = np.where(np.isneginf(prev_logpi), -np.inf, cur_logpi - prev_logpi)
        lw = cloud.log_weights + incr
        if not np.any(np.isfinite(lw)):
            raise DegenerateCloudError(step=step)
        z_state.accumulate(incr)
        cloud = ParticleCloud(cloud.states, lw, np.arange(n), cloud.step_index + 1)
        step_ess = cloud.ess()
        trace.ess_per_step.append(step_ess)
        if step_ess < cfg.ess_threshold:
            z_state.close_epoch()
            cloud = resample(cloud, cfg, make_stream(cfg.rng_seed, "smc-resample", step))
            trace.resample_steps.append(step)
        out = mutation_kernels[step - 1](cloud.states, make_stream(seed, "mutate", step))
        if isinstance(out, tuple):
            states, stats = out
            trace.extras["mutation_stats"].append(stats)
        else:
            states = out
        cloud = ParticleCloud(states, cloud.log_weights, cloud.ancestors, cloud.step_index)
        prev_logpi = np.asarray(log_targets[step](cloud.states), dtype=float)
    return cloud, z_state, trace
