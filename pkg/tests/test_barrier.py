"""Tests for the barrier-option estimators."""

import math

import numpy as np
import pytest

from smcprice.barrier import (
    BarrierSpec,
    PotentialConfig,
    price_barrier_sir,
    price_barrier_sis,
    price_barrier_tempered,
)
from smcprice.core import DegenerateCloudError, ResampleConfig
from smcprice.models import BnsParams, GbmParams, bs_call_price

from oracles import barrier_price_quadrature_m2, truncated_lognormal_call

GBM = GbmParams(r=0.01, sigma=0.75, s0=10.0)


def _spec(m, lo=5.0, hi=np.inf, dt=0.5, strike=10.0):
    return BarrierSpec.uniform(lo, hi, strike, 0.01, m, dt, 10.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        BarrierSpec.uniform(12.0, np.inf, 10.0, 0.01, 5, 0.5, 10.0)  # s0 outside
    with pytest.raises(ValueError):
        BarrierSpec(intervals=[(5.0, np.inf)], strike=10.0, rate=0.01,
                    monitor_times=[], s0=10.0)


def test_inactive_barrier_is_plain_mc_vanilla():
    spec = _spec(3, lo=0.0, hi=np.inf)
    report = price_barrier_sis(spec, GBM, 100_000, seed=21, reps=24)
    # weights are identically one
    assert all(r.ess_final == pytest.approx(100_000.0, rel=1e-9) for r in report.rows)
    assert all(r.extras["z_estimate"] == pytest.approx(1.0, rel=1e-12)
               for r in report.rows)
    exact = bs_call_price(10.0, 10.0, GBM.r, GBM.sigma, 1.5)
    agg = report.aggregates()
    se = agg["sd"] / math.sqrt(len(report.rows))
    assert abs(agg["mean"] - exact) <= 3.0 * se


def test_single_period_matches_truncated_lognormal():
    spec = _spec(1)
    report = price_barrier_sis(spec, GBM, 50_000, seed=3, reps=10)
    expected_payoff, prob = truncated_lognormal_call(10.0, 10.0, 5.0, np.inf,
                                                     GBM.r, GBM.sigma, 0.5)
    exact = math.exp(-0.01 * 0.5) * expected_payoff
    agg = report.aggregates()
    se = agg["sd"] / math.sqrt(len(report.rows))
    assert abs(agg["mean"] - exact) <= 3.0 * se
    # single deterministic previous state: Z is exactly the survival probability
    assert report.rows[0].extras["z_estimate"] == pytest.approx(prob, rel=1e-12)


@pytest.mark.parametrize("method", ["sis", "sir", "tempered"])
def test_two_period_estimators_match_quadrature(method):
    spec = _spec(2)
    oracle = barrier_price_quadrature_m2(spec, GBM)
    cfg = ResampleConfig(ess_threshold=25_000, rng_seed=77)
    if method == "sis":
        report = price_barrier_sis(spec, GBM, 50_000, seed=77, reps=10)
    elif method == "sir":
        report = price_barrier_sir(spec, GBM, 50_000, seed=77, cfg=cfg, reps=10)
    else:
        pot = PotentialConfig(intro_step=1, kappa0=0.05, kappa_step=0.05)
        report = price_barrier_tempered(spec, GBM, 50_000, seed=77, cfg=cfg,
                                        pot=pot, reps=10)
    agg = report.aggregates()
    se = agg["sd"] / math.sqrt(len(report.rows))
    assert abs(agg["mean"] - oracle) <= 3.0 * se


def test_sir_threshold_zero_matches_sis_bitwise():
    spec = _spec(6)
    cfg = ResampleConfig(ess_threshold=0.0, rng_seed=5)
    a = price_barrier_sis(spec, GBM, 2_000, seed=5, reps=3)
    b = price_barrier_sir(spec, GBM, 2_000, seed=5, cfg=cfg, reps=3)
    for ra, rb in zip(a.rows, b.rows):
        assert ra.estimate == rb.estimate
        assert ra.ess_final == rb.ess_final


def test_tempered_null_schedule_is_bit_identical_to_sir():
    spec = _spec(8)
    cfg = ResampleConfig(ess_threshold=1_000, rng_seed=9)
    pot = PotentialConfig.null()
    a = price_barrier_sir(spec, GBM, 2_000, seed=9, cfg=cfg, reps=3)
    b = price_barrier_tempered(spec, GBM, 2_000, seed=9, cfg=cfg, pot=pot, reps=3)
    for ra, rb in zip(a.rows, b.rows):
        assert ra.estimate == rb.estimate
        assert ra.resample_steps == rb.resample_steps


def test_sis_ess_decays_with_horizon():
    finals = []
    for m in (5, 15, 25):
        report = price_barrier_sis(_spec(m), GBM, 10_000, seed=31, reps=3)
        finals.append(np.mean([r.ess_final for r in report.rows]))
    assert finals[0] > finals[1] > finals[2]


def test_sir_ess_recovers_after_resample():
    spec = _spec(25)
    cfg = ResampleConfig(ess_threshold=15_000, rng_seed=13)
    report = price_barrier_sir(spec, GBM, 30_000, seed=13, cfg=cfg, reps=2)
    for trace in report.ess_traces:
        below = [e < 15_000 for e in trace]
        assert not any(a and b for a, b in zip(below, below[1:]))


def test_degenerate_setup_aborts():
    # a barrier strip so far above the start that survival underflows to zero
    spec = BarrierSpec(intervals=[(10.0, 11.0), (1e5, 1e5 + 1.0)], strike=10.0,
                       rate=0.01, monitor_times=[0.5, 1.0], s0=10.0)
    tight = GbmParams(r=0.01, sigma=0.05, s0=10.0)
    with pytest.raises((DegenerateCloudError, ValueError)):
        price_barrier_sis(spec, tight, 500, seed=1, reps=1)


# ---------------------------------------------------------------------------
# stochastic-volatility variant
# ---------------------------------------------------------------------------

BNS = BnsParams(mu=0.01, lam=1.0, nu=0.3, v0=0.3, s0=10.0)


def test_bns_inactive_barrier_weights_are_one():
    spec = BarrierSpec.uniform(0.0, np.inf, 10.0, 0.01, 4, 0.5, 10.0)
    report = price_barrier_sis(spec, BNS, 20_000, seed=17, reps=3)
    assert all(r.ess_final == pytest.approx(20_000.0, rel=1e-9) for r in report.rows)
    assert all(r.extras["z_estimate"] == pytest.approx(1.0, rel=1e-9)
               for r in report.rows)


def test_bns_conditioned_paths_stay_inside():
    spec = BarrierSpec.uniform(5.0, 40.0, 10.0, 0.01, 6, 0.5, 10.0)
    report = price_barrier_sir(spec, BNS, 5_000, seed=19,
                               cfg=ResampleConfig(ess_threshold=2_500, rng_seed=19),
                               reps=2)
    agg = report.aggregates()
    assert np.isfinite(agg["mean"]) and agg["mean"] >= 0.0


def test_bns_single_period_price_against_mixture_quadrature():
    # m=1: price = E_blocks[ e^{-r dt} * truncated-lognormal payoff(sigma_tilde) ];
    # estimate the outer expectation by direct block simulation, which shares
    # nothing with the particle machinery
    spec = BarrierSpec.uniform(5.0, np.inf, 10.0, 0.01, 1, 0.5, 10.0)
    report = price_barrier_sis(spec, BNS, 40_000, seed=23, reps=8)
    from smcprice.core import make_stream
    from smcprice.models import VolState, bns_advance_vol, bns_sample_vol_block

    rng = make_stream(900, "bns-oracle")
    vals = []
    for _ in range(4_000):
        block = bns_sample_vol_block(BNS, 0.5, rng)
        vol = bns_advance_vol(VolState(sigma_bar=BNS.v0), block, BNS)
        sigma_eff = math.sqrt(vol.sigma_tilde / 0.5)
        # match the BNS drift convention: log-price mean shift is mu*dt
        mu_equiv = BNS.mu + 0.5 * sigma_eff ** 2
        payoff, _ = truncated_lognormal_call(10.0, 10.0, 5.0, np.inf,
                                             mu_equiv, sigma_eff, 0.5)
        vals.append(math.exp(-0.01 * 0.5) * payoff)
    oracle = float(np.mean(vals))
    oracle_se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    agg = report.aggregates()
    se = math.hypot(agg["sd"] / math.sqrt(len(report.rows)), oracle_se)
    assert abs(agg["mean"] - oracle) <= 3.0 * se
