"""Run reports: per-repetition rows, aggregates, CSV/JSON emission and
variance comparison between two reports.

CSV files are byte-stable for a fixed (config, seed): floats are emitted with
17 significant digits and timing lives only in report.json.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

VERSION = "0.1.0"


def fmt(x):
    """Float in CSV/JSON: 17 significant digits, enough to round-trip."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class RepRow:
    rep: int
    seed: int
    estimate: float
    ess_final: float = float("nan")
    resample_steps: list = field(default_factory=list)
    wall_ms: float = 0.0
    extras: dict = field(default_factory=dict)


@dataclass
class RunReport:
    """Per-rep rows plus aggregates recomputable from them exactly."""

    label: str
    rows: list
    config: dict = field(default_factory=dict)
    base_seed: int = 0

    @property
    def estimates(self):
        return np.array([r.estimate for r in self.rows], dtype=float)

    def aggregates(self):
        est = self.estimates
        mean = float(np.mean(est))
        var = float(np.var(est, ddof=1)) if len(est) > 1 else 0.0
        sd = math.sqrt(var)
        return {"mean": mean, "sd": sd, "two_sd": 2.0 * sd, "variance": var,
                "n_reps": len(est)}

    def config_hash(self):
        blob = json.dumps(self.config, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class VarianceRatio:
    ratio: float
    se_log10: float

    def __float__(self):
        return self.ratio


def _jackknife_se_logvar(x):
    """Delete-one jackknife SE of log(sample variance)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 3:
        return float("nan")
    idx = np.arange(n)
    loo = np.array([np.var(np.delete(x, i), ddof=1) for i in idx])
    loo = np.log(np.maximum(loo, 1e-300))
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def compare_variance(report_a, report_b):
    """Var(estimates_b) / Var(estimates_a) with a jackknife uncertainty.

    The uncertainty is the SE of log10 of the ratio, combining the two
    reports' independent jackknife SEs in quadrature.
    """
    a = report_a.estimates
    b = report_b.estimates
    if len(a) < 2 or len(b) < 2:
        raise ValueError("variance comparison needs at least 2 reps per report")
    var_a = float(np.var(a, ddof=1))
    var_b = float(np.var(b, ddof=1))
    if var_a == 0.0:
        raise ValueError("report_a has zero variance")
    se = math.hypot(_jackknife_se_logvar(a), _jackknife_se_logvar(b)) / math.log(10)
    return VarianceRatio(ratio=var_b / var_a, se_log10=se)


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------

def write_summary_csv(report, path):
    rows = report.rows
    extra_keys = list(rows[0].extras.keys()) if rows else []
    header = ["rep", "seed", "estimate", "ess_final", "n_resamples",
              "resample_steps"] + extra_keys
    lines = [",".join(header)]
    for r in rows:
        vals = [str(r.rep), str(r.seed), fmt(float(r.estimate)),
                fmt(float(r.ess_final)), str(len(r.resample_steps)),
                ";".join(str(s) for s in r.resample_steps)]
        vals += [fmt(r.extras[k]) if isinstance(r.extras[k], float) else str(r.extras[k])
                 for k in extra_keys]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def write_ess_trace_csv(ess_traces, path):
    lines = ["rep,step,ess"]
    for rep, trace in enumerate(ess_traces):
        for step, value in enumerate(trace):
            lines.append(f"{rep},{step},{fmt(float(value))}")
    path.write_text("\n".join(lines) + "\n")


def write_report_json(report, path, runtime_s=None, extra=None):
    doc = {
        "version": VERSION,
        "label": report.label,
        "config": report.config,
        "config_hash": report.config_hash(),
        "base_seed": report.base_seed,
        "rows": [
            {"rep": r.rep, "seed": r.seed, "estimate": r.estimate,
             "ess_final": r.ess_final, "resample_steps": list(r.resample_steps),
             "wall_ms": r.wall_ms, **r.extras}
            for r in report.rows
        ],
        "aggregates": report.aggregates(),
    }
    if runtime_s is not None:
        doc["runtime_s"] = runtime_s
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, default=float) + "\n")
