"""Posterior summaries, residual decomposition, and prediction trajectories.

Quantiles are computed by linear interpolation between order statistics
(numpy's default rule), fixed here so intervals are reproducible.
"""

from __future__ import annotations

import numpy as np

from .data import ValidationError

__all__ = [
    "summarize_trace",
    "summary_rows",
    "mrse_decomposition",
    "predict_group_trajectory",
]


def summary_rows(trace, level=0.95):
    """Per-parameter summary dicts: mean, SD, equal-tailed interval, and a
    significance flag (interval excludes zero)."""
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    if trace.n_samples < 2:
        raise ValidationError("need at least 2 stored samples to summarize")
    tail = (1.0 - level) / 2.0
    rows = []
    for group, labels, draws in trace.parameter_groups():
        # sorting first makes every statistic exactly invariant to the
        # stored-sample order
        draws = np.sort(draws, axis=0)
        lo = np.quantile(draws, tail, axis=0)
        hi = np.quantile(draws, 1.0 - tail, axis=0)
        mean = draws.mean(axis=0)
        sd = draws.std(axis=0, ddof=1)
        for j, label in enumerate(labels):
            rows.append(
                {
                    "group": group,
                    "parameter": label,
                    "mean": float(mean[j]),
                    "sd": float(sd[j]),
                    "lo": float(lo[j]),
                    "hi": float(hi[j]),
                    "significant": bool(lo[j] > 0.0 or hi[j] < 0.0),
                }
            )
    return rows


def summarize_trace(trace, level=0.95):
    """Summary table as (header, rows of strings) ready for CSV output."""
    header = ["group", "parameter", "mean", "sd", "lo", "hi", "significant"]
    out = []
    for r in summary_rows(trace, level):
        out.append(
            [r["group"], r["parameter"], repr(r["mean"]), repr(r["sd"]),
             repr(r["lo"]), repr(r["hi"]), "1" if r["significant"] else "0"]
        )
    return header, out


def mrse_decomposition(y, z_bar, mu_bar, lambda_bar, breaks=(0.05, 1.0)):
    """Mean residual squared error split by reporting-rate bins.

    Within each bin of posterior-mean rates the average of (y - mu_bar)^2
    decomposes exactly into a measurement part (y - z_bar)^2, a sampling
    part (z_bar - mu_bar)^2 and a cross product.
    """
    y = np.asarray(y, dtype=float)
    z_bar = np.asarray(z_bar, dtype=float)
    mu_bar = np.asarray(mu_bar, dtype=float)
    if lambda_bar is None:
        raise ValidationError("rate means unavailable (trace is not from the "
                              "reporting model)")
    lambda_bar = np.asarray(lambda_bar, dtype=float)
    breaks = sorted(float(b) for b in breaks)
    edges = [-np.inf] + breaks + [np.inf]
    labels = (
        [f"lambda<{breaks[0]:g}"]
        + [f"{a:g}<=lambda<{b:g}" for a, b in zip(breaks[:-1], breaks[1:])]
        + [f"lambda>={breaks[-1]:g}"]
    )
    rows = []
    for lo, hi, label in zip(edges[:-1], edges[1:], labels):
        sel = (lambda_bar >= lo) & (lambda_bar < hi)
        m = int(sel.sum())
        if m == 0:
            rows.append({"bin": label, "m": 0, "mrse": None, "measurement": None,
                         "sampling": None, "cross": None})
            continue
        resid = y[sel] - mu_bar[sel]
        meas = y[sel] - z_bar[sel]
        samp = z_bar[sel] - mu_bar[sel]
        mrse = float(resid @ resid / m)
        rows.append(
            {
                "bin": label,
                "m": m,
                "mrse": mrse,
                "measurement": float(meas @ meas / m),
                "sampling": float(samp @ samp / m),
                "cross": float(2.0 * meas @ samp / m),
            }
        )
    for r in rows:
        if r["m"]:
            r["measurement_share"] = r["measurement"] / r["mrse"] if r["mrse"] else 0.0
            r["sampling_share"] = r["sampling"] / r["mrse"] if r["mrse"] else 0.0
            r["cross_share"] = r["cross"] / r["mrse"] if r["mrse"] else 0.0
        else:
            r["measurement_share"] = r["sampling_share"] = r["cross_share"] = None
    return rows


def predict_group_trajectory(trace, profile, level=0.95):
    """Posterior mean and prediction band of the group-average count over
    time, at the supplied covariate profile with the subject effect at zero.

    profile: list of (group, time, x-row) triples; x rows are aligned to the
    trace's coefficient order.  Returns (group, time, mean, lo, hi) rows.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    out = []
    p = trace.alpha.shape[1]
    for group, time, x in profile:
        x = np.asarray(x, dtype=float)
        if x.shape != (p,):
            raise ValidationError(
                f"profile row for group {group!r} at time {time!r} has "
                f"{x.size} covariates, trace has {p}"
            )
        mu = np.exp(trace.alpha @ x)
        out.append(
            {
                "group": group,
                "time": float(time),
                "mean": float(mu.mean()),
                "lo": float(np.quantile(mu, tail)),
                "hi": float(np.quantile(mu, 1.0 - tail)),
            }
        )
    return out
