"""Error metrics over estimated voltage-state series.

States are rectangular [Re(v); Im(v)]; metrics are reported on magnitudes
(p.u.) and angles (radians, wrapped to (-pi, pi] before taking absolute
values). Since voltages are per-unit with nominal 1.0, RMSE% is simply
100 * RMSE in p.u. Statistics pool over phase-nodes and time steps.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch

METRIC_NAMES = ("rmse_pct", "mae_mag", "mae_ang")


def states_to_polar(x):
    """Split a (steps, 2k) state array into magnitudes and angles (steps, k)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[1] // 2
    v = x[:, :k] + 1j * x[:, k:]
    return np.abs(v), np.angle(v)


def wrap_angle(delta):
    """Wrap angle differences into (-pi, pi]."""
    return np.angle(np.exp(1j * np.asarray(delta)))


def compute_metrics(x_hat, x_true):
    """RMSE% and MAE of magnitude plus MAE of angle for a state series."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    x_true = np.atleast_2d(np.asarray(x_true, dtype=float))
    if x_hat.shape != x_true.shape:
        raise LengthMismatch(f"series shapes differ: {x_hat.shape} vs {x_true.shape}")
    mag_hat, ang_hat = states_to_polar(x_hat)
    mag_true, ang_true = states_to_polar(x_true)
    mag_err = mag_hat - mag_true
    ang_err = wrap_angle(ang_hat - ang_true)
    return {
        "rmse_pct": float(100.0 * np.sqrt(np.mean(mag_err**2))),
        "mae_mag": float(np.mean(np.abs(mag_err))),
        "mae_ang": float(np.mean(np.abs(ang_err))),
    }


def summarize(rows):
    """Min/mean/max per (method, alpha, metric) from long-format rows."""
    groups = {}
    for row in rows:
        key = (row["method"], row["alpha"], row["metric"])
        groups.setdefault(key, []).append(row["value"])
    summary = []
    for (method, alpha, metric) in sorted(groups):
        values = np.array(groups[(method, alpha, metric)])
        summary.append({
            "method": method,
            "alpha": alpha,
            "metric": metric,
            "min": float(values.min()),
            "mean": float(values.mean()),
            "max": float(values.max()),
        })
    return summary
