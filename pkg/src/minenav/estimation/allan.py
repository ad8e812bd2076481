"""Overlapping Allan deviation for inertial noise characterization.

The log-log slope separates noise families: white noise shows -1/2, rate
random walk +1/2; the white-noise coefficient reads off at tau = 1 s.
"""

from __future__ import annotations

import numpy as np


def allan_deviation(series: np.ndarray, rate: float,
                    num_taus: int = 60) -> list[tuple[float, float]]:
    """Overlapping Allan deviation over log-spaced cluster times.

    Args:
        series: uniformly sampled signal, at least 1000 samples.
        rate: sample rate in Hz.
        num_taus: number of cluster sizes, log-spaced up to N/3.

    Returns:
        List of (cluster time s, deviation) pairs.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 1000:
        raise ValueError("series must contain at least 1000 samples")
    if rate <= 0:
        raise ValueError("rate must be > 0")

    dt = 1.0 / rate
    theta = np.concatenate([[0.0], np.cumsum(x) * dt])   # integrated signal
    max_m = n // 3
    ms = np.unique(np.logspace(0, np.log10(max_m), num_taus).astype(int))
    ms = ms[ms >= 1]

    out = []
    for m in ms:
        # sigma^2(tau) = < (theta[k+2m] - 2 theta[k+m] + theta[k])^2 > / (2 tau^2)
        d = theta[2 * m:] - 2.0 * theta[m:-m] + theta[: -2 * m]
        tau = m * dt
        sigma2 = np.mean(d * d) / (2.0 * tau * tau)
        out.append((tau, float(np.sqrt(sigma2))))
    return out


def loglog_slope(dev: list[tuple[float, float]],
                 tau_range: tuple[float, float]) -> float:
    """Least-squares slope of log(deviation) vs log(tau) over a tau window."""
    taus = np.array([t for t, _ in dev])
    sig = np.array([s for _, s in dev])
    mask = (taus >= tau_range[0]) & (taus <= tau_range[1]) & (sig > 0)
    if mask.sum() < 3:
        raise ValueError("not enough points in tau_range for a slope fit")
    coeffs = np.polyfit(np.log10(taus[mask]), np.log10(sig[mask]), 1)
    return float(coeffs[0])
