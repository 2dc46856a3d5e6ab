"""Kernel estimate of the mean function and its closed-form leave-one-out update."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput, NeedAtLeastTwoCurves
from .presmooth import Density, SummabilityKernel, DEFAULT_KERNEL


def curve_smooths(curves, nodes, h_mu: float, kernel: SummabilityKernel = DEFAULT_KERNEL, values=None):
    """Per-curve ``m_i^{-1} sum_j Y_ij K_h(t - T_ij)`` at ``nodes``; shape (n, P)."""
    if not h_mu > 0:
        raise InvalidInput("mean bandwidth must be positive")
    nodes = np.asarray(nodes, dtype=float)
    out = np.zeros((len(curves), nodes.size))
    for i, c in enumerate(curves):
        y = c.values if values is None else np.asarray(values[i], dtype=float)
        k = kernel((nodes[:, None] - c.times[None, :]) / h_mu) / h_mu
        out[i] = k @ y / c.m
    return out


def mean_denominator(curves, nodes, h_mu: float, density: Density, mode: str = "density",
                     boundary: str = "renormalize", kernel: SummabilityKernel = DEFAULT_KERNEL):
    """Normalizer applied to the averaged smoothers.

    ``"density"`` divides by g (kernel-smoothed over [0, 1] when
    ``boundary="renormalize"``); ``"empirical"`` divides by the average
    smoother of ones, which makes the estimate shift exactly with the data.
    """
    nodes = np.asarray(nodes, dtype=float)
    if mode == "empirical":
        ones = [np.ones(c.m) for c in curves]
        den = curve_smooths(curves, nodes, h_mu, kernel, ones).mean(axis=0)
        return np.where(den > 0, den, np.inf)
    if mode != "density":
        raise InvalidInput(f"unknown mean denominator {mode!r}")
    if boundary == "none":
        return density(nodes)
    x, wq = np.polynomial.legendre.leggauss(24)
    out = np.empty(nodes.size)
    b = kernel.half_support * h_mu
    for p, t in enumerate(nodes):
        lo, hi = max(0.0, t - b), min(1.0, t + b)
        if hi <= lo:
            out[p] = np.inf
            continue
        s = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        out[p] = 0.5 * (hi - lo) * np.sum(wq * density(s) * kernel((t - s) / h_mu)) / h_mu
    return out


def estimate_mean(curves, nodes, h_mu: float, density: Density, mode: str = "density",
                  boundary: str = "renormalize", kernel: SummabilityKernel = DEFAULT_KERNEL):
    """``g(t)^{-1} n^{-1} sum_i m_i^{-1} sum_j Y_ij K_h(t - T_ij)`` on ``nodes``."""
    if len(curves) == 0:
        return np.zeros(np.asarray(nodes).size)
    sm = curve_smooths(curves, nodes, h_mu, kernel)
    den = mean_denominator(curves, nodes, h_mu, density, mode, boundary, kernel)
    return sm.mean(axis=0) / den


def loo_mean(smooths: np.ndarray, i: int, mu: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """Mean without curve ``i`` from the full-sample estimate, no refit.

    ``smooths`` are the per-curve smoothers, ``denom`` the (fixed) normalizer.
    """
    n = smooths.shape[0]
    if n < 2:
        raise NeedAtLeastTwoCurves("leave-one-out mean needs at least two curves")
    return mu + (mu - smooths[i] / denom) / (n - 1)


def loo_means(smooths: np.ndarray, mu: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """All leave-one-out means at once; shape (n, P)."""
    n = smooths.shape[0]
    if n < 2:
        raise NeedAtLeastTwoCurves("leave-one-out mean needs at least two curves")
    return mu + (mu - smooths / denom) / (n - 1)
