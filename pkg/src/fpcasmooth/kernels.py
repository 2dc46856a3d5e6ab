"""Smoothing kernels and their closed-form integrals.

Three kernels are used throughout the package:

* the quartic (biweight) summability kernel ``K`` used to presmooth each curve,
* the centred cubic B-spline ``Qbar`` whose integer translates form a partition
  of unity and drive the linearized (value + slope) interpolation,
* the Gaussian-mollified band indicator ``W`` that blends the diagonal and
  off-diagonal covariance estimates.

Everything here is a pure function of its arguments and is vectorized over
numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

# Centred cubic B-spline support half-width.
C_Q = 2.0


def eval_kernel(x):
    """Quartic kernel ``K(x) = 15/16 (1 - x^2)^2`` on [-1, 1], zero outside."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    return np.where(inside, 0.9375 * (1.0 - x * x) ** 2, 0.0)


def eval_kernel_deriv(x):
    """Analytic derivative ``K'(x) = -(15/4) x (1 - x^2)``; vanishes at +-1."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    return np.where(inside, -3.75 * x * (1.0 - x * x), 0.0)


@dataclass(frozen=True)
class SummabilityKernel:
    """The presmoothing kernel together with its derived constants.

    ``self_convolution_at_zero`` is ``int K(u)^2 du`` (the quantity written
    ``K_2(0)`` in the diagonal-bias formula) and ``second_moment`` is
    ``int u^2 K(u) du``. They are different numbers that happen to share a
    symbol in the literature, so both are kept under distinct names.
    """

    half_support: float = 1.0

    def __call__(self, x):
        return eval_kernel(np.asarray(x) / self.half_support) / self.half_support

    def deriv(self, x):
        return eval_kernel_deriv(np.asarray(x) / self.half_support) / self.half_support**2

    @property
    def self_convolution_at_zero(self) -> float:
        return 5.0 / 7.0 / self.half_support

    @property
    def second_moment(self) -> float:
        return self.half_support**2 / 7.0

    def self_convolution(self, x):
        """``K_2(x) = int K(x - u) K(-u) du`` by Gauss-Legendre quadrature."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes, wts = np.polynomial.legendre.leggauss(24)
        out = np.zeros_like(x)
        b = self.half_support
        for idx, xv in np.ndenumerate(x):
            lo, hi = max(-b, xv - b), min(b, xv + b)
            if hi <= lo:
                continue
            u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
            out[idx] = 0.5 * (hi - lo) * np.sum(wts * self(xv - u) * self(-u))
        return out


def eval_bspline(x):
    """Centred cubic B-spline ``Qbar`` supported on [-2, 2]."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inner = (3.0 * a**3 - 6.0 * a**2 + 4.0) / 6.0
    outer = (2.0 - a) ** 3 / 6.0
    return np.where(a <= 1.0, inner, np.where(a <= 2.0, outer, 0.0))


@dataclass(frozen=True)
class BsplineKernel:
    """Tensor-product B-spline kernel ``Q(s, t) = Qbar(s) Qbar(t)``."""

    half_support: float = C_Q

    def __call__(self, x):
        return eval_bspline(x)

    def tensor(self, s, t, h: float = 1.0):
        """``Q_h(s, t) = Qbar(s/h) Qbar(t/h)`` (no 1/h normalization)."""
        return eval_bspline(np.asarray(s) / h) * eval_bspline(np.asarray(t) / h)


def _cum_q0(b):
    # int_{-2}^{b} Qbar, piecewise closed form
    return np.select(
        [b <= -1.0, b <= 0.0, b <= 1.0],
        [
            (2.0 + b) ** 4 / 24.0,
            1.0 / 24.0 + (-3.0 * b**4 - 8.0 * b**3 + 16.0 * b + 11.0) / 24.0,
            0.5 + (3.0 * b**4 - 8.0 * b**3 + 16.0 * b) / 24.0,
        ],
        default=23.0 / 24.0 + (1.0 - (2.0 - b) ** 4) / 24.0,
    )


def _cum_q1(b):
    # int_{-2}^{b} x Qbar, piecewise closed form
    return np.select(
        [b <= -1.0, b <= 0.0, b <= 1.0],
        [
            (2.0 + b) ** 5 / 30.0 - (2.0 + b) ** 4 / 12.0,
            -1.0 / 20.0 + (-6.0 * b**5 - 15.0 * b**4 + 20.0 * b**2 - 11.0) / 60.0,
            -7.0 / 30.0 + (6.0 * b**5 - 15.0 * b**4 + 20.0 * b**2) / 60.0,
        ],
        default=-1.0 / 20.0 + (2.0 - b) ** 5 / 30.0 - (2.0 - b) ** 4 / 12.0 + 1.0 / 20.0,
    )


def bspline_partial_integral(b, moment: int = 0):
    """``int_{-2}^{b} x^moment Qbar(x) dx`` for moment in {0, 1}.

    ``b`` is clamped to [-2, 2], so the result is 0 below the support and the
    full moment (1 or 0) above it.
    """
    b = np.clip(np.asarray(b, dtype=float), -2.0, 2.0)
    if moment == 0:
        return _cum_q0(b)
    if moment == 1:
        return _cum_q1(b)
    raise ValueError(f"moment must be 0 or 1, got {moment!r}")


def gq(moment: int, y, band: float):
    """``G_j^Q(y) = int_{y - band/2}^{y + band/2} w^j Qbar(w) dw``.

    Exactly zero once the window misses the spline support, i.e. when
    ``|y| > C_Q + band/2``.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    y = np.asarray(y, dtype=float)
    out = bspline_partial_integral(y + 0.5 * band, moment) - bspline_partial_integral(
        y - 0.5 * band, moment
    )
    return np.where(np.abs(y) > C_Q + 0.5 * band, 0.0, out)


def beta_integrals(u, s, h: float, band_A: float):
    """The window integrals (beta_1, beta_2) of the diagonal contribution.

    beta_1(u, s) = int_{u - A h/2}^{u + A h/2} Qbar(((u + v)/2 - s)/h) dv
    beta_2(u, s) = int_{u - A h/2}^{u + A h/2} ((u + v)/2 - s) Qbar(((u + v)/2 - s)/h) dv

    With ``w = ((u + v)/2 - s)/h`` both reduce to ``gq`` over a window of
    width ``A/2`` centred at ``(u - s)/h``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    y = (np.asarray(u, dtype=float) - np.asarray(s, dtype=float)) / h
    b1 = 2.0 * h * gq(0, y, 0.5 * band_A)
    b2 = 2.0 * h * h * gq(1, y, 0.5 * band_A)
    return b1, b2


@dataclass(frozen=True)
class DiagonalWeight:
    """Smoothed indicator of the diagonal band ``|s - t| <= A h / 2``.

    The hard band is convolved with a Gaussian of standard deviation ``tau``
    (default ``h / 10``); the result has the closed form
    ``Phi((d + A h/2)/tau) - Phi((d - A h/2)/tau)`` with ``d = s - t``.
    """

    h: float
    band_A: float = 4.0 * (1.0 + C_Q)
    tau: float | None = None
    kernel_half_support: float = 1.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        min_A = 4.0 * (self.kernel_half_support + C_Q)
        if self.band_A < min_A - 1e-12:
            raise ValueError(f"band constant A={self.band_A} is below 4(B_K + C_Q) = {min_A}")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def width(self) -> float:
        """Full band width ``A h``."""
        return self.band_A * self.h

    @property
    def sd(self) -> float:
        return self.h / 10.0 if self.tau is None else self.tau

    def weight(self, s, t):
        d = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
        half = 0.5 * self.width
        return ndtr((d + half) / self.sd) - ndtr((d - half) / self.sd)

    def complement(self, s, t):
        return 1.0 - self.weight(s, t)


def weight_eval(s, t, weight: DiagonalWeight):
    return weight.weight(s, t)
