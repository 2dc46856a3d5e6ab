"""Measurement-noise variance from the gap between two diagonal estimates.

``C_*(t)`` estimates ``C(t, t) + sigma^2`` from squared observations, while the
oblique average of the off-diagonal surface at ``(t - u h, t + u h)`` estimates
``C(t, t)`` alone. Their averaged difference over [T0, T1] is the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceSurface, DiagonalCurve, interp_weights
from .errors import DomainExceeded, GridMismatch, InvalidConfig
from .kernels import C_Q


MIXINGS = ("uniform", "quadratic")


@dataclass(frozen=True)
class SigmaConfig:
    """Oblique-interpolation settings.

    Offsets ``u`` (in units of h) range over [A1, A2]. Points
    ``(t - u h, t + u h)`` are free of same-observation products once
    ``2 u h`` exceeds the contamination diameter ``2 (B_K + C_Q) h``, i.e.
    ``u > B_K + C_Q``.

    ``A2=None`` uses all the room left by [T0, T1]:
    ``A2 = min(T0, 1 - T1) / h``.

    ``mixing="uniform"`` averages the oblique profile over u. ``"quadratic"``
    fits ``c0 + c2 u^2`` to the profile by least squares and keeps ``c0``,
    which removes the leading curvature bias of reading C(t, t) off points a
    distance ``u h`` from the diagonal. Both are fixed linear weights on the
    midpoint nodes and sum to one.
    """

    A1: float = 3.25
    A2: float | None = None
    T0: float = 0.25
    T1: float = 0.75
    n_quad: int = 64
    n_t: int = 201
    mixing: str = "quadratic"
    kernel_half_support: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.T0 < self.T1 < 1.0):
            raise InvalidConfig("need 0 < T0 < T1 < 1")
        a_min = self.kernel_half_support + C_Q
        if not self.A1 > a_min:
            raise InvalidConfig(f"A1={self.A1} must exceed the contamination radius {a_min}")
        if self.A2 is not None and not self.A2 > self.A1:
            raise InvalidConfig("A2 must exceed A1")
        if self.n_quad < 32:
            raise InvalidConfig("use at least 32 quadrature nodes for the mixing distribution")
        if self.n_t < 3:
            raise InvalidConfig("n_t must be at least 3")
        if self.mixing not in MIXINGS:
            raise InvalidConfig(f"mixing must be one of {MIXINGS}")

    def upper(self, h: float) -> float:
        if self.A2 is not None:
            return self.A2
        top = min(self.T0, 1.0 - self.T1) / h
        if not top > self.A1:
            raise DomainExceeded(f"no oblique offsets fit inside [0, 1] at h={h}")
        return top

    def u_nodes(self, h: float) -> np.ndarray:
        a2 = self.upper(h)
        k = np.arange(self.n_quad)
        return self.A1 + (k + 0.5) * (a2 - self.A1) / self.n_quad

    def u_weights(self, h: float) -> np.ndarray:
        u = self.u_nodes(h)
        if self.mixing == "uniform":
            return np.full(u.size, 1.0 / u.size)
        X = np.column_stack([np.ones_like(u), u * u])
        # first row of the least-squares solution operator
        return np.linalg.pinv(X)[0]

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(self.T0, self.T1, self.n_t)

    def check_domain(self, h: float, lo: float, hi: float) -> None:
        a2 = self.upper(h)
        if self.T0 - a2 * h < lo - 1e-12 or self.T1 + a2 * h > hi + 1e-12:
            raise DomainExceeded(
                f"t +- A2 h leaves [{lo}, {hi}] for h={h}; reduce h, A2, or widen [T0, T1] margins"
            )


def oblique_diagonal(offdiag: CovarianceSurface, cfg: SigmaConfig, h: float) -> DiagonalCurve:
    """``int 1/2 (C~(t - u h, t + u h) + C~(t + u h, t - u h)) dG(u)`` on ``cfg.t_grid``.

    Surface values come from bilinear interpolation; the mixing integral uses
    the midpoint nodes with the weights of ``cfg.u_weights``.
    """
    cfg.check_domain(h, offdiag.nodes[0], offdiag.nodes[-1])
    t = cfg.t_grid
    u = cfg.u_nodes(h)
    lo = t[:, None] - u[None, :] * h
    hi = t[:, None] + u[None, :] * h
    vals = 0.5 * (offdiag.interpolate(lo, hi) + offdiag.interpolate(hi, lo))
    est = vals @ cfg.u_weights(h)
    return DiagonalCurve(t, est, est)


def oblique_rank_one(Z: np.ndarray, nodes: np.ndarray, cfg: SigmaConfig, h: float) -> np.ndarray:
    """Per-row oblique average of the rank-one surfaces ``z z^T`` (rows of Z)."""
    cfg.check_domain(h, nodes[0], nodes[-1])
    t = cfg.t_grid
    u = cfg.u_nodes(h)
    lo = (t[:, None] - u[None, :] * h).ravel()
    hi = (t[:, None] + u[None, :] * h).ravel()
    il, fl = interp_weights(nodes, lo)
    ih, fh = interp_weights(nodes, hi)
    zl = Z[:, il] * (1 - fl) + Z[:, il + 1] * fl
    zh = Z[:, ih] * (1 - fh) + Z[:, ih + 1] * fh
    return (zl * zh).reshape(Z.shape[0], t.size, u.size) @ cfg.u_weights(h)


def interval_mean(values: np.ndarray, cfg: SigmaConfig) -> np.ndarray:
    """Trapezoid average over [T0, T1] along the last axis (samples on t_grid)."""
    return np.trapezoid(values, cfg.t_grid, axis=-1) / (cfg.T1 - cfg.T0)


def estimate_sigma2(diag: DiagonalCurve, oblique: DiagonalCurve, cfg: SigmaConfig) -> float:
    """Average of ``C_*(t) - C0(t)`` over [T0, T1]; may come out negative."""
    t = cfg.t_grid
    if oblique.nodes.shape != t.shape or not np.allclose(oblique.nodes, t):
        raise GridMismatch("oblique diagonal must be sampled on the configured t grid")
    if diag.evaluator is not None:
        d = diag.at(t)
    elif diag.nodes.shape == t.shape and np.allclose(diag.nodes, t):
        d = diag.values
    else:
        raise GridMismatch("diagonal curve cannot be evaluated on the sigma grid")
    return float(interval_mean(d - oblique.values, cfg))


def floor_sigma2(sigma2: float, floor: float = 0.0) -> float:
    return max(float(sigma2), floor)
