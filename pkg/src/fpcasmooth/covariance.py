"""Covariance surface assembly: off-diagonal, diagonal and merged estimators."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ExcludedCurvesWarning, GridMismatch, NoEligibleCurves
from .kernels import C_Q, DiagonalWeight, eval_bspline
from .presmooth import PresmoothedBatch, PresmoothedCurve, SmoothGrid, linearized_eval


def fft_convolve(a, b):
    """Full linear convolution via zero-padded real FFT.

    ``a`` may carry leading batch dimensions; the convolution runs along the
    last axis. ``b`` is one-dimensional.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] < 1 or b.size < 1:
        raise ValueError("inputs must be non-empty")
    n_out = a.shape[-1] + b.size - 1
    nfft = scipy.fft.next_fast_len(n_out, real=True)
    fa = scipy.fft.rfft(a, nfft, axis=-1)
    fb = scipy.fft.rfft(b, nfft)
    return scipy.fft.irfft(fa * fb, nfft, axis=-1)[..., :n_out]


def spline_filters(h: float, refine: int):
    """Sampled ``Qbar(x)`` and ``h x Qbar(x)`` at ``x = k/refine``, k = -2r..2r."""
    x = np.arange(-int(C_Q) * refine, int(C_Q) * refine + 1) / refine
    q = eval_bspline(x)
    return q, h * x * q


def lattice_apply(values, derivs, f0, f1, refine: int, count: int):
    """``sum_l values_l f0[x_p - s_l] + derivs_l f1[x_p - s_l]`` at ``x_p = p h / refine``.

    ``f0``/``f1`` are filters sampled at lattice offsets ``-R..R`` (odd
    length, centred). Knots sit at ``(l - C_Q) h``, i.e. every ``refine``-th
    lattice point starting ``C_Q h`` left of 0.
    """
    values = np.asarray(values, dtype=float)
    derivs = np.asarray(derivs, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    if f0.size % 2 == 0 or f0.size != f1.size:
        raise ValueError("filters must share an odd length")
    R = f0.size // 2
    L = values.shape[-1]
    up_len = (L - 1) * refine + 1
    A = np.zeros(values.shape[:-1] + (up_len,))
    B = np.zeros_like(A)
    A[..., ::refine] = values
    B[..., ::refine] = derivs
    start = int(C_Q) * refine + R
    full = fft_convolve(A, f0) + fft_convolve(B, f1)
    out = full[..., start:start + count]
    if out.shape[-1] < count:
        pad = np.zeros(out.shape[:-1] + (count - out.shape[-1],))
        out = np.concatenate([out, pad], axis=-1)
    return out


def linearized_on_lattice(values, derivs, h: float, refine: int, count: int):
    """Linearized interpolation at ``x_p = p h / refine`` for p < count.

    The knot vectors are upsampled by ``refine`` and convolved with the
    sampled spline filters.
    """
    q0, q1 = spline_filters(h, refine)
    return lattice_apply(values, derivs, q0, q1, refine, count)


def curves_on_nodes(batch: PresmoothedBatch, grid: SmoothGrid) -> np.ndarray:
    """Linearized presmoothed curves ``V_i(u_p)`` at every evaluation node."""
    return linearized_on_lattice(batch.X, batch.Xd, grid.h, grid.refine, grid.P)


@dataclass(frozen=True, eq=False)
class CovarianceSurface:
    """Symmetric covariance values on a node set with quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    kind: str = "merged"
    h: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.nodes.size, self.nodes.size):
            raise GridMismatch("surface values must be a square matrix over the nodes")

    def same_grid(self, other) -> bool:
        return self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)

    def interpolate(self, s, t):
        """Bilinear interpolation at arbitrary (s, t) inside the node range."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        i, fs = _locate(self.nodes, s)
        j, ft = _locate(self.nodes, t)
        v = self.values
        return (
            (1 - fs) * (1 - ft) * v[i, j]
            + fs * (1 - ft) * v[i + 1, j]
            + (1 - fs) * ft * v[i, j + 1]
            + fs * ft * v[i + 1, j + 1]
        )


def _locate(nodes, x):
    i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    frac = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, frac


def interp_weights(nodes, x):
    """Index/fraction pair for linear interpolation on ``nodes``."""
    return _locate(nodes, np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class DiagonalCurve:
    """Diagonal estimate on the nodes, with exact evaluation anywhere.

    ``half_values`` sample the curve at node midpoints as well (length
    ``2P - 1``) so that ``C_*((s + t)/2)`` is available for every node pair.
    """

    nodes: np.ndarray
    values: np.ndarray
    half_values: np.ndarray
    evaluator: object = None

    def at(self, t):
        if self.evaluator is None:
            return np.interp(t, self.nodes, self.values)
        return self.evaluator(np.asarray(t, dtype=float))


def offdiag_from_nodes(Z: np.ndarray, w: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """``n_e^{-1} sum_i w_i Z_i Z_i^T`` over eligible curves."""
    Ze = Z[eligible]
    C = (Ze.T * w[eligible]) @ Ze / Ze.shape[0]
    return 0.5 * (C + C.T)


def estimate_offdiag(curves, grid: SmoothGrid) -> CovarianceSurface:
    """Off-diagonal estimator ``C~_h`` on the evaluation nodes.

    Curves with a single observation have no cross products and are skipped
    (``m/(m-1)`` is undefined for them).
    """
    batch = _as_batch(curves)
    eligible = batch.eligible
    if not eligible.any():
        raise NoEligibleCurves("no curve has two or more observations")
    if not eligible.all():
        warnings.warn(
            f"{int((~eligible).sum())} single-observation curve(s) excluded from the off-diagonal fit",
            ExcludedCurvesWarning,
            stacklevel=2,
        )
    Z = curves_on_nodes(batch, grid) / grid.denom_nodes
    C = offdiag_from_nodes(Z, batch.weights, eligible)
    return CovarianceSurface(grid.nodes, grid.weights, C, "offdiag", grid.h)


def diag_from_knots(S_mean, Sd_mean, grid: SmoothGrid) -> DiagonalCurve:
    half = linearized_on_lattice(S_mean, Sd_mean, grid.h, 2 * grid.refine, 2 * grid.P - 1)
    half_nodes = np.arange(2 * grid.P - 1) * (0.5 * grid.spacing)
    half = half / grid.denom(half_nodes)

    def evaluator(t):
        return linearized_eval(S_mean, Sd_mean, grid.knots, grid.h, t) / grid.denom(t)

    return DiagonalCurve(grid.nodes, half[::2].copy(), half, evaluator)


def estimate_diag(curves, grid: SmoothGrid) -> DiagonalCurve:
    """Diagonal estimator ``C_*`` of ``C(t, t) + sigma^2``."""
    batch = _as_batch(curves)
    return diag_from_knots(batch.S.mean(axis=0), batch.Sd.mean(axis=0), grid)


def merge(
    offdiag: CovarianceSurface,
    diag: DiagonalCurve,
    sigma2: float,
    weight: DiagonalWeight,
) -> CovarianceSurface:
    """Blend ``C~`` away from the diagonal with ``max(C_* - sigma2, h^2)`` near it."""
    if offdiag.nodes.size != diag.nodes.size or not np.allclose(offdiag.nodes, diag.nodes):
        raise GridMismatch("off-diagonal surface and diagonal curve live on different grids")
    nodes = offdiag.nodes
    P = nodes.size
    W = weight.weight(nodes[:, None], nodes[None, :])
    idx = np.arange(P)
    mid = diag.half_values[idx[:, None] + idx[None, :]]
    diag_part = np.maximum(mid - sigma2, weight.h**2)
    values = (1.0 - W) * offdiag.values + W * diag_part
    values = 0.5 * (values + values.T)
    return CovarianceSurface(nodes, offdiag.weights, values, "merged", offdiag.h)


def naive_covariance(curves, grid: SmoothGrid) -> CovarianceSurface:
    """Empirical covariance ``n^{-1} sum_i X~_i(s_l) X~_i(s_l')`` on the knots."""
    batch = _as_batch(curves)
    C = batch.X.T @ batch.X / batch.n
    knots = grid.knots
    w = np.full(knots.size, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return CovarianceSurface(knots, w, 0.5 * (C + C.T), "naive", grid.h)


def _as_batch(curves) -> PresmoothedBatch:
    if isinstance(curves, PresmoothedBatch):
        return curves
    curves = list(curves)
    if not curves:
        raise NoEligibleCurves("empty curve collection")
    return PresmoothedBatch(
        [c.id for c in curves],
        np.vstack([c.x_tilde for c in curves]),
        np.vstack([c.x_tilde_deriv for c in curves]),
        np.vstack([c.s_vals for c in curves]),
        np.vstack([c.s_deriv for c in curves]),
        np.array([c.m for c in curves]),
    )


def write_surface_csv(path, surface: CovarianceSurface) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([repr(float(x)) for x in surface.nodes])
        for row in surface.values:
            wr.writerow([repr(float(x)) for x in row])


def read_surface_csv(path, kind: str = "merged") -> CovarianceSurface:
    from .presmooth import _trapezoid_weights

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    nodes = np.array([float(x) for x in rows[0]])
    values = np.array([[float(x) for x in r] for r in rows[1:]])
    weights = _trapezoid_weights(nodes, min(1.0, nodes[-1])) if nodes[-1] >= 1.0 else _trapezoid_weights(nodes, nodes[-1])
    return CovarianceSurface(nodes, weights, values, kind)


__all__ = [
    "CovarianceSurface",
    "DiagonalCurve",
    "PresmoothedCurve",
    "diag_from_knots",
    "estimate_diag",
    "estimate_offdiag",
    "fft_convolve",
    "merge",
    "naive_covariance",
    "read_surface_csv",
    "write_surface_csv",
]
