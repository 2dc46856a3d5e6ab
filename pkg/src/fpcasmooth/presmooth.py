"""Per-curve kernel presmoothing onto the bandwidth grid.

Each curve's raw observations are turned into four knot vectors: the kernel
smoother ``X~(s_l)`` of the values, the smoother ``S(s_l)`` of the squared
values, and their analytic derivatives. Off-knot values are then produced by
the linearized interpolation

    f(s) ~ sum_l [f(s_l) + (s - s_l) f'(s_l)] Qbar((s - s_l)/h),

which reproduces affine functions exactly because the integer translates of
``Qbar`` sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .errors import InvalidInput, NoData, NonFiniteInput
from .kernels import C_Q, SummabilityKernel, eval_bspline

DEFAULT_KERNEL = SummabilityKernel()


@dataclass(frozen=True, eq=False)
class ObservedCurve:
    """One subject's design points ``times`` in [0, 1] and noisy ``values``."""

    id: object
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.values, dtype=float).ravel()
        if t.shape != y.shape:
            raise InvalidInput(f"curve {self.id!r}: times and values differ in length")
        if t.size == 0:
            raise InvalidInput(f"curve {self.id!r}: no observations")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise NonFiniteInput(f"curve {self.id!r}: non-finite time or value")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise InvalidInput(f"curve {self.id!r}: times must lie in [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)

    @property
    def m(self) -> int:
        return self.times.size


def check_curves(curves: Sequence[ObservedCurve]) -> list[ObservedCurve]:
    curves = list(curves)
    if not curves:
        raise NoData("dataset contains no curves")
    return curves


# ---------------------------------------------------------------------------
# design density


@dataclass(frozen=True, eq=False)
class Density:
    """Design density ``g`` on [0, 1] with known lower/upper bounds."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    lower: float
    upper: float

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def uniform_density() -> Density:
    return Density("uniform", lambda x: np.ones_like(x, dtype=float), 1.0, 1.0)


def linear_density() -> Density:
    """Truncated linear density ``g(t) = 1/2 + t`` on [0, 1]."""
    return Density("linear", lambda x: 0.5 + np.clip(x, 0.0, 1.0), 0.5, 1.5)


def estimate_density(times, floor: float = 0.05, bw_method="silverman") -> Density:
    """Reflected Gaussian KDE of the pooled design points, clipped below."""
    times = np.asarray(times, dtype=float).ravel()
    if times.size < 2 or np.ptp(times) == 0:
        return uniform_density()
    kde = gaussian_kde(times, bw_method=bw_method)

    def g(x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        flat = x.ravel()
        val = kde(flat) + kde(-flat) + kde(2.0 - flat)
        return np.maximum(val, floor).reshape(x.shape)

    probe = g(np.linspace(0.0, 1.0, 201))
    return Density("estimate", g, float(probe.min()), float(probe.max()))


def density_from_name(name: str, times=None, floor: float = 0.05) -> Density:
    if name == "uniform":
        return uniform_density()
    if name == "linear":
        return linear_density()
    if name == "estimate":
        if times is None:
            raise InvalidInput("density estimation needs design points")
        return estimate_density(times, floor=floor)
    raise InvalidInput(f"unknown density {name!r}")


# ---------------------------------------------------------------------------
# grids


def linearized_eval(values, derivs, knots, h: float, s):
    """``sum_l [f(s_l) + (s - s_l) f'(s_l)] Qbar((s - s_l)/h)`` at points ``s``.

    ``values``/``derivs`` may carry leading batch dimensions; only the four
    knots within ``C_Q h`` of each point are visited.
    """
    values = np.asarray(values, dtype=float)
    derivs = np.asarray(derivs, dtype=float)
    s = np.asarray(s, dtype=float)
    L = knots.size
    base = np.floor((s - knots[0]) / h).astype(int)
    out = np.zeros(values.shape[:-1] + s.shape)
    for off in (-1, 0, 1, 2):
        idx = base + off
        valid = (idx >= 0) & (idx < L)
        idc = np.clip(idx, 0, L - 1)
        dx = s - knots[idc]
        q = np.where(valid, eval_bspline(dx / h), 0.0)
        out += (values[..., idc] + dx * derivs[..., idc]) * q
    return out


def _trapezoid_weights(nodes: np.ndarray, upper: float = 1.0) -> np.ndarray:
    """Exact integral over [nodes[0], upper] of the piecewise-linear interpolant.

    ``upper`` may fall strictly inside the last cell.
    """
    w = np.zeros_like(nodes)
    for p in range(nodes.size - 1):
        a, b = nodes[p], nodes[p + 1]
        if a >= upper:
            break
        width = b - a
        theta = min(1.0, (upper - a) / width)
        w[p] += width * (theta - 0.5 * theta * theta)
        w[p + 1] += 0.5 * width * theta * theta
    return w


@dataclass(frozen=True, eq=False)
class SmoothGrid:
    """Knot grid of spacing ``h`` plus a refined evaluation grid on [0, 1].

    Knots ``s_l = -C_Q h + l h`` overhang [0, 1] by at least ``C_Q h`` so the
    B-spline weights form a partition of unity on the whole evaluation range.
    Evaluation nodes ``u_p = p h / refine`` start at 0 and stop at the first
    node >= 1; ``weights`` integrate the linear interpolant over [0, 1].

    ``denom_nodes`` holds the density values used in the estimator
    denominators. With ``boundary="renormalize"`` these are the kernel-smoothed
    density ``int g(x) K_h(s - x) dx`` passed through the same linearized
    interpolation, which equals ``g`` in the interior (to O(h^2)) and corrects
    the lost kernel mass near 0 and 1.
    """

    h: float
    refine: int
    knots: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    density: Density
    boundary: str
    kernel: SummabilityKernel = field(default=DEFAULT_KERNEL)
    _g_knots: np.ndarray = field(default=None, repr=False)
    _gd_knots: np.ndarray = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return self.knots.size

    @property
    def P(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> float:
        return self.h / self.refine

    @property
    def g_nodes(self) -> np.ndarray:
        return self.density(self.nodes)

    @property
    def density_bounds(self) -> tuple[float, float]:
        return self.density.lower, self.density.upper

    def denom(self, x):
        """Density denominator at arbitrary points ``x``."""
        if self.boundary == "none":
            return self.density(x)
        return linearized_eval(self._g_knots, self._gd_knots, self.knots, self.h, x)

    @property
    def denom_nodes(self) -> np.ndarray:
        cached = self.__dict__.get("_denom_cache")
        if cached is None:
            cached = self.denom(self.nodes)
            self.__dict__["_denom_cache"] = cached
        return cached

    def knot_offset(self) -> int:
        """Index of the knot located at 0."""
        return int(round(C_Q))


def _smoothed_density(density: Density, knots, h, kernel: SummabilityKernel):
    nodes, wts = np.polynomial.legendre.leggauss(24)
    bk = kernel.half_support * h
    G = np.zeros(knots.size)
    Gd = np.zeros(knots.size)
    for l, s in enumerate(knots):
        lo, hi = max(0.0, s - bk), min(1.0, s + bk)
        if hi <= lo:
            continue
        x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        gx = density(x) * wts * 0.5 * (hi - lo)
        G[l] = np.sum(gx * kernel((s - x) / h)) / h
        Gd[l] = np.sum(gx * kernel.deriv((s - x) / h)) / h**2
    return G, Gd


def make_grid(
    h: float,
    density: Density | None = None,
    *,
    max_spacing: float = 0.01,
    refine: int | None = None,
    boundary: str = "renormalize",
    kernel: SummabilityKernel = DEFAULT_KERNEL,
) -> SmoothGrid:
    if not (h > 0 and math.isfinite(h)):
        raise InvalidInput("bandwidth h must be a positive finite number")
    if boundary not in ("none", "renormalize"):
        raise InvalidInput(f"unknown boundary mode {boundary!r}")
    density = density or uniform_density()
    if density.lower <= 0:
        raise InvalidInput("design density must be bounded away from zero")
    if refine is None:
        refine = max(1, math.ceil(h / max_spacing - 1e-9))
    delta = h / refine
    ratio = 1.0 / delta
    P = (round(ratio) if abs(ratio - round(ratio)) < 1e-9 else math.ceil(ratio)) + 1
    nodes = np.arange(P) * delta
    if abs(nodes[-1] - 1.0) < 1e-12:
        nodes[-1] = 1.0
    weights = _trapezoid_weights(nodes, 1.0)
    top = nodes[-1] + C_Q * h
    L = math.ceil((top + C_Q * h) / h - 1e-9) + 1
    knots = (np.arange(L) - C_Q) * h
    G = Gd = None
    if boundary == "renormalize":
        G, Gd = _smoothed_density(density, knots, h, kernel)
    return SmoothGrid(h, refine, knots, nodes, weights, density, boundary, kernel, G, Gd)


# ---------------------------------------------------------------------------
# presmoothing


@dataclass(frozen=True, eq=False)
class PresmoothedCurve:
    id: object
    x_tilde: np.ndarray
    x_tilde_deriv: np.ndarray
    s_vals: np.ndarray
    s_deriv: np.ndarray
    m: int

    @property
    def weight(self) -> float:
        """``m / (m - 1)``; NaN for single-observation curves."""
        return self.m / (self.m - 1) if self.m > 1 else float("nan")


@dataclass(frozen=True, eq=False)
class PresmoothedBatch:
    """Knot arrays of every curve stacked row-wise (shape ``n x L``)."""

    ids: list
    X: np.ndarray
    Xd: np.ndarray
    S: np.ndarray
    Sd: np.ndarray
    m: np.ndarray

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def eligible(self) -> np.ndarray:
        return self.m >= 2

    @property
    def weights(self) -> np.ndarray:
        m = self.m.astype(float)
        return np.where(m > 1, m / np.maximum(m - 1, 1), 0.0)

    def curve(self, i: int) -> PresmoothedCurve:
        return PresmoothedCurve(
            self.ids[i], self.X[i], self.Xd[i], self.S[i], self.Sd[i], int(self.m[i])
        )

    def subset(self, keep) -> "PresmoothedBatch":
        keep = np.asarray(keep)
        ids = [self.ids[k] for k in np.flatnonzero(keep)] if keep.dtype == bool else [
            self.ids[k] for k in keep
        ]
        return PresmoothedBatch(ids, self.X[keep], self.Xd[keep], self.S[keep], self.Sd[keep], self.m[keep])


def _accumulate(curve_idx, times, values, m, grid: SmoothGrid, n: int):
    h, L = grid.h, grid.L
    kern = grid.kernel
    # sort for an order-independent floating-point reduction
    order = np.lexsort((values, times, curve_idx))
    curve_idx, times, values = curve_idx[order], times[order], values[order]
    base = np.floor((times - grid.knots[0]) / h).astype(int)
    X = np.zeros(n * L)
    Xd = np.zeros(n * L)
    S = np.zeros(n * L)
    Sd = np.zeros(n * L)
    scale = 1.0 / m[curve_idx]
    reach = int(math.ceil(kern.half_support)) + 1
    for off in range(-reach + 1, reach + 1):
        l = base + off
        valid = (l >= 0) & (l < L)
        lc = np.clip(l, 0, L - 1)
        arg = (grid.knots[lc] - times) / h
        k = np.where(valid, kern(arg), 0.0) / h * scale
        kd = np.where(valid, kern.deriv(arg), 0.0) / h**2 * scale
        flat = curve_idx * L + lc
        X += np.bincount(flat, weights=values * k, minlength=n * L)
        Xd += np.bincount(flat, weights=values * kd, minlength=n * L)
        S += np.bincount(flat, weights=values**2 * k, minlength=n * L)
        Sd += np.bincount(flat, weights=values**2 * kd, minlength=n * L)
    shape = (n, L)
    return X.reshape(shape), Xd.reshape(shape), S.reshape(shape), Sd.reshape(shape)


def presmooth_all(curves: Sequence[ObservedCurve], grid: SmoothGrid, values=None) -> PresmoothedBatch:
    """Presmooth every curve; ``values`` optionally replaces each curve's Y."""
    curves = check_curves(curves)
    n = len(curves)
    m = np.array([c.m for c in curves])
    idx = np.repeat(np.arange(n), m)
    times = np.concatenate([c.times for c in curves])
    if values is None:
        vals = np.concatenate([c.values for c in curves])
    else:
        vals = np.concatenate([np.asarray(v, dtype=float) for v in values])
    X, Xd, S, Sd = _accumulate(idx, times, vals, m.astype(float), grid, n)
    return PresmoothedBatch([c.id for c in curves], X, Xd, S, Sd, m)


def presmooth_curve(curve: ObservedCurve, grid: SmoothGrid, kernel: SummabilityKernel | None = None) -> PresmoothedCurve:
    """Kernel-smooth one curve and its squares onto the knots (O(m) work)."""
    if kernel is not None and kernel != grid.kernel:
        grid = SmoothGrid(grid.h, grid.refine, grid.knots, grid.nodes, grid.weights,
                          grid.density, grid.boundary, kernel, grid._g_knots, grid._gd_knots)
    return presmooth_all([curve], grid).curve(0)


def linearized_value(pres: PresmoothedCurve, grid: SmoothGrid, s, which: str = "curve"):
    if which == "curve":
        return linearized_eval(pres.x_tilde, pres.x_tilde_deriv, grid.knots, grid.h, s)
    if which == "squares":
        return linearized_eval(pres.s_vals, pres.s_deriv, grid.knots, grid.h, s)
    raise ValueError(f"which must be 'curve' or 'squares', got {which!r}")


def kernel_smooth_direct(curves: Sequence[ObservedCurve], grid: SmoothGrid, points, values=None):
    """Plain kernel smoother ``(1/m) sum_j Y_j K_h(t - T_j)`` per curve at ``points``."""
    points = np.asarray(points, dtype=float)
    out = np.zeros((len(curves), points.size))
    for i, c in enumerate(curves):
        y = c.values if values is None else np.asarray(values[i], dtype=float)
        k = grid.kernel((points[:, None] - c.times[None, :]) / grid.h) / grid.h
        out[i] = k @ y / c.m
    return out
