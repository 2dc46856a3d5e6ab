"""End-to-end covariance fit: presmooth, assemble, estimate noise, decompose."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import (
    CovarianceSurface,
    DiagonalCurve,
    curves_on_nodes,
    diag_from_knots,
    merge,
    offdiag_from_nodes,
)
from .eigen import EigenSystem, eigendecompose
from .errors import ExcludedCurvesWarning, InvalidConfig, NoEligibleCurves
from .kernels import DiagonalWeight
from .mean import curve_smooths, mean_denominator
from .noise import SigmaConfig, estimate_sigma2, interval_mean, oblique_diagonal, oblique_rank_one
from .presmooth import (
    Density,
    ObservedCurve,
    PresmoothedBatch,
    SmoothGrid,
    check_curves,
    density_from_name,
    linearized_eval,
    make_grid,
    presmooth_all,
)


@dataclass(frozen=True)
class FitConfig:
    """Settings of one covariance fit.

    ``sigma2=None`` estimates the noise variance; a number treats it as known.
    ``density`` is ``"uniform"``, ``"linear"``, ``"estimate"`` or a Density.
    ``mean`` is ``"zero"`` (data already centred) or ``"estimate"``.
    ``h_sigma`` is the bandwidth used for the noise estimate (default ``h``);
    its risk balances differently from the covariance risk, so it often pays
    to choose it separately.
    """

    h: float
    K: int = 2
    band_A: float = 12.0
    tau: float | None = None
    sigma2: float | None = None
    density: object = "uniform"
    mean: str = "zero"
    h_mu: float | None = None
    h_sigma: float | None = None
    mean_denominator: str = "density"
    boundary: str = "renormalize"
    max_spacing: float = 0.01
    sigma_cfg: SigmaConfig = field(default_factory=SigmaConfig)

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise InvalidConfig("h must be positive")
        if self.K < 1:
            raise InvalidConfig("K must be at least 1")
        if self.mean not in ("zero", "estimate"):
            raise InvalidConfig(f"mean must be 'zero' or 'estimate', got {self.mean!r}")
        if self.sigma2 is not None and not self.sigma2 >= 0:
            raise InvalidConfig("known sigma2 must be nonnegative")

    @property
    def mean_bandwidth(self) -> float:
        return self.h if self.h_mu is None else self.h_mu

    @property
    def sigma_bandwidth(self) -> float:
        return self.h if self.h_sigma is None else self.h_sigma

    def with_(self, **kw) -> "FitConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class MeanFit:
    """Mean estimate on the nodes with what the leave-one-out update needs."""

    nodes: np.ndarray
    values: np.ndarray
    smooths: np.ndarray
    denom: np.ndarray
    ones: np.ndarray | None = None

    def at(self, t):
        return np.interp(t, self.nodes, self.values)

    def loo(self, i: int) -> np.ndarray:
        n = self.smooths.shape[0]
        if self.ones is None:
            return self.values + (self.values - self.smooths[i] / self.denom) / (n - 1)
        num = (self.smooths.sum(axis=0) - self.smooths[i]) / (n - 1)
        den = (self.ones.sum(axis=0) - self.ones[i]) / (n - 1)
        return num / np.where(den > 0, den, np.inf)


@dataclass(frozen=True, eq=False)
class CovarianceFit:
    """Everything produced by :func:`fit_covariance`.

    ``sigma_parts`` holds per-curve additive contributions ``(d_i, o_i)`` to
    the diagonal and oblique averages, so that the noise estimate without
    curve ``i`` is available without refitting.
    """

    config: FitConfig
    grid: SmoothGrid
    curves: list
    centered: list
    batch: PresmoothedBatch
    Z: np.ndarray
    offdiag: CovarianceSurface
    diag: DiagonalCurve
    sigma2_raw: float
    sigma2: float
    weight: DiagonalWeight
    merged: CovarianceSurface
    eig: EigenSystem
    mean: MeanFit | None
    sigma_parts: tuple | None

    @property
    def n(self) -> int:
        return self.batch.n

    @property
    def n_eligible(self) -> int:
        return int(self.batch.eligible.sum())

    def sigma2_without(self, i: int) -> float:
        """Raw noise estimate on the data with curve ``i`` removed."""
        if self.sigma_parts is None:
            return self.sigma2_raw
        d, o = self.sigma_parts
        elig = self.batch.eligible
        n, ne = self.n, self.n_eligible
        ne_i = ne - int(elig[i])
        o_i = o[i] if elig[i] else 0.0
        return float((d.sum() - d[i]) / (n - 1) - (o.sum() - o_i) / ne_i)

    def sigma2_loo(self) -> np.ndarray:
        if self.sigma_parts is None:
            return np.full(self.n, self.sigma2_raw)
        d, o = self.sigma_parts
        elig = self.batch.eligible
        n, ne = self.n, self.n_eligible
        ne_i = ne - elig.astype(int)
        o_i = np.where(elig, o, 0.0)
        return (d.sum() - d) / (n - 1) - (o.sum() - o_i) / np.maximum(ne_i, 1)

    def mean_at(self, t, i: int | None = None):
        if self.mean is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        vals = self.mean.values if i is None else self.mean.loo(i)
        return np.interp(t, self.mean.nodes, vals)


def resolve_density(spec, curves) -> Density:
    if isinstance(spec, Density):
        return spec
    times = np.concatenate([c.times for c in curves]) if spec == "estimate" else None
    return density_from_name(spec, times)


def fit_mean(curves, grid: SmoothGrid, cfg: FitConfig) -> MeanFit:
    h_mu = cfg.mean_bandwidth
    sm = curve_smooths(curves, grid.nodes, h_mu, grid.kernel)
    if cfg.mean_denominator == "empirical":
        ones = curve_smooths(curves, grid.nodes, h_mu, grid.kernel, [np.ones(c.m) for c in curves])
        den = ones.mean(axis=0)
        den = np.where(den > 0, den, np.inf)
        return MeanFit(grid.nodes, sm.mean(axis=0) / den, sm, den, ones)
    den = mean_denominator(curves, grid.nodes, h_mu, grid.density, "density", grid.boundary, grid.kernel)
    return MeanFit(grid.nodes, sm.mean(axis=0) / den, sm, den)


def sigma_contributions(batch: PresmoothedBatch, Z: np.ndarray, grid: SmoothGrid, scfg: SigmaConfig):
    """Per-curve additive pieces ``(d_i, o_i)`` of the noise estimate.

    ``sigma2 = mean(d) - sum_{eligible} o / n_e``.
    """
    t = scfg.t_grid
    U = linearized_eval(batch.S, batch.Sd, grid.knots, grid.h, t) / grid.denom(t)
    d = interval_mean(U, scfg)
    O = oblique_rank_one(Z, grid.nodes, scfg, grid.h)
    o = np.where(batch.eligible, batch.weights * interval_mean(O, scfg), 0.0)
    return d, o


def combine_parts(parts, eligible) -> float:
    d, o = parts
    return float(d.mean() - o[eligible].sum() / eligible.sum())


def noise_parts(curves, cfg: FitConfig, grid: SmoothGrid, batch: PresmoothedBatch, Z: np.ndarray):
    """Per-curve noise contributions at the noise bandwidth."""
    hs = cfg.sigma_bandwidth
    if hs != grid.h:
        grid = make_grid(hs, grid.density, max_spacing=cfg.max_spacing, boundary=grid.boundary,
                         kernel=grid.kernel)
        batch = presmooth_all(curves, grid)
        Z = curves_on_nodes(batch, grid) / grid.denom_nodes
    return sigma_contributions(batch, Z, grid, cfg.sigma_cfg)


def estimate_sigma2_direct(curves, cfg: FitConfig, grid: SmoothGrid | None = None) -> float:
    """Noise estimate through the surface-level path (oblique diagonal of C~)."""
    curves = check_curves(curves)
    hs = cfg.sigma_bandwidth
    if grid is None or grid.h != hs:
        dens = grid.density if grid is not None else resolve_density(cfg.density, curves)
        grid = make_grid(hs, dens, max_spacing=cfg.max_spacing, boundary=cfg.boundary)
    batch = presmooth_all(curves, grid)
    Z = curves_on_nodes(batch, grid) / grid.denom_nodes
    off = CovarianceSurface(grid.nodes, grid.weights, offdiag_from_nodes(Z, batch.weights, batch.eligible),
                            "offdiag", grid.h)
    diag = diag_from_knots(batch.S.mean(axis=0), batch.Sd.mean(axis=0), grid)
    return estimate_sigma2(diag, oblique_diagonal(off, cfg.sigma_cfg, grid.h), cfg.sigma_cfg)


def fit_covariance(curves, cfg: FitConfig, *, grid: SmoothGrid | None = None,
                   batch: PresmoothedBatch | None = None, warn: bool = True) -> CovarianceFit:
    """Run the full estimation pipeline at bandwidth ``cfg.h`` and rank ``cfg.K``.

    ``grid``/``batch`` may be supplied to reuse presmoothing across calls (they
    must match ``curves`` and ``cfg``).
    """
    curves = check_curves(curves)
    if grid is None:
        grid = make_grid(cfg.h, resolve_density(cfg.density, curves),
                         max_spacing=cfg.max_spacing, boundary=cfg.boundary)
    mean = None
    work = curves
    if cfg.mean == "estimate":
        mean = fit_mean(curves, grid, cfg)
        work = [ObservedCurve(c.id, c.times, c.values - mean.at(c.times)) for c in curves]
        batch = None
    if batch is None:
        batch = presmooth_all(work, grid)
    eligible = batch.eligible
    if not eligible.any():
        raise NoEligibleCurves("no curve has two or more observations")
    if warn and not eligible.all():
        warnings.warn(
            f"{int((~eligible).sum())} single-observation curve(s) excluded from the off-diagonal fit",
            ExcludedCurvesWarning,
            stacklevel=2,
        )
    Z = curves_on_nodes(batch, grid) / grid.denom_nodes
    offdiag = CovarianceSurface(grid.nodes, grid.weights, offdiag_from_nodes(Z, batch.weights, eligible),
                                "offdiag", grid.h)
    diag = diag_from_knots(batch.S.mean(axis=0), batch.Sd.mean(axis=0), grid)
    if cfg.sigma2 is None:
        parts = noise_parts(work, cfg, grid, batch, Z)
        sigma2_raw = combine_parts(parts, eligible)
    else:
        sigma2_raw = float(cfg.sigma2)
        parts = None
    sigma2 = max(sigma2_raw, 0.0)
    weight = DiagonalWeight(grid.h, cfg.band_A, cfg.tau, grid.kernel.half_support)
    merged = merge(offdiag, diag, sigma2, weight)
    eig = eigendecompose(merged, min(cfg.K, grid.P))
    return CovarianceFit(cfg, grid, curves, work, batch, Z, offdiag, diag, sigma2_raw, sigma2, weight,
                         merged, eig, mean, parts)


# Rule-of-thumb bandwidths. The exponents follow the optimal rates for the
# covariance ((n m)^{-1/5}) and for the noise variance ((n m^2)^{-1/6}); the
# constants were calibrated on the cosine-basis simulation suite.
RULE_C_COV = 0.2
RULE_C_SIGMA = 0.09


def rule_of_thumb_h(n: int, m_min: int, c: float = RULE_C_COV) -> float:
    """Covariance bandwidth ``c (n m_min)^{-1/5}``."""
    return float(c * (n * m_min) ** (-0.2))


def rule_of_thumb_h_sigma(n: int, m_min: int, c: float = RULE_C_SIGMA) -> float:
    """Noise-variance bandwidth ``c (n m_min^2)^{-1/6}``."""
    return float(c * (n * m_min**2) ** (-1.0 / 6.0))


def rule_of_thumb_config(curves, **kw) -> FitConfig:
    """FitConfig with both bandwidths set from the sample size and smallest curve size."""
    n = len(curves)
    m_min = max(2, min(c.m for c in curves))
    kw.setdefault("h", rule_of_thumb_h(n, m_min))
    kw.setdefault("h_sigma", rule_of_thumb_h_sigma(n, m_min))
    return FitConfig(**kw)
