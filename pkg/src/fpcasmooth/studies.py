"""Monte-Carlo studies: diagonal bias of naive presmoothing, eigenfunction
recovery, noise-variance consistency and convergence rates."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import naive_covariance
from .eigen import modified_l2_loss
from .fit import FitConfig, fit_covariance, rule_of_thumb_h, rule_of_thumb_h_sigma
from .presmooth import DEFAULT_KERNEL, make_grid, presmooth_all
from .simulate import SimulationConfig, cosine_basis, simulate_dataset


def run_map(func, items, threads: int = 1):
    """Ordered map, optionally over a process pool; results keep input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# diagonal bias of the naive estimator


@dataclass
class BiasDemoConfig:
    n: int = 2000
    m: int = 5
    h: float = 0.1
    sigma2: float = 0.25
    eigenvalues: tuple = (1.0,)
    seeds: int = 50
    seed: int = 0
    sigma: str = "known"
    offdiag_gap: float = 0.3


@dataclass
class BiasDemoResult:
    t: np.ndarray
    naive_diag_mean: np.ndarray
    predicted_inflation: np.ndarray
    modified_diag_mean: np.ndarray
    truth: np.ndarray
    naive_offdiag_mean: float
    offdiag_truth: float
    m: int

    @property
    def observed_inflation(self) -> np.ndarray:
        """Naive diagonal minus its trivial part ``(1 - 1/m) C(t, t)``."""
        return self.naive_diag_mean - (1.0 - 1.0 / self.m) * self.truth

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "naive_diag_mean", "predicted_inflation", "modified_diag_mean", "truth"])
            for row in zip(self.t, self.naive_diag_mean, self.predicted_inflation,
                           self.modified_diag_mean, self.truth):
                wr.writerow([repr(float(x)) for x in row])


def predicted_inflation(diag, sigma2: float, m: int, h: float):
    """Leading diagonal inflation ``int K^2 (C(t,t) + sigma2) / (m h)`` of naive presmoothing."""
    return DEFAULT_KERNEL.self_convolution_at_zero * (np.asarray(diag) + sigma2) / (m * h)


def _bias_one(args):
    cfg, seed = args
    sim = SimulationConfig(n=cfg.n, m_min=cfg.m, m_max=cfg.m, eigenvalues=cfg.eigenvalues,
                           sigma=float(np.sqrt(cfg.sigma2)), seed=seed)
    curves, _ = simulate_dataset(sim)
    grid = make_grid(cfg.h)
    batch = presmooth_all(curves, grid)
    naive = naive_covariance(batch, grid)
    interior = (grid.knots >= grid.h) & (grid.knots <= 1.0 - grid.h)
    idx = np.flatnonzero(interior)
    nd = np.diag(naive.values)[idx]
    gap = max(1, int(round(cfg.offdiag_gap / grid.h)))
    off = np.mean([naive.values[l, l + gap] for l in idx if l + gap <= idx[-1]])
    known = cfg.sigma2 if cfg.sigma == "known" else None
    fcfg = FitConfig(h=cfg.h, K=1, sigma2=known,
                     h_sigma=None if known is not None else rule_of_thumb_h_sigma(cfg.n, cfg.m))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_covariance(curves, fcfg, grid=grid, batch=batch)
    md = np.interp(grid.knots[idx], fit.grid.nodes, np.diag(fit.merged.values))
    return nd, md, off


def bias_demo(cfg: BiasDemoConfig = BiasDemoConfig(), threads: int = 1) -> BiasDemoResult:
    """Average the naive and modified diagonals over ``cfg.seeds`` datasets.

    The naive diagonal ``n^{-1} sum_i X~_i(t)^2`` is reported on the interior
    knots next to the predicted inflation and the modified (merged) estimate.
    """
    res = run_map(_bias_one, [(cfg, cfg.seed + s) for s in range(cfg.seeds)], threads)
    grid = make_grid(cfg.h)
    t = grid.knots[(grid.knots >= grid.h) & (grid.knots <= 1.0 - grid.h)]
    M = len(cfg.eigenvalues)
    basis = cosine_basis(t, M)
    truth = np.asarray(cfg.eigenvalues) @ basis**2
    naive = np.mean([r[0] for r in res], axis=0)
    modified = np.mean([r[1] for r in res], axis=0)
    off = float(np.mean([r[2] for r in res]))
    # off-diagonal truth averaged the same way is exact only for constant C
    off_truth = float(np.mean(truth)) if M == 1 else float("nan")
    return BiasDemoResult(t, naive, predicted_inflation(truth, cfg.sigma2, cfg.m, cfg.h), modified, truth,
                          off, off_truth, cfg.m)


# ---------------------------------------------------------------------------
# eigenfunction recovery and noise variance on the standard suite


def eigen_losses(fit, M: int) -> np.ndarray:
    """Modified L2 loss of each of the leading ``M`` eigenfunctions against the cosine basis."""
    nodes, w = fit.grid.nodes, fit.grid.weights
    psi = cosine_basis(nodes, M)
    out = np.full(M, np.nan)
    for k in range(min(M, fit.eig.K)):
        out[k] = modified_l2_loss(fit.eig.vectors[k], psi[k], w)
    return out


@dataclass
class SuiteConfig:
    """Standard synthetic suite: two components, noise variance 0.25."""

    n: int = 400
    m_min: int = 4
    m_max: int = 8
    eigenvalues: tuple = (0.5, 0.25)
    sigma: float = 0.5
    seeds: int = 50
    seed: int = 0
    c_h: float | None = None
    correlation: str = "iid"
    rho: float = 0.0

    def simulation(self, seed: int, n: int | None = None) -> SimulationConfig:
        return SimulationConfig(n=self.n if n is None else n, m_min=self.m_min, m_max=self.m_max,
                                eigenvalues=self.eigenvalues, sigma=self.sigma, seed=seed,
                                correlation=self.correlation, rho=self.rho)

    def fit_config(self, n: int | None = None, K: int | None = None) -> FitConfig:
        n = self.n if n is None else n
        kw = {} if self.c_h is None else {"c": self.c_h}
        return FitConfig(h=rule_of_thumb_h(n, self.m_min, **kw), K=K or len(self.eigenvalues),
                         h_sigma=rule_of_thumb_h_sigma(n, self.m_min))


def _suite_one(args):
    cfg, seed, n = args
    curves, _ = simulate_dataset(cfg.simulation(seed, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_covariance(curves, cfg.fit_config(n))
    return eigen_losses(fit, len(cfg.eigenvalues)), fit.sigma2_raw


@dataclass
class SuiteResult:
    losses: np.ndarray  # (seeds, M)
    sigma2: np.ndarray  # (seeds,)
    h: float
    h_sigma: float


def run_suite(cfg: SuiteConfig = SuiteConfig(), threads: int = 1) -> SuiteResult:
    res = run_map(_suite_one, [(cfg, cfg.seed + s, cfg.n) for s in range(cfg.seeds)], threads)
    fc = cfg.fit_config()
    return SuiteResult(np.array([r[0] for r in res]), np.array([r[1] for r in res]), fc.h, fc.sigma_bandwidth)


# ---------------------------------------------------------------------------
# convergence rate


@dataclass
class RateStudyResult:
    ns: np.ndarray
    mean_loss: np.ndarray
    sd_loss: np.ndarray
    slope: float
    m_min: int
    losses: list = field(default_factory=list, repr=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["n", "mean_loss", "sd_loss"])
            for row in zip(self.ns, self.mean_loss, self.sd_loss):
                wr.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2]))])


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def rate_study(cfg: SuiteConfig, ns=(100, 200, 400, 800), reps: int = 30, threads: int = 1) -> RateStudyResult:
    """Eigenfunction risk at the rule-of-thumb bandwidth for each sample size.

    Risk is the summed modified L2 loss of the retained eigenfunctions; the
    slope is fitted on ``log(n m_min)``.
    """
    ns = np.array(sorted(ns))
    means, sds, all_losses = [], [], []
    for n in ns:
        res = run_map(_suite_one, [(cfg, cfg.seed + s, int(n)) for s in range(reps)], threads)
        loss = np.array([r[0].sum() for r in res])
        all_losses.append(loss)
        means.append(loss.mean())
        sds.append(loss.std(ddof=1) if loss.size > 1 else 0.0)
    means = np.array(means)
    return RateStudyResult(ns, means, np.array(sds), loglog_slope(ns * cfg.m_min, means), cfg.m_min, all_losses)
