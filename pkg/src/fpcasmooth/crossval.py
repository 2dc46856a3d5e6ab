"""Leave-one-curve-out model selection with the empirical Kullback-Leibler loss.

The exact criterion refits the whole pipeline once per left-out curve. The
approximate criterion perturbs the full-sample eigenpairs instead: removing
curve ``i`` changes the merged surface by a kernel ``E_i`` whose projections
on the eigenfunctions are built from a handful of per-curve integrals
(``gamma``, ``gamma_bar`` and the window integrals of the diagonal part).
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .covariance import fft_convolve, lattice_apply, linearized_on_lattice
from .eigen import EigenSystem, resolvent_coefficients
from .errors import (
    AllCandidatesFailed,
    FpcaError,
    InvalidInput,
    NeedAtLeastTwoCurves,
    NotPositiveDefinite,
)
from .fit import CovarianceFit, FitConfig, fit_covariance, resolve_density
from .kernels import C_Q, eval_bspline, gq
from .mean import estimate_mean
from .presmooth import make_grid, presmooth_all

SIGMA_FLOOR = 1e-8
LAMBDA_SANITY = 0.5


# ---------------------------------------------------------------------------
# per-curve likelihood


@dataclass(frozen=True, eq=False)
class CurveModelMatrices:
    """Observation vector of one curve with its fitted mean and covariance."""

    y: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray


def project_spd(S: np.ndarray, floor: float) -> np.ndarray:
    """Raise every eigenvalue of the symmetric matrix ``S`` to at least ``floor``."""
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() >= floor:
        return S
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def model_matrices(y, mu, psi, lam, sigma2: float) -> CurveModelMatrices:
    """``Sigma = Psi diag(lam) Psi^T + sigma2 I`` floored at ``max(sigma2, 1e-8)``."""
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float).reshape(y.size, -1)
    lam = np.asarray(lam, dtype=float)
    s2 = max(float(sigma2), 0.0)
    S = (psi * lam) @ psi.T + s2 * np.eye(y.size)
    return CurveModelMatrices(y, np.asarray(mu, dtype=float), psi, project_spd(S, max(s2, SIGMA_FLOOR)))


def kl_loss(y, mu, sigma) -> float:
    """``1/2 log|Sigma| + 1/2 (y - mu)^T Sigma^{-1} (y - mu)`` via Cholesky."""
    r = np.atleast_1d(np.asarray(y, dtype=float) - np.asarray(mu, dtype=float))
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        c, low = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    quad = float(r @ scipy.linalg.cho_solve((c, low), r))
    return 0.5 * logdet + 0.5 * quad


def curve_loss(m: CurveModelMatrices) -> float:
    return kl_loss(m.y, m.mu, m.sigma)


def predict_scores(m: CurveModelMatrices, lam) -> np.ndarray:
    """Conditional-expectation scores ``Lambda Psi^T Sigma^{-1} (y - mu)``."""
    r = m.y - m.mu
    return np.asarray(lam) * (m.psi.T @ np.linalg.solve(m.sigma, r))


def prediction_error(m: CurveModelMatrices, lam) -> float:
    xi = predict_scores(m, lam)
    resid = m.y - m.mu - m.psi @ xi
    return float(resid @ resid)


# ---------------------------------------------------------------------------
# mean


def estimate_mean_grid(curves, fit_or_grid, h_mu: float | None = None):
    """Mean estimate on the evaluation nodes of a fit or grid."""
    grid = getattr(fit_or_grid, "grid", fit_or_grid)
    h_mu = grid.h if h_mu is None else h_mu
    return estimate_mean(curves, grid.nodes, h_mu, grid.density, "density", grid.boundary, grid.kernel)


# ---------------------------------------------------------------------------
# exact leave-one-curve-out


@dataclass(frozen=True, eq=False)
class ExactCv:
    scores: dict
    losses: dict
    failed: list


def _fold_matrices(fold: CovarianceFit, curve, K: int) -> CurveModelMatrices:
    eig = fold.eig.truncate(K)
    psi = eig.at(curve.times).T
    mu = fold.mean_at(curve.times)
    return model_matrices(curve.values, mu, psi, eig.values, fold.sigma2_raw)


def exact_loocv(curves, cfg: FitConfig, Ks=None) -> ExactCv:
    """Refit the pipeline without each curve in turn and score the left-out one.

    Returns the average loss per rank in ``Ks`` (default ``[cfg.K]``). Folds
    whose refit fails are excluded and listed in ``failed``.
    """
    curves = list(curves)
    n = len(curves)
    if n < 3:
        raise InvalidInput("exact cross-validation needs at least three curves")
    Ks = [cfg.K] if Ks is None else sorted(set(int(k) for k in Ks))
    fold_cfg = cfg.with_(K=max(Ks))
    reuse = cfg.mean == "zero" and not (isinstance(cfg.density, str) and cfg.density == "estimate")
    grid = batch = None
    if reuse:
        grid = make_grid(cfg.h, resolve_density(cfg.density, curves), max_spacing=cfg.max_spacing,
                         boundary=cfg.boundary)
        batch = presmooth_all(curves, grid)
    losses = {K: np.full(n, np.nan) for K in Ks}
    failed = []
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        keep[i] = False
        sub = [c for j, c in enumerate(curves) if j != i]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fold = fit_covariance(sub, fold_cfg, grid=grid,
                                      batch=None if batch is None else batch.subset(keep), warn=False)
                for K in Ks:
                    losses[K][i] = curve_loss(_fold_matrices(fold, curves[i], K))
        except FpcaError:
            failed.append(i)
        keep[i] = True
    ok = np.ones(n, dtype=bool)
    ok[failed] = False
    scores = {K: float(np.mean(losses[K][ok])) if ok.any() else float("nan") for K in Ks}
    return ExactCv(scores, losses, failed)


# ---------------------------------------------------------------------------
# per-curve integrals of the perturbation expansion


def gamma_filters(eig: EigenSystem, grid):
    """``G_0`` and ``G_1`` of ``psi_k / g`` with the spline at every knot; shape (K, L).

    ``G_j(s_l) = int psi_k(u)/g(u) (u - s_l)^j Qbar((u - s_l)/h) du`` by node
    quadrature, computed as a correlation with the sampled spline filters.
    """
    r = grid.refine
    f = eig.vectors * grid.weights / grid.denom_nodes  # (K, P)
    x = np.arange(-int(C_Q) * r, int(C_Q) * r + 1) / r
    q0 = eval_bspline(x)
    q1 = grid.h * x * q0
    out = np.zeros((2, f.shape[0], grid.L))
    for j, q in enumerate((q0, q1)):
        full = fft_convolve(f, q[::-1])
        # full[idx] = sum_p f_p q(p + 2r - idx); knot l sits at idx = l r
        idx = np.arange(grid.L) * r
        valid = idx < full.shape[-1]
        out[j][:, valid] = full[:, idx[valid]]
    return out[0], out[1]


def gamma_terms(batch, eig: EigenSystem, grid) -> np.ndarray:
    """``gamma_k(i) = int X~_i(u) psi_k(u) / g(u) du`` for every curve; shape (n, K).

    ``X~_i`` is the linearized presmoothed curve, so the integral splits into
    the knot values against ``G_0`` and the knot slopes against ``G_1``.
    """
    G0, G1 = gamma_filters(eig, grid)
    return batch.X @ G0.T + batch.Xd @ G1.T


def _band_filters(grid, band_A: float):
    r, h = grid.refine, grid.h
    R = int(np.ceil((C_Q + 0.5 * band_A) * r))
    y = np.arange(-R, R + 1) / r
    return h * gq(0, y, band_A), h * h * gq(1, y, band_A)


def band_integrals(batch, grid, band_A: float) -> np.ndarray:
    """``int_{|v - u_p| <= A h/2} X~_i(v) dv`` at the nodes; shape (n, P)."""
    f0, f1 = _band_filters(grid, band_A)
    return lattice_apply(batch.X, batch.Xd, f0, f1, grid.refine, grid.P)


def gamma_bar_table(eig: EigenSystem, grid, band_A: float) -> np.ndarray:
    """Banded tables ``d[k, k', j, j', l, l']`` of the band-restricted double integral.

    The inner integral over the band is taken with ``psi_k'/g`` frozen at the
    outer point, which turns it into window integrals of the spline:

        d = sum_p w_p psi_k psi_k' / g^2 (u_p) M_j[p, l] N_j'[p, l']

    with ``M_j = (u - s_l)^j Qbar((u - s_l)/h)`` and
    ``N_j' = h^{j'+1} G_j'((u - s_l')/h)`` over a window of width A.
    Entries with ``|l - l'| > 2 C_Q + A/2`` vanish identically.
    """
    h = grid.h
    u = grid.nodes[:, None]
    dx = (u - grid.knots[None, :]) / h
    M0 = eval_bspline(dx)
    M = np.stack([M0, h * dx * M0])
    N = np.stack([h * gq(0, dx, band_A), h * h * gq(1, dx, band_A)])
    wgt = grid.weights / grid.denom_nodes**2
    K = eig.K
    out = np.zeros((K, K, 2, 2, grid.L, grid.L))
    for k in range(K):
        for kk in range(K):
            c = wgt * eig.vectors[k] * eig.vectors[kk]
            for j in range(2):
                Mc = M[j] * c[:, None]
                for jj in range(2):
                    out[k, kk, j, jj] = Mc.T @ N[jj]
    return out


def gamma_bar_terms(batch, table: np.ndarray) -> np.ndarray:
    """``gamma_bar_{k k'}(i)`` from the knot arrays and the banded table; shape (n, K, K)."""
    Xs = np.stack([batch.X, batch.Xd])  # (2, n, L)
    return np.einsum("jnl,abjmlq,mnq->nab", Xs, table, Xs, optimize=True)


def _gamma_bar_nodes(batch, eig, grid, band_A, Z):
    V = Z * grid.denom_nodes
    Vb = band_integrals(batch, grid, band_A)
    c = grid.weights / grid.denom_nodes**2 * V * Vb  # (n, P)
    return np.einsum("np,kp,lp->nkl", c, eig.vectors, eig.vectors)


def beta_window(batch, grid, band_A: float) -> np.ndarray:
    """``sum_l S_i(s_l) beta_1(u_p, s_l) + S_i'(s_l) beta_2(u_p, s_l)``; shape (n, P).

    This is ``int_{|v - u| <= A h/2} S~_i((u + v)/2) dv``, the diagonal
    contribution of curve ``i`` integrated across the band.
    """
    r, h = grid.refine, grid.h
    R = int(np.ceil((C_Q + 0.25 * band_A) * r))
    y = np.arange(-R, R + 1) / r
    f0 = 2.0 * h * gq(0, y, 0.5 * band_A)
    f1 = 2.0 * h * h * gq(1, y, 0.5 * band_A)
    return lattice_apply(batch.S, batch.Sd, f0, f1, r, grid.P)


# ---------------------------------------------------------------------------
# first-order leave-one-out perturbation


@dataclass(frozen=True, eq=False)
class PerturbationTerms:
    """First-order leave-one-out quantities for every curve.

    ``proj[i, k, nu] = <psi_k, E_i psi_nu>`` with ``E_i`` the change of the
    merged surface when curve ``i`` is removed. ``psi_tilde`` holds the
    perturbed eigenfunctions on the nodes; ``flags`` marks curves whose
    perturbed eigenvalues moved by more than half.
    """

    gamma: np.ndarray
    gamma_bar: np.ndarray
    beta: np.ndarray
    sigma2_loo: np.ndarray
    sigma_shift: np.ndarray
    proj: np.ndarray
    lam_tilde: np.ndarray
    psi_tilde: np.ndarray
    flags: np.ndarray
    skipped: np.ndarray


def full_spectrum(fit: CovarianceFit):
    """All eigenpairs ``(lam, phi)`` of ``D^{1/2} C D^{1/2}``, in decreasing order."""
    sw = np.sqrt(fit.grid.weights)
    B = sw[:, None] * fit.merged.values * sw[None, :]
    lam, phi = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(lam)[::-1]
    return lam[order], phi[:, order]


def reduced_resolvent(spec, weights, lam_nu: float, nu: int) -> np.ndarray:
    """Node matrix of ``sum_{k != nu} P_k / (lam_nu - lam_k)`` acting on functions.

    Maps ``E psi_nu`` (sampled on the nodes) to the first-order change of
    ``psi_nu``.
    """
    lam, phi = spec
    c = np.zeros_like(lam)
    gap = lam_nu - lam
    mask = np.abs(gap) > 1e-12 * max(abs(lam_nu), 1e-300)
    mask[nu] = False
    c[mask] = 1.0 / gap[mask]
    sw = np.sqrt(weights)
    return ((phi * c) @ phi.T) * (sw[None, :] / sw[:, None])


def _hankel_sums(G: np.ndarray, P: int) -> np.ndarray:
    idx = np.arange(P)
    s = (idx[:, None] + idx[None, :]).ravel()
    return np.bincount(s, weights=G.ravel(), minlength=2 * P - 1)


def perturbation_terms(fit: CovarianceFit, K: int, *, terms: str = "window",
                       gamma_tilde: str = "exact", sigma_kernel: str = "band",
                       resolvent: str = "full") -> PerturbationTerms:
    """Per-curve first-order changes of eigenvalues and eigenfunctions.

    Parameters
    ----------
    terms : ``"window"`` uses the window approximations for the band terms
        (``gamma_bar`` from the banded table, the diagonal term from the
        beta window integrals); ``"quadrature"`` evaluates the same double
        integrals by node quadrature.
    gamma_tilde : ``"approx"`` replaces the band-excluded projection
        ``gamma_tilde(i, t)`` by ``gamma(i)``; ``"exact"`` computes it.
    sigma_kernel : kernel multiplying the noise-variance change;
        ``"band"`` (the diagonal weight, where the variance enters the merged
        surface) or ``"full"`` (the constant kernel).
    resolvent : ``"full"`` sums over the whole discretized spectrum of the
        merged surface; ``"truncated"`` keeps the leading ``K`` pairs and
        treats the rest as having eigenvalue zero.
    """
    if terms not in ("window", "quadrature"):
        raise InvalidInput(f"unknown terms mode {terms!r}")
    if gamma_tilde not in ("approx", "exact"):
        raise InvalidInput(f"unknown gamma_tilde mode {gamma_tilde!r}")
    if sigma_kernel not in ("band", "full"):
        raise InvalidInput(f"unknown sigma kernel {sigma_kernel!r}")
    if resolvent not in ("full", "truncated"):
        raise InvalidInput(f"unknown resolvent mode {resolvent!r}")
    n = fit.n
    if n < 2:
        raise NeedAtLeastTwoCurves("leave-one-out needs at least two curves")
    eig = fit.eig.truncate(K)
    K = eig.K
    grid, batch, Z = fit.grid, fit.batch, fit.Z
    P = grid.P
    om = grid.weights
    psi = eig.vectors
    lam = eig.values
    wpsi = psi * om
    elig = batch.eligible
    ne = int(elig.sum())
    w = batch.weights
    A = fit.weight.band_A

    nodes = grid.nodes
    Wm = fit.weight.weight(nodes[:, None], nodes[None, :])
    idx = np.arange(P)
    hidx = idx[:, None] + idx[None, :]
    mid = fit.diag.half_values[hidx]
    act = (mid - fit.sigma2) > grid.h**2
    band_act = Wm * act
    T1 = (1.0 - Wm) * fit.offdiag.values
    T2 = band_act * mid
    T3 = band_act if sigma_kernel == "band" else np.ones((P, P))
    V1, V2, V3 = (T @ wpsi.T for T in (T1, T2, T3))  # (P, K)
    Pr1, Pr2, Pr3 = (wpsi @ V for V in (V1, V2, V3))

    gamma = gamma_terms(batch, eig, grid)
    if terms == "window":
        gbar = _gamma_bar_nodes(batch, eig, grid, A, Z)
        bwin = beta_window(batch, grid, A) / grid.denom_nodes  # (n, P)
        beta = np.einsum("np,kp,lp->nkl", bwin * om, psi, psi)
        bfun = bwin[:, None, :] * psi[None, :, :]  # (n, K, P)
    else:
        Y = Z[:, None, :] * wpsi[None, :, :]
        gbar = np.einsum("nkp,pq,nlq->nkl", Y, Wm, Y, optimize=True)
        half_nodes = np.arange(2 * P - 1) * (0.5 * grid.spacing)
        Uh = linearized_on_lattice(batch.S, batch.Sd, grid.h, 2 * grid.refine, 2 * P - 1) / grid.denom(half_nodes)
        M = np.zeros((2 * P - 1, K, K))
        for k in range(K):
            for kk in range(K):
                M[:, k, kk] = _hankel_sums(np.outer(wpsi[k], wpsi[kk]) * band_act, P)
        beta = np.einsum("nc,ckl->nkl", Uh, M)
        bfun = np.empty((n, K, P))
        for i in range(n):
            bfun[i] = ((band_act * Uh[i][hidx]) @ wpsi.T).T

    if fit.config.sigma2 is None:
        s_loo = fit.sigma2_loo()
        shift = np.maximum(s_loo, 0.0) - fit.sigma2
    else:
        s_loo = np.full(n, fit.sigma2)
        shift = np.zeros(n)

    e_a = np.where(elig, 1.0 / max(ne - 1, 1), 0.0)
    if ne < 2:
        e_a = np.zeros(n)
    outer = gamma[:, :, None] * gamma[:, None, :] - gbar
    proj = (
        e_a[:, None, None] * Pr1
        - (e_a * w)[:, None, None] * outer
        + Pr2 / (n - 1)
        - beta / (n - 1)
        - shift[:, None, None] * Pr3
    )
    proj = 0.5 * (proj + np.swapaxes(proj, 1, 2))

    # E_i psi_nu on the nodes, shape (n, K, P)
    if gamma_tilde == "approx":
        gt = gamma[:, :, None] * np.ones((1, 1, P))
    else:
        gt = np.einsum("pq,nkq->nkp", 1.0 - Wm, Z[:, None, :] * wpsi[None, :, :])
    Epsi = (
        e_a[:, None, None] * V1.T[None]
        - (e_a * w)[:, None, None] * Z[:, None, :] * gt
        + V2.T[None] / (n - 1)
        - bfun / (n - 1)
        - shift[:, None, None] * V3.T[None]
    )

    lam_tilde = lam[None, :] + np.einsum("nkk->nk", proj)
    psi_tilde = np.repeat(psi[None], n, axis=0)
    skipped = np.zeros(K, dtype=bool) if eig.degenerate is None else eig.degenerate.copy()
    spec = full_spectrum(fit) if resolvent == "full" else None
    for nu in range(K):
        if skipped[nu]:
            lam_tilde[:, nu] = lam[nu]
            continue
        if spec is None:
            a = resolvent_coefficients(eig, nu)
            HE = np.einsum("k,nk,kp->np", a, proj[:, :, nu], psi) - Epsi[:, nu] / lam[nu]
            psi_tilde[:, nu] = psi[nu] - HE
        else:
            psi_tilde[:, nu] = psi[nu] + Epsi[:, nu] @ reduced_resolvent(spec, om, lam[nu], nu).T
    flags = np.any(np.abs(lam_tilde - lam) > LAMBDA_SANITY * lam, axis=1)
    return PerturbationTerms(gamma, gbar, beta, s_loo, shift, proj, lam_tilde, psi_tilde, flags, skipped)


def _interp_rows(nodes, rows, t):
    i = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)
    frac = (t - nodes[i]) / (nodes[i + 1] - nodes[i])
    return rows[:, i] * (1 - frac) + rows[:, i + 1] * frac


def approx_matrices(fit: CovarianceFit, terms: PerturbationTerms, i: int) -> CurveModelMatrices:
    c = fit.curves[i]
    psi = _interp_rows(fit.grid.nodes, terms.psi_tilde[i], c.times).T
    mu = fit.mean_at(c.times, i)
    return model_matrices(c.values, mu, psi, terms.lam_tilde[i], terms.sigma2_loo[i])


@dataclass(frozen=True, eq=False)
class ApproxCv:
    score: float
    losses: np.ndarray
    terms: PerturbationTerms

    @property
    def flagged(self) -> bool:
        return bool(self.terms.flags.any() or self.terms.skipped.any())


def approx_loocv(fit: CovarianceFit, K: int, **kw) -> ApproxCv:
    """First-order approximation of the leave-one-curve-out KL score (no refits)."""
    terms = perturbation_terms(fit, K, **kw)
    losses = np.array([curve_loss(approx_matrices(fit, terms, i)) for i in range(fit.n)])
    return ApproxCv(float(losses.mean()), losses, terms)


def pred_cv(fit: CovarianceFit, K: int, terms: PerturbationTerms | None = None, **kw) -> float:
    """Leave-one-curve-out squared prediction error with conditional-expectation scores.

    Reported for comparison only: this criterion weighs all directions alike
    and its expected value need not be minimized at the true model, so the
    KL score is the one used for selection.
    """
    terms = perturbation_terms(fit, K, **kw) if terms is None else terms
    total = 0.0
    for i in range(fit.n):
        m = approx_matrices(fit, terms, i)
        total += prediction_error(m, terms.lam_tilde[i])
    return float(total)


# ---------------------------------------------------------------------------
# joint selection of (K, h)


@dataclass
class CvRow:
    K: int
    h: float
    approx_score: float
    exact_score: float | None = None
    wall_time: float = 0.0
    flagged: bool = False
    pred_score: float | None = None


@dataclass
class CvTable:
    rows: list = field(default_factory=list)
    selected: tuple | None = None

    def select(self) -> tuple:
        finite = [r for r in self.rows if np.isfinite(r.approx_score)]
        if not finite:
            raise AllCandidatesFailed("no candidate produced a finite score")
        best = min(finite, key=lambda r: (r.approx_score, r.K, r.h))
        self.selected = (best.K, best.h)
        return self.selected

    def select_by(self, attr: str) -> tuple:
        finite = [r for r in self.rows if getattr(r, attr) is not None and np.isfinite(getattr(r, attr))]
        if not finite:
            raise AllCandidatesFailed(f"no finite {attr}")
        best = min(finite, key=lambda r: (getattr(r, attr), r.K, r.h))
        return best.K, best.h

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["K", "h", "approx_score", "exact_score", "selected"])
            for r in self.rows:
                sel = int(self.selected is not None and (r.K, r.h) == self.selected)
                ex = "" if r.exact_score is None else repr(float(r.exact_score))
                wr.writerow([r.K, repr(float(r.h)), repr(float(r.approx_score)), ex, sel])


def select_model(curves, h_candidates, K_candidates, base: FitConfig | None = None, *,
                 exact: bool = False, with_pred: bool = False, on_row=None, skip=None, **kw) -> CvTable:
    """Score every (K, h) pair and pick the minimizer of the approximate KL score.

    One fit per bandwidth at the largest rank; smaller ranks reuse its leading
    eigenpairs. Ties go to the smaller K, then the smaller h. ``on_row`` is
    called with each finished row (used for checkpointing); ``skip`` maps
    ``(K, h)`` to a cached row that is reused instead of recomputed.
    """
    hs = sorted(set(float(h) for h in h_candidates))
    Ks = sorted(set(int(k) for k in K_candidates))
    if not hs or not Ks:
        raise InvalidInput("candidate sets must be nonempty")
    base = base or FitConfig(h=hs[0])
    skip = skip or {}
    table = CvTable()
    for h in hs:
        cached = [skip.get((K, h)) for K in Ks]
        if all(c is not None for c in cached):
            table.rows.extend(cached)
            continue
        t0 = time.perf_counter()
        cfg = base.with_(h=h, K=max(Ks))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_covariance(curves, cfg)
        except FpcaError:
            fit = None
        fit_time = time.perf_counter() - t0
        ex = None
        if exact and fit is not None:
            try:
                ex = exact_loocv(curves, cfg, Ks)
            except FpcaError:
                ex = None
        for K, c in zip(Ks, cached):
            if c is not None:
                table.rows.append(c)
                continue
            t1 = time.perf_counter()
            row = CvRow(K, h, float("nan"))
            if fit is not None and fit.eig.K >= K:
                try:
                    res = approx_loocv(fit, K, **kw)
                    row.approx_score = res.score
                    row.flagged = res.flagged
                    if with_pred:
                        row.pred_score = pred_cv(fit, K, res.terms)
                except FpcaError:
                    row.flagged = True
            else:
                row.flagged = True
            if ex is not None:
                row.exact_score = ex.scores.get(K)
            row.wall_time = fit_time / len(Ks) + time.perf_counter() - t1
            table.rows.append(row)
            if on_row is not None:
                on_row(row)
    table.select()
    return table
