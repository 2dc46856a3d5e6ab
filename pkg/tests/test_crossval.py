import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpcasmooth.crossval import (
    CvRow,
    CvTable,
    approx_loocv,
    exact_loocv,
    gamma_bar_table,
    gamma_bar_terms,
    gamma_terms,
    kl_loss,
    perturbation_terms,
    pred_cv,
    select_model,
)
from fpcasmooth.eigen import EigenSystem, modified_l2_loss
from fpcasmooth.errors import AllCandidatesFailed, NotPositiveDefinite
from fpcasmooth.fit import FitConfig, fit_covariance, rule_of_thumb_h, rule_of_thumb_h_sigma
from fpcasmooth.kernels import C_Q
from fpcasmooth.presmooth import ObservedCurve, linearized_eval, make_grid, presmooth_all
from fpcasmooth.simulate import SimulationConfig, cosine_basis, simulate_dataset

from oracles import linearized_direct

pytestmark = pytest.mark.filterwarnings("ignore")


def dataset(n, seed, **kw):
    return simulate_dataset(SimulationConfig(n=n, seed=seed, **kw))[0]


def base_config(n, **kw):
    return FitConfig(h=kw.pop("h", 0.06), h_sigma=rule_of_thumb_h_sigma(n, 4), **kw)


# ---------------------------------------------------------------------------
# likelihood


def test_kl_loss_examples():
    assert kl_loss([1.0, 2.0], [1.0, 2.0], np.eye(2)) == 0.0
    assert kl_loss([1.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(0.5, abs=1e-15)
    assert kl_loss([0.3], [0.3], [[2.0]]) == pytest.approx(0.5 * np.log(2.0), abs=1e-15)
    with pytest.raises(NotPositiveDefinite):
        kl_loss([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_kl_loss_minimized_at_truth(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((3, 3))
    truth = B @ B.T + 0.5 * np.eye(3)
    y = rng.multivariate_normal(np.zeros(3), truth, size=4000)
    avg = lambda S: np.mean([kl_loss(v, np.zeros(3), S) for v in y])
    ref = avg(truth)
    for _ in range(5):
        E = rng.standard_normal((3, 3))
        E = 0.5 * (E + E.T)
        S = truth + 0.3 * np.linalg.norm(truth, 2) * E / np.linalg.norm(E, 2)
        if np.linalg.eigvalsh(S).min() <= 0:
            continue
        assert ref <= avg(S)


# ---------------------------------------------------------------------------
# exact leave-one-curve-out


def test_exact_loocv_manual_three_folds():
    cur = dataset(3, 4, m_min=6, m_max=8)
    cfg = FitConfig(h=0.1, K=1, sigma2=0.3)
    ex = exact_loocv(cur, cfg)
    total = 0.0
    for i in range(3):
        fold = fit_covariance([c for j, c in enumerate(cur) if j != i], cfg)
        c = cur[i]
        psi = np.interp(c.times, fold.grid.nodes, fold.eig.vectors[0])
        S = fold.eig.values[0] * np.outer(psi, psi) + 0.3 * np.eye(c.m)
        r = c.values
        total += 0.5 * np.linalg.slogdet(S)[1] + 0.5 * r @ np.linalg.solve(S, r)
    assert ex.scores[1] == pytest.approx(total / 3, abs=1e-12)
    assert ex.failed == []


def test_exact_loocv_deterministic():
    cur = dataset(20, 1)
    cfg = base_config(20)
    a = exact_loocv(cur, cfg, [1, 2])
    b = exact_loocv(cur, cfg, [1, 2])
    assert a.scores == b.scores and np.isfinite(list(a.scores.values())).all()


def test_exact_overfit_guard_noiseless():
    cur = dataset(60, 1, sigma=0.0)
    ex = exact_loocv(cur, base_config(60), [2, 3])
    assert ex.scores[3] >= ex.scores[2] - 1e-6


# ---------------------------------------------------------------------------
# per-curve integrals


def interior_system(h, M):
    grid = make_grid(h)
    V = cosine_basis(grid.nodes, M)
    return grid, EigenSystem(np.linspace(1.0, 0.5, M), V, grid.nodes, grid.weights, M)


def test_gamma_zero_curve():
    grid, eig = interior_system(0.05, 2)
    cur = [ObservedCurve(0, np.array([0.2, 0.5, 0.7]), np.zeros(3))]
    b = presmooth_all(cur, grid)
    assert np.all(gamma_terms(b, eig, grid) == 0.0)
    assert np.all(gamma_bar_terms(b, gamma_bar_table(eig, grid, 12.0)) == 0.0)


def test_gamma_matches_direct_quadrature():
    grid = make_grid(0.08, boundary="none", max_spacing=0.02)
    V = cosine_basis(grid.nodes, 2)
    eig = EigenSystem(np.array([1.0, 0.5]), V, grid.nodes, grid.weights, 2)
    rng = np.random.default_rng(0)
    cur = [ObservedCurve(i, rng.random(5), rng.standard_normal(5)) for i in range(3)]
    got = gamma_terms(presmooth_all(cur, grid), eig, grid)
    g = grid.denom_nodes
    for i, c in enumerate(cur):
        X = np.array([linearized_direct(c, grid.h, grid.knots, u) for u in grid.nodes])
        want = (X * grid.weights / g) @ V.T
        assert np.max(np.abs(got[i] - want)) < 1e-8


def test_gamma_of_dense_eigenfunction_is_one():
    cur = dataset(200, 0)
    fit = fit_covariance(cur, base_config(200, h=0.05))
    rng = np.random.default_rng(1)
    for k in range(2):
        t = np.sort(rng.random(4000))
        dense = [ObservedCurve(0, t, fit.eig.at(t, k))]
        gam = gamma_terms(presmooth_all(dense, fit.grid), fit.eig, fit.grid)
        assert gam[0, k] == pytest.approx(1.0, abs=0.05)


def test_gamma_bar_banded_sparsity():
    grid, eig = interior_system(0.05, 2)
    A = 12.0
    tab = gamma_bar_table(eig, grid, A)
    l = np.arange(grid.L)
    far = np.abs(l[:, None] - l[None, :]) > np.ceil(2 * C_Q + A / 2)
    assert np.all(tab[..., far] == 0.0)


def brute_gamma_bar(batch, grid, M, A, N=4001):
    u = np.linspace(0.0, 1.0, N)
    wq = np.full(N, u[1])
    wq[[0, -1]] *= 0.5
    X = linearized_eval(batch.X, batch.Xd, grid.knots, grid.h, u) / grid.denom(u)
    Y = X[:, None, :] * cosine_basis(u, M)[None] * wq
    band = np.abs(u[:, None] - u[None, :]) <= A * grid.h / 2
    return np.einsum("nkp,pq,nlq->nkl", Y, band, Y, optimize=True)


@pytest.mark.parametrize("h,A,lo,hi,M", [(0.04, 12.0, 0.4, 0.6, 1), (0.05, 2.0, 0.2, 0.8, 2)])
def test_gamma_bar_against_double_integral(h, A, lo, hi, M):
    grid, eig = interior_system(h, M)
    rng = np.random.default_rng(7)
    cur = [ObservedCurve(i, lo + (hi - lo) * rng.random(6), rng.standard_normal(6)) for i in range(10)]
    b = presmooth_all(cur, grid)
    got = gamma_bar_terms(b, gamma_bar_table(eig, grid, A))
    want = brute_gamma_bar(b, grid, M, A)
    rel = np.abs(got - want) / np.abs(want).max(axis=(1, 2), keepdims=True)
    assert rel.max() < 0.05


def test_gamma_bar_table_equals_node_form():
    from fpcasmooth.crossval import _gamma_bar_nodes

    cur = dataset(30, 2)
    fit = fit_covariance(cur, base_config(30))
    A = fit.weight.band_A
    tab = gamma_bar_terms(fit.batch, gamma_bar_table(fit.eig, fit.grid, A))
    nodes = _gamma_bar_nodes(fit.batch, fit.eig, fit.grid, A, fit.Z)
    assert np.max(np.abs(tab - nodes)) < 1e-10 * max(1.0, np.abs(nodes).max())


# ---------------------------------------------------------------------------
# approximate criterion


@pytest.fixture(scope="module")
def suite_fit():
    cur = dataset(150, 0)
    return cur, fit_covariance(cur, base_config(150, K=3))


def test_perturbation_terms_finite_and_sane(suite_fit):
    _, fit = suite_fit
    T = perturbation_terms(fit, 2)
    for name in ("gamma", "gamma_bar", "beta", "sigma2_loo", "proj", "lam_tilde", "psi_tilde"):
        assert np.all(np.isfinite(getattr(T, name))), name
    assert not T.flags.any()


def test_sigma2_loo_matches_refit(suite_fit):
    cur, fit = suite_fit
    s = fit.sigma2_loo()
    for i in (0, 17, 149):
        refit = fit_covariance(cur[:i] + cur[i + 1:], fit.config, grid=fit.grid)
        assert s[i] == pytest.approx(refit.sigma2_raw, abs=1e-10)


def test_duplicated_curves_give_equal_corrections():
    c = dataset(1, 3, m_min=8, m_max=8)[0]
    cur = [ObservedCurve(i, c.times, c.values) for i in range(12)]
    fit = fit_covariance(cur, FitConfig(h=0.08, K=1, sigma2=0.1))
    T = perturbation_terms(fit, 1)
    d = T.lam_tilde - fit.eig.values[:1]
    assert np.max(np.abs(d - d[0])) < 1e-10


def test_approx_close_to_exact(suite_fit):
    cur, fit = suite_fit
    approx = approx_loocv(fit, 2).score
    exact = exact_loocv(cur, fit.config, [2]).scores[2]
    assert abs(approx - exact) / abs(exact) < 0.05


def test_gamma_tilde_constant_approximation():
    cur = dataset(400, 0)
    fit = fit_covariance(cur, FitConfig(h=rule_of_thumb_h(400, 4), h_sigma=rule_of_thumb_h_sigma(400, 4)))
    a = approx_loocv(fit, 2, gamma_tilde="exact").score
    b = approx_loocv(fit, 2, gamma_tilde="approx").score
    assert abs(a - b) / abs(a) < 0.01


def fold_errors(n, seed, folds=5):
    cur = dataset(n, seed)
    cfg = base_config(100)
    fit = fit_covariance(cur, cfg)
    T = perturbation_terms(fit, 2)
    el, ep = [], []
    for i in range(folds):
        ref = fit_covariance(cur[:i] + cur[i + 1:], cfg, grid=fit.grid)
        el.append(np.abs(T.lam_tilde[i] - ref.eig.values[:2]).sum())
        ep.append(sum(modified_l2_loss(T.psi_tilde[i, k], ref.eig.vectors[k], fit.grid.weights) for k in range(2)))
    return np.mean(el), np.mean(ep)


def test_first_order_error_shrinks_with_n():
    ratios = []
    for seed in range(20):
        a = fold_errors(100, seed)
        b = fold_errors(200, seed)
        ratios.append((b[0] / a[0], b[1] / a[1]))
    med = np.median(ratios, axis=0)
    assert med[0] < 0.75 and med[1] < 0.75


def test_pred_cv_nonnegative(suite_fit):
    _, fit = suite_fit
    assert pred_cv(fit, 1) >= 0.0 and pred_cv(fit, 2) >= 0.0


def test_pred_cv_noiseless_dense():
    cur = dataset(100, 1, m_min=40, m_max=40, sigma=0.0)
    fit = fit_covariance(cur, FitConfig(h=0.04, sigma2=0.0))
    total = sum(float(c.values @ c.values) for c in cur)
    assert pred_cv(fit, 2) / total < 0.01


# ---------------------------------------------------------------------------
# selection


def test_select_singleton():
    cur = dataset(40, 0)
    tab = select_model(cur, [0.07], [2], base_config(40))
    assert tab.selected == (2, 0.07) and len(tab.rows) == 1


def test_select_table_shape_and_determinism(tmp_path):
    cur = dataset(60, 5)
    a = select_model(cur, [0.06, 0.08], [1, 2, 3], base_config(60))
    b = select_model(cur, [0.06, 0.08], [1, 2, 3], base_config(60))
    assert len(a.rows) == 6
    assert all(np.isfinite(r.approx_score) or r.flagged for r in a.rows)
    key = lambda t: [(r.K, r.h, r.approx_score, r.flagged) for r in t.rows]
    assert key(a) == key(b) and a.selected == b.selected
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "K,h,approx_score,exact_score,selected"


def test_cv_table_ties_and_failures():
    t = CvTable([CvRow(3, 0.05, 1.0), CvRow(2, 0.08, 1.0), CvRow(2, 0.06, 1.0)])
    assert t.select() == (2, 0.06)
    with pytest.raises(AllCandidatesFailed):
        CvTable([CvRow(1, 0.05, float("nan"))]).select()


def eigen_risk(cur, K, h, base):
    fit = fit_covariance(cur, base.with_(h=h, K=K))
    psi = cosine_basis(fit.grid.nodes, 2)
    # a missing component costs the squared norm of the true eigenfunction
    return sum(modified_l2_loss(fit.eig.vectors[k], psi[k], fit.grid.weights) if k < fit.eig.K else 1.0
               for k in range(2))


def test_selection_monte_carlo():
    hits = wins = 0
    for seed in range(50):
        cur = dataset(200, seed)
        base = base_config(200)
        tab = select_model(cur, [0.04, 0.06, 0.08], [1, 2, 3], base, with_pred=True)
        K, h = tab.selected
        hits += K == 2
        Kp, hp = tab.select_by("pred_score")
        wins += eigen_risk(cur, K, h, base) <= eigen_risk(cur, Kp, hp, base)
    assert hits >= 40
    assert wins >= 30
