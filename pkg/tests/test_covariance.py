import numpy as np
import pytest
from hypothesis import given, strategies as st

from fpcasmooth.covariance import (
    CovarianceSurface,
    DiagonalCurve,
    estimate_diag,
    estimate_offdiag,
    fft_convolve,
    lattice_apply,
    linearized_on_lattice,
    merge,
    naive_covariance,
    read_surface_csv,
    write_surface_csv,
)
from fpcasmooth.errors import ExcludedCurvesWarning, GridMismatch, NoEligibleCurves
from fpcasmooth.kernels import DiagonalWeight, gq
from fpcasmooth.presmooth import ObservedCurve, linear_density, linearized_eval, make_grid, presmooth_all

from oracles import linearized_direct, offdiag_quadruple


def random_instance(rng, linear=False):
    n = int(rng.integers(1, 6))
    h = float(rng.uniform(0.03, 0.2))
    curves = []
    for i in range(n):
        m = int(rng.integers(2, 7))
        curves.append(ObservedCurve(i, rng.uniform(0, 1, m), rng.normal(size=m)))
    dens = linear_density() if linear else None
    grid = make_grid(h, dens, boundary="none", max_spacing=0.02)
    return curves, grid


def oracle_surface(curves, grid):
    """Quadruple-sum estimator on every node pair, built from per-node direct values."""
    g = grid.density
    elig = [c for c in curves if c.m >= 2]
    V = np.array([[linearized_direct(c, grid.h, grid.knots, s) for s in grid.nodes] for c in elig])
    w = np.array([c.m / (c.m - 1) for c in elig])
    C = (V.T * w) @ V / len(elig)
    gn = g(grid.nodes)
    return C / np.outer(gn, gn)


def test_fft_convolve_small_cases():
    x = np.array([0.3, -1.0, 2.5])
    assert np.allclose(fft_convolve(np.array([1.0]), x), x, atol=1e-15)
    assert np.allclose(fft_convolve(np.array([1.0, 1.0]), np.array([1.0, 1.0])), [1, 2, 1], atol=1e-14)


def test_fft_convolve_matches_direct(rng):
    a, b = rng.normal(size=37), rng.normal(size=61)
    got = fft_convolve(a, b)
    assert got.size == 97
    want = np.array([sum(a[i] * b[k - i] for i in range(a.size) if 0 <= k - i < b.size) for k in range(97)])
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-10


def test_lattice_paths_match_direct_evaluation(rng):
    g = make_grid(0.07)
    vals, ders = rng.normal(size=(3, g.L)), rng.normal(size=(3, g.L))
    got = linearized_on_lattice(vals, ders, g.h, g.refine, g.P)
    want = linearized_eval(vals, ders, g.knots, g.h, g.nodes)
    assert np.max(np.abs(got - want)) < 1e-12
    # window filters against a direct sum of the closed forms
    R = int(np.ceil((2 + 6) * g.refine))
    y = np.arange(-R, R + 1) / g.refine
    f0, f1 = g.h * gq(0, y, 12.0), g.h**2 * gq(1, y, 12.0)
    got = lattice_apply(vals, ders, f0, f1, g.refine, g.P)
    dx = (g.nodes[:, None] - g.knots[None, :]) / g.h
    want = vals @ (g.h * gq(0, dx, 12.0)).T + ders @ (g.h**2 * gq(1, dx, 12.0)).T
    assert np.max(np.abs(got - want)) < 1e-12


def test_offdiag_matches_quadruple_sum_on_random_instances():
    rng = np.random.default_rng(2024)
    for k in range(20):
        curves, grid = random_instance(rng, linear=bool(k % 2))
        assert grid.L <= 40
        surf = estimate_offdiag(presmooth_all(curves, grid), grid)
        ref = oracle_surface(curves, grid)
        err = np.linalg.norm(surf.values - ref) / np.linalg.norm(ref)
        assert err < 1e-9


def test_offdiag_probe_pairs_against_pointwise_oracle():
    g = make_grid(0.1, boundary="none")
    c = ObservedCurve(0, [0.31, 0.62], [1.3, -0.4])
    surf = estimate_offdiag(presmooth_all([c], g), g)
    for s, t in [(0.0, 0.5), (0.3, 0.3), (0.2, 0.9), (1.0, 0.1), (0.6, 0.4)]:
        i, j = np.argmin(np.abs(g.nodes - s)), np.argmin(np.abs(g.nodes - t))
        ref = offdiag_quadruple([c], g.h, g.knots, g.density, g.nodes[i], g.nodes[j])
        assert surf.values[i, j] == pytest.approx(ref, abs=1e-12)


def test_offdiag_zero_curves():
    g = make_grid(0.1)
    cs = [ObservedCurve(i, [0.2, 0.7], [0.0, 0.0]) for i in range(3)]
    assert np.all(estimate_offdiag(presmooth_all(cs, g), g).values == 0.0)


def test_offdiag_excludes_single_observation_curves():
    g = make_grid(0.1, boundary="none")
    cs = [ObservedCurve(0, [0.2, 0.6], [1.0, 2.0]), ObservedCurve(1, [0.4], [5.0])]
    with pytest.warns(ExcludedCurvesWarning):
        surf = estimate_offdiag(presmooth_all(cs, g), g)
    assert np.allclose(surf.values, estimate_offdiag(presmooth_all(cs[:1], g), g).values, atol=1e-14)
    with pytest.raises(NoEligibleCurves):
        estimate_offdiag(presmooth_all([ObservedCurve(0, [0.4], [1.0])], g), g)


def test_offdiag_constant_curves_far_from_diagonal(rng):
    g = make_grid(0.05)
    c = rng.normal(size=6)
    curves = [ObservedCurve(i, np.linspace(0, 1, 400), np.full(400, ci)) for i, ci in enumerate(c)]
    surf = estimate_offdiag(presmooth_all(curves, g), g)
    want = np.mean(400 / 399 * c**2)
    i, j = np.searchsorted(g.nodes, 0.3), np.searchsorted(g.nodes, 0.7)
    assert surf.values[i, j] == pytest.approx(want, rel=0.01)


def test_diag_matches_direct_sum(rng):
    g = make_grid(0.08, boundary="none")
    curves = [ObservedCurve(i, rng.uniform(0, 1, 4), rng.normal(size=4)) for i in range(3)]
    d = estimate_diag(presmooth_all(curves, g), g)
    for p in (0, 7, 30, g.P - 1):
        s = g.nodes[p]
        want = np.mean([linearized_direct(c, g.h, g.knots, s, square=True) for c in curves])
        assert d.values[p] == pytest.approx(want, abs=1e-12)
        assert d.at(s) == pytest.approx(want, abs=1e-12)


def test_diag_single_observation_at_knot():
    g = make_grid(0.1, boundary="none")
    c = ObservedCurve(0, [g.knots[5]], [1.5])
    d = estimate_diag(presmooth_all([c], g), g)
    assert d.at(g.knots[5]) == pytest.approx(linearized_direct(c, 0.1, g.knots, g.knots[5], square=True), abs=1e-13)


def test_diag_zero_data():
    g = make_grid(0.1)
    d = estimate_diag(presmooth_all([ObservedCurve(0, [0.5], [0.0])], g), g)
    assert np.all(d.values == 0.0)


def test_diag_monte_carlo_level():
    from fpcasmooth.simulate import SimulationConfig, simulate_dataset

    # C(t, t) + sigma^2 = 1 + 0.25 for the constant eigenfunction
    cur, _ = simulate_dataset(SimulationConfig(n=500, m_min=5, m_max=5, eigenvalues=(1.0,), sigma=0.5, seed=5))
    g = make_grid(0.1)
    d = estimate_diag(presmooth_all(cur, g), g)
    inner = (g.nodes > 0.2) & (g.nodes < 0.8)
    ys = np.array([np.mean(c.values**2) for c in cur])
    se = ys.std() / np.sqrt(len(cur))
    assert abs(d.values[inner].mean() - 1.25) < 3 * se + 0.02


def _toy_pair(h=0.05):
    g = make_grid(h)
    off = CovarianceSurface(g.nodes, g.weights, np.add.outer(g.nodes, g.nodes) * 0 + 0.7, "offdiag", h)
    half = np.full(2 * g.P - 1, 1.2)
    diag = DiagonalCurve(g.nodes, half[::2].copy(), half)
    return g, off, diag


def test_merge_far_and_near():
    g, off, diag = _toy_pair()
    w = DiagonalWeight(g.h)
    m = merge(off, diag, 0.25, w)
    i, j = 0, g.P - 1
    assert m.values[i, j] == pytest.approx(0.7, rel=1e-6)
    assert m.values[10, 10] == pytest.approx(0.95, abs=1e-6)
    m2 = merge(off, diag, 5.0, w)
    assert m2.values[10, 10] == pytest.approx(g.h**2, abs=1e-6)


def test_merge_transition_point():
    g, off, diag = _toy_pair(0.05)
    w = DiagonalWeight(g.h)
    half = w.width / 2
    k = int(round(half / (g.h / g.refine)))
    assert g.nodes[k] == pytest.approx(half)
    m = merge(off, diag, 0.25, w)
    wt = w.weight(g.nodes[0], g.nodes[k])
    assert wt == pytest.approx(0.5, abs=1e-12)
    want = (1 - wt) * 0.7 + wt * max(1.2 - 0.25, g.h**2)
    assert m.values[0, k] == pytest.approx(want, abs=1e-9)


@given(st.floats(0.0, 2.0))
def test_merge_is_pointwise_convex(sigma2):
    rng = np.random.default_rng(7)
    g = make_grid(0.05)
    A = rng.normal(size=(g.P, g.P))
    off = CovarianceSurface(g.nodes, g.weights, 0.5 * (A + A.T), "offdiag", g.h)
    half = rng.uniform(0, 2, 2 * g.P - 1)
    diag = DiagonalCurve(g.nodes, half[::2].copy(), half)
    m = merge(off, diag, sigma2, DiagonalWeight(g.h))
    dp = np.maximum(half - sigma2, g.h**2)
    lo = min(off.values.min(), dp.min())
    hi = max(off.values.max(), dp.max())
    assert np.all(m.values >= lo - 1e-12) and np.all(m.values <= hi + 1e-12)
    assert np.array_equal(m.values, m.values.T)


def test_merge_grid_mismatch():
    g, off, _ = _toy_pair()
    g2 = make_grid(0.07, max_spacing=0.02)
    half = np.ones(2 * g2.P - 1)
    with pytest.raises(GridMismatch):
        merge(off, DiagonalCurve(g2.nodes, half[::2], half), 0.1, DiagonalWeight(g.h))


def test_naive_covariance_zero_and_formula(rng):
    g = make_grid(0.1)
    z = naive_covariance(presmooth_all([ObservedCurve(0, [0.5, 0.6], [0.0, 0.0])], g), g)
    assert np.all(z.values == 0)
    curves = [ObservedCurve(i, rng.uniform(0, 1, 3), rng.normal(size=3)) for i in range(4)]
    b = presmooth_all(curves, g)
    nv = naive_covariance(b, g)
    assert nv.values[3, 7] == pytest.approx(np.mean(b.X[:, 3] * b.X[:, 7]), abs=1e-14)


def test_surface_csv_roundtrip(tmp_path, rng):
    g = make_grid(0.1)
    A = rng.normal(size=(g.P, g.P))
    s = CovarianceSurface(g.nodes, g.weights, A + A.T, "merged", g.h)
    write_surface_csv(tmp_path / "c.csv", s)
    r = read_surface_csv(tmp_path / "c.csv")
    assert np.array_equal(r.values, s.values) and np.array_equal(r.nodes, s.nodes)
    assert np.allclose(r.weights, s.weights)
