"""Quadrature-weighted eigendecomposition and the first-order resolvent.

The integral operator ``(C f)(t) = int C(t, s) f(s) ds`` is discretized on the
evaluation nodes with weights ``w``. Eigenfunctions are normalized so that
``sum_p psi(u_p)^2 w_p = 1``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceSurface
from .errors import (
    DegenerateSpectrumWarning,
    GridMismatch,
    IndexOutOfRange,
    InvalidInput,
    RankDeficientWarning,
)

GAP_TOL = 1e-8
SIGN_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Top eigenpairs of a covariance surface.

    Attributes
    ----------
    values : (K,) nonincreasing positive eigenvalues.
    vectors : (K, P) eigenfunctions sampled at ``nodes``.
    requested : rank asked for; ``rank_deficient`` is set when fewer
        positive eigenvalues exist.
    degenerate : (K,) flags for eigenvalues whose gap to a neighbour is below
        ``GAP_TOL * values[0]``.
    """

    values: np.ndarray
    vectors: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    requested: int
    rank_deficient: bool = False
    degenerate: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.values.size

    def check_index(self, nu: int) -> None:
        if not (0 <= nu < self.K):
            raise IndexOutOfRange(f"index {nu} outside retained rank {self.K}")

    def at(self, t, nu=None):
        """Eigenfunctions at arbitrary points by linear interpolation on the nodes."""
        t = np.asarray(t, dtype=float)
        rows = self.vectors if nu is None else self.vectors[[nu]]
        i = np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, self.nodes.size - 2)
        frac = (t - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i])
        out = rows[:, i] * (1 - frac) + rows[:, i + 1] * frac
        return out if nu is None else out[0]

    def truncate(self, K: int) -> "EigenSystem":
        """Leading ``K`` pairs of this system (same decomposition)."""
        k = min(K, self.K)
        deg = None if self.degenerate is None else self.degenerate[:k].copy()
        if deg is not None and k > 1:
            deg[:] = False
            gaps = np.abs(np.diff(self.values[:k])) < GAP_TOL * self.values[0]
            deg[:-1] |= gaps
            deg[1:] |= gaps
        elif deg is not None:
            deg[:] = False
        return EigenSystem(self.values[:k], self.vectors[:k], self.nodes, self.weights, K, k < K, deg)

    def reconstruct(self) -> np.ndarray:
        return (self.vectors.T * self.values) @ self.vectors

    def inner(self, f, g) -> np.ndarray:
        return np.sum(np.asarray(f) * np.asarray(g) * self.weights, axis=-1)


def _fix_signs(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for k in range(out.shape[0]):
        integral = float(np.sum(out[k] * weights))
        if abs(integral) > SIGN_TOL:
            flip = integral < 0
        else:
            nz = np.flatnonzero(np.abs(out[k]) > SIGN_TOL)
            flip = nz.size > 0 and out[k, nz[0]] < 0
        if flip:
            out[k] = -out[k]
    return out


def eigendecompose(surface: CovarianceSurface, K: int) -> EigenSystem:
    """Top-K positive eigenpairs of ``D^{1/2} C D^{1/2}`` mapped back to functions.

    Eigenfunction values are recovered at every node through the eigen
    equation ``psi = C D^{1/2} phi / lambda``, which coincides with
    ``D^{-1/2} phi`` wherever the weight is positive and stays well defined at
    nodes carrying little or no quadrature mass.
    """
    C = np.asarray(surface.values, dtype=float)
    w = np.asarray(surface.weights, dtype=float)
    P = C.shape[0]
    if not (1 <= K <= P):
        raise InvalidInput(f"rank K={K} must lie in [1, {P}]")
    if not np.allclose(C, C.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise InvalidInput("covariance surface is not symmetric")
    C = 0.5 * (C + C.T)
    sw = np.sqrt(w)
    lam, phi = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    order = np.argsort(lam)[::-1]
    lam, phi = lam[order], phi[:, order]
    scale = max(float(np.abs(lam).max()) if lam.size else 0.0, 1e-300)
    positive = lam > 1e-12 * scale if scale > 1e-300 else np.zeros_like(lam, dtype=bool)
    keep = min(K, int(positive.sum()))
    deficient = keep < K
    if deficient:
        warnings.warn(
            f"only {keep} positive eigenvalue(s) available for requested rank {K}",
            RankDeficientWarning,
            stacklevel=2,
        )
    lam = lam[:keep]
    phi = phi[:, :keep]
    vectors = (C @ (sw[:, None] * phi) / lam).T if keep else np.zeros((0, P))
    vectors = _fix_signs(vectors, w)
    degenerate = np.zeros(keep, dtype=bool)
    if keep > 1:
        gaps = np.abs(np.diff(lam)) < GAP_TOL * lam[0]
        degenerate[:-1] |= gaps
        degenerate[1:] |= gaps
        if gaps.any():
            warnings.warn("near-degenerate eigenvalues detected", DegenerateSpectrumWarning, stacklevel=2)
    return EigenSystem(lam, vectors, surface.nodes, w, K, deficient, degenerate)


def _check_kernel(eig: EigenSystem, kernel) -> np.ndarray:
    vals = kernel.values if isinstance(kernel, CovarianceSurface) else np.asarray(kernel, dtype=float)
    if vals.shape != (eig.nodes.size, eig.nodes.size):
        raise GridMismatch("kernel does not live on the eigen-system nodes")
    return vals


def resolvent_coefficients(eig: EigenSystem, nu: int) -> np.ndarray:
    """Coefficients ``a_k`` of ``H_nu = sum_k a_k P_k - I / lambda_nu``.

    ``a_k = 1/(lambda_k - lambda_nu) + 1/lambda_nu`` for k != nu and
    ``a_nu = 1/lambda_nu``, so ``H_nu psi_nu = 0``.
    """
    eig.check_index(nu)
    lam = eig.values
    ln = lam[nu]
    a = np.empty(eig.K)
    for k in range(eig.K):
        a[k] = 1.0 / ln if k == nu else lam[k] / (ln * (lam[k] - ln))
    return a


def resolvent_apply(eig: EigenSystem, nu: int, u: np.ndarray) -> np.ndarray:
    """``H_nu u`` for functions ``u`` sampled on the nodes (last axis)."""
    a = resolvent_coefficients(eig, nu)
    proj = eig.inner(u[..., None, :], eig.vectors)  # (..., K)
    return (proj * a) @ eig.vectors - u / eig.values[nu]


def h_nu_apply(eig: EigenSystem, nu: int, delta_kernel, f) -> np.ndarray:
    """``H_nu Delta f``: apply the kernel by quadrature, then the resolvent."""
    vals = _check_kernel(eig, delta_kernel)
    f = np.asarray(f, dtype=float)
    u = vals @ (eig.weights * f)
    return resolvent_apply(eig, nu, u)


def dirac_kernel(eig: EigenSystem) -> np.ndarray:
    """Node representation of the identity operator (``diag(1/w)``)."""
    return np.diag(1.0 / eig.weights)


def trace_p_delta(eig: EigenSystem, nu: int, delta_kernel) -> float:
    """``tr(P_nu Delta) = int int psi_nu(s) Delta(s, t) psi_nu(t) ds dt``."""
    eig.check_index(nu)
    vals = _check_kernel(eig, delta_kernel)
    v = eig.vectors[nu] * eig.weights
    return float(v @ vals @ v)


def modified_l2_loss(psi_hat, psi_true, weights) -> float:
    """``||psi_hat - sign(<psi_hat, psi>) psi||^2``; sign(0) counts as +1."""
    psi_hat = np.asarray(psi_hat, dtype=float)
    psi_true = np.asarray(psi_true, dtype=float)
    ip = float(np.sum(psi_hat * psi_true * weights))
    sgn = -1.0 if ip < 0 else 1.0
    return float(np.sum((psi_hat - sgn * psi_true) ** 2 * weights))


def write_eigen_csv(path, eig: EigenSystem) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"psi{k + 1}" for k in range(eig.K)])
        for p, t in enumerate(eig.nodes):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in eig.vectors[:, p]])


def write_eigenvalues_csv(path, eig: EigenSystem) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow([repr(float(v)) for v in eig.values])


def read_eigen_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:].T
