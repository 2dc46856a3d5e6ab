"""Synthetic sparse functional data with cross-curve separable correlation.

Curves follow a finite-rank expansion ``X_i(t) = sum_nu sqrt(lambda_nu) psi_nu(t) xi_{i nu}``
with ``Cov(xi_{. nu}) = R`` for every component, observed at random design
points with additive noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfig
from .presmooth import ObservedCurve

DENSITIES = ("uniform", "linear")
CORRELATIONS = ("iid", "ar1", "equi", "explicit")
NOISES = ("gaussian", "t5")


def cosine_basis(t, M: int) -> np.ndarray:
    """``psi_1 = 1`` and ``psi_k = sqrt(2) cos((k - 1) pi t)``; shape (M, len(t))."""
    t = np.asarray(t, dtype=float)
    k = np.arange(M)[:, None]
    out = np.sqrt(2.0) * np.cos(k * np.pi * t[None, :])
    out[0] = 1.0
    return out


@dataclass
class SimulationConfig:
    """Generative model settings.

    ``rho`` is the AR(1) coefficient for ``correlation="ar1"`` and the common
    correlation for ``"equi"``; ``R`` is used with ``"explicit"``.
    """

    n: int = 200
    m_min: int = 4
    m_max: int = 8
    eigenvalues: tuple = (0.5, 0.25)
    sigma: float = 0.5
    density: str = "uniform"
    correlation: str = "iid"
    rho: float = 0.0
    R: list | None = None
    noise: str = "gaussian"
    seed: int = 0
    max_m_ratio: float = 10.0

    def __post_init__(self):
        self.eigenvalues = tuple(float(v) for v in self.eigenvalues)
        self.validate()

    @property
    def M(self) -> int:
        return len(self.eigenvalues)

    def validate(self) -> None:
        lam = np.asarray(self.eigenvalues)
        if self.n < 1:
            raise InvalidConfig("n must be positive")
        if not (1 <= self.m_min <= self.m_max):
            raise InvalidConfig("need 1 <= m_min <= m_max")
        if self.m_max / self.m_min > self.max_m_ratio:
            raise InvalidConfig("m_max / m_min exceeds the bounded-ratio sanity limit")
        if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) >= 0):
            raise InvalidConfig("eigenvalues must be positive and strictly decreasing")
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise InvalidConfig("sigma must be a nonnegative number")
        if self.density not in DENSITIES:
            raise InvalidConfig(f"density must be one of {DENSITIES}")
        if self.correlation not in CORRELATIONS:
            raise InvalidConfig(f"correlation must be one of {CORRELATIONS}")
        if self.noise not in NOISES:
            raise InvalidConfig(f"noise must be one of {NOISES}")
        if self.correlation == "ar1" and not (-1.0 < self.rho < 1.0):
            raise InvalidConfig("AR(1) coefficient must lie in (-1, 1)")
        if self.correlation == "equi" and not (0.0 <= self.rho <= 1.0):
            raise InvalidConfig("equicorrelation must lie in [0, 1]")
        if self.correlation == "explicit":
            if self.R is None:
                raise InvalidConfig("explicit correlation needs R")
            R = np.asarray(self.R, dtype=float)
            if R.shape != (self.n, self.n):
                raise InvalidConfig("R must be n x n")
            if not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
                raise InvalidConfig("R must be symmetric with unit diagonal")
            if np.linalg.eigvalsh(R).min() < -1e-8:
                raise InvalidConfig("R is not positive semidefinite")

    def correlation_matrix(self) -> np.ndarray | None:
        """Cross-curve correlation R; None for independent curves."""
        n = self.n
        if self.correlation == "iid":
            return None
        if self.correlation == "ar1":
            idx = np.arange(n)
            return self.rho ** np.abs(idx[:, None] - idx[None, :])
        if self.correlation == "equi":
            R = np.full((n, n), self.rho)
            np.fill_diagonal(R, 1.0)
            return R
        return np.asarray(self.R, dtype=float)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown simulation keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    eigenvalues: np.ndarray
    sigma2: float
    R: np.ndarray | None
    M: int
    density: str
    scores: np.ndarray = field(repr=False, default=None)

    def eigenfunctions(self, t) -> np.ndarray:
        return cosine_basis(t, self.M)

    def covariance(self, s, t) -> np.ndarray:
        """``C(s, t) = sum_nu lambda_nu psi_nu(s) psi_nu(t)`` on a tensor grid."""
        ps = cosine_basis(s, self.M)
        pt = cosine_basis(t, self.M)
        return (ps.T * self.eigenvalues) @ pt


def sqrt_psd(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped to zero."""
    vals, vecs = np.linalg.eigh(0.5 * (R + R.T))
    vals = np.where(vals < tol, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def sample_design(rng: np.random.Generator, size: int, density: str) -> np.ndarray:
    u = rng.random(size)
    if density == "uniform":
        return u
    # inverse CDF of g(t) = 1/2 + t on [0, 1]
    return -0.5 + np.sqrt(0.25 + 2.0 * u)


def sample_noise(rng: np.random.Generator, size: int, kind: str) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(size)
    # t with 5 degrees of freedom rescaled to unit variance
    return rng.standard_t(5, size) / np.sqrt(5.0 / 3.0)


def _substreams(seed: int, n: int):
    root = np.random.SeedSequence(seed)
    score_seq, *curve_seqs = root.spawn(n + 1)
    return np.random.default_rng(score_seq), [np.random.default_rng(s) for s in curve_seqs]


def draw_scores(cfg: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    """Scores ``xi`` of shape (n, M), columns correlated across curves by R."""
    z = rng.standard_normal((cfg.n, cfg.M))
    R = cfg.correlation_matrix()
    if R is None:
        return z
    return sqrt_psd(R) @ z


def simulate_dataset(cfg: SimulationConfig):
    """Draw one dataset; returns ``(curves, truth)``.

    Each curve draws its size, design and noise from its own substream of the
    seed, so results do not depend on the generation order.
    """
    cfg.validate()
    score_rng, curve_rngs = _substreams(cfg.seed, cfg.n)
    xi = draw_scores(cfg, score_rng)
    lam = np.asarray(cfg.eigenvalues)
    curves = []
    for i, rng in enumerate(curve_rngs):
        m = int(rng.integers(cfg.m_min, cfg.m_max + 1))
        t = sample_design(rng, m, cfg.density)
        x = (np.sqrt(lam) * xi[i]) @ cosine_basis(t, cfg.M)
        y = x + cfg.sigma * sample_noise(rng, m, cfg.noise)
        curves.append(ObservedCurve(i, t, y))
    truth = SyntheticTruth(lam, cfg.sigma**2, cfg.correlation_matrix(), cfg.M, cfg.density, xi)
    return curves, truth


def draw_given_times(times: np.ndarray, eigenvalues, sigma: float, size: int, rng) -> np.ndarray:
    """Observations of one curve at fixed ``times`` for ``size`` independent draws."""
    lam = np.asarray(eigenvalues, dtype=float)
    basis = cosine_basis(times, lam.size)
    xi = rng.standard_normal((size, lam.size))
    return (xi * np.sqrt(lam)) @ basis + sigma * rng.standard_normal((size, times.size))


def conditional_covariance(times, eigenvalues, sigma: float) -> np.ndarray:
    """Covariance of the observations of one curve given its design points."""
    lam = np.asarray(eigenvalues, dtype=float)
    basis = cosine_basis(times, lam.size)
    return (basis.T * lam) @ basis + sigma**2 * np.eye(len(times))


def wick_moment(cov4) -> float:
    """``E[W1 W2 W3 W4]`` for a centred Gaussian vector with covariance ``cov4``."""
    S = np.asarray(cov4, dtype=float)
    if S.shape != (4, 4):
        raise ValueError("need a 4 x 4 covariance")
    return float(S[0, 1] * S[2, 3] + S[0, 2] * S[1, 3] + S[0, 3] * S[1, 2])


def correlation_diagnostic(R) -> tuple[float, float]:
    """``(n^-2 sum_{i != j} rho_ij^2, ||R||_2)``."""
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    off = R - np.diag(np.diag(R))
    return float(np.sum(off**2) / n**2), float(np.linalg.norm(R, 2))
