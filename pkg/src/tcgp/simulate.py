"""Synthetic two-modality datasets with known correlation ground truth.

The generator draws per-subject latent fields from a fixed smooth covariance
kernel, scales them by compactly supported variance profiles (one per
correlation sign, never overlapping), adds heteroscedastic log-normal-variance
noise, and records the implied per-voxel correlation as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from .rng import StreamFactory
from .types import GridDomain, ImageDataset

__all__ = ["SimSpec2D", "SimTruth", "Region", "generate_2d", "generate_3d"]

#: Eigenvalue cutoff (relative to the largest) for exact field sampling.
_GEN_CLIP = 1e-12

#: Voxel budget beyond which field sampling uses a Nystrom factor.
_GEN_DENSE_LIMIT = 20000


@dataclass(frozen=True)
class SimSpec2D:
    """Square-grid two-dimensional design with five fixed active regions."""

    n: int = 50
    size: int = 64
    zeta_plus: float = 0.75
    zeta_minus: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.size < 2:
            raise ValueError("need n >= 2 subjects and size >= 2")
        if self.zeta_plus < 0 or self.zeta_minus < 0:
            raise ValueError("signal strengths must be nonnegative")


@dataclass(frozen=True)
class SimTruth:
    """Generating fields of one synthetic dataset."""

    sign: np.ndarray            # (m,) in {-1, 0, +1}
    rho: np.ndarray             # (m,)
    sigma_plus_sq: np.ndarray   # (m,)
    sigma_minus_sq: np.ndarray  # (m,)
    tau1_sq: np.ndarray         # (m,)
    tau2_sq: np.ndarray         # (m,)

    def __post_init__(self):
        if (self.sigma_plus_sq * self.sigma_minus_sq != 0.0).any():
            raise ValueError("positive and negative variance profiles overlap")


@dataclass(frozen=True)
class Region:
    """Active region for the generic 3-d design: an L2 ball or an axis box."""

    sign: int                 # +1 or -1
    center: tuple
    radius: float | tuple     # scalar for balls, per-axis half-widths for boxes
    kind: str = "ball"

    def indicator(self, coords: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        if self.kind == "ball":
            return np.linalg.norm(coords - c, axis=1) < float(self.radius)
        if self.kind == "box":
            hw = np.asarray(self.radius, dtype=np.float64)
            return (np.abs(coords - c) < hw).all(axis=1)
        raise ValueError(f"unknown region kind {self.kind!r}")


def _generating_kernel(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """exp(-0.1(|v|^2 + |v'|^2) - 10 |v - v'|^2), a smooth non-stationary kernel."""
    g1 = np.exp(-0.1 * np.sum(x1**2, axis=1))
    g2 = np.exp(-0.1 * np.sum(x2**2, axis=1))
    d = cdist(x1, x2, "sqeuclidean")
    return g1[:, None] * g2[None, :] * np.exp(-10.0 * d)


_factor_cache: dict = {}


def _field_factor(coords: np.ndarray) -> np.ndarray:
    """Matrix B with B @ B.T ~= generating kernel Gram; fields are B @ z."""
    key = (coords.shape, hash(coords.tobytes()))
    if key in _factor_cache:
        return _factor_cache[key]
    m = coords.shape[0]
    if m <= _GEN_DENSE_LIMIT:
        K = _generating_kernel(coords, coords)
        k = min(m, 900)
        w, v = eigh(K, subset_by_index=[m - k, m - 1])
        w = w[::-1]
        v = v[:, ::-1]
        keep = w > _GEN_CLIP * w[0]
        B = v[:, keep] * np.sqrt(w[keep])
    else:
        stride = int(np.ceil((m / _GEN_DENSE_LIMIT) ** (1.0 / coords.shape[1])))
        sub = np.arange(m)[:: max(stride, 1)]
        W = _generating_kernel(coords[sub], coords[sub])
        w, v = eigh(W)
        w = w[::-1]
        v = v[:, ::-1]
        keep = w > _GEN_CLIP * w[0]
        C = _generating_kernel(coords, coords[sub])
        B = C @ (v[:, keep] / np.sqrt(w[keep]))
    _factor_cache[key] = B
    return B


def _generate(grid: GridDomain, n: int, sigma_plus_sq, sigma_minus_sq, seed: int):
    streams = StreamFactory(seed)
    B = _field_factor(grid.coords)
    k = B.shape[1]
    sig_p = np.sqrt(sigma_plus_sq)
    sig_m = np.sqrt(sigma_minus_sq)
    log_t1 = B @ streams("logtau", 1).standard_normal(k)
    log_t2 = B @ streams("logtau", 2).standard_normal(k)
    tau1_sq = np.exp(log_t1)
    tau2_sq = np.exp(log_t2)
    y1 = np.empty((n, grid.m))
    y2 = np.empty((n, grid.m))
    for i in range(n):
        rng = streams("subject", i)
        eta_p = sig_p * (B @ rng.standard_normal(k))
        eta_m = sig_m * (B @ rng.standard_normal(k))
        eps1 = np.sqrt(tau1_sq) * rng.standard_normal(grid.m)
        eps2 = np.sqrt(tau2_sq) * rng.standard_normal(grid.m)
        y1[i] = eta_p + eta_m + eps1
        y2[i] = eta_p - eta_m + eps2
    tot = sigma_plus_sq + sigma_minus_sq
    rho = (sigma_plus_sq - sigma_minus_sq) / np.sqrt((tot + tau1_sq) * (tot + tau2_sq))
    sign = np.sign(sigma_plus_sq - sigma_minus_sq).astype(np.int8)
    truth = SimTruth(sign=sign, rho=rho, sigma_plus_sq=sigma_plus_sq,
                     sigma_minus_sq=sigma_minus_sq, tau1_sq=tau1_sq, tau2_sq=tau2_sq)
    return ImageDataset(n=n, y1=y1, y2=y2, normalized=False), truth


def generate_2d(spec: SimSpec2D):
    """Two-dimensional design: three positive L1 balls of radius 0.1 centred at
    (0.3, 0.7), (0.7, 0.7), (0.3, 0.3) and two negative ones at (0.5, 0.5),
    (0.7, 0.3); signal strengths scale the in-region variances."""
    grid = GridDomain.regular((spec.size, spec.size))
    coords = grid.coords
    pos_centers = np.array([[0.3, 0.7], [0.7, 0.7], [0.3, 0.3]])
    neg_centers = np.array([[0.5, 0.5], [0.7, 0.3]])

    def l1_count(centers):
        hits = np.zeros(grid.m)
        for c in centers:
            hits += (np.abs(coords - c).sum(axis=1) < 0.1).astype(float)
        return hits

    sigma_plus_sq = spec.zeta_plus * l1_count(pos_centers)
    sigma_minus_sq = spec.zeta_minus * l1_count(neg_centers)
    ds, truth = _generate(grid, spec.n, sigma_plus_sq, sigma_minus_sq, spec.seed)
    return ds, truth, grid


def generate_3d(dims, n: int, region_spec, zeta_plus: float, zeta_minus: float,
                seed: int = 0, mask=None):
    """Generic three-dimensional design with user-supplied active regions.

    ``region_spec`` is a sequence of :class:`Region`; positive and negative
    regions must not overlap.
    """
    if len(dims) != 3:
        raise ValueError("generate_3d expects three axis sizes")
    grid = GridDomain.regular(dims, mask=mask)
    ind_p = np.zeros(grid.m)
    ind_m = np.zeros(grid.m)
    for reg in region_spec:
        ind = reg.indicator(grid.coords).astype(float)
        if reg.sign > 0:
            ind_p += ind
        elif reg.sign < 0:
            ind_m += ind
        else:
            raise ValueError("region sign must be +1 or -1")
    if ((ind_p > 0) & (ind_m > 0)).any():
        raise ValueError("positive and negative regions overlap")
    ds, truth = _generate(grid, n, zeta_plus * ind_p, zeta_minus * ind_m, seed)
    return ds, truth, grid
