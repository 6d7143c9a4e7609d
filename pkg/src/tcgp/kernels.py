"""Matern correlation kernel and its truncated eigenbasis on a voxel grid.

The latent fields are expanded over the leading eigenpairs of the kernel's
Gram matrix.  Eigenfunctions are orthonormalized under the empirical counting
measure scaled by 1/m, i.e. (1/m) * psi.T @ psi = I, and eigenvalues are
rescaled accordingly so that

    kappa(v, v') ~= sum_l lambda_l * psi_l(v) * psi_l(v') / 1   (grid points)

and a field with independent N(0, lambda_l) coefficients has pointwise
variance ~= kappa(v, v) = 1.  For grids too large for a dense Gram matrix the
basis is computed on a strided sub-lattice and extended to all voxels by the
Nystrom formula, then re-orthonormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kv

from .types import GridDomain, HyperParams

__all__ = [
    "KLBasis",
    "matern",
    "gram_matrix",
    "eigendecompose",
    "select_truncation",
    "evaluate_basis",
    "build_basis",
    "DENSE_LIMIT",
]

#: Largest voxel count for which a dense Gram matrix is assembled.
DENSE_LIMIT = 20000

#: Relative floor below which eigenvalues are treated as numerical noise.
EIG_CLIP = 1e-10


@dataclass(frozen=True)
class KLBasis:
    """Truncated eigenbasis: eigenvalues descending, columns of ``psi``
    orthonormal under the (1/m)-scaled counting measure."""

    L: int
    lam: np.ndarray              # (L,) positive, descending
    psi: np.ndarray              # (m, L)
    variance_fraction: float

    def __post_init__(self):
        if self.lam.shape != (self.L,) or self.psi.shape[1] != self.L:
            raise ValueError("inconsistent basis dimensions")
        if self.L and ((self.lam <= 0).any() or (np.diff(self.lam) > 0).any()):
            raise ValueError("eigenvalues must be positive and descending")

    @property
    def m(self) -> int:
        return self.psi.shape[0]


def matern(dist, gamma1: float, gamma2: float):
    """Matern correlation at Euclidean distance ``dist``.

    kappa(d) = 2^(1-g1)/Gamma(g1) * (sqrt(2 g1) d/g2)^g1 * K_g1(sqrt(2 g1) d/g2)

    with K the modified Bessel function of the second kind.  Returns exactly 1
    at zero distance (the limit, not a Bessel evaluation); underflows to 0 at
    large distance.  Accepts scalars or arrays.
    """
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError("gamma1 and gamma2 must be positive")
    d = np.asarray(dist, dtype=np.float64)
    if (d < 0).any():
        raise ValueError("distance must be nonnegative")
    x = np.sqrt(2.0 * gamma1) * d / gamma2
    out = np.ones_like(d)
    pos = x > 0
    if pos.any():
        xp = x[pos]
        log_pref = (1.0 - gamma1) * np.log(2.0) - gammaln(gamma1) + gamma1 * np.log(xp)
        bk = kv(gamma1, xp)
        with np.errstate(invalid="ignore"):
            val = np.exp(log_pref) * bk
        # kv underflows to 0 for large x; exp overflow cannot occur since kappa <= 1
        out[pos] = np.where(np.isfinite(val), val, 0.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(dist) or np.asarray(dist).ndim == 0 else out


def gram_matrix(grid: GridDomain, hp: HyperParams, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense kernel Gram matrix on the grid's masked voxels.

    Raises ``MemoryError`` beyond ``dense_limit`` voxels; large grids must go
    through the Nystrom path in :func:`build_basis`.
    """
    if grid.m < 1:
        raise ValueError("grid has no voxels")
    if grid.m > dense_limit:
        raise MemoryError(
            f"dense Gram matrix for m={grid.m} exceeds the limit {dense_limit}; "
            "use the subsampled (Nystrom) construction"
        )
    D = cdist(grid.coords, grid.coords)
    K = matern(D, hp.gamma1, hp.gamma2)
    K = np.asarray(K)
    np.fill_diagonal(K, 1.0)
    return (K + K.T) / 2.0


def eigendecompose(gram: np.ndarray, L_probe: int):
    """Top eigenpairs of a symmetric Gram matrix, normalized for the grid.

    Returns ``(lam, psi)`` with at most ``min(L_probe, m)`` pairs, eigenvalues
    descending, pairs below ``EIG_CLIP * lam_max`` dropped, psi columns
    orthonormal under the (1/m)-scaled inner product and eigenvalues divided
    by m so that ``psi @ diag(lam) @ psi.T / m`` reconstructs the Gram matrix.
    """
    gram = np.asarray(gram, dtype=np.float64)
    m = gram.shape[0]
    if gram.shape != (m, m):
        raise ValueError("gram must be square")
    if not np.allclose(gram, gram.T, atol=1e-10):
        raise ValueError("gram must be symmetric")
    k = min(int(L_probe), m)
    try:
        if k < m:
            w, v = eigh(gram, subset_by_index=[m - k, m - 1])
        else:
            w, v = eigh(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError("eigendecomposition failed to converge") from exc
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    keep = w > EIG_CLIP * max(w[0], 0.0)
    w = w[keep]
    v = v[:, keep]
    # v.T v = I  ->  psi = sqrt(m) v satisfies (1/m) psi.T psi = I,
    # and lam = w / m keeps sum_l lam_l psi psi' == v w v'.
    return w / m, v * np.sqrt(m)


def select_truncation(lam: np.ndarray, R: float) -> int:
    """Smallest L whose leading eigenvalues reach fraction ``R`` of the total."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("empty eigenvalue vector")
    if (lam <= 0).any() or (np.diff(lam) > 0).any():
        raise ValueError("eigenvalues must be positive and descending")
    frac = np.cumsum(lam) / lam.sum()
    return int(min(np.searchsorted(frac, R - 1e-12) + 1, lam.size))


def evaluate_basis(basis: KLBasis, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate the field ``sum_l coeffs[l] * psi_l`` at every voxel."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.L,):
        raise ValueError(f"coefficient vector has shape {coeffs.shape}, expected ({basis.L},)")
    return basis.psi @ coeffs


def _strided_subgrid(grid: GridDomain, limit: int) -> np.ndarray:
    """Indices (into masked voxels) of a uniformly strided sub-lattice."""
    stride = 1
    while True:
        flat_idx = np.flatnonzero(grid.mask.reshape(-1))
        pos = np.unravel_index(flat_idx, grid.dims)
        sel = np.ones(grid.m, dtype=bool)
        for axis_pos in pos:
            sel &= (axis_pos % stride) == 0
        if sel.sum() <= limit:
            return np.flatnonzero(sel)
        stride += 1


def _nystrom_basis(grid: GridDomain, hp: HyperParams, dense_limit: int):
    """Eigenbasis on a sub-lattice extended to all voxels, re-orthonormalized."""
    sub = _strided_subgrid(grid, dense_limit)
    sub_coords = grid.coords[sub]
    m_sub = sub.size
    D = cdist(sub_coords, sub_coords)
    K_sub = np.asarray(matern(D, hp.gamma1, hp.gamma2))
    np.fill_diagonal(K_sub, 1.0)
    lam_sub, psi_sub = eigendecompose(K_sub, min(hp.kl_probe_length, m_sub))
    # psi_l(v) = (1/lam_l) * mean_j kappa(v, v_j) psi_l(v_j)
    K_cross = np.asarray(matern(cdist(grid.coords, sub_coords), hp.gamma1, hp.gamma2))
    psi_ext = (K_cross @ psi_sub) / (m_sub * lam_sub)
    # Re-orthonormalize under the full-grid (1/m) measure while preserving the
    # low-rank kernel approximation psi diag(lam) psi^T / m.
    B = psi_ext * np.sqrt(lam_sub) / np.sqrt(grid.m)
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    lam = s**2
    keep = lam > EIG_CLIP * lam[0]
    return lam[keep], U[:, keep] * np.sqrt(grid.m)


def build_basis(grid: GridDomain, hp: HyperParams, dense_limit: int = DENSE_LIMIT) -> KLBasis:
    """Construct the truncated eigenbasis for a grid at the configured target.

    Probes ``kl_probe_length`` eigenpairs, then keeps the smallest prefix
    whose variance fraction reaches ``kl_variance_target``.
    """
    if grid.m <= dense_limit:
        gram = gram_matrix(grid, hp, dense_limit)
        lam, psi = eigendecompose(gram, min(hp.kl_probe_length, grid.m))
    else:
        lam, psi = _nystrom_basis(grid, hp, dense_limit)
        lam, psi = lam[: hp.kl_probe_length], psi[:, : hp.kl_probe_length]
    L = select_truncation(lam, hp.kl_variance_target)
    frac = float(lam[:L].sum() / lam.sum())
    return KLBasis(L=L, lam=lam[:L].copy(), psi=np.ascontiguousarray(psi[:, :L]), variance_fraction=frac)
