"""Core domain types: the voxel grid, the two-modality dataset, model
hyperparameters, and the mutable state of one sampling chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridDomain",
    "ImageDataset",
    "TransformedDataset",
    "HyperParams",
    "ChainState",
    "normalize_dataset",
    "transform_data",
]


@dataclass(frozen=True)
class GridDomain:
    """A d-dimensional voxel lattice (d = 2 or 3) with unit-cube coordinates.

    Lattice indices are mapped to [0, 1]^d by dividing each index by
    (axis size - 1), so kernel length scales are resolution independent.
    ``coords`` holds only the masked (in-domain) voxels, in scan order with
    the last axis fastest; ``m`` is their count.
    """

    dims: tuple
    coords: np.ndarray  # (m, d) float64
    mask: np.ndarray    # bool, shape == dims
    m: int

    def __post_init__(self):
        dims = tuple(int(s) for s in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2- or 3-dimensional, got dims={dims}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != dims:
            raise ValueError(f"mask shape {mask.shape} != dims {dims}")
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.float64))
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "coords", coords)
        if self.m != int(mask.sum()):
            raise ValueError("m does not match the number of masked voxels")
        if coords.shape != (self.m, len(dims)):
            raise ValueError(f"coords shape {coords.shape} != (m, d) = ({self.m}, {len(dims)})")
        if self.m and (coords.min() < 0.0 or coords.max() > 1.0):
            raise ValueError("coordinates must lie in [0, 1]^d")
        if self.m and np.unique(coords, axis=0).shape[0] != self.m:
            raise ValueError("voxel coordinates must be distinct")

    @classmethod
    def regular(cls, dims, mask=None) -> "GridDomain":
        """Build a grid over a full lattice, optionally restricted by a mask."""
        dims = tuple(int(s) for s in dims)
        if mask is None:
            mask = np.ones(dims, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
        axes = [np.arange(s, dtype=np.float64) / max(s - 1, 1) for s in dims]
        mesh = np.meshgrid(*axes, indexing="ij")
        all_coords = np.stack([g.reshape(-1) for g in mesh], axis=1)
        flat_mask = mask.reshape(-1)  # C order: last axis fastest
        coords = all_coords[flat_mask]
        return cls(dims=dims, coords=coords, mask=mask, m=int(flat_mask.sum()))

    @property
    def d(self) -> int:
        return len(self.dims)

    def embed(self, values: np.ndarray, fill=0.0) -> np.ndarray:
        """Scatter a per-voxel vector back onto the full lattice."""
        values = np.asarray(values)
        out = np.full(self.dims, fill, dtype=values.dtype)
        out[self.mask] = values
        return out


@dataclass(frozen=True)
class ImageDataset:
    """Two co-registered modality stacks over (subject, voxel)."""

    n: int
    y1: np.ndarray  # (n, m)
    y2: np.ndarray  # (n, m)
    normalized: bool = False

    def __post_init__(self):
        y1 = np.ascontiguousarray(np.asarray(self.y1, dtype=np.float64))
        y2 = np.ascontiguousarray(np.asarray(self.y2, dtype=np.float64))
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        if y1.ndim != 2 or y1.shape != y2.shape:
            raise ValueError(f"y1 {y1.shape} and y2 {y2.shape} must share shape (n, m)")
        if y1.shape[0] != self.n:
            raise ValueError(f"n={self.n} does not match leading axis {y1.shape[0]}")
        if not (np.isfinite(y1).all() and np.isfinite(y2).all()):
            raise ValueError("dataset contains non-finite values")

    @property
    def m(self) -> int:
        return self.y1.shape[1]


@dataclass(frozen=True)
class TransformedDataset:
    """Per-voxel average and half-contrast of the two modalities.

    The transform decouples the positive-correlation channel (carried by
    ``y_plus``) from the negative one (``y_minus``); it is exactly invertible:
    y1 = y_plus + y_minus, y2 = y_plus - y_minus.
    """

    y_plus: np.ndarray   # (n, m)
    y_minus: np.ndarray  # (n, m)

    def __post_init__(self):
        if self.y_plus.shape != self.y_minus.shape:
            raise ValueError("y_plus and y_minus must share shape")

    @property
    def n(self) -> int:
        return self.y_plus.shape[0]

    @property
    def m(self) -> int:
        return self.y_plus.shape[1]

    def invert(self) -> tuple:
        return self.y_plus + self.y_minus, self.y_plus - self.y_minus


@dataclass(frozen=True)
class HyperParams:
    """Model and fitting hyperparameters.

    gamma1, gamma2
        Smoothness and length scale of the Matern correlation kernel.
    a_tau, b_tau
        Inverse-gamma hyperparameters of the noise variances.  The
        conditional update uses scale ``n * b_tau``, so the effective prior
        is IG(a_tau, n * b_tau).
    omega_quantiles
        Quantile pair (q_lo, q_hi) of |xi| used to refresh the threshold's
        uniform-prior range each iteration when running adaptively.
    kl_variance_target
        Fraction of kernel variance the truncated basis must retain.
    kl_probe_length
        Number of leading eigenpairs probed when measuring that fraction.
    """

    gamma1: float = 1.5
    gamma2: float = 0.2
    a_tau: float = 1e-3
    b_tau: float = 1e-3
    omega_quantiles: tuple = (0.75, 1.0)
    kl_variance_target: float = 0.6
    kl_probe_length: int = 900
    pip_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        q_lo, q_hi = self.omega_quantiles
        if not (0.0 <= q_lo < q_hi <= 1.0):
            raise ValueError(f"omega_quantiles must satisfy 0 <= q_lo < q_hi <= 1, got {self.omega_quantiles}")
        if not (0.0 < self.kl_variance_target <= 1.0):
            raise ValueError("kl_variance_target must lie in (0, 1]")
        for name in ("gamma1", "gamma2", "a_tau", "b_tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kl_probe_length < 1:
            raise ValueError("kl_probe_length must be >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class ChainState:
    """All sampled parameters at one iteration of a chain.

    Single-writer contract: exactly one owner mutates the state; parallel
    readers may only hold snapshots taken between mutations.  ``xi`` caches
    the latent field ``psi @ c`` and must be refreshed whenever ``c`` changes.
    """

    c: np.ndarray         # (L,)
    e_plus: np.ndarray    # (n, L)
    e_minus: np.ndarray   # (n, L)
    tau1_sq: np.ndarray   # (m,)
    tau2_sq: np.ndarray   # (m,)
    omega: float
    xi: np.ndarray        # (m,) cached = psi @ c

    def refresh_xi(self, psi: np.ndarray):
        self.xi = psi @ self.c

    def validate(self, psi: np.ndarray, tol: float = 1e-10):
        if not (self.tau1_sq > 0).all() or not (self.tau2_sq > 0).all():
            raise ValueError("noise variances must be strictly positive")
        if self.omega < 0:
            raise ValueError("threshold must be nonnegative")
        err = np.max(np.abs(self.xi - psi @ self.c)) if self.c.size else 0.0
        if err > tol:
            raise ValueError(f"cached latent field out of sync with coefficients (err={err:.3e})")

    def copy(self) -> "ChainState":
        return ChainState(
            c=self.c.copy(),
            e_plus=self.e_plus.copy(),
            e_minus=self.e_minus.copy(),
            tau1_sq=self.tau1_sq.copy(),
            tau2_sq=self.tau2_sq.copy(),
            omega=float(self.omega),
            xi=self.xi.copy(),
        )


def normalize_dataset(ds: ImageDataset) -> ImageDataset:
    """Z-score each voxel column of both modalities across subjects.

    Uses the unbiased (n-1 divisor) standard deviation.  Idempotent up to
    floating-point roundoff.  Raises if any voxel column is constant.
    """
    if ds.n < 2:
        raise ValueError("normalization requires at least two subjects")
    out = []
    for name, y in (("y1", ds.y1), ("y2", ds.y2)):
        sd = y.std(axis=0, ddof=1)
        dead = np.flatnonzero(sd == 0.0)
        if dead.size:
            raise ValueError(f"{name} has zero variance at voxel index {int(dead[0])}")
        out.append((y - y.mean(axis=0)) / sd)
    return ImageDataset(n=ds.n, y1=out[0], y2=out[1], normalized=True)


def transform_data(ds: ImageDataset) -> TransformedDataset:
    """Return the average/half-contrast representation of a normalized dataset."""
    if not ds.normalized:
        raise ValueError("dataset must be normalized before transforming")
    return TransformedDataset(
        y_plus=(ds.y1 + ds.y2) / 2.0,
        y_minus=(ds.y1 - ds.y2) / 2.0,
    )
