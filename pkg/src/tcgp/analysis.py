"""Posterior summaries, selection metrics, cluster reports, and the
voxelwise-testing baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import ndtr

from .gibbs import PosteriorSamples
from .types import GridDomain, ImageDataset

__all__ = [
    "PosteriorSummary",
    "ClusterReport",
    "Cluster",
    "summarize",
    "metrics",
    "clusters",
    "voxelwise_baseline",
]


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-voxel inclusion probabilities, correlation moments, and selection."""

    pip_plus: np.ndarray   # (m,) in [0, 1]
    pip_minus: np.ndarray  # (m,)
    mean_rho: np.ndarray   # (m,)
    sd_rho: np.ndarray     # (m,)
    sign_map: np.ndarray   # (m,) in {-1, 0, +1}
    pip_threshold: float

    def __post_init__(self):
        if ((self.pip_plus + self.pip_minus) > 1.0 + 1e-12).any():
            raise ValueError("inclusion probabilities of the two signs overlap")


@dataclass(frozen=True)
class Cluster:
    sign: int
    size: int
    center: tuple          # mean coordinate of member voxels
    mean_rho: float
    sd_rho: float
    mean_pip: float
    voxel_indices: np.ndarray


@dataclass(frozen=True)
class ClusterReport:
    clusters: tuple
    min_size: int

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)


def summarize(samples: PosteriorSamples, pip_threshold: float = 0.5) -> PosteriorSummary:
    """Reduce kept draws to per-voxel summaries and a thresholded sign map."""
    if samples.n_kept < 1:
        raise ValueError("no kept samples to summarize")
    pip_plus = samples.active_plus.mean(axis=0)
    pip_minus = samples.active_minus.mean(axis=0)
    mean_rho = samples.rho.mean(axis=0)
    sd_rho = samples.rho.std(axis=0)
    sign_map = np.zeros(pip_plus.size, dtype=np.int8)
    sign_map[pip_plus > pip_threshold] = 1
    sign_map[pip_minus > pip_threshold] = -1
    return PosteriorSummary(pip_plus=pip_plus, pip_minus=pip_minus,
                            mean_rho=mean_rho, sd_rho=sd_rho,
                            sign_map=sign_map, pip_threshold=pip_threshold)


def metrics(sign_est: np.ndarray, sign_truth: np.ndarray) -> dict:
    """Sensitivity, specificity, and false discovery rate for each sign.

    Empty-selection conventions: sensitivity is NaN when the truth has no
    voxels of the sign; FDR is 0 when nothing is selected.
    """
    est = np.asarray(sign_est).ravel()
    truth = np.asarray(sign_truth).ravel()
    if est.shape != truth.shape:
        raise ValueError("sign maps must have equal length")
    out = {}
    for label, s in (("positive", 1), ("negative", -1)):
        tp = int(np.sum((est == s) & (truth == s)))
        fp = int(np.sum((est == s) & (truth != s)))
        fn = int(np.sum((est != s) & (truth == s)))
        tn = est.size - tp - fp - fn
        sens = tp / (tp + fn) if (tp + fn) > 0 else float("nan")
        spec = tn / (tn + fp) if (tn + fp) > 0 else float("nan")
        fdr = fp / max(tp + fp, 1)
        out[label] = {"sensitivity": sens, "specificity": spec, "fdr": fdr,
                      "tp": tp, "fp": fp, "fn": fn, "tn": tn}
    return out


def clusters(sign_map: np.ndarray, grid: GridDomain, min_size: int = 100,
             mean_rho: np.ndarray | None = None,
             pip_plus: np.ndarray | None = None,
             pip_minus: np.ndarray | None = None) -> ClusterReport:
    """Connected components (face adjacency) of same-signed selected voxels.

    Components smaller than ``min_size`` are dropped.  Cluster centers are
    unweighted means of member coordinates.
    """
    sign_map = np.asarray(sign_map).ravel()
    if sign_map.size != grid.m:
        raise ValueError("sign map does not match the grid")
    structure = ndimage.generate_binary_structure(grid.d, 1)
    found = []
    for s in (1, -1):
        lattice = grid.embed((sign_map == s).astype(np.int8), fill=0)
        labels, count = ndimage.label(lattice, structure=structure)
        flat = labels[grid.mask]
        for lab in range(1, count + 1):
            members = np.flatnonzero(flat == lab)
            if members.size < min_size:
                continue
            center = tuple(grid.coords[members].mean(axis=0))
            mr = sr = mp = float("nan")
            if mean_rho is not None:
                mr = float(np.mean(mean_rho[members]))
                sr = float(np.std(mean_rho[members]))
            if pip_plus is not None and pip_minus is not None:
                pip = pip_plus if s > 0 else pip_minus
                mp = float(np.mean(pip[members]))
            found.append(Cluster(sign=s, size=members.size, center=center,
                                 mean_rho=mr, sd_rho=sr, mean_pip=mp,
                                 voxel_indices=members))
    found.sort(key=lambda cl: (-cl.sign, -cl.size))
    return ClusterReport(clusters=tuple(found), min_size=min_size)


def benjamini_hochberg(p_values: np.ndarray, alpha: float) -> np.ndarray:
    """Boolean rejection mask of the step-up false-discovery-rate procedure."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    thresh = alpha * (np.arange(1, m + 1) / m)
    below = p[order] <= thresh
    reject = np.zeros(m, dtype=bool)
    if below.any():
        k = int(np.max(np.flatnonzero(below)))
        reject[order[: k + 1]] = True
    return reject


def voxelwise_baseline(ds: ImageDataset, alpha: float = 0.05) -> np.ndarray:
    """Per-voxel correlation test with false-discovery-rate control.

    Pearson correlation across subjects at each voxel, two-sided p-value from
    the Fisher z approximation (z * sqrt(n - 3) standard normal under the
    null), Benjamini-Hochberg at level ``alpha`` across voxels.  Rejected
    voxels are signed by the sample correlation.
    """
    if not ds.normalized:
        raise ValueError("dataset must be normalized")
    if ds.n < 4:
        raise ValueError("the Fisher z approximation needs n >= 4")
    y1c = ds.y1 - ds.y1.mean(axis=0)
    y2c = ds.y2 - ds.y2.mean(axis=0)
    num = np.einsum("ij,ij->j", y1c, y2c)
    den = np.sqrt(np.einsum("ij,ij->j", y1c, y1c) * np.einsum("ij,ij->j", y2c, y2c))
    r = np.clip(num / den, -1.0 + 1e-15, 1.0 - 1e-15)
    z = np.arctanh(r) * np.sqrt(ds.n - 3)
    p = 2.0 * ndtr(-np.abs(z))
    reject = benjamini_hochberg(p, alpha)
    sign_map = np.zeros(ds.m, dtype=np.int8)
    sign_map[reject] = np.sign(r[reject]).astype(np.int8)
    return sign_map
