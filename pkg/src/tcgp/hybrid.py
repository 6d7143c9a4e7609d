"""Mini-batch Metropolis-within-Gibbs accelerator.

Each iteration draws a fresh random subset of voxels.  The c_l and omega
updates propose from the full conditional restricted to the batch and accept
with the likelihood ratio over the complement voxels; every T_0-th iteration
runs the exact full-data updates instead (same random streams, so with
T_0 = 1 the trajectory is identical to the plain Gibbs sampler).  Noise and
subject-coefficient updates always use their exact full conditionals.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import piecewise
from .gibbs import GibbsConfig, GibbsSampler, PosteriorSamples
from .kernels import KLBasis
from .types import HyperParams, TransformedDataset

__all__ = ["HybridConfig", "HybridSampler", "run_hybrid", "subsample_batch", "accept_ratio"]


@dataclass(frozen=True)
class HybridConfig(GibbsConfig):
    """Gibbs options plus the batch size and the full-sweep period."""

    n_iter: int = 1200
    burn_in: int = 400
    m_s: int | None = None   # default m // 16
    T_0: int = 20

    def __post_init__(self):
        super().__post_init__()
        if self.T_0 < 1:
            raise ValueError("T_0 must be >= 1")
        if self.m_s is not None and self.m_s < 1:
            raise ValueError("m_s must be >= 1")


def subsample_batch(grid_or_m, m_s: int, rng) -> np.ndarray:
    """Uniform simple random sample of voxel indices, without replacement."""
    m = grid_or_m if isinstance(grid_or_m, (int, np.integer)) else grid_or_m.m
    if not 1 <= m_s <= m:
        raise ValueError(f"batch size {m_s} outside [1, {m}]")
    return np.sort(rng.choice(m, size=m_s, replace=False))


class HybridSampler(GibbsSampler):
    """Gibbs sampler with batch-restricted proposals for c_l and omega."""

    def __init__(self, data: TransformedDataset, basis: KLBasis, hp: HyperParams,
                 cfg: HybridConfig, seed: int | None = None):
        super().__init__(data, basis, hp, cfg, seed=seed)
        self.m_s = cfg.m_s if cfg.m_s is not None else max(self.m // 16, 1)
        if not 1 <= self.m_s <= self.m:
            raise ValueError(f"batch size {self.m_s} outside [1, {self.m}]")
        self.acceptance_c: list = []
        self.acceptance_omega: list = []
        self.full_iterations: list = []

    # -------------------------------------------------- complement likelihoods

    def c_loglik_delta(self, l: int, new: float, old: float, voxels) -> float:
        """Log likelihood ratio over a voxel set when c_l moves old -> new."""
        a1, a2, a3, thr, above = self._c_term_arrays(l, voxels)

        def active_value(theta):
            act = np.where(above, theta > thr, theta < thr)
            return float(np.sum(act * (a1 * theta**2 + a2 * theta + a3)))

        return active_value(new) - active_value(old)

    def omega_loglik_delta(self, new: float, old: float, voxels, bounds) -> float:
        """Log likelihood ratio over a voxel set when omega moves old -> new.

        Exact for old, new within the prior range: activations outside it are
        shared by both values and cancel.
        """
        thr, consts = self._omega_term_arrays(bounds, voxels)
        return float(consts[new < thr].sum() - consts[old < thr].sum())

    # ------------------------------------------------------------------ updates

    def propose_c(self, t: int, l: int, batch: np.ndarray, complement: np.ndarray):
        rng = self.streams("c", t, l)
        pd = self.c_density(l, voxels=batch)
        prop = piecewise.sample(pd, rng)
        old = float(self.state.c[l])
        log_phi = min(0.0, self.c_loglik_delta(l, prop, old, complement))
        self._acc_c.append(np.exp(log_phi))
        if np.log(self.streams("mh_c", t, l).random()) <= log_phi:
            self._commit_c(l, prop)

    def propose_omega(self, t: int, l: int, batch: np.ndarray, complement: np.ndarray):
        rng = self.streams("omega", t, l)
        bounds = self._omega_bounds(self.state.xi)
        if bounds[0] >= bounds[1]:
            warnings.warn("degenerate threshold prior range; keeping current omega")
            return
        thr, consts = self._omega_term_arrays(bounds, batch)
        zeros = np.zeros_like(consts)
        pd = piecewise.build_from_arrays(
            zeros, zeros, consts, thr, np.zeros(thr.size, dtype=bool), support=bounds,
        )
        prop = float(piecewise.sample(pd, rng))
        old = float(self.state.omega)
        log_phi = min(0.0, self.omega_loglik_delta(prop, old, complement, bounds))
        self._acc_omega.append(np.exp(log_phi))
        if np.log(self.streams("mh_omega", t, l).random()) <= log_phi:
            self.state.omega = prop
            self.omega_bounds = bounds
            self._refresh_gates()

    def sweep(self, t: int):
        cfg = self.cfg
        tic = time.perf_counter()
        self.update_tau(t)
        self.phase_seconds["tau"] += time.perf_counter() - tic
        batch = subsample_batch(self.m, self.m_s, self.streams("batch", t))
        in_batch = np.zeros(self.m, dtype=bool)
        in_batch[batch] = True
        complement = np.flatnonzero(~in_batch)
        full = (t % cfg.T_0) == 0
        self._acc_c, self._acc_omega = [], []
        for l in range(self.L):
            self._refresh_subject_sums()
            tic = time.perf_counter()
            if full:
                self.update_c(t, l)
                toc = time.perf_counter()
                self.update_omega(t, l)
            else:
                self.propose_c(t, l, batch, complement)
                toc = time.perf_counter()
                self.propose_omega(t, l, batch, complement)
            toc2 = time.perf_counter()
            self.update_e(t, l)
            toc3 = time.perf_counter()
            self.phase_seconds["c"] += toc - tic
            self.phase_seconds["omega"] += toc2 - toc
            self.phase_seconds["e"] += toc3 - toc2
        if full:
            self.full_iterations.append(t)
        else:
            self.acceptance_c.append(float(np.mean(self._acc_c)))
            self.acceptance_omega.append(float(np.mean(self._acc_omega)))
        self.state.refresh_xi(self.psi)
        self._refresh_gates()

    def diagnostics(self) -> dict:
        acc = self.acceptance_c + self.acceptance_omega
        return {
            "acceptance_c": list(self.acceptance_c),
            "acceptance_omega": list(self.acceptance_omega),
            "mean_acceptance": float(np.mean(acc)) if acc else 1.0,
            "full_sweep_iterations": list(self.full_iterations),
            "phase_seconds": dict(self.phase_seconds),
            "batch_size": int(self.m_s),
        }


def accept_ratio(theta_new: float, theta_old: float, sampler: HybridSampler,
                 batch: np.ndarray, kind: str = "c", l: int = 0) -> float:
    """Acceptance probability for moving c_l or omega given a frozen batch.

    Computes min(1, prod over complement voxels of the per-voxel likelihood
    ratio) in log space.  With the batch covering every voxel the product is
    empty and the ratio is exactly 1.
    """
    in_batch = np.zeros(sampler.m, dtype=bool)
    in_batch[np.asarray(batch)] = True
    complement = np.flatnonzero(~in_batch)
    sampler._refresh_subject_sums()
    if kind == "c":
        delta = sampler.c_loglik_delta(l, theta_new, theta_old, complement)
    elif kind == "omega":
        bounds = sampler._omega_bounds(sampler.state.xi)
        delta = sampler.omega_loglik_delta(theta_new, theta_old, complement, bounds)
    else:
        raise ValueError("kind must be 'c' or 'omega'")
    return float(np.exp(min(0.0, delta)))


def run_hybrid(data: TransformedDataset, grid, basis: KLBasis, hp: HyperParams,
               cfg: HybridConfig | None = None, seed: int | None = None):
    """Run the hybrid chain; returns (samples, diagnostics)."""
    del grid
    sampler = HybridSampler(data, basis, hp, cfg or HybridConfig(), seed=seed)
    samples = sampler.run()
    return samples, sampler.diagnostics()
