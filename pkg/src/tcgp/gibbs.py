"""Exact Gibbs sampler for the thresholded-correlation model.

Parameter blocks and their full conditionals:

* noise variances tau_k^2(v): conjugate inverse gamma, voxelwise independent;
* latent-field coefficients c_l: a mixture of truncated normals over the
  intervals cut by each voxel's activation threshold (sampled exactly by the
  piecewise machinery);
* threshold omega: a mixture of uniforms over the interval [a_w, b_w], whose
  endpoints may be refreshed each iteration from quantiles of |xi|;
* subject coefficients e_{i,l,+/-}: conjugate normals.

All conditionals are derived from the transformed-data likelihood in which
(y_plus, y_minus) at a voxel are bivariate normal around the thresholded
means with common variance u^2 = (tau1^2 + tau2^2)/4 and correlation
r = (tau1^2 - tau2^2)/(tau1^2 + tau2^2).  Because the positive and negative
channels are never simultaneously active, the cross term mu_plus * mu_minus
vanishes identically, which keeps every conditional quadratic.

Random draws come from counter-based streams named by (step, iteration,
block), so runs are reproducible regardless of scheduling.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import piecewise
from .kernels import KLBasis
from .model import rho_from_xi, threshold_G
from .rng import StreamFactory
from .types import ChainState, HyperParams, TransformedDataset

__all__ = ["GibbsConfig", "PosteriorSamples", "GibbsSampler", "run_gibbs", "log_joint"]

#: Lower bound applied to prior-initialized noise variances.
TAU_INIT_FLOOR = 1e-6


@dataclass(frozen=True)
class GibbsConfig:
    """Chain length and threshold-prior behaviour.

    When ``adaptive_omega`` is set, the uniform prior range of the threshold
    is refreshed each update from the configured quantiles of |xi|; otherwise
    ``omega_bounds`` must supply a fixed range.
    """

    n_iter: int = 1000
    burn_in: int = 200
    thin: int = 1
    adaptive_omega: bool = True
    omega_bounds: tuple | None = None
    store_latent: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not self.adaptive_omega:
            if self.omega_bounds is None:
                raise ValueError("omega_bounds is required when adaptive_omega is off")
            a, b = self.omega_bounds
            if not 0 <= a < b:
                raise ValueError("omega_bounds must satisfy 0 <= a < b")


@dataclass
class PosteriorSamples:
    """Post-burn-in, thinned draws and derived per-voxel quantities."""

    c: np.ndarray             # (K, L)
    omega: np.ndarray         # (K,)
    active_plus: np.ndarray   # (K, m) bool, xi > omega
    active_minus: np.ndarray  # (K, m) bool, -xi > omega
    rho: np.ndarray           # (K, m)
    log_joint: np.ndarray     # (K,)
    kept_iterations: np.ndarray
    e_plus: np.ndarray | None = None    # (K, n, L) when latent storage is on
    e_minus: np.ndarray | None = None
    tau1_sq: np.ndarray | None = None   # (K, m)
    tau2_sq: np.ndarray | None = None

    @property
    def n_kept(self) -> int:
        return self.c.shape[0]


class GibbsSampler:
    """Stateful sampler over one chain.

    The conditional-builder methods (``tau_conditional``, ``c_density``,
    ``omega_density``, ``e_conditional``) expose the exact distributions the
    updates draw from, so they can be checked against the joint density.
    """

    def __init__(self, data: TransformedDataset, basis: KLBasis, hp: HyperParams,
                 cfg: GibbsConfig, seed: int | None = None):
        if data.m != basis.m:
            raise ValueError("data and basis voxel counts disagree")
        if data.n < 2:
            raise ValueError("at least two subjects are required")
        self.data = data
        self.basis = basis
        self.hp = hp
        self.cfg = cfg
        self.streams = StreamFactory(hp.seed if seed is None else seed)
        self.n = data.n
        self.m = data.m
        self.L = basis.L
        self.yp = data.y_plus
        self.ym = data.y_minus
        self.psi = basis.psi
        self.lam = basis.lam
        self.phase_seconds = {"tau": 0.0, "c": 0.0, "omega": 0.0, "e": 0.0}
        self._init_state()

    # ------------------------------------------------------------------ setup

    def _init_state(self):
        rng = self.streams("init")
        c = rng.standard_normal(self.L) * np.sqrt(self.lam)
        e_plus = rng.standard_normal((self.n, self.L)) * np.sqrt(self.lam)
        e_minus = rng.standard_normal((self.n, self.L)) * np.sqrt(self.lam)
        shape = self.hp.a_tau
        scale = self.n * self.hp.b_tau
        g1 = np.maximum(rng.standard_gamma(shape, self.m), 1e-300)
        g2 = np.maximum(rng.standard_gamma(shape, self.m), 1e-300)
        tau1 = np.maximum(scale / g1, TAU_INIT_FLOOR)
        tau2 = np.maximum(scale / g2, TAU_INIT_FLOOR)
        xi = self.psi @ c
        bounds = self._omega_bounds(xi)
        omega = float(rng.uniform(*bounds))
        self.state = ChainState(c=c, e_plus=e_plus, e_minus=e_minus,
                                tau1_sq=tau1, tau2_sq=tau2, omega=omega, xi=xi)
        self.omega_bounds = bounds
        self._ef_plus = e_plus @ self.psi.T
        self._ef_minus = e_minus @ self.psi.T
        self._refresh_gates()
        self._refresh_noise()

    def _omega_bounds(self, xi):
        if not self.cfg.adaptive_omega:
            return tuple(map(float, self.cfg.omega_bounds))
        q_lo, q_hi = self.hp.omega_quantiles
        a, b = np.quantile(np.abs(xi), [q_lo, q_hi])
        return float(a), float(b)

    def _refresh_gates(self):
        st = self.state
        self._g_plus = threshold_G(st.xi, st.omega)
        self._g_minus = threshold_G(-st.xi, st.omega)

    def _refresh_noise(self):
        t1 = self.state.tau1_sq
        t2 = self.state.tau2_sq
        self._r = (t1 - t2) / (t1 + t2)
        # K(v) = 2 (1 - r^2) u^2 = 2 tau1^2 tau2^2 / (tau1^2 + tau2^2),
        # harmonic form so huge prior-initialized variances cannot overflow
        self._Kv = 2.0 / (1.0 / t1 + 1.0 / t2)

    def _refresh_subject_sums(self):
        """Per-voxel sums over subjects entering the c and omega conditionals."""
        ep, em = self._ef_plus, self._ef_minus
        self._see_p = np.einsum("ij,ij->j", ep, ep)
        self._see_m = np.einsum("ij,ij->j", em, em)
        self._sye_p = np.einsum("ij,ij->j", self.yp, ep)
        self._sye_m = np.einsum("ij,ij->j", self.ym, em)
        self._sx_p = np.einsum("ij,ij->j", self.ym, ep)   # opposite-channel data
        self._sx_m = np.einsum("ij,ij->j", self.yp, em)

    # ------------------------------------------------- conditional distributions

    def tau_conditional(self):
        """Inverse-gamma (shape, scale1, scale2) arrays of the noise update."""
        mu_p = self._g_plus * self._ef_plus
        mu_m = self._g_minus * self._ef_minus
        rp = self.yp - mu_p
        rm = self.ym - mu_m
        s1 = np.einsum("ij,ij->j", rp + rm, rp + rm)
        s2 = np.einsum("ij,ij->j", rp - rm, rp - rm)
        shape = self.hp.a_tau + self.n / 2.0
        nb = self.n * self.hp.b_tau
        return shape, s1 / 2.0 + nb, s2 / 2.0 + nb

    def _c_term_arrays(self, l: int, voxels=None):
        """Thresholded quadratic terms of the c_l conditional on a voxel set."""
        psi_l = self.psi[:, l]
        if voxels is None:
            idx = np.flatnonzero(psi_l != 0.0)
        else:
            idx = np.asarray(voxels)
            idx = idx[psi_l[idx] != 0.0]
        p = psi_l[idx]
        xi_rest = self.state.xi[idx] - self.state.c[l] * p
        inv_k = 1.0 / self._Kv[idx]
        r = self._r[idx]
        see_p, sye_p, sx_p = self._see_p[idx], self._sye_p[idx], self._sx_p[idx]
        see_m, sye_m, sx_m = self._see_m[idx], self._sye_m[idx], self._sx_m[idx]
        omega = self.state.omega

        t_plus = (omega - xi_rest) / p
        t_minus = (-omega - xi_rest) / p
        a1_p = -(p * p) * see_p * inv_k
        a2_p = -2.0 * p * (xi_rest * see_p - sye_p + r * sx_p) * inv_k
        a3_p = -xi_rest * (xi_rest * see_p - 2.0 * sye_p + 2.0 * r * sx_p) * inv_k
        a1_m = -(p * p) * see_m * inv_k
        a2_m = -2.0 * p * (xi_rest * see_m + sye_m - r * sx_m) * inv_k
        a3_m = -xi_rest * (xi_rest * see_m + 2.0 * sye_m - 2.0 * r * sx_m) * inv_k

        pos = p > 0.0
        a1 = np.concatenate([a1_p, a1_m])
        a2 = np.concatenate([a2_p, a2_m])
        a3 = np.concatenate([a3_p, a3_m])
        thr = np.concatenate([t_plus, t_minus])
        above = np.concatenate([pos, ~pos])
        return a1, a2, a3, thr, above

    def c_density(self, l: int, voxels=None) -> piecewise.PiecewiseDensity:
        """Exact full conditional of c_l (optionally restricted to a voxel set)."""
        a1, a2, a3, thr, above = self._c_term_arrays(l, voxels)
        a1 = np.append(a1, -0.5 / self.lam[l])
        a2 = np.append(a2, 0.0)
        a3 = np.append(a3, 0.0)
        thr = np.append(thr, -np.inf)
        above = np.append(above, True)
        return piecewise.build_from_arrays(a1, a2, a3, thr, above)

    def _omega_term_arrays(self, bounds, voxels=None):
        """Constant activation terms of the omega conditional on a voxel set."""
        a_w, b_w = bounds
        xi = self.state.xi
        idx = np.arange(self.m) if voxels is None else np.asarray(voxels)
        vals, consts = [], []
        for sign in (+1.0, -1.0):
            sx = sign * xi[idx]
            cand = (sx > a_w) & (sx < b_w)
            sub = idx[cand]
            if sign > 0:
                q = (xi[sub] ** 2 * self._see_p[sub]
                     - 2.0 * xi[sub] * self._sye_p[sub]
                     + 2.0 * self._r[sub] * xi[sub] * self._sx_p[sub])
            else:
                q = (xi[sub] ** 2 * self._see_m[sub]
                     + 2.0 * xi[sub] * self._sye_m[sub]
                     - 2.0 * self._r[sub] * xi[sub] * self._sx_m[sub])
            vals.append(sx[cand])
            consts.append(-q / self._Kv[sub])
        return np.concatenate(vals), np.concatenate(consts)

    def omega_density(self, voxels=None):
        """Exact full conditional of omega and the prior range used."""
        bounds = self._omega_bounds(self.state.xi)
        thr, consts = self._omega_term_arrays(bounds, voxels)
        zeros = np.zeros_like(consts)
        pd = piecewise.build_from_arrays(
            zeros, zeros, consts, thr, np.zeros(thr.size, dtype=bool), support=bounds,
        )
        return pd, bounds

    def e_conditional(self, l: int, sign: str):
        """Normal (mean vector over subjects, common variance) for e_{., l, sign}."""
        psi_l = self.psi[:, l]
        r = self._r
        if sign == "plus":
            gate = self._g_plus
            ef_own, ef_other = self._ef_plus, self._ef_minus
            gate_other = self._g_minus
            y_own, y_other = self.yp, self.ym
            e_cur = self.state.e_plus[:, l]
        elif sign == "minus":
            gate = self._g_minus
            ef_own, ef_other = self._ef_minus, self._ef_plus
            gate_other = self._g_plus
            y_own, y_other = self.ym, self.yp
            e_cur = self.state.e_minus[:, l]
        else:
            raise ValueError("sign must be 'plus' or 'minus'")
        c_gate = gate * psi_l
        w = 2.0 * c_gate / self._Kv              # per-voxel precision * c_gate
        v2 = 1.0 / (np.dot(w, c_gate) + 1.0 / self.lam[l])
        z = y_own - r[None, :] * (y_other - gate_other[None, :] * ef_other)
        b = gate[None, :] * ef_own - np.outer(e_cur, c_gate)
        mean = v2 * ((z - b) @ w)
        return mean, v2

    # ------------------------------------------------------------------ updates

    def update_tau(self, t: int):
        rng = self.streams("tau", t)
        shape, scale1, scale2 = self.tau_conditional()
        g1 = rng.standard_gamma(shape, self.m)
        g2 = rng.standard_gamma(shape, self.m)
        self.state.tau1_sq = scale1 / g1
        self.state.tau2_sq = scale2 / g2
        self._refresh_noise()

    def update_c(self, t: int, l: int):
        rng = self.streams("c", t, l)
        pd = self.c_density(l)
        new = piecewise.sample(pd, rng)
        self._commit_c(l, new)

    def _commit_c(self, l: int, value: float):
        st = self.state
        st.xi = st.xi + (value - st.c[l]) * self.psi[:, l]
        st.c[l] = value
        self._refresh_gates()

    def update_omega(self, t: int, l: int):
        rng = self.streams("omega", t, l)
        bounds = self._omega_bounds(self.state.xi)
        if bounds[0] >= bounds[1]:
            warnings.warn("degenerate threshold prior range; keeping current omega")
            return
        thr, consts = self._omega_term_arrays(bounds)
        zeros = np.zeros_like(consts)
        pd = piecewise.build_from_arrays(
            zeros, zeros, consts, thr, np.zeros(thr.size, dtype=bool), support=bounds,
        )
        self.state.omega = float(piecewise.sample(pd, rng))
        self.omega_bounds = bounds
        self._refresh_gates()

    def update_e(self, t: int, l: int):
        for sign, label in (("plus", "e+"), ("minus", "e-")):
            rng = self.streams(label, t, l)
            mean, v2 = self.e_conditional(l, sign)
            new = mean + np.sqrt(v2) * rng.standard_normal(self.n)
            psi_l = self.psi[:, l]
            if sign == "plus":
                delta = new - self.state.e_plus[:, l]
                self._ef_plus += np.outer(delta, psi_l)
                self.state.e_plus[:, l] = new
            else:
                delta = new - self.state.e_minus[:, l]
                self._ef_minus += np.outer(delta, psi_l)
                self.state.e_minus[:, l] = new

    def sweep(self, t: int):
        """One full iteration: all tau, then (c_l, omega, e_l) for each l."""
        tic = time.perf_counter()
        self.update_tau(t)
        self.phase_seconds["tau"] += time.perf_counter() - tic
        for l in range(self.L):
            self._refresh_subject_sums()
            tic = time.perf_counter()
            self.update_c(t, l)
            toc = time.perf_counter()
            self.update_omega(t, l)
            toc2 = time.perf_counter()
            self.update_e(t, l)
            toc3 = time.perf_counter()
            self.phase_seconds["c"] += toc - tic
            self.phase_seconds["omega"] += toc2 - toc
            self.phase_seconds["e"] += toc3 - toc2
        # re-anchor the cached field to kill incremental drift
        self.state.refresh_xi(self.psi)
        self._refresh_gates()

    # --------------------------------------------------------------------- run

    def run(self) -> PosteriorSamples:
        cfg = self.cfg
        kept = []
        rec = {"c": [], "omega": [], "ap": [], "am": [], "rho": [], "lj": [],
               "ep": [], "em": [], "t1": [], "t2": []}
        for t in range(1, cfg.n_iter + 1):
            self.sweep(t)
            if t > cfg.burn_in and (t - cfg.burn_in - 1) % cfg.thin == 0:
                kept.append(t)
                self._record(rec)
        return self._package(rec, kept)

    def _record(self, rec):
        st = self.state
        rec["c"].append(st.c.copy())
        rec["omega"].append(st.omega)
        rec["ap"].append(st.xi > st.omega)
        rec["am"].append(-st.xi > st.omega)
        rec["rho"].append(rho_from_xi(st.xi, st.omega, st.tau1_sq, st.tau2_sq))
        rec["lj"].append(log_joint(st, self.data, self.basis, self.hp, self.omega_bounds))
        if self.cfg.store_latent:
            rec["ep"].append(st.e_plus.copy())
            rec["em"].append(st.e_minus.copy())
            rec["t1"].append(st.tau1_sq.copy())
            rec["t2"].append(st.tau2_sq.copy())

    def _package(self, rec, kept) -> PosteriorSamples:
        store = self.cfg.store_latent
        return PosteriorSamples(
            c=np.array(rec["c"]),
            omega=np.array(rec["omega"]),
            active_plus=np.array(rec["ap"]),
            active_minus=np.array(rec["am"]),
            rho=np.array(rec["rho"]),
            log_joint=np.array(rec["lj"]),
            kept_iterations=np.array(kept),
            e_plus=np.array(rec["ep"]) if store else None,
            e_minus=np.array(rec["em"]) if store else None,
            tau1_sq=np.array(rec["t1"]) if store else None,
            tau2_sq=np.array(rec["t2"]) if store else None,
        )


def run_gibbs(data: TransformedDataset, grid, basis: KLBasis, hp: HyperParams,
              cfg: GibbsConfig | None = None, seed: int | None = None) -> PosteriorSamples:
    """Run one chain and return the kept draws.  Deterministic given the seed."""
    del grid  # voxel geometry only enters through the basis
    sampler = GibbsSampler(data, basis, hp, cfg or GibbsConfig(), seed=seed)
    return sampler.run()


def log_joint(state: ChainState, data: TransformedDataset, basis: KLBasis,
              hp: HyperParams, omega_bounds) -> float:
    """Log of the unnormalized joint posterior density at one state.

    Evaluated through the original-noise factorization (two independent
    normals plus the transform Jacobian), which is algebraically identical to
    the correlated transformed-noise form the conditionals use.
    """
    st = state
    g_plus = threshold_G(st.xi, st.omega)
    g_minus = threshold_G(-st.xi, st.omega)
    mu_p = g_plus[None, :] * (st.e_plus @ basis.psi.T)
    mu_m = g_minus[None, :] * (st.e_minus @ basis.psi.T)
    rp = data.y_plus - mu_p
    rm = data.y_minus - mu_m
    n = data.n
    t1, t2 = st.tau1_sq, st.tau2_sq
    loglik = (
        n * data.m * np.log(2.0)
        - 0.5 * n * (np.log(2.0 * np.pi * t1).sum() + np.log(2.0 * np.pi * t2).sum())
        - 0.5 * np.sum((rp + rm) ** 2 / t1)
        - 0.5 * np.sum((rp - rm) ** 2 / t2)
    )
    lam = basis.lam
    lp_c = -0.5 * np.sum(st.c**2 / lam) - 0.5 * np.sum(np.log(2.0 * np.pi * lam))
    lp_e = (
        -0.5 * np.sum(st.e_plus**2 / lam) - 0.5 * np.sum(st.e_minus**2 / lam)
        - n * np.sum(np.log(2.0 * np.pi * lam))
    )
    a = hp.a_tau
    b_eff = n * hp.b_tau  # conditional update implies IG(a_tau, n b_tau)
    lp_tau = 0.0
    for tau in (t1, t2):
        lp_tau += np.sum(a * np.log(b_eff) - gammaln(a) - (a + 1.0) * np.log(tau) - b_eff / tau)
    a_w, b_w = omega_bounds
    lp_omega = -np.log(b_w - a_w) if a_w <= st.omega <= b_w else -np.inf
    return float(loglik + lp_c + lp_e + lp_tau + lp_omega)
