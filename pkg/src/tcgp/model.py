"""Deterministic pieces of the thresholded-correlation model.

A latent field xi controls both the sign and the strength of the voxelwise
correlation between the two modalities: the positive channel has amplitude
G(xi) = xi * 1{xi > omega}, the negative channel G(-xi), and at most one of
the two is ever nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["threshold_G", "rho_from_xi", "s_transform", "mean_fields", "CorrelationField"]


@dataclass(frozen=True)
class CorrelationField:
    """Per-voxel correlation values and their signs."""

    rho: np.ndarray   # (m,) values in (-1, 1)
    sign: np.ndarray  # (m,) in {-1, 0, +1}

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        sign = np.asarray(self.sign)
        if rho.shape != sign.shape:
            raise ValueError("rho and sign must share shape")
        if (np.abs(rho) >= 1).any():
            raise ValueError("correlations must lie strictly inside (-1, 1)")
        if not np.array_equal(np.sign(rho).astype(int), sign.astype(int)):
            raise ValueError("sign map inconsistent with rho")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sign", sign.astype(np.int8))


def threshold_G(x, omega: float):
    """Hard thresholding x * 1{x > omega} (strict inequality at the boundary)."""
    if omega < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > omega, x, 0.0)
    return float(out) if out.ndim == 0 else out


def rho_from_xi(xi, omega: float, tau1_sq, tau2_sq):
    """Correlation between the two modalities induced by the latent field.

    rho = (G(xi)^2 - G(-xi)^2)
          / sqrt[(G(xi)^2 + G(-xi)^2 + tau1^2)(G(xi)^2 + G(-xi)^2 + tau2^2)]

    Exactly one of the two numerator terms is nonzero (or both vanish), so
    the sign of rho is the sign of xi wherever |xi| > omega and 0 elsewhere.
    """
    xi = np.asarray(xi, dtype=np.float64)
    t1 = np.asarray(tau1_sq, dtype=np.float64)
    t2 = np.asarray(tau2_sq, dtype=np.float64)
    if (t1 <= 0).any() or (t2 <= 0).any():
        raise ValueError("noise variances must be positive")
    gp2 = threshold_G(xi, omega) ** 2
    gm2 = threshold_G(-xi, omega) ** 2
    tot = gp2 + gm2
    out = (gp2 - gm2) / np.sqrt((tot + t1) * (tot + t2))
    return float(out) if np.asarray(out).ndim == 0 else out


def s_transform(x, t1, t2):
    """Amplitude of the active channel as a function of the correlation.

    s(x; t1, t2) = sqrt( 2 t1 t2 / (sqrt((t1-t2)^2 + 4 x^-2 t1 t2) - (t1+t2)) )
                   for x > 0, and 0 otherwise.

    Inverts :func:`rho_from_xi` on the active side: s(rho; t1, t2) recovers
    G(xi).  The limit at x = 1 is +inf, returned as an infinity sentinel.
    """
    x = np.asarray(x, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if (t1 <= 0).any() or (t2 <= 0).any():
        raise ValueError("noise variances must be positive")
    if (np.abs(x) > 1).any():
        raise ValueError("correlation argument must lie in [-1, 1]")
    out = np.zeros(np.broadcast_shapes(x.shape, t1.shape, t2.shape), dtype=np.float64)
    pos = np.broadcast_to(x > 0, out.shape)
    if pos.any():
        xb = np.broadcast_to(x, out.shape)[pos]
        t1b = np.broadcast_to(t1, out.shape)[pos]
        t2b = np.broadcast_to(t2, out.shape)[pos]
        with np.errstate(divide="ignore"):
            root = np.sqrt((t1b - t2b) ** 2 + 4.0 * t1b * t2b / xb**2)
            denom = root - (t1b + t2b)
            val = np.sqrt(np.where(denom > 0, 2.0 * t1b * t2b / np.where(denom > 0, denom, 1.0), np.inf))
        out[pos] = val
    return float(out) if out.ndim == 0 else out


def mean_fields(state, basis):
    """Subject-by-voxel mean surfaces of the transformed data.

    mu_plus[i, v]  = G(xi(v))  * sum_l e_plus[i, l]  psi_l(v)
    mu_minus[i, v] = G(-xi(v)) * sum_l e_minus[i, l] psi_l(v)
    """
    if state.e_plus.shape[1] != basis.L or state.c.shape != (basis.L,):
        raise ValueError("state and basis dimensions disagree")
    g_plus = threshold_G(state.xi, state.omega)
    g_minus = threshold_G(-state.xi, state.omega)
    mu_plus = g_plus[None, :] * (state.e_plus @ basis.psi.T)
    mu_minus = g_minus[None, :] * (state.e_minus @ basis.psi.T)
    return mu_plus, mu_minus
