"""Exact sampling from one-dimensional densities of the form

    p(theta) ∝ exp( sum_p f_p(theta) 1{theta > L_p} + sum_k h_k(theta) 1{theta < U_k} )

with quadratic f_p and h_k.  Sorting the thresholds splits the line into
intervals on which the log density is a single quadratic D t^2 + E t + F, so
the density is a finite mixture of truncated normal (D < 0), truncated
exponential (D = 0, E != 0) or uniform (D = E = 0) pieces.  Both the mixture
weights and the within-piece draws are computed in a tail-stable way.

Conventions: intervals are right-open; a point sitting exactly on a
breakpoint belongs to the interval on its right.  A term whose threshold
falls outside the support is either always active or dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

__all__ = ["ThresholdTerm", "PiecewiseDensity", "build", "build_from_arrays",
           "log_density", "sample"]

#: Standardized distance beyond which truncated-normal draws switch from
#: inverse-CDF to exponential-proposal rejection.
TAIL_SWITCH = 6.0


@dataclass(frozen=True)
class ThresholdTerm:
    """One quadratic a1*t^2 + a2*t + a3, switched on beyond/below a threshold.

    ``direction`` is "above" for 1{theta > threshold} and "below" for
    1{theta < threshold}.  A base (always active) term is expressed with
    threshold -inf and direction "above".
    """

    a1: float
    a2: float
    a3: float
    direction: str
    threshold: float

    def __post_init__(self):
        if self.direction not in ("above", "below"):
            raise ValueError(f"direction must be 'above' or 'below', got {self.direction!r}")
        for name in ("a1", "a2", "a3"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} must be finite")


@dataclass(frozen=True)
class PiecewiseDensity:
    """A built mixture: interval edges, per-interval quadratic, log masses."""

    edges: np.ndarray       # (I+1,) ascending, may start/end at +-inf
    D: np.ndarray           # (I,)
    E: np.ndarray           # (I,)
    F: np.ndarray           # (I,)
    log_masses: np.ndarray  # (I,) unnormalized log integral per interval

    @property
    def support(self):
        return float(self.edges[0]), float(self.edges[-1])

    @property
    def n_intervals(self) -> int:
        return self.D.size


class NonIntegrableError(ValueError):
    """The accumulated density has infinite mass on some interval."""


def build(terms, support=None) -> PiecewiseDensity:
    """Accumulate threshold terms into a sampleable piecewise density.

    ``support`` optionally restricts the domain to (lo, hi); without it the
    domain is the whole line, in which case every tail interval must have a
    strictly negative quadratic coefficient to remain integrable.
    """
    terms = list(terms)
    a1 = np.array([t.a1 for t in terms], dtype=np.float64)
    a2 = np.array([t.a2 for t in terms], dtype=np.float64)
    a3 = np.array([t.a3 for t in terms], dtype=np.float64)
    thr = np.array([t.threshold for t in terms], dtype=np.float64)
    above = np.array([t.direction == "above" for t in terms], dtype=bool)
    return build_from_arrays(a1, a2, a3, thr, above, support=support)


def build_from_arrays(a1, a2, a3, thresholds, above, support=None) -> PiecewiseDensity:
    """Array-based construction (hot path used by the samplers)."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    a3 = np.asarray(a3, dtype=np.float64)
    thr = np.asarray(thresholds, dtype=np.float64)
    above = np.asarray(above, dtype=bool)
    if support is None:
        lo, hi = -np.inf, np.inf
    else:
        lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ValueError(f"empty support ({lo}, {hi})")
    if np.isnan(thr).any():
        raise ValueError("NaN threshold")

    inside = (thr > lo) & (thr < hi)
    edges = np.unique(thr[inside])
    edges = np.concatenate(([lo], edges, [hi]))
    n_int = edges.size - 1

    # Activation ranges are contiguous interval runs; accumulate coefficients
    # with difference arrays (O(#terms + #intervals)).
    dD = np.zeros(n_int + 1)
    dE = np.zeros(n_int + 1)
    dF = np.zeros(n_int + 1)
    # "above" term with threshold t: active on intervals whose left edge >= t.
    # t is itself an edge, so the first active interval index is t's position.
    act_above = above & (thr < hi)
    start = np.where(thr[act_above] <= lo, 0, np.searchsorted(edges, thr[act_above]))
    np.add.at(dD, start, a1[act_above])
    np.add.at(dE, start, a2[act_above])
    np.add.at(dF, start, a3[act_above])
    # "below" term with threshold t: active on intervals entirely left of t.
    act_below = ~above & (thr > lo)
    stop = np.where(thr[act_below] >= hi, n_int, np.searchsorted(edges, thr[act_below]))
    np.add.at(dD, np.zeros(stop.size, dtype=np.intp), a1[act_below])
    np.add.at(dE, np.zeros(stop.size, dtype=np.intp), a2[act_below])
    np.add.at(dF, np.zeros(stop.size, dtype=np.intp), a3[act_below])
    np.add.at(dD, stop, -a1[act_below])
    np.add.at(dE, stop, -a2[act_below])
    np.add.at(dF, stop, -a3[act_below])

    D = np.cumsum(dD)[:n_int]
    E = np.cumsum(dE)[:n_int]
    F = np.cumsum(dF)[:n_int]

    left = edges[:-1]
    right = edges[1:]
    unbounded = ~np.isfinite(left) | ~np.isfinite(right)
    if (D[unbounded] >= 0).any():
        i = int(np.flatnonzero(unbounded & (D >= 0))[0])
        raise NonIntegrableError(
            f"interval [{left[i]}, {right[i]}) has nonnegative quadratic "
            f"coefficient {D[i]:.3g}; density is not integrable"
        )
    if (D > 0).any():
        i = int(np.flatnonzero(D > 0)[0])
        raise NonIntegrableError(
            f"interval [{left[i]}, {right[i]}) has positive quadratic coefficient; "
            "only concave log segments are supported"
        )

    log_masses = _segment_log_masses(left, right, D, E, F)
    if not np.isfinite(max(log_masses.max(), -np.inf)) and (log_masses == -np.inf).all():
        raise NonIntegrableError("density has zero total mass")
    return PiecewiseDensity(edges=edges, D=D, E=E, F=F, log_masses=log_masses)


def _log_phi_diff(alpha, beta):
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, stable in both tails."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    out = np.empty(alpha.shape)
    # reflect right-tail pairs so the CDF values stay away from 1
    refl = alpha >= 0
    a = np.where(refl, -beta, alpha)
    b = np.where(refl, -alpha, beta)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore"):
        out = lb + np.log1p(-np.exp(np.minimum(la - lb, 0.0)))
    return out


def _segment_log_masses(left, right, D, E, F):
    n = D.size
    out = np.full(n, -np.inf)
    gauss = D < 0
    if gauss.any():
        d, e, f = D[gauss], E[gauss], F[gauss]
        lo, hi = left[gauss], right[gauss]
        s2 = -0.5 / d
        mu = e * s2
        s = np.sqrt(s2)
        alpha = np.where(np.isfinite(lo), (lo - mu) / s, -np.inf)
        beta = np.where(np.isfinite(hi), (hi - mu) / s, np.inf)
        out[gauss] = f + 0.25 * e**2 / (-d) + 0.5 * np.log(2.0 * np.pi * s2) + _log_phi_diff(alpha, beta)
    expo = (D == 0) & (E != 0)
    if expo.any():
        e, f = E[expo], F[expo]
        lo, hi = left[expo], right[expo]
        x1 = e * lo
        x2 = e * hi
        big = np.maximum(x1, x2)
        small = np.minimum(x1, x2)
        out[expo] = f + big + np.log1p(-np.exp(small - big)) - np.log(np.abs(e))
    flat = (D == 0) & (E == 0)
    if flat.any():
        out[flat] = F[flat] + np.log(right[flat] - left[flat])
    return out


def log_density(pd: PiecewiseDensity, theta) -> np.ndarray | float:
    """Unnormalized log density; -inf outside the support."""
    theta = np.asarray(theta, dtype=np.float64)
    scalar = theta.ndim == 0
    t = np.atleast_1d(theta)
    lo, hi = pd.support
    idx = np.searchsorted(pd.edges, t, side="right") - 1
    idx = np.clip(idx, 0, pd.n_intervals - 1)
    val = pd.D[idx] * t**2 + pd.E[idx] * t + pd.F[idx]
    val = np.where((t < lo) | (t > hi), -np.inf, val)
    return float(val[0]) if scalar else val


def _trunc_exp_std(rng, rate, width, size):
    """Draw X in [0, width] with density ∝ exp(-rate * x), rate > 0."""
    u = rng.random(size)
    return -np.log1p(-u * -np.expm1(-rate * width)) / rate


def _robert_tail(rng, a, b, size):
    """Standard normal truncated to [a, b], a >= TAIL_SWITCH: exponential
    proposal (truncated to the interval) with the classic acceptance test."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty(size)
    todo = np.arange(size)
    width = b - a
    while todo.size:
        z = a + _trunc_exp_std(rng, lam, width, todo.size)
        acc = np.log(rng.random(todo.size)) <= -0.5 * (z - lam) ** 2
        out[todo[acc]] = z[acc]
        todo = todo[~acc]
    return out


def _trunc_std_normal(rng, a, b, size):
    """Standard normal truncated to [a, b] (either bound may be infinite)."""
    if a >= 0:
        if a > TAIL_SWITCH:
            return _robert_tail(rng, a, b, size)
        return -_inv_cdf_std(rng, -b, -a, size)
    if b <= 0:
        if b < -TAIL_SWITCH:
            return -_robert_tail(rng, -b, -a, size)
        return _inv_cdf_std(rng, a, b, size)
    return _inv_cdf_std(rng, a, b, size)


def _inv_cdf_std(rng, a, b, size):
    pa = ndtr(a)
    pb = ndtr(b)
    u = rng.random(size)
    return ndtri(pa + u * (pb - pa))


def _sample_interval(pd: PiecewiseDensity, i: int, rng, size) -> np.ndarray:
    lo = pd.edges[i]
    hi = pd.edges[i + 1]
    d, e = pd.D[i], pd.E[i]
    if d < 0:
        s2 = -0.5 / d
        mu = e * s2
        s = np.sqrt(s2)
        alpha = (lo - mu) / s if np.isfinite(lo) else -np.inf
        beta = (hi - mu) / s if np.isfinite(hi) else np.inf
        return mu + s * _trunc_std_normal(rng, alpha, beta, size)
    if e != 0:
        # bounded by construction (unbounded flat/exponential pieces rejected)
        if e > 0:
            return hi - _trunc_exp_std(rng, e, hi - lo, size)
        return lo + _trunc_exp_std(rng, -e, hi - lo, size)
    return lo + rng.random(size) * (hi - lo)


def sample(pd: PiecewiseDensity, rng, size=None):
    """Exact draw(s): pick intervals by mass, then draw within each piece.

    The caller must hold an exclusive generator; pass ``size`` for a
    vectorized batch of independent draws.
    """
    lm = pd.log_masses
    total = _logsumexp(lm)
    if not np.isfinite(total):
        raise NonIntegrableError("density has zero total mass")
    p = np.exp(lm - total)
    p = p / p.sum()
    n = 1 if size is None else int(size)
    cum = np.cumsum(p)
    u = rng.random(n)
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, pd.n_intervals - 1)
    out = np.empty(n)
    for i in np.unique(idx):
        sel = idx == i
        out[sel] = _sample_interval(pd, int(i), rng, int(sel.sum()))
    return float(out[0]) if size is None else out


def _logsumexp(x):
    mx = np.max(x)
    if not np.isfinite(mx):
        return mx
    return mx + np.log(np.exp(x - mx).sum())
