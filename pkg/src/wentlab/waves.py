"""Boundary-layer conservation-law tools.

For the scalar law  u_t + (A(u))_r = 0  with A' = a, two explicit solution
families matter here: the source-type self-similar profile u = a^{-1}(r/t)
and traveling fronts u = eta(r - ct).  Everything below either constructs
those profiles or measures how well sampled data satisfies the law.

Residuals are meant to be taken away from r = 0 and t = 0, where the
source-type solution is singular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .model import DiffusionLaw

__all__ = [
    "WaveError", "WaveProfile", "flux_primitive", "self_similar_profile",
    "TravelingWaveReport", "traveling_wave_check", "ClawReport",
    "claw_residual",
]


class WaveError(ValueError):
    pass


def _as_scalar_fn(a):
    if isinstance(a, DiffusionLaw):
        return a.a
    if callable(a):
        return a
    raise WaveError("a must be a DiffusionLaw or a callable")


def flux_primitive(a):
    """A(u) = int_0^u a(s) ds with A(0) = 0, vectorized over u.

    DiffusionLaw inputs use their closed-form primitive (exact for constant
    and power laws); bare callables fall back to adaptive quadrature at
    tolerance 1e-10.
    """
    if isinstance(a, DiffusionLaw):
        prim = a.primitive

        def A(u):
            u = np.asarray(u, dtype=float)
            out = np.vectorize(prim, otypes=[float])(u)
            return float(out) if out.ndim == 0 else out
        return A
    fn = _as_scalar_fn(a)

    def A(u):
        u = np.asarray(u, dtype=float)

        def one(v):
            if v == 0.0:
                return 0.0
            val, _ = quad(fn, 0.0, v, epsabs=1e-10, epsrel=1e-10, limit=200)
            return val
        out = np.vectorize(one, otypes=[float])(u)
        return float(out) if out.ndim == 0 else out
    return A


def _invert_power(law: DiffusionLaw, zeta: float) -> float:
    p, alpha = law.p, law.alpha
    if law.form == "monomial" and int(p) % 2 == 1:
        # odd monomials are bijective on the line
        return math.copysign((abs(zeta) / alpha) ** (1.0 / p), zeta)
    if zeta < 0:
        raise WaveError(f"a is nonnegative; r/t = {zeta} not in its range")
    return (zeta / alpha) ** (1.0 / p)


def self_similar_profile(a, r, t):
    """u(r, t) = a^{-1}(r/t), the source-type profile.

    Powers invert in closed form; general increasing laws go through a
    bracketed root solve at tolerance 1e-12.  Constant (or otherwise flat)
    laws have no inverse and are rejected.
    """
    t = float(t)
    if t <= 0:
        raise WaveError("self-similar profile needs t > 0")
    r_arr = np.asarray(r, dtype=float)
    zetas = np.atleast_1d(r_arr / t)

    if isinstance(a, DiffusionLaw):
        if a.form == "constant" or a.p == 0:
            raise WaveError("a is constant: A' is not invertible")
        if a.form in ("power", "monomial"):
            out = np.array([_invert_power(a, z) for z in zetas])
            return float(out[0]) if r_arr.ndim == 0 else out
        fn = a.a
    else:
        fn = _as_scalar_fn(a)

    def invert(z):
        if z == 0.0 and fn(0.0) == 0.0:
            return 0.0
        lo, hi = 0.0, 1.0
        f_lo = fn(lo)
        if f_lo > z:
            raise WaveError(f"r/t = {z} below a(0) = {f_lo}; not in range")
        for _ in range(200):
            if fn(hi) >= z:
                break
            hi *= 2.0
        else:
            raise WaveError(f"a never reaches r/t = {z}; not invertible there")
        if fn(hi) == fn(lo):
            raise WaveError("a is flat on the bracket: A' is not invertible")
        return brentq(lambda u: fn(u) - z, lo, hi, xtol=1e-12, rtol=8.9e-16)

    out = np.array([invert(z) for z in zetas])
    return float(out[0]) if r_arr.ndim == 0 else out


@dataclass
class WaveProfile:
    """A sampled solution family of the boundary conservation law."""

    kind: str                   # "self-similar" | "traveling"
    sampler: object             # callable (r, t) -> u
    r_range: tuple
    t_range: tuple
    speed: float = None

    def __post_init__(self):
        if self.kind not in ("self-similar", "traveling"):
            raise WaveError(f"unknown profile kind {self.kind!r}")
        if self.kind == "traveling" and not (self.speed and self.speed > 0):
            raise WaveError("traveling profiles need speed c > 0")

    @classmethod
    def self_similar(cls, a, r_range=(0.1, 1.0), t_range=(0.5, 1.0)):
        return cls(kind="self-similar",
                   sampler=lambda r, t: self_similar_profile(a, r, t),
                   r_range=tuple(r_range), t_range=tuple(t_range))

    @classmethod
    def traveling(cls, eta, c, r_range=(0.0, 1.0), t_range=(0.0, 1.0)):
        return cls(kind="traveling",
                   sampler=lambda r, t: np.asarray(eta(np.asarray(r) - c * t)),
                   r_range=tuple(r_range), t_range=tuple(t_range), speed=c)

    def sample(self, r, t):
        u = self.sampler(r, t)
        if not np.all(np.isfinite(u)):
            raise WaveError("profile not finite on its validity interval")
        return u


@dataclass
class TravelingWaveReport:
    eigen_residual: float       # max |(-c + a(eta)) eta'|
    claw_l1: float
    claw_max: float


def traveling_wave_check(a, eta, c: float, grid) -> TravelingWaveReport:
    """Pointwise eigenrelation residual of a traveling profile plus the full
    conservation-law residual of u(r,t) = eta(r - ct) on a tensor grid."""
    if c <= 0:
        raise WaveError("traveling speed must be positive")
    fn = _as_scalar_fn(a)
    xi = np.asarray(grid, dtype=float)
    if xi.size < 4:
        raise WaveError("grid too coarse (< 4 points)")
    vals = np.asarray(eta(xi), dtype=float)
    deta = np.gradient(vals, xi)
    avals = np.asarray(fn(vals), dtype=float)
    if avals.shape != vals.shape:
        avals = np.vectorize(fn, otypes=[float])(vals)
    eig = float(np.max(np.abs((-c + avals) * deta)))

    span = xi[-1] - xi[0]
    tgrid = np.linspace(0.0, 0.25 * span / c, max(xi.size // 2, 8))
    U = np.asarray(eta(xi[:, None] - c * tgrid[None, :]), dtype=float)
    rep = claw_residual(U, xi, tgrid, a)
    return TravelingWaveReport(eigen_residual=eig, claw_l1=rep.l1,
                               claw_max=rep.linf)


@dataclass
class ClawReport:
    l1: float
    linf: float
    residual: np.ndarray        # interior residual field (nr-2, nt-2)
    r: np.ndarray
    t: np.ndarray


def claw_residual(u, r, t, a) -> ClawReport:
    """Central-difference residual of u_t + (A(u))_r on a tensor grid.

    u[i, k] samples u(r_i, t_k).  The residual lives on interior points in
    both directions and is reported L1-averaged and in sup norm.
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if r.size < 4 or t.size < 4:
        raise WaveError("grid too coarse (< 4 points in a direction)")
    if u.shape != (r.size, t.size):
        raise WaveError(f"u must have shape ({r.size}, {t.size}), got {u.shape}")
    A = flux_primitive(a)
    Au = A(u)
    dt = t[2:] - t[:-2]
    dr = r[2:] - r[:-2]
    u_t = (u[:, 2:] - u[:, :-2]) / dt[None, :]
    A_r = (Au[2:, :] - Au[:-2, :]) / dr[:, None]
    res = u_t[1:-1, :] + A_r[:, 1:-1]
    return ClawReport(l1=float(np.mean(np.abs(res))),
                      linf=float(np.max(np.abs(res))),
                      residual=res, r=r[1:-1], t=t[1:-1])
