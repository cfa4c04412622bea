"""Norms, energies, decay envelopes, and iteration diagnostics on mesh data.

Everything here consumes mesh quadrature weights: bulk integrals are lumped
sums over bulk_weights, boundary integrals sums over surface_weights.  The
combined measure on the closure is their disjoint union, so X-norms add a
bulk and a trace part and the normalized ladder measure divides by the total.

Scalar-field operations (x_norm, moser_ladder, trace_probe) take plain value
arrays; callers slice multi-field states.  Vector operations take FieldState.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit, nnls
from scipy.special import logsumexp

from .domain import FieldState, Mesh, measure_of

__all__ = [
    "AnalysisError", "x_norm", "xvec_norm", "energy_functional",
    "eigen_weight", "gronwall_nu", "gronwall_envelope", "DecayFit",
    "verify_decay", "LadderReport", "moser_ladder", "DeGiorgiReport",
    "degiorgi_sequence", "degiorgi_bound", "direct_supremum",
    "RecursionReport", "recursion_lemma", "TraceProbe", "trace_probe",
    "gradient_power_quadrature", "MonitorSeries", "xvec_series",
    "property_p_classify",
]


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# norms


def _lp(weights, values, s) -> float:
    if s < 1:
        raise AnalysisError(f"exponent {s} < 1")
    a = np.abs(np.asarray(values, dtype=float))
    if np.isinf(s):
        return float(a.max()) if a.size else 0.0
    return float(np.sum(weights * a ** s) ** (1.0 / s))


def x_norm(mesh: Mesh, state: FieldState, i: int, s1, s2=None) -> float:
    """(int_Omega |u|^s1)^{1/s1} + (int_Gamma |u|^s2)^{1/s2}.

    The sup-norm pair follows the X^inf convention: max of the bulk and
    trace sup norms rather than their sum."""
    if s2 is None:
        s2 = s1
    a = _lp(mesh.bulk_weights, state.bulk[i], s1)
    b = _lp(mesh.surface_weights, state.trace[i], s2)
    if np.isinf(s1) and np.isinf(s2):
        return max(a, b)
    return a + b


def xvec_norm(mesh: Mesh, state: FieldState, r_vec, delta_vec=None,
              dynamic=()) -> float:
    """Product-space norm: bulk L^{r_i} for every field, plus delta_i times
    the trace L^{r_i} for fields in the dynamic part of the partition."""
    m = state.m
    r = np.broadcast_to(np.asarray(r_vec, dtype=float), (m,))
    dyn = set(int(j) for j in dynamic)
    if not dyn.issubset(range(m)):
        raise AnalysisError(f"dynamic partition {sorted(dyn)} outside 0..{m-1}")
    if delta_vec is None:
        delta = np.ones(m)
    else:
        delta = np.broadcast_to(np.asarray(delta_vec, dtype=float), (m,))
    if any(delta[j] <= 0 for j in dyn):
        raise AnalysisError("delta must be positive on dynamic fields")
    total = 0.0
    for j in range(m):
        total += _lp(mesh.bulk_weights, state.bulk[j], r[j])
        if j in dyn:
            total += delta[j] * _lp(mesh.surface_weights, state.trace[j], r[j])
    return total


def energy_functional(mesh: Mesh, state: FieldState, m_vec, weight=None,
                      normalize: bool = True) -> float:
    """int over the closure of sum_i (1/m_i)|u_i|^{m_i} against a weight.

    weight None means uniform; a (bulk, trace) pair gives nodal values.
    With normalize the weight is rescaled to unit L^1(mu) mass first.
    """
    m = state.m
    mv = np.broadcast_to(np.asarray(m_vec, dtype=float), (m,))
    if np.any(mv < 1):
        raise AnalysisError("energy exponents must be >= 1")
    if weight is None:
        wb = np.ones(mesh.n_nodes)
        wt = np.ones(mesh.n_boundary)
    else:
        wb = np.asarray(weight[0], dtype=float).copy()
        wt = np.asarray(weight[1], dtype=float).copy()
    if np.any(wb < 0) or np.any(wt < 0):
        raise AnalysisError("energy weight must be nonnegative")
    if normalize:
        mass = float(np.sum(mesh.bulk_weights * wb)
                     + np.sum(mesh.surface_weights * wt))
        if mass <= 0:
            raise AnalysisError("weight has zero measure")
        wb /= mass
        wt /= mass
    total = 0.0
    for j in range(m):
        dens_b = np.abs(state.bulk[j]) ** mv[j] / mv[j]
        dens_t = np.abs(state.trace[j]) ** mv[j] / mv[j]
        total += float(np.sum(mesh.bulk_weights * wb * dens_b)
                       + np.sum(mesh.surface_weights * wt * dens_t))
    return total


def eigen_weight(system, pair) -> tuple:
    """Nodal (bulk, trace) weight arrays from an eigenvector, zero on nodes
    the assembly eliminated.  Convenience for energy functionals weighted by
    the first eigenfunction."""
    mesh = system.mesh
    wb = np.zeros(mesh.n_nodes)
    wb[system.kept] = pair.vector
    wt = wb[mesh.boundary_nodes]
    return wb, wt


# ---------------------------------------------------------------------------
# decay envelopes


def gronwall_nu(m_vec, p_vec) -> float:
    """nu = min_i (m_i / p_i) + 1; infinite when every p_i = 0."""
    m = np.asarray(m_vec, dtype=float)
    p = np.asarray(p_vec, dtype=float)
    if m.shape != p.shape or m.size == 0:
        raise AnalysisError("m and p vectors must match and be nonempty")
    with np.errstate(divide="ignore"):
        ratios = np.where(p > 0, m / np.where(p > 0, p, 1.0), np.inf)
    return float(np.min(ratios) + 1.0)


def gronwall_envelope(c1: float, c2: float, nu: float, t) -> float:
    """(c2/c1)^nu + (c1 (nu-1) t)^{-1/(nu-1)} for nu > 1."""
    if not (nu > 1 and math.isfinite(nu)):
        raise AnalysisError(
            f"nu = {nu} not in the algebraic regime (nu > 1 needed; "
            "use the exponential mode of verify_decay instead)")
    if c1 <= 0 or c2 <= 0:
        raise AnalysisError("c1, c2 must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise AnalysisError("t must be positive")
    out = (c2 / c1) ** nu + (c1 * (nu - 1.0) * t) ** (-1.0 / (nu - 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass
class DecayFit:
    mode: str
    constants: dict
    verdict: bool
    margin: float               # max holdout / envelope ratio
    fitted: np.ndarray          # envelope on the full time grid


def verify_decay(times, values, mode: str = "algebraic", nu: float = None) -> DecayFit:
    """Fit the decay envelope on the tail of the first half of the series
    (T/4 <= t < T/2; the initial transient is outside the envelope's
    asymptotic regime) and check the second half stays below 1.05x the fit.

    algebraic: Y ~ C + D t^{-1/(nu-1)}, with C = (c2/c1)^nu and
    D = (c1 (nu-1))^{-1/(nu-1)} mapped back to c1, c2.
    exponential: Y ~ Q e^{-c0 t} + C0.

    Both fits minimize in log space (series from large transients span many
    decades; a linear-space fit would ignore the plateau entirely), seeded by
    a nonnegative linear least-squares solve.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.size < 8:
        raise AnalysisError("series too short to fit and hold out")
    if np.any(y <= 0):
        raise AnalysisError("series must be positive")
    pos = t[t > 0]
    if pos.size < 4 or pos.max() / pos.min() < 10.0:
        raise AnalysisError("series must span at least a decade of t")
    half = t.max() / 2.0
    fit = (t >= half / 2.0) & (t < half)
    hold = t >= half
    if fit.sum() < 3:
        fit = (t > 0) & (t < half)
    if fit.sum() < 3 or hold.sum() < 1:
        raise AnalysisError("series too short to fit and hold out")

    floor = 1e-300
    if mode == "algebraic":
        if nu is None or not (nu > 1 and math.isfinite(nu)):
            raise AnalysisError("algebraic mode needs nu > 1")
        ex = -1.0 / (nu - 1.0)
        design = np.column_stack([np.ones(fit.sum()), t[fit] ** ex])
        p0 = np.maximum(nnls(design, y[fit])[0], 1e-9 * y[fit].min())

        def logmodel(tt, C, D):
            return np.log(C + D * tt ** ex + floor)

        try:
            (C, D), _ = curve_fit(logmodel, t[fit], np.log(y[fit]), p0=p0,
                                  bounds=(0, np.inf), maxfev=20000)
        except RuntimeError:
            C, D = p0
        if D > 0:
            c1 = D ** (-(nu - 1.0)) / (nu - 1.0)
            c2 = c1 * C ** (1.0 / nu)
        else:
            c1, c2 = math.inf, math.inf if C > 0 else 0.0
        env = C + D * np.where(t > 0, t, np.nan) ** ex
        env[t <= 0] = np.inf
        constants = {"C": float(C), "D": float(D), "c1": float(c1),
                     "c2": float(c2), "nu": nu}
    elif mode == "exponential":
        def logmodel(tt, Q, c0, C0):
            return np.log(Q * np.exp(-c0 * tt) + C0 + floor)

        p0 = (max(y.max() - y.min(), 1e-12), 1.0 / max(half, 1e-12),
              max(y.min(), 1e-12 * y.max()))
        popt, _ = curve_fit(logmodel, t[fit], np.log(y[fit]), p0=p0,
                            bounds=(0, np.inf), maxfev=20000)
        env = popt[0] * np.exp(-popt[1] * t) + popt[2]
        constants = {"Q": float(popt[0]), "c0": float(popt[1]),
                     "C0": float(popt[2])}
    else:
        raise AnalysisError(f"mode must be algebraic or exponential, got {mode!r}")

    ratios = y[hold] / env[hold]
    margin = float(np.max(ratios))
    return DecayFit(mode=mode, constants=constants, verdict=margin <= 1.05,
                    margin=margin, fitted=env)


# ---------------------------------------------------------------------------
# Moser ladder


@dataclass
class LadderReport:
    k: int
    n_k: int
    value: float                # (Y_k)^{1/(n_k+1)} under normalized measure
    xinf: float
    rel_gap: float


def moser_ladder(mesh: Mesh, bulk, trace, k_max: int = 8) -> list:
    """Ladder of normalized X^{n_k+1} norms, n_k = 2^k - 1, in log space.

    Under the probability measure mu-hat the values are nondecreasing in k
    and converge to the max norm; the report tracks the remaining gap.
    """
    if not (0 <= k_max <= 8):
        raise AnalysisError("k_max must be between 0 and 8 (overflow guard)")
    bulk = np.abs(np.asarray(bulk, dtype=float))
    trace = np.abs(np.asarray(trace, dtype=float))
    mu = measure_of(mesh, "closure")
    logw = np.concatenate([np.log(mesh.bulk_weights / mu),
                           np.log(mesh.surface_weights / mu)])
    vals = np.concatenate([bulk, trace])
    xinf = float(vals.max())
    with np.errstate(divide="ignore"):
        logv = np.log(vals)
    reports = []
    for k in range(k_max + 1):
        q = 2 ** k
        if xinf == 0.0:
            val = 0.0
        else:
            val = math.exp(logsumexp(logw + q * logv) / q)
        gap = 0.0 if xinf == 0.0 else (xinf - val) / xinf
        reports.append(LadderReport(k=k, n_k=q - 1, value=val,
                                    xinf=xinf, rel_gap=gap))
    return reports


# ---------------------------------------------------------------------------
# DeGiorgi truncation sequence


@dataclass
class DeGiorgiReport:
    L: float
    T: float
    tau: float
    levels: np.ndarray          # k_n
    times: np.ndarray           # t_n
    Y: np.ndarray
    excess: float               # a-posteriori bound on sup (|u| - k_last)_+
    certified: bool
    bound: float                # 2L, meaningful when certified

    @property
    def converged(self) -> bool:
        return self.certified


def _snap_list(trajectory):
    snaps = getattr(trajectory, "snapshots", trajectory)
    return list(snaps)


def degiorgi_sequence(mesh: Mesh, trajectory, L: float, T: float, tau: float,
                      delta=2.0, gamma=2.0, n_max: int = 10) -> DeGiorgiReport:
    """Truncation energies Y_n at levels k_n = L(2 - 2^{-n}) over the
    shrinking cylinders [t_n, T] x closure, t_0 = T - 2 tau.

    Y_n averages (|u_i| - k_n)_+^delta over the bulk and (...)^gamma over the
    boundary, trapezoidal in time over stored snapshots.  The verdict is
    certified only when Y_{n_max} <= 1e-10 AND the worst single quadrature
    sample consistent with that Y value cannot push |u| above 2L, so a
    certificate implies the discrete space-time max on [T-tau, T] is <= 2L
    with no tolerance.
    """
    if L < 1:
        raise AnalysisError("level L must be >= 1")
    if not (T - 2.0 * tau > 0):
        raise AnalysisError("need T - 2 tau > 0")
    snaps = _snap_list(trajectory)
    t0 = T - 2.0 * tau
    window = [s for s in snaps if t0 - 1e-12 <= s.t <= T + 1e-12]
    if len(window) < 8:
        raise AnalysisError(
            f"only {len(window)} snapshots in [{t0}, {T}]; need >= 8")
    m = window[0].m
    dv = np.broadcast_to(np.asarray(delta, dtype=float), (m,))
    gv = np.broadcast_to(np.asarray(gamma, dtype=float), (m,))
    if np.any(dv < 1) or np.any(gv < 1):
        raise AnalysisError("delta, gamma must be >= 1")
    vol = float(np.sum(mesh.bulk_weights))

    n_idx = np.arange(n_max + 1)
    levels = L * (2.0 - 0.5 ** n_idx)
    tn = np.empty(n_max + 1)
    tn[0] = t0
    for n in range(1, n_max + 1):
        tn[n] = tn[n - 1] + tau * 0.5 ** n

    st = np.array([s.t for s in window])
    if np.any(np.diff(st) <= 0):
        raise AnalysisError("snapshot times must be strictly increasing")
    Y = np.zeros(n_max + 1)
    excess = math.inf
    for n in range(n_max + 1):
        inside = st >= tn[n] - 1e-12
        if inside.sum() < 2:
            raise AnalysisError(f"fewer than 2 snapshots in [t_{n}, T]")
        sub = [w for w, keep in zip(window, inside) if keep]
        tt = st[inside]
        tw = np.zeros(len(tt))
        dts = np.diff(tt)
        tw[:-1] += 0.5 * dts
        tw[1:] += 0.5 * dts
        acc = 0.0
        for s, w in zip(sub, tw):
            for j in range(m):
                acc += w * float(np.sum(
                    mesh.bulk_weights
                    * np.maximum(np.abs(s.bulk[j]) - levels[n], 0.0) ** dv[j]))
                acc += w * float(np.sum(
                    mesh.surface_weights
                    * np.maximum(np.abs(s.trace[j]) - levels[n], 0.0) ** gv[j]))
        qvol = (tt[-1] - tt[0]) * vol
        Y[n] = acc / qvol if qvol > 0 else math.inf
        if n == n_max:
            # every sample (i, x, t_k) contributes tw_k w_x excess^exp <= Y|Q|,
            # so no sample on [T-tau, T] can exceed k_n by more than this
            tw_min = float(tw.min())
            w_bulk_min = tw_min * float(mesh.bulk_weights.min())
            w_surf_min = tw_min * float(mesh.surface_weights.min())
            excess = 0.0
            for j in range(m):
                excess = max(excess,
                             (Y[n] * qvol / w_bulk_min) ** (1.0 / dv[j]),
                             (Y[n] * qvol / w_surf_min) ** (1.0 / gv[j]))

    headroom = 2.0 * L - levels[-1]
    certified = bool(Y[-1] <= 1e-10 and excess <= headroom)
    return DeGiorgiReport(L=L, T=T, tau=tau, levels=levels, times=tn, Y=Y,
                          excess=excess, certified=certified, bound=2.0 * L)


def direct_supremum(trajectory, t_lo: float, t_hi: float) -> float:
    """max over stored snapshots with t in [t_lo, t_hi] of max_i |u_i|."""
    best = 0.0
    for s in _snap_list(trajectory):
        if t_lo - 1e-12 <= s.t <= t_hi + 1e-12:
            best = max(best, float(np.abs(s.bulk).max()),
                       float(np.abs(s.trace).max()))
    return best


def degiorgi_bound(mesh: Mesh, trajectory, T: float, tau: float,
                   delta=2.0, gamma=2.0, n_max: int = 10,
                   rtol: float = 0.01) -> tuple:
    """Least certifying level by bisection, within rtol, cross-checked
    against the direct max over [T - tau, T].  Returns (report, direct_max).

    L = max(1, direct max) always certifies: every truncation is empty there,
    so it brackets the search from above.
    """
    direct = direct_supremum(trajectory, T - tau, T)
    hi = max(1.0, direct)
    rep_hi = degiorgi_sequence(mesh, trajectory, hi, T, tau, delta, gamma, n_max)
    if not rep_hi.certified:
        raise AnalysisError(
            f"L = direct max = {hi} failed to certify; quadrature inconsistent")
    lo = 1.0
    if hi > lo:
        rep_lo = degiorgi_sequence(mesh, trajectory, lo, T, tau, delta, gamma, n_max)
        if rep_lo.certified:
            return rep_lo, direct
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            rep = degiorgi_sequence(mesh, trajectory, mid, T, tau, delta, gamma, n_max)
            if rep.certified:
                hi, rep_hi = mid, rep
            else:
                lo = mid
    return rep_hi, direct


# ---------------------------------------------------------------------------
# iteration lemma


@dataclass
class RecursionReport:
    C: float
    b: float
    kappa: float
    threshold: float
    sequence: np.ndarray
    certified: bool


def recursion_lemma(C: float, b: float, kappa: float, Y0: float,
                    n_max: int = 60) -> RecursionReport:
    """Iterate the equality majorant Y_{n+1} = C b^n Y_n^{1+kappa} and test
    the tail against 1e-12.  Threshold for convergence: C^{-1/k} b^{-1/k^2}."""
    if C <= 0 or b <= 0 or kappa <= 0:
        raise AnalysisError("C, b, kappa must be positive")
    if Y0 < 0:
        raise AnalysisError("Y0 must be nonnegative")
    thr = C ** (-1.0 / kappa) * b ** (-1.0 / kappa ** 2)
    seq = np.empty(n_max + 1)
    seq[0] = Y0
    with np.errstate(over="ignore"):
        for n in range(n_max):
            seq[n + 1] = C * b ** n * seq[n] ** (1.0 + kappa)
            if not np.isfinite(seq[n + 1]):
                seq[n + 1:] = np.inf
                break
    return RecursionReport(C=C, b=b, kappa=kappa, threshold=thr,
                           sequence=seq, certified=bool(seq[-1] <= 1e-12))


# ---------------------------------------------------------------------------
# boundary trace inequality probe


def gradient_power_quadrature(mesh: Mesh, bulk, exponent: float) -> float:
    """Face quadrature of int |grad u|^2 |u|^exponent, midpoint-weighted."""
    u = np.asarray(bulk, dtype=float)
    du = u[mesh.faces[:, 1]] - u[mesh.faces[:, 0]]
    if exponent == 0:
        wt = 1.0
    else:
        mid = 0.5 * (u[mesh.faces[:, 1]] + u[mesh.faces[:, 0]])
        wt = np.abs(mid) ** exponent
    return float(np.sum(mesh.face_trans * du * du * wt))


@dataclass
class TraceProbe:
    lhs: float
    grad_term: float            # eps (s+n) int |grad u|^2 |u|^{p+n-1}
    bulk_term: float            # (s+n) (int |u|^{s+n} + 1), multiplies C/eps
    least_c: float


def trace_probe(mesh: Mesh, bulk, trace, n: float, s: float, p: float,
                eps: float) -> TraceProbe:
    """Least C for which the boundary-trace power inequality

        int_Gamma |u|^{s+n} <= eps (s+n) int |grad u|^2 |u|^{p+n-1}
                               + (C/eps)(s+n)(int |u|^{s+n} + 1)

    holds on the sample."""
    if n < 1 or p < 0 or s <= -1 or eps <= 0:
        raise AnalysisError("need n >= 1, p >= 0, s > -1, eps > 0")
    q = s + n
    lhs = float(np.sum(mesh.surface_weights * np.abs(np.asarray(trace)) ** q))
    grad = gradient_power_quadrature(mesh, bulk, p + n - 1.0)
    bulk_int = float(np.sum(mesh.bulk_weights * np.abs(np.asarray(bulk)) ** q))
    grad_term = eps * q * grad
    bulk_term = q * (bulk_int + 1.0)
    least_c = max(0.0, (lhs - grad_term) * eps / bulk_term)
    return TraceProbe(lhs=lhs, grad_term=grad_term, bulk_term=bulk_term,
                      least_c=least_c)


# ---------------------------------------------------------------------------
# ensemble classification


@dataclass
class MonitorSeries:
    """One run's norm history on a shared time grid, for ensemble studies."""

    times: np.ndarray
    channels: dict
    status: str = "Completed"
    initial_xinf: float = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, vals in self.channels.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != self.times.shape:
                raise AnalysisError(f"channel {name!r} does not share the time grid")
            self.channels[name] = vals
        if self.initial_xinf is None and "xinf" in self.channels:
            self.initial_xinf = float(self.channels["xinf"][0])


_R_CHANNEL = {1.0: "l1", 2.0: "l2", math.inf: "linf"}


def xvec_series(trajectory, r_vec, delta_vec=None, dynamic=(),
                times=None) -> MonitorSeries:
    """Product-space norm history from monitor channels, interpolated onto a
    common grid.  Monitors record L^1, L^2 and L^inf, so r_i must be one of
    those; for max norms the bulk/trace pieces combine as a max, matching the
    X^inf convention."""
    m = len(trajectory.field_names)
    r = np.broadcast_to(np.asarray(r_vec, dtype=float), (m,))
    delta = (np.ones(m) if delta_vec is None
             else np.broadcast_to(np.asarray(delta_vec, dtype=float), (m,)))
    dyn = set(int(j) for j in dynamic)
    tsrc = trajectory.times
    grid = tsrc if times is None else np.asarray(times, dtype=float)
    total = np.zeros(len(grid))
    for j, name in enumerate(trajectory.field_names):
        if r[j] not in _R_CHANNEL:
            raise AnalysisError(
                f"r = {r[j]} not recorded by monitors (have 1, 2, inf)")
        tag = _R_CHANNEL[r[j]]
        total += np.interp(grid, tsrc, trajectory.channel(f"{name}.bulk_{tag}"))
        if j in dyn:
            total += delta[j] * np.interp(
                grid, tsrc, trajectory.channel(f"{name}.trace_{tag}"))
    xinf = np.interp(grid, tsrc, trajectory.xinf)
    return MonitorSeries(times=grid,
                         channels={"xvec": total, "xinf": xinf},
                         status=trajectory.status.kind,
                         initial_xinf=float(trajectory.xinf[0]))


def property_p_classify(ensemble, eta: float, channel: str = "xvec") -> str:
    """Dissipativity class of an ensemble sharing a time grid.

    P-(i): max/min ratio of the norm channel <= 1.1 at every grid time >= eta
    (initial data forgotten); P-(ii): the same but only on the final 10% of
    the horizon (common limsup); P-(iii): each run's sup bounded monotonically
    by its initial norm (sorted dominance); blow-up if any run blew up.
    """
    if len(ensemble) < 3:
        raise AnalysisError("need at least 3 runs")
    t = ensemble[0].times
    for s in ensemble[1:]:
        if s.times.shape != t.shape or np.any(s.times != t):
            raise AnalysisError("ensemble runs do not share a time grid")
    inits = np.array([s.initial_xinf for s in ensemble], dtype=float)
    if np.min(inits) <= 0 or np.max(inits) / np.min(inits) < 100.0:
        raise AnalysisError("initial norms must span at least two decades")
    if any(s.status == "BlowUp" for s in ensemble):
        return "blow-up"
    Y = np.vstack([s.channels[channel] for s in ensemble])
    ratio = Y.max(axis=0) / Y.min(axis=0)
    late = t >= eta
    if late.any() and np.all(ratio[late] <= 1.1):
        return "P-(i)"
    tail = t >= t[0] + 0.9 * (t[-1] - t[0])
    if tail.any() and np.all(ratio[tail] <= 1.1):
        return "P-(ii)"
    order = np.argsort(inits)
    sups = Y.max(axis=1)[order]
    if np.all(np.diff(sups) >= -1e-12 * max(1.0, sups.max())):
        return "P-(iii)"
    return "inconclusive"
