"""Compiled inner loops for the explicit time stepper.

Everything here is plain-array numba; the solver module owns the problem
compilation (scenario -> arrays) and falls back to a numpy reference path
when a scenario uses features the kernels do not cover (tabulated diffusion,
time-dependent forcing, implicit stepping).

Layout conventions:
    U          (m, N) field values, boundary nodes included
    faces      face_i/face_j/face_t arrays; flux through a face is
               face_t * (A[j] - A[i]) added to node i, subtracted from j
    b_*        per boundary node, aligned with the mesh boundary list
    kinds      0 dirichlet, 1 static, 2 dynamic, 3 frozen (psi=0),
               4 dynamic with zero weight (algebraic Robin constraint)
    poly role  stacked coefficient tables: coefs (T,), expos (T, m) and
               offsets (m+1,) selecting each field's slice

Monitor row layout (C = 2 + 7m + 2 columns):
    [t, dt, (bulk_l1, bulk_l2, bulk_linf, trace_l1, trace_l2, trace_linf,
     mass) per field, xinf, energy]

Chunk status codes: 0 reached target, 1 monitor buffer full, 2 blow-up,
3 step failure (NaN / Newton), 4 dt underflow.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KIND_DIRICHLET = 0
KIND_STATIC = 1
KIND_DYNAMIC = 2
KIND_FROZEN = 3
KIND_BETA0 = 4

STATUS_TARGET = 0
STATUS_BUFFER = 1
STATUS_BLOWUP = 2
STATUS_FAILURE = 3
STATUS_DT_UNDERFLOW = 4


@njit(cache=True)
def poly_at(coefs, expos, off, i, s):
    """Field-i polynomial at one state vector s (m,)."""
    val = 0.0
    for k in range(off[i], off[i + 1]):
        term = coefs[k]
        for q in range(s.shape[0]):
            e = expos[k, q]
            if e > 0:
                b = s[q]
                acc = 1.0
                for _ in range(e):
                    acc *= b
                term *= acc
        val += term
    return val


@njit(cache=True)
def poly_field(coefs, expos, off, i, U, out):
    """Field-i polynomial over all columns of U (m, N) into out (N,)."""
    m, N = U.shape
    for j in range(N):
        out[j] = 0.0
    for k in range(off[i], off[i + 1]):
        c = coefs[k]
        for j in range(N):
            term = c
            for q in range(m):
                e = expos[k, q]
                if e > 0:
                    b = U[q, j]
                    acc = 1.0
                    for _ in range(e):
                        acc *= b
                    term *= acc
            out[j] += term


@njit(cache=True)
def _ipow(b, n):
    acc = 1.0
    for _ in range(n):
        acc *= b
    return acc


@njit(cache=True)
def diff_a0(code, alpha, p, u):
    if code == 0:
        return alpha
    if code == 1:
        n = int(p)
        if p == n:
            return alpha * _ipow(abs(u), n)
        return alpha * abs(u) ** p
    # code 3: monomial with integer exponent
    return alpha * _ipow(u, int(p))


@njit(cache=True)
def diff_A0(code, alpha, p, u):
    if code == 0:
        return alpha * u
    if code == 1:
        n = int(p)
        if p == n:
            v = alpha * _ipow(abs(u), n + 1) / (p + 1.0)
        elif u >= 0.0:
            v = alpha * u ** (p + 1.0) / (p + 1.0)
        else:
            v = alpha * (-u) ** (p + 1.0) / (p + 1.0)
        if u >= 0.0:
            return v
        return -v
    return alpha * _ipow(u, int(p) + 1) / (p + 1.0)


@njit(cache=True)
def diff_a(code, alpha, p, eps, mode, u):
    """Regularized diffusivity; mode 0 additive, 1 shift."""
    if eps == 0.0:
        return diff_a0(code, alpha, p, u)
    if mode == 0:
        return diff_a0(code, alpha, p, u) + eps
    return diff_a0(code, alpha, p, u + eps)


@njit(cache=True)
def diff_A(code, alpha, p, eps, mode, u):
    if eps == 0.0:
        return diff_A0(code, alpha, p, u)
    if mode == 0:
        return diff_A0(code, alpha, p, u) + eps * u
    return diff_A0(code, alpha, p, u + eps) - diff_A0(code, alpha, p, eps)


@njit(cache=True)
def apply_constraints(U, b_idx, b_kind, b_bval, b_in1, b_in2, b_hsp,
                      h_coefs, h_expos, h_off, b_hforce,
                      g_coefs, g_expos, g_off, b_gforce, b_h2,
                      dcode, dalpha, dp, deps, dmode,
                      newton_tol, newton_max):
    """Pin Dirichlet/frozen nodes; solve static and beta=0 constraints.

    Static (s2):   d_n u + h(u) = 0 with second-order one-sided d_n.
    beta=0 node:   a(u) d_n u + g(u) - h2 = 0.
    Returns 0 on success, 1 on Newton failure / NaN.
    """
    m = U.shape[0]
    B = b_idx.shape[0]
    for i in range(m):
        for b in range(B):
            kind = b_kind[i, b]
            node = b_idx[b]
            if kind == KIND_DIRICHLET or kind == KIND_FROZEN:
                U[i, node] = b_bval[i, b]
                continue
            if kind != KIND_STATIC and kind != KIND_BETA0:
                continue
            n1 = b_in1[b]
            n2 = b_in2[b]
            hh = b_hsp[b]
            u = U[i, node]
            s = np.empty(m)
            for q in range(m):
                s[q] = U[q, node]
            # residual and a magnitude scale for the convergence test (the
            # one-sided stencil cancels near the root, so the noise floor is
            # set by the term sizes, not by |G|)
            converged = False
            G = 0.0
            scale = 1.0
            for _ in range(newton_max):
                s[i] = u
                d_in = (-3.0 * u + 4.0 * U[i, n1] - U[i, n2]) / (2.0 * hh)
                mags = (3.0 * abs(u) + 4.0 * abs(U[i, n1]) + abs(U[i, n2])) / (2.0 * hh)
                if kind == KIND_STATIC:
                    hval = poly_at(h_coefs, h_expos, h_off, i, s) + b_hforce[i, b]
                    G = hval - d_in
                    scale = 1.0 + mags + abs(hval)
                    dh = 1e-7 * (1.0 + abs(u))
                    s[i] = u + dh
                    hp = poly_at(h_coefs, h_expos, h_off, i, s)
                    s[i] = u
                    dG = (hp - hval) / dh + 3.0 / (2.0 * hh)
                else:
                    a_u = diff_a(dcode[i], dalpha[i], dp[i], deps[i], dmode[i], u)
                    gval = poly_at(g_coefs, g_expos, g_off, i, s) + b_gforce[i, b]
                    G = -a_u * d_in + gval - b_h2[i, b]
                    scale = 1.0 + a_u * mags + abs(gval) + abs(b_h2[i, b])
                    dh = 1e-7 * (1.0 + abs(u))
                    up = u + dh
                    s[i] = up
                    a_p = diff_a(dcode[i], dalpha[i], dp[i], deps[i], dmode[i], up)
                    d_in_p = (-3.0 * up + 4.0 * U[i, n1] - U[i, n2]) / (2.0 * hh)
                    Gp = -a_p * d_in_p + poly_at(g_coefs, g_expos, g_off, i, s) \
                        + b_gforce[i, b] - b_h2[i, b]
                    s[i] = u
                    dG = (Gp - G) / dh
                if abs(G) <= newton_tol * scale:
                    converged = True
                    break
                if dG == 0.0 or not np.isfinite(dG):
                    return 1
                step = -G / dG
                lam = 1.0
                accepted = False
                for _ in range(30):
                    u_try = u + lam * step
                    s[i] = u_try
                    d_try = (-3.0 * u_try + 4.0 * U[i, n1] - U[i, n2]) / (2.0 * hh)
                    if kind == KIND_STATIC:
                        G_try = poly_at(h_coefs, h_expos, h_off, i, s) + b_hforce[i, b] - d_try
                    else:
                        a_t = diff_a(dcode[i], dalpha[i], dp[i], deps[i], dmode[i], u_try)
                        G_try = -a_t * d_try + poly_at(g_coefs, g_expos, g_off, i, s) \
                            + b_gforce[i, b] - b_h2[i, b]
                    if np.isfinite(G_try) and abs(G_try) < abs(G):
                        u = u_try
                        accepted = True
                        break
                    lam *= 0.5
                if not accepted:
                    break
            if not converged:
                if not (abs(G) <= newton_tol * 100.0 * scale):
                    return 1
            if not np.isfinite(u):
                return 1
            U[i, node] = u
    return 0


@njit(cache=True)
def rhs_eval(U, RHS, A, face_i, face_j, face_t, w_react, M,
             b_idx, b_kind, b_surfw, b_h2, b_gforce,
             dcode, dalpha, dp, deps, dmode,
             f_coefs, f_expos, f_off, f_force,
             g_coefs, g_expos, g_off, scratch):
    """du/dt for all fields; constrained nodes get RHS = 0 (pinned elsewhere)."""
    m, N = U.shape
    F = face_i.shape[0]
    B = b_idx.shape[0]
    for i in range(m):
        for j in range(N):
            A[j] = diff_A(dcode[i], dalpha[i], dp[i], deps[i], dmode[i], U[i, j])
            RHS[i, j] = 0.0
        for f in range(F):
            na = face_i[f]
            nb = face_j[f]
            flux = face_t[f] * (A[nb] - A[na])
            RHS[i, na] += flux
            RHS[i, nb] -= flux
        if f_off[i + 1] > f_off[i]:
            poly_field(f_coefs, f_expos, f_off, i, U, scratch)
            for j in range(N):
                RHS[i, j] -= w_react[j] * (scratch[j] + f_force[i, j])
        else:
            for j in range(N):
                RHS[i, j] -= w_react[j] * f_force[i, j]
        for b in range(B):
            kind = b_kind[i, b]
            node = b_idx[b]
            if kind == KIND_DYNAMIC:
                s = np.empty(m)
                for q in range(m):
                    s[q] = U[q, node]
                gval = poly_at(g_coefs, g_expos, g_off, i, s) + b_gforce[i, b]
                RHS[i, node] -= b_surfw[b] * (gval - b_h2[i, b])
            elif kind == KIND_FROZEN:
                RHS[i, node] = 0.0
        for j in range(N):
            RHS[i, j] /= M[i, j]
    # zero pinned rows
    for i in range(m):
        for b in range(B):
            kind = b_kind[i, b]
            if kind != KIND_DYNAMIC:
                RHS[i, b_idx[b]] = 0.0
    return 0


@njit(cache=True)
def stable_dt(U, tsum, M, free_mask, w_react,
              b_idx, b_kind, b_surfw,
              dcode, dalpha, dp, deps, dmode,
              df_coefs, df_expos, df_off,
              dg_coefs, dg_expos, dg_off,
              cfl):
    """Parabolic CFL on a^eps plus a reaction-rate limiter.

    Matches dt = cfl*h^2 / max a^eps on a uniform 1D interior (the geometric
    factor tsum/M equals 2/h^2 there).
    """
    m, N = U.shape
    B = b_idx.shape[0]
    s = np.empty(m)
    dt = 1e300
    for i in range(m):
        amax_geo = 0.0
        rate = 0.0
        has_df = df_off[i + 1] > df_off[i]
        for j in range(N):
            if free_mask[i, j] == 0:
                continue
            a_val = diff_a(dcode[i], dalpha[i], dp[i], deps[i], dmode[i], U[i, j])
            g = a_val * tsum[j] / M[i, j]
            if g > amax_geo:
                amax_geo = g
            if has_df:
                for q in range(m):
                    s[q] = U[q, j]
                r = abs(poly_at(df_coefs, df_expos, df_off, i, s)) * w_react[j] / M[i, j]
                if r > rate:
                    rate = r
        if dg_off[i + 1] > dg_off[i]:
            for b in range(B):
                if b_kind[i, b] == KIND_DYNAMIC:
                    node = b_idx[b]
                    for q in range(m):
                        s[q] = U[q, node]
                    r = abs(poly_at(dg_coefs, dg_expos, dg_off, i, s)) * b_surfw[b] / M[i, node]
                    if r > rate:
                        rate = r
        if amax_geo > 0.0:
            cand = 2.0 * cfl / amax_geo
            if cand < dt:
                dt = cand
        if rate > 0.0:
            cand = cfl / rate
            if cand < dt:
                dt = cand
    return dt


@njit(cache=True)
def _epow(av, e):
    n = int(e)
    if e == n:
        return _ipow(av, n)
    return av ** e


@njit(cache=True)
def record_row(mon, row, t, dt, U, w_bulk, b_idx, mw_bulk, mw_surf,
               surfw, ew_bulk, ew_trace, m_exp, energy_on):
    m, N = U.shape
    B = b_idx.shape[0]
    mon[row, 0] = t
    mon[row, 1] = dt
    xinf = 0.0
    energy = 0.0
    for i in range(m):
        l1 = 0.0
        l2 = 0.0
        linf = 0.0
        for j in range(N):
            v = U[i, j]
            av = abs(v)
            l1 += w_bulk[j] * av
            l2 += w_bulk[j] * v * v
            if av > linf:
                linf = av
        if energy_on != 0:
            for j in range(N):
                energy += ew_bulk[j] * _epow(abs(U[i, j]), m_exp[i]) / m_exp[i]
        tl1 = 0.0
        tl2 = 0.0
        tlinf = 0.0
        mass = 0.0
        for b in range(B):
            v = U[i, b_idx[b]]
            av = abs(v)
            tl1 += surfw[b] * av
            tl2 += surfw[b] * v * v
            if av > tlinf:
                tlinf = av
            mass += mw_surf[i, b] * v
            if energy_on != 0:
                energy += ew_trace[b] * _epow(av, m_exp[i]) / m_exp[i]
        for j in range(N):
            mass += mw_bulk[j] * U[i, j]
        base = 2 + 7 * i
        mon[row, base + 0] = l1
        mon[row, base + 1] = np.sqrt(l2)
        mon[row, base + 2] = linf
        mon[row, base + 3] = tl1
        mon[row, base + 4] = np.sqrt(tl2)
        mon[row, base + 5] = tlinf
        mon[row, base + 6] = mass
        if linf > xinf:
            xinf = linf
        if tlinf > xinf:
            xinf = tlinf
    mon[row, 2 + 7 * m] = xinf
    mon[row, 2 + 7 * m + 1] = energy
    return xinf


@njit(cache=True)
def run_explicit_chunk(U, t0, t_target,
                       face_i, face_j, face_t, tsum,
                       w_bulk, w_react, M, free_mask,
                       b_idx, b_kind, b_bval, b_surfw, b_h2,
                       b_in1, b_in2, b_hsp, b_gforce, b_hforce,
                       dcode, dalpha, dp, deps, dmode,
                       f_coefs, f_expos, f_off, f_force,
                       g_coefs, g_expos, g_off,
                       h_coefs, h_expos, h_off,
                       df_coefs, df_expos, df_off,
                       dg_coefs, dg_expos, dg_off,
                       mw_bulk, mw_surf, ew_bulk, ew_trace, m_exp, energy_on,
                       cfl, min_dt, max_dt, blow_thr,
                       newton_tol, newton_max,
                       mon):
    """Heun steps from t0 toward t_target; monitors recorded per step.

    Returns (t_end, rows_written, status).
    """
    m, N = U.shape
    cap = mon.shape[0]
    RHS1 = np.empty((m, N))
    RHS2 = np.empty((m, N))
    Us = np.empty((m, N))
    A = np.empty(N)
    scratch = np.empty(N)
    t = t0
    row = 0
    while t < t_target - 1e-14 * max(1.0, abs(t_target)):
        if row >= cap:
            return t, row, STATUS_BUFFER
        dt = stable_dt(U, tsum, M, free_mask, w_react, b_idx, b_kind, b_surfw,
                       dcode, dalpha, dp, deps, dmode,
                       df_coefs, df_expos, df_off, dg_coefs, dg_expos, dg_off, cfl)
        if dt > max_dt:
            dt = max_dt
        if dt < min_dt:
            return t, row, STATUS_DT_UNDERFLOW
        if t + dt > t_target:
            dt = t_target - t

        rhs_eval(U, RHS1, A, face_i, face_j, face_t, w_react, M,
                 b_idx, b_kind, b_surfw, b_h2, b_gforce,
                 dcode, dalpha, dp, deps, dmode,
                 f_coefs, f_expos, f_off, f_force,
                 g_coefs, g_expos, g_off, scratch)
        for i in range(m):
            for j in range(N):
                Us[i, j] = U[i, j] + dt * RHS1[i, j]
        bad = apply_constraints(Us, b_idx, b_kind, b_bval, b_in1, b_in2, b_hsp,
                                h_coefs, h_expos, h_off, b_hforce,
                                g_coefs, g_expos, g_off, b_gforce, b_h2,
                                dcode, dalpha, dp, deps, dmode, newton_tol, newton_max)
        if bad != 0:
            return t, row, STATUS_FAILURE
        rhs_eval(Us, RHS2, A, face_i, face_j, face_t, w_react, M,
                 b_idx, b_kind, b_surfw, b_h2, b_gforce,
                 dcode, dalpha, dp, deps, dmode,
                 f_coefs, f_expos, f_off, f_force,
                 g_coefs, g_expos, g_off, scratch)
        for i in range(m):
            for j in range(N):
                U[i, j] = U[i, j] + 0.5 * dt * (RHS1[i, j] + RHS2[i, j])
        bad = apply_constraints(U, b_idx, b_kind, b_bval, b_in1, b_in2, b_hsp,
                                h_coefs, h_expos, h_off, b_hforce,
                                g_coefs, g_expos, g_off, b_gforce, b_h2,
                                dcode, dalpha, dp, deps, dmode, newton_tol, newton_max)
        if bad != 0:
            return t, row, STATUS_FAILURE
        t = t + dt
        ok = True
        for i in range(m):
            for j in range(N):
                if not np.isfinite(U[i, j]):
                    ok = False
        if not ok:
            return t, row, STATUS_FAILURE
        xinf = record_row(mon, row, t, dt, U, w_bulk, b_idx, mw_bulk, mw_surf,
                          b_surfw, ew_bulk, ew_trace, m_exp, energy_on)
        row += 1
        if xinf >= blow_thr:
            return t, row, STATUS_BLOWUP
    return t, row, STATUS_TARGET
