"""Time integration for the coupled bulk/boundary system.

The discretization is a vertex-centered finite-volume scheme (equivalently
mass-lumped P1 finite elements) on the mesh's face graph.  Node j carries
the combined mass

    M_ij = alpha(x_j) w_j + beta_i(x_j) s_j            (surface part only on
                                                        dynamic nodes)

and the semidiscrete system reads

    M_ij du_ij/dt = sum_faces t_f (A_i(u_k) - A_i(u_j))
                    - w_j (f_i(u) + forcing)
                    - s_j (g_i(u) + forcing - h2)      [dynamic nodes],

so with f = g = h2 = 0 the total mass sum_j M_ij u_ij telescopes over faces
and is conserved to rounding.  Static (Neumann-Robin) and zero-weight
dynamic nodes are algebraic constraints solved by a damped scalar Newton
after every stage; Dirichlet and frozen (psi = 0) nodes are pinned.

Explicit stepping is Heun's method with the adaptive parabolic step

    dt = CFL * h^2 / max a^eps      (uniform 1D; the general form uses the
                                     face-transmissibility row sums)

plus a reaction-rate limiter CFL / max|df_i/ds_i|, which keeps the cost of
integrating through a blow-up logarithmic in the peak norm.  A compiled
fast path covers autonomous polynomial reactions with closed-form
diffusion; everything else (tabulated laws, time-dependent forcing,
backward Euler) runs on a numpy reference path with identical semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .domain import FieldState, Mesh, _coefficient_values
from .model import DiffusionLaw, Expression, ModelError, Scenario, \
    evaluate_profile, regularize_diffusion

__all__ = [
    "SolverError", "SolverConfig", "MonitorConfig", "Status", "Trajectory",
    "step", "run", "detect_blowup", "MONITOR_FIELD_CHANNELS",
]

KIND_DIRICHLET = 0
KIND_STATIC = 1
KIND_DYNAMIC = 2
KIND_FROZEN = 3
KIND_BETA0 = 4

MONITOR_FIELD_CHANNELS = ("bulk_l1", "bulk_l2", "bulk_linf",
                          "trace_l1", "trace_l2", "trace_linf", "mass")


class SolverError(ValueError):
    pass


@dataclass
class SolverConfig:
    """Stepper settings.

    eps = None resolves to 1e-6 when any diffusion exponent p_i > 0 and to 0
    otherwise; laws that already carry a regularization are left alone.
    """

    method: str = "heun"            # "heun" | "backward_euler"
    cfl: float = 0.4
    eps: float | None = None
    reg_mode: str = "additive"
    blowup_threshold: float = 1e8
    newton_tol: float = 1e-10
    newton_max: int = 50
    min_dt: float = 1e-13
    max_dt: float = math.inf
    force_reference: bool = False   # disable the compiled path (testing)

    def __post_init__(self):
        if self.method not in ("heun", "backward_euler"):
            raise SolverError(f"unknown method {self.method!r}")
        if not (0.0 < self.cfl < 1.0):
            raise SolverError("cfl must lie in (0, 1)")
        if self.blowup_threshold <= 0:
            raise SolverError("blow-up threshold must be positive")
        if self.eps is not None and self.eps < 0:
            raise SolverError("eps must be >= 0")
        if not (0.0 < self.min_dt < self.max_dt):
            raise SolverError("need 0 < min_dt < max_dt")
        if self.newton_max < 1 or self.newton_tol <= 0:
            raise SolverError("invalid Newton settings")


@dataclass
class MonitorConfig:
    """snapshot_cadence = None stores 17 snapshots (horizon/16 spacing).

    energy_weight: optional (phi_bulk (N,), phi_trace (B,)) nodal values of
    the weight in E(t) = int phi sum_i |u_i|^{m_i}/m_i dmu; default is the
    uniform weight 1/mu(closure).
    """

    snapshot_cadence: float | None = None
    energy_weight: tuple | None = None
    record_energy: bool = True


@dataclass
class Status:
    """Terminal solver state: Completed | BlowUp | StepFailure."""

    kind: str
    t: float | None = None
    norm: float | None = None
    reason: str = ""

    @property
    def completed(self) -> bool:
        return self.kind == "Completed"

    @property
    def blew_up(self) -> bool:
        return self.kind == "BlowUp"


@dataclass
class Trajectory:
    """Monitor history (one row per accepted step plus the initial row),
    snapshots at the configured cadence, and the terminal status."""

    field_names: tuple
    channel_names: tuple
    monitor_matrix: np.ndarray      # (rows, channels)
    snapshots: list                 # FieldState, increasing t
    status: Status

    def channel(self, name: str) -> np.ndarray:
        return self.monitor_matrix[:, self.channel_names.index(name)]

    @property
    def times(self) -> np.ndarray:
        return self.channel("t")

    @property
    def xinf(self) -> np.ndarray:
        return self.channel("xinf")

    @property
    def final_state(self) -> FieldState:
        return self.snapshots[-1]

    def mass_drift(self, i: int = 0) -> float:
        mass = self.channel(f"{self.field_names[i]}.mass")
        return float(np.max(np.abs(mass - mass[0])))

    @property
    def n_steps(self) -> int:
        return self.monitor_matrix.shape[0] - 1


def _channel_names(field_names) -> tuple:
    names = ["t", "dt"]
    for name in field_names:
        names += [f"{name}.{c}" for c in MONITOR_FIELD_CHANNELS]
    return tuple(names + ["xinf", "energy"])


# ---------------------------------------------------------------------------
# problem compilation


def _stack_tables(exprs) -> tuple:
    m = len(exprs)
    coefs = [e.coefs for e in exprs]
    expos = [e.expos for e in exprs]
    off = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        off[i + 1] = off[i] + coefs[i].shape[0]
    return (np.concatenate(coefs) if off[-1] else np.zeros(0),
            np.vstack(expos) if off[-1] else np.zeros((0, m), dtype=np.int64),
            off)


@dataclass
class CompiledProblem:
    """Scenario lowered to plain arrays (shared by both execution paths)."""

    mesh: Mesh
    config: SolverConfig
    monitors: MonitorConfig
    field_names: tuple
    laws: list
    f_expr: list
    g_expr: list
    h_expr: list
    face_t: np.ndarray
    tsum: np.ndarray
    w_bulk: np.ndarray
    alpha_nodes: np.ndarray
    M: np.ndarray
    free_mask: np.ndarray
    b_kind: np.ndarray
    b_bval: np.ndarray
    b_h2: np.ndarray
    b_weight: np.ndarray
    mw_bulk: np.ndarray
    mw_surf: np.ndarray
    ew_bulk: np.ndarray
    ew_trace: np.ndarray
    m_exp: np.ndarray
    energy_on: int
    time_dependent: bool
    fast_ok: bool
    fast_reason: str
    tables: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.field_names)


def _as_expressions(entries, field_names) -> list:
    out = []
    for e in entries:
        out.append(e if isinstance(e, Expression) else Expression(e, field_names))
    return out


def compile_problem(scenario: Scenario) -> CompiledProblem:
    mesh = scenario.mesh
    config = scenario.solver if scenario.solver is not None else SolverConfig()
    monitors = scenario.monitors if scenario.monitors is not None else MonitorConfig()
    m = scenario.m
    N = mesh.n_nodes
    B = mesh.n_boundary
    coords = mesh.coords

    alpha_nodes = np.broadcast_to(
        _coefficient_values(scenario.alpha, coords), (N,)).astype(float)
    if np.any(alpha_nodes <= 0):
        raise SolverError("porosity alpha(x) must be positive on every node")
    Kf = np.broadcast_to(
        _coefficient_values(scenario.K, mesh.face_midpoints),
        (mesh.faces.shape[0],)).astype(float)
    if np.any(Kf <= 0):
        raise SolverError("permeability K(x) must be positive on every face")
    face_t = mesh.face_trans * Kf
    tsum = np.zeros(N)
    np.add.at(tsum, mesh.faces[:, 0], face_t)
    np.add.at(tsum, mesh.faces[:, 1], face_t)

    # regularization: explicit config.eps overrides, None means the default
    # 1e-6 for genuinely degenerate laws; pre-regularized laws are kept
    laws = []
    for d in scenario.diffusion:
        if d.eps > 0:
            laws.append(d)
            continue
        eps = config.eps
        if eps is None:
            eps = 1e-6 if d.p > 0 and d.form != "constant" else 0.0
        laws.append(regularize_diffusion(d, eps, config.reg_mode) if eps > 0 else d)

    f_expr = _as_expressions(scenario.reactions.f, scenario.field_names)
    g_expr = _as_expressions(scenario.reactions.g, scenario.field_names)
    h_expr = _as_expressions(scenario.reactions.h, scenario.field_names)

    b_kind = np.zeros((m, B), dtype=np.int8)
    b_bval = np.zeros((m, B))
    b_h2 = np.zeros((m, B))
    b_weight = np.zeros((m, B))
    surfw = mesh.surface_weights
    bcoords = coords[mesh.boundary_nodes]
    for i in range(m):
        bcs = scenario.boundary.per_field[i]
        for b in range(B):
            bc = bcs[mesh.b_side[b]]
            if bc.kind == "dirichlet":
                b_kind[i, b] = KIND_DIRICHLET
                b_bval[i, b] = bc.value
            elif bc.kind == "static":
                b_kind[i, b] = KIND_STATIC
            else:
                h2v = float(np.broadcast_to(
                    _coefficient_values(bc.h2, bcoords[b:b + 1]), (1,))[0])
                b_h2[i, b] = h2v
                if bc.psi_zero:
                    b_kind[i, b] = KIND_FROZEN
                    continue
                if bc.beta is not None:
                    w = float(np.broadcast_to(
                        _coefficient_values(bc.beta, bcoords[b:b + 1]), (1,))[0])
                else:
                    w = float(bc.delta)
                if w < 0:
                    raise SolverError("dynamic boundary weight must be >= 0")
                b_weight[i, b] = w
                b_kind[i, b] = KIND_DYNAMIC if w > 0 else KIND_BETA0

    M = alpha_nodes[None, :] * mesh.bulk_weights[None, :] * np.ones((m, 1))
    for i in range(m):
        dyn = b_kind[i] == KIND_DYNAMIC
        M[i, mesh.boundary_nodes[dyn]] += b_weight[i, dyn] * surfw[dyn]

    free_mask = np.ones((m, N), dtype=np.uint8)
    for i in range(m):
        pin = b_kind[i] != KIND_DYNAMIC
        free_mask[i, mesh.boundary_nodes[pin]] = 0

    mw_bulk = alpha_nodes * mesh.bulk_weights
    mw_surf = b_weight * surfw[None, :]
    mw_surf[b_kind != KIND_DYNAMIC] = 0.0

    m_exp = scenario.reactions.m_exp.astype(float)
    mu_total = float(np.sum(mesh.bulk_weights) + np.sum(surfw))
    if monitors.energy_weight is not None:
        phi_b, phi_t = monitors.energy_weight
        ew_bulk = np.asarray(phi_b, dtype=float) * mesh.bulk_weights
        ew_trace = np.asarray(phi_t, dtype=float) * surfw
    else:
        ew_bulk = mesh.bulk_weights / mu_total
        ew_trace = surfw / mu_total
    energy_on = 1 if monitors.record_energy else 0

    time_dependent = any(e.forcing_time_dependent for e in f_expr + g_expr + h_expr)

    fast_ok, fast_reason = True, ""
    if config.force_reference:
        fast_ok, fast_reason = False, "reference path forced"
    elif config.method != "heun":
        fast_ok, fast_reason = False, f"method {config.method}"
    elif any(law.kernel_code() < 0 for law in laws):
        fast_ok, fast_reason = False, "diffusion law without closed form"
    elif time_dependent:
        fast_ok, fast_reason = False, "time-dependent forcing"

    tables = {
        "f": _stack_tables(f_expr),
        "g": _stack_tables(g_expr),
        "h": _stack_tables(h_expr),
        "df": _stack_tables([e.diff(i) for i, e in enumerate(f_expr)]),
        "dg": _stack_tables([e.diff(i) for i, e in enumerate(g_expr)]),
        "f_force": np.vstack([e.forcing_values(coords, 0.0) for e in f_expr]),
        "g_force": np.vstack([e.forcing_values(bcoords, 0.0) for e in g_expr]),
        "h_force": np.vstack([e.forcing_values(bcoords, 0.0) for e in h_expr]),
    }

    return CompiledProblem(
        mesh=mesh, config=config, monitors=monitors,
        field_names=scenario.field_names, laws=laws,
        f_expr=f_expr, g_expr=g_expr, h_expr=h_expr,
        face_t=face_t, tsum=tsum, w_bulk=mesh.bulk_weights,
        alpha_nodes=alpha_nodes, M=M, free_mask=free_mask,
        b_kind=b_kind, b_bval=b_bval, b_h2=b_h2, b_weight=b_weight,
        mw_bulk=mw_bulk, mw_surf=mw_surf,
        ew_bulk=ew_bulk, ew_trace=ew_trace, m_exp=m_exp, energy_on=energy_on,
        time_dependent=time_dependent, fast_ok=fast_ok, fast_reason=fast_reason,
        tables=tables)


def _compiled(scenario: Scenario) -> CompiledProblem:
    prob = getattr(scenario, "_compiled_problem", None)
    if prob is not None:
        same_cfg = scenario.solver is None or scenario.solver is prob.config
        same_mon = scenario.monitors is None or scenario.monitors is prob.monitors
        if same_cfg and same_mon:
            return prob
    prob = compile_problem(scenario)
    scenario._compiled_problem = prob
    return prob


def initial_matrix(scenario: Scenario, prob: CompiledProblem) -> np.ndarray:
    """Nodal initial data; boundary nodes take v0 when given, Dirichlet and
    frozen parts are pinned afterwards (frozen captures v0)."""
    mesh = prob.mesh
    U = np.empty((prob.m, mesh.n_nodes))
    for i in range(prob.m):
        U[i] = evaluate_profile(scenario.initial[i], mesh.coords)
    if scenario.initial_trace is not None:
        bcoords = mesh.coords[mesh.boundary_nodes]
        for i, v0 in enumerate(scenario.initial_trace):
            if v0 is not None:
                U[i, mesh.boundary_nodes] = evaluate_profile(v0, bcoords)
    for i in range(prob.m):
        dirich = prob.b_kind[i] == KIND_DIRICHLET
        U[i, mesh.boundary_nodes[dirich]] = prob.b_bval[i, dirich]
        frozen = prob.b_kind[i] == KIND_FROZEN
        prob.b_bval[i, frozen] = U[i, mesh.boundary_nodes[frozen]]
    return U


def _state_from(U: np.ndarray, t: float, mesh: Mesh, blown_up=False) -> FieldState:
    return FieldState(t=t, bulk=U.copy(), trace=U[:, mesh.boundary_nodes].copy(),
                      blown_up=blown_up)


# ---------------------------------------------------------------------------
# reference path (numpy; mirrors the compiled kernels, plus time-dependent
# forcing, tabulated diffusion and backward Euler)


def _forcing_now(prob: CompiledProblem, t: float) -> tuple:
    if not prob.time_dependent:
        return prob.tables["f_force"], prob.tables["g_force"], prob.tables["h_force"]
    coords = prob.mesh.coords
    bcoords = coords[prob.mesh.boundary_nodes]
    ff = np.vstack([e.forcing_values(coords, t) for e in prob.f_expr])
    gf = np.vstack([e.forcing_values(bcoords, t) for e in prob.g_expr])
    hf = np.vstack([e.forcing_values(bcoords, t) for e in prob.h_expr])
    return ff, gf, hf


def _rhs_reference(U: np.ndarray, t: float, prob: CompiledProblem) -> np.ndarray:
    mesh = prob.mesh
    fi, fj = mesh.faces[:, 0], mesh.faces[:, 1]
    ff, gf, _ = _forcing_now(prob, t)
    RHS = np.zeros_like(U)
    for i in range(prob.m):
        A = prob.laws[i].primitive(U[i])
        flux = prob.face_t * (A[fj] - A[fi])
        np.add.at(RHS[i], fi, flux)
        np.add.at(RHS[i], fj, -flux)
    Sb = U[:, mesh.boundary_nodes]
    for i in range(prob.m):
        fv = prob.f_expr[i].state_part(U) + ff[i]
        RHS[i] -= prob.w_bulk * fv
        dyn = prob.b_kind[i] == KIND_DYNAMIC
        if np.any(dyn):
            gv = prob.g_expr[i].state_part(Sb) + gf[i]
            nodes = mesh.boundary_nodes[dyn]
            RHS[i, nodes] -= mesh.surface_weights[dyn] * (gv[dyn] - prob.b_h2[i, dyn])
        RHS[i] /= prob.M[i]
        RHS[i, mesh.boundary_nodes[prob.b_kind[i] != KIND_DYNAMIC]] = 0.0
    return RHS


def _constraints_reference(U: np.ndarray, t: float, prob: CompiledProblem) -> str:
    """Pin Dirichlet/frozen, Newton-solve static and beta=0 nodes in place.
    Returns "" or a failure reason."""
    mesh = prob.mesh
    _, gf, hf = _forcing_now(prob, t)
    cfg = prob.config
    for i in range(prob.m):
        law = prob.laws[i]
        for b in range(mesh.n_boundary):
            kind = prob.b_kind[i, b]
            node = mesh.boundary_nodes[b]
            if kind in (KIND_DIRICHLET, KIND_FROZEN):
                U[i, node] = prob.b_bval[i, b]
                continue
            if kind not in (KIND_STATIC, KIND_BETA0):
                continue
            n1, n2 = mesh.b_inward1[b], mesh.b_inward2[b]
            hh = mesh.b_spacing[b]
            s = U[:, node].copy()

            def G(u):
                # residual plus the magnitude scale of its terms (the stencil
                # cancels near the root, so |G| alone cannot set a tolerance)
                d_in = (-3.0 * u + 4.0 * U[i, n1] - U[i, n2]) / (2.0 * hh)
                mags = (3.0 * abs(u) + 4.0 * abs(U[i, n1]) + abs(U[i, n2])) / (2.0 * hh)
                s[i] = u
                if kind == KIND_STATIC:
                    hv = prob.h_expr[i].state_part(s.reshape(-1, 1))[0] + hf[i, b]
                    return hv - d_in, 1.0 + mags + abs(hv)
                gv = prob.g_expr[i].state_part(s.reshape(-1, 1))[0] + gf[i, b]
                a_u = float(law.a(u))
                return (-a_u * d_in + gv - prob.b_h2[i, b],
                        1.0 + a_u * mags + abs(gv) + abs(prob.b_h2[i, b]))

            u = U[i, node]
            ok = False
            val, scale = 0.0, 1.0
            for _ in range(cfg.newton_max):
                val, scale = G(u)
                if abs(val) <= cfg.newton_tol * scale:
                    ok = True
                    break
                du = 1e-7 * (1.0 + abs(u))
                slope = (G(u + du)[0] - val) / du
                if slope == 0.0 or not np.isfinite(slope):
                    return f"singular constraint at node {node}, field {i}"
                step_len, lam = -val / slope, 1.0
                moved = False
                for _ in range(30):
                    cand = u + lam * step_len
                    if np.isfinite(cand) and abs(G(cand)[0]) < abs(val):
                        u, moved = cand, True
                        break
                    lam *= 0.5
                if not moved:
                    break
            if not ok:
                if abs(val) > 100.0 * cfg.newton_tol * scale:
                    return f"constraint Newton stalled at node {node}, field {i}"
            U[i, node] = u
    return ""


def _stable_dt_reference(U: np.ndarray, prob: CompiledProblem) -> float:
    mesh = prob.mesh
    cfg = prob.config
    dt = math.inf
    Sb = U[:, mesh.boundary_nodes]
    for i in range(prob.m):
        free = prob.free_mask[i].astype(bool)
        a_vals = prob.laws[i].a(U[i, free])
        geo = np.max(a_vals * prob.tsum[free] / prob.M[i, free])
        if geo > 0:
            dt = min(dt, 2.0 * cfg.cfl / geo)
        dfe = prob.f_expr[i].diff(i)
        if dfe.coefs.size:
            rate = np.abs(dfe.state_part(U)) * prob.w_bulk / prob.M[i]
            r = np.max(rate[free])
            if r > 0:
                dt = min(dt, cfg.cfl / r)
        dge = prob.g_expr[i].diff(i)
        dyn = prob.b_kind[i] == KIND_DYNAMIC
        if dge.coefs.size and np.any(dyn):
            nodes = mesh.boundary_nodes[dyn]
            rate = np.abs(dge.state_part(Sb[:, dyn])) * mesh.surface_weights[dyn] \
                / prob.M[i, nodes]
            r = np.max(rate)
            if r > 0:
                dt = min(dt, cfg.cfl / r)
    return dt


def _monitor_row(U: np.ndarray, t: float, dt: float, prob: CompiledProblem) -> np.ndarray:
    mesh = prob.mesh
    m = prob.m
    row = np.empty(2 + 7 * m + 2)
    row[0], row[1] = t, dt
    Sb = U[:, mesh.boundary_nodes]
    xinf = 0.0
    energy = 0.0
    for i in range(m):
        au = np.abs(U[i])
        ab = np.abs(Sb[i])
        row[2 + 7 * i + 0] = np.sum(prob.w_bulk * au)
        row[2 + 7 * i + 1] = math.sqrt(np.sum(prob.w_bulk * U[i] * U[i]))
        row[2 + 7 * i + 2] = np.max(au)
        row[2 + 7 * i + 3] = np.sum(mesh.surface_weights * ab)
        row[2 + 7 * i + 4] = math.sqrt(np.sum(mesh.surface_weights * Sb[i] * Sb[i]))
        row[2 + 7 * i + 5] = np.max(ab)
        row[2 + 7 * i + 6] = np.sum(prob.mw_bulk * U[i]) + np.sum(prob.mw_surf[i] * Sb[i])
        xinf = max(xinf, row[2 + 7 * i + 2], row[2 + 7 * i + 5])
        if prob.energy_on:
            e = prob.m_exp[i]
            energy += np.sum(prob.ew_bulk * au ** e) / e
            energy += np.sum(prob.ew_trace * ab ** e) / e
    row[2 + 7 * m] = xinf
    row[2 + 7 * m + 1] = energy
    return row


def _heun_reference_chunk(U, t, t_target, prob, rows) -> tuple:
    """Returns (t_end, status_code) mirroring the compiled chunk."""
    cfg = prob.config
    tiny = 1e-14 * max(1.0, abs(t_target))
    while t < t_target - tiny:
        dt = min(_stable_dt_reference(U, prob), cfg.max_dt)
        if dt < cfg.min_dt:
            return t, 4
        dt = min(dt, t_target - t)
        R1 = _rhs_reference(U, t, prob)
        Us = U + dt * R1
        why = _constraints_reference(Us, t + dt, prob)
        if why:
            return t, 3
        R2 = _rhs_reference(Us, t + dt, prob)
        U += 0.5 * dt * (R1 + R2)
        why = _constraints_reference(U, t + dt, prob)
        if why:
            return t, 3
        t += dt
        if not np.all(np.isfinite(U)):
            return t, 3
        row = _monitor_row(U, t, dt, prob)
        rows.append(row)
        if row[2 + 7 * prob.m] >= cfg.blowup_threshold:
            return t, 2
    return t, 0


# -- backward Euler ---------------------------------------------------------


def _be_residual(V, U, dt, t1, prob) -> np.ndarray:
    """Rows: free nodes M(V-U) - dt*RHS_raw(V); constrained nodes G(V)."""
    mesh = prob.mesh
    m, N = V.shape
    fi, fj = mesh.faces[:, 0], mesh.faces[:, 1]
    ff, gf, hf = _forcing_now(prob, t1)
    R = np.zeros_like(V)
    Sb = V[:, mesh.boundary_nodes]
    for i in range(m):
        A = prob.laws[i].primitive(V[i])
        raw = np.zeros(N)
        flux = prob.face_t * (A[fj] - A[fi])
        np.add.at(raw, fi, flux)
        np.add.at(raw, fj, -flux)
        raw -= prob.w_bulk * (prob.f_expr[i].state_part(V) + ff[i])
        dyn = prob.b_kind[i] == KIND_DYNAMIC
        if np.any(dyn):
            gv = prob.g_expr[i].state_part(Sb) + gf[i]
            raw[mesh.boundary_nodes[dyn]] -= mesh.surface_weights[dyn] \
                * (gv[dyn] - prob.b_h2[i, dyn])
        R[i] = prob.M[i] * (V[i] - U[i]) - dt * raw
        for b in range(mesh.n_boundary):
            kind = prob.b_kind[i, b]
            node = mesh.boundary_nodes[b]
            if kind == KIND_DYNAMIC:
                continue
            if kind in (KIND_DIRICHLET, KIND_FROZEN):
                R[i, node] = V[i, node] - prob.b_bval[i, b]
                continue
            n1, n2 = mesh.b_inward1[b], mesh.b_inward2[b]
            hh = mesh.b_spacing[b]
            d_in = (-3.0 * V[i, node] + 4.0 * V[i, n1] - V[i, n2]) / (2.0 * hh)
            s = V[:, node].reshape(-1, 1)
            if kind == KIND_STATIC:
                R[i, node] = prob.h_expr[i].state_part(s)[0] + hf[i, b] - d_in
            else:
                R[i, node] = -float(prob.laws[i].a(V[i, node])) * d_in \
                    + prob.g_expr[i].state_part(s)[0] + gf[i, b] - prob.b_h2[i, b]
    return R


def _be_jacobian(V, dt, t1, prob) -> sparse.csr_matrix:
    mesh = prob.mesh
    m, N = V.shape
    fi, fj = mesh.faces[:, 0], mesh.faces[:, 1]
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    dF = [[prob.f_expr[i].diff(k) for k in range(m)] for i in range(m)]
    dG = [[prob.g_expr[i].diff(k) for k in range(m)] for i in range(m)]
    dH = [[prob.h_expr[i].diff(k) for k in range(m)] for i in range(m)]
    Sb = V[:, mesh.boundary_nodes]
    for i in range(m):
        base = i * N
        law = prob.laws[i]
        a_nodes = np.asarray(law.a(V[i]), dtype=float)
        constrained = np.zeros(N, dtype=bool)
        constrained[mesh.boundary_nodes[prob.b_kind[i] != KIND_DYNAMIC]] = True
        # mass + flux
        for j in range(N):
            if not constrained[j]:
                add(base + j, base + j, prob.M[i, j])
        for f in range(fi.shape[0]):
            a0, b0 = fi[f], fj[f]
            tf = prob.face_t[f]
            if not constrained[a0]:
                add(base + a0, base + b0, -dt * tf * a_nodes[b0])
                add(base + a0, base + a0, dt * tf * a_nodes[a0])
            if not constrained[b0]:
                add(base + b0, base + a0, -dt * tf * a_nodes[a0])
                add(base + b0, base + b0, dt * tf * a_nodes[b0])
        # reactions
        for k in range(m):
            dfv = dF[i][k].state_part(V)
            if np.ndim(dfv) and np.any(dfv):
                for j in range(N):
                    if not constrained[j] and dfv[j]:
                        add(base + j, k * N + j, dt * prob.w_bulk[j] * dfv[j])
            dyn = prob.b_kind[i] == KIND_DYNAMIC
            if np.any(dyn):
                dgv = dG[i][k].state_part(Sb)
                for b in np.nonzero(dyn)[0]:
                    node = mesh.boundary_nodes[b]
                    if dgv[b]:
                        add(base + node, k * N + node,
                            dt * mesh.surface_weights[b] * dgv[b])
        # constrained rows
        for b in range(mesh.n_boundary):
            kind = prob.b_kind[i, b]
            node = mesh.boundary_nodes[b]
            if kind == KIND_DYNAMIC:
                continue
            if kind in (KIND_DIRICHLET, KIND_FROZEN):
                add(base + node, base + node, 1.0)
                continue
            n1, n2 = mesh.b_inward1[b], mesh.b_inward2[b]
            hh = mesh.b_spacing[b]
            s = V[:, node]
            if kind == KIND_STATIC:
                add(base + node, base + node, 3.0 / (2.0 * hh)
                    + dH[i][i].state_part(s.reshape(-1, 1))[0])
                add(base + node, base + n1, -4.0 / (2.0 * hh))
                add(base + node, base + n2, 1.0 / (2.0 * hh))
                for k in range(m):
                    if k != i:
                        dv = dH[i][k].state_part(s.reshape(-1, 1))[0]
                        if dv:
                            add(base + node, k * N + node, dv)
            else:
                u = V[i, node]
                d_in = (-3.0 * u + 4.0 * V[i, n1] - V[i, n2]) / (2.0 * hh)
                a_u = float(law.a(u))
                du = 1e-6 * (1.0 + abs(u))
                a_p = (float(law.a(u + du)) - a_u) / du
                add(base + node, base + node, -a_p * d_in + a_u * 3.0 / (2.0 * hh)
                    + dG[i][i].state_part(s.reshape(-1, 1))[0])
                add(base + node, base + n1, -a_u * 4.0 / (2.0 * hh))
                add(base + node, base + n2, a_u * 1.0 / (2.0 * hh))
                for k in range(m):
                    if k != i:
                        dv = dG[i][k].state_part(s.reshape(-1, 1))[0]
                        if dv:
                            add(base + node, k * N + node, dv)
    n = m * N
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _be_step(U, t, dt, prob):
    """One backward Euler step by damped Newton; returns (V, reason)."""
    cfg = prob.config
    V = U.copy()
    R = _be_residual(V, U, dt, t + dt, prob)
    r0 = np.linalg.norm(R)
    tol = cfg.newton_tol * (1.0 + r0)
    for _ in range(cfg.newton_max):
        rn = np.linalg.norm(R)
        if rn <= tol:
            return V, ""
        J = _be_jacobian(V, dt, t + dt, prob)
        try:
            delta = spsolve(J.tocsr(), -R.ravel()).reshape(V.shape)
        except RuntimeError as e:
            return None, f"linear solve failed: {e}"
        if not np.all(np.isfinite(delta)):
            return None, "singular Newton step"
        lam, moved = 1.0, False
        for _ in range(30):
            Vt = V + lam * delta
            Rt = _be_residual(Vt, U, dt, t + dt, prob)
            if np.all(np.isfinite(Rt)) and np.linalg.norm(Rt) < rn:
                V, R, moved = Vt, Rt, True
                break
            lam *= 0.5
        if not moved:
            return None, "Newton line search stalled"
    if np.linalg.norm(R) <= 100.0 * tol:
        return V, ""
    return None, "Newton did not converge"


def _be_chunk(U, t, t_target, prob, rows) -> tuple:
    cfg = prob.config
    base_dt = cfg.max_dt if math.isfinite(cfg.max_dt) else max(
        (t_target - t) / 200.0, cfg.min_dt)
    tiny = 1e-14 * max(1.0, abs(t_target))
    while t < t_target - tiny:
        dt = min(base_dt, t_target - t)
        while True:
            V, why = _be_step(U, t, dt, prob)
            if V is not None:
                break
            dt *= 0.5
            if dt < cfg.min_dt:
                return t, 3
        U[:] = V
        t += dt
        row = _monitor_row(U, t, dt, prob)
        rows.append(row)
        if row[2 + 7 * prob.m] >= cfg.blowup_threshold:
            return t, 2
    return t, 0


# ---------------------------------------------------------------------------
# public operations


def step(state: FieldState, scenario: Scenario, dt: float) -> FieldState:
    """Advance one step of the configured scheme (reference path)."""
    prob = _compiled(scenario)
    cfg = prob.config
    if not (cfg.min_dt <= dt <= cfg.max_dt) or dt <= 0:
        raise SolverError(f"dt = {dt} outside configured bounds")
    U = state.bulk.copy()
    U[:, prob.mesh.boundary_nodes] = state.trace
    t = state.t
    if cfg.method == "backward_euler":
        V, why = _be_step(U, t, dt, prob)
        if V is None:
            raise SolverError(f"backward Euler step failed: {why}")
        return _state_from(V, t + dt, prob.mesh)
    R1 = _rhs_reference(U, t, prob)
    Us = U + dt * R1
    why = _constraints_reference(Us, t + dt, prob)
    if why:
        raise SolverError(why)
    R2 = _rhs_reference(Us, t + dt, prob)
    U = U + 0.5 * dt * (R1 + R2)
    why = _constraints_reference(U, t + dt, prob)
    if why:
        raise SolverError(why)
    return _state_from(U, t + dt, prob.mesh)


def _snapshot_targets(horizon: float, cadence: float | None) -> np.ndarray:
    if cadence is None:
        cadence = horizon / 16.0
    if cadence <= 0:
        raise SolverError("snapshot cadence must be positive")
    k = int(math.floor(horizon / cadence + 1e-9))
    pts = [min(j * cadence, horizon) for j in range(1, k + 1)]
    if not pts or pts[-1] < horizon - 1e-12 * horizon:
        pts.append(horizon)
    return np.array(pts)


def _run_fast(U, targets, prob, rows, snapshots) -> tuple:
    from . import _kernels as knl
    mesh = prob.mesh
    cfg = prob.config
    tab = prob.tables
    cap = 200_000
    mon = np.empty((cap, 2 + 7 * prob.m + 2))
    dcode = np.array([law.kernel_code() for law in prob.laws], dtype=np.int64)
    dalpha = np.array([law.alpha for law in prob.laws])
    dp = np.array([law.p for law in prob.laws])
    deps = np.array([law.eps for law in prob.laws])
    dmode = np.array([0 if law.reg_mode == "additive" else 1 for law in prob.laws],
                     dtype=np.int64)
    args_static = (
        mesh.faces[:, 0].copy(), mesh.faces[:, 1].copy(), prob.face_t, prob.tsum,
        prob.w_bulk, prob.w_bulk, prob.M, prob.free_mask,
        mesh.boundary_nodes, prob.b_kind, prob.b_bval, mesh.surface_weights,
        prob.b_h2, mesh.b_inward1, mesh.b_inward2, mesh.b_spacing,
        tab["g_force"], tab["h_force"],
        dcode, dalpha, dp, deps, dmode,
        *tab["f"], tab["f_force"], *tab["g"], *tab["h"], *tab["df"], *tab["dg"],
        prob.mw_bulk, prob.mw_surf, prob.ew_bulk, prob.ew_trace, prob.m_exp,
        prob.energy_on,
        cfg.cfl, cfg.min_dt, min(cfg.max_dt, 1e300), cfg.blowup_threshold,
        cfg.newton_tol, cfg.newton_max)
    t = 0.0
    for target in targets:
        while t < target - 1e-14 * max(1.0, target):
            t, n, code = knl.run_explicit_chunk(U, t, target, *args_static, mon)
            if n:
                rows.append(mon[:n].copy())
            if code == 1:
                continue
            if code != 0:
                return t, code
        snapshots.append(_state_from(U, t, mesh))
    return t, 0


def _run_reference(U, targets, prob, rows, snapshots) -> tuple:
    chunk = _be_chunk if prob.config.method == "backward_euler" else _heun_reference_chunk
    t = 0.0
    for target in targets:
        buf = []
        t, code = chunk(U, t, target, prob, buf)
        if buf:
            rows.append(np.vstack(buf))
        if code != 0:
            return t, code
        snapshots.append(_state_from(U, t, prob.mesh))
    return t, 0


def run(scenario: Scenario) -> Trajectory:
    """Integrate to the horizon; never raises for dynamics failures, the
    terminal condition is reported in Trajectory.status."""
    prob = _compiled(scenario)
    U = initial_matrix(scenario, prob)
    names = _channel_names(prob.field_names)
    rows = [_monitor_row(U, 0.0, 0.0, prob).reshape(1, -1)]
    snapshots = [_state_from(U, 0.0, prob.mesh)]
    targets = _snapshot_targets(scenario.horizon,
                                prob.monitors.snapshot_cadence)
    if float(rows[0][0, 2 + 7 * prob.m]) >= prob.config.blowup_threshold:
        t, code = 0.0, 2
    elif prob.fast_ok:
        t, code = _run_fast(U, targets, prob, rows, snapshots)
    else:
        t, code = _run_reference(U, targets, prob, rows, snapshots)

    mon = np.vstack(rows)

    def terminal(snap):
        # keep snapshot times strictly increasing
        if snapshots and snapshots[-1].t >= snap.t:
            snapshots[-1] = snap
        else:
            snapshots.append(snap)

    if code == 0:
        status = Status("Completed", t=t)
    elif code == 2:
        status = Status("BlowUp", t=t, norm=float(mon[-1, 2 + 7 * prob.m]),
                        reason="norm reached threshold")
        terminal(_state_from(U, t, prob.mesh, blown_up=True))
    elif code == 4:
        xs = mon[:, 2 + 7 * prob.m]
        back = xs[max(0, len(xs) - 50)]
        if xs[-1] > 1.1 * max(back, 1e-300):
            status = Status("BlowUp", t=t, norm=float(xs[-1]),
                            reason="dt underflow with growing norm")
            terminal(_state_from(U, t, prob.mesh, blown_up=True))
        else:
            status = Status("StepFailure", t=t, reason="dt underflow")
            terminal(_state_from(U, t, prob.mesh))
    else:
        status = Status("StepFailure", t=t, reason="non-finite state or Newton failure")
        if np.all(np.isfinite(U)):
            terminal(_state_from(U, t, prob.mesh))
    return Trajectory(field_names=prob.field_names, channel_names=names,
                      monitor_matrix=mon, snapshots=snapshots, status=status)


def detect_blowup(series, threshold: float = 1e8, times=None) -> Status:
    """First sample with |value| >= threshold (closed) wins; non-finite
    samples count as blown up."""
    vals = np.asarray(series, dtype=float)
    if threshold <= 0:
        raise SolverError("blow-up threshold must be positive")
    hit = ~np.isfinite(vals) | (np.abs(vals) >= threshold)
    if not np.any(hit):
        return Status("Completed")
    k = int(np.argmax(hit))
    t = float(times[k]) if times is not None else float(k)
    norm = float(vals[k]) if np.isfinite(vals[k]) else math.inf
    return Status("BlowUp", t=t, norm=norm)
