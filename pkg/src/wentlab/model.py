"""Problem specification: diffusion laws, reaction terms, boundary assignments.

A Scenario fixes the coupled system

    d_t u_i - Lap(A_i(u_i)) + f_i(x,t,u) = 0            in Omega,
    d_n u_i + h_i(x,t,u) = 0                            on static parts,
    delta_i d_t u_i + d_n(A_i(u_i)) + g_i(x,t,u) = h2   on dynamic parts,
    u_i = value                                         on Dirichlet parts,

together with coefficient fields alpha(x), K(x), initial data and solver
settings.  Reaction terms are multivariate polynomials in the field values
plus an optional additive (x,t) forcing; this keeps the structural
assumptions (A1)-(A3bis), (ga) decidable by deterministic sampling.

The epsilon-regularization offers two modes.  The literal shift
a^eps(s) = a(s+eps) fails strict positivity for even-power laws (it has a
root at s = -eps), so the default is additive a(s)+eps; the shift mode sets
a warning flag whenever the sampled minimum of a(s+eps) drops below eps/2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp
from scipy import integrate
from scipy.stats import qmc

__all__ = [
    "ModelError", "DiffusionLaw", "Expression", "ReactionSpec",
    "BoundaryCondition", "BoundaryAssignment", "Scenario", "AssumptionReport",
    "validate_assumptions", "regularize_diffusion", "darcy_diffusivity",
    "exponents_delta_gamma",
]

DIFFUSION_FORMS = ("constant", "power", "bounded_power", "monomial", "tabulated")
BC_KINDS = ("dirichlet", "static", "dynamic")


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# diffusion laws


@dataclass
class DiffusionLaw:
    """One field's diffusivity a(s) with primitive A(s) = int_0^s a.

    forms:
        constant        a(s) = alpha
        power           a(s) = alpha*|s|**p
        bounded_power   alpha*|s|**p <= a(s) <= sigma*|s|**p
                        (representative a(s) = c(s)|s|**p with
                         c(s) = (alpha+sigma)/2 + (sigma-alpha)/2 * s^2/(1+s^2))
        monomial        a(s) = alpha*s**p  (integer p; Darcy closures)
        tabulated       a(s) = fn(s), primitive by quadrature

    eps/reg_mode record the regularization: additive a+eps or shift a(s+eps).
    """

    form: str
    alpha: float = 1.0
    p: float = 0.0
    sigma: float | None = None
    fn: object = None
    eps: float = 0.0
    reg_mode: str = "additive"
    reg_warning: bool = False

    def __post_init__(self):
        if self.form not in DIFFUSION_FORMS:
            raise ModelError(f"unknown diffusion form {self.form!r}")
        if self.form != "monomial" and self.alpha <= 0:
            raise ModelError("diffusion constant alpha must be positive")
        if self.p < 0:
            raise ModelError("diffusion exponent p must be >= 0")
        if self.form == "bounded_power":
            if self.sigma is None or self.sigma < self.alpha:
                raise ModelError("bounded_power requires sigma >= alpha")
        if self.form == "tabulated" and not callable(self.fn):
            raise ModelError("tabulated form requires a callable fn")
        if self.form == "monomial" and abs(self.p - round(self.p)) > 1e-12:
            raise ModelError("monomial form requires an integer exponent")

    # -- base law (without regularization) ---------------------------------
    def _a0(self, s):
        s = np.asarray(s, dtype=float)
        if self.form == "constant":
            return np.full_like(s, self.alpha)
        if self.form == "power":
            return self.alpha * np.abs(s) ** self.p
        if self.form == "bounded_power":
            c = 0.5 * (self.alpha + self.sigma) \
                + 0.5 * (self.sigma - self.alpha) * s * s / (1.0 + s * s)
            return c * np.abs(s) ** self.p
        if self.form == "monomial":
            return self.alpha * s ** self.p
        return np.asarray(self.fn(s), dtype=float)

    def _A0(self, s):
        s = np.asarray(s, dtype=float)
        if self.form == "constant":
            return self.alpha * s
        if self.form == "power":
            return self.alpha * np.sign(s) * np.abs(s) ** (self.p + 1.0) / (self.p + 1.0)
        if self.form == "monomial":
            return self.alpha * s ** (self.p + 1.0) / (self.p + 1.0)
        return self._quad_primitive(s)

    def _quad_primitive(self, s):
        scalar = np.ndim(s) == 0
        vals = np.atleast_1d(s).astype(float)
        out = np.empty_like(vals)
        for k, v in enumerate(vals.ravel()):
            out.ravel()[k] = integrate.quad(
                lambda t: float(self._a0(t)), 0.0, v,
                epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        return float(out[0]) if scalar else out

    # -- regularized law ----------------------------------------------------
    def a(self, s):
        """Regularized diffusivity a^eps(s)."""
        if self.eps == 0.0:
            return self._a0(s)
        if self.reg_mode == "additive":
            return self._a0(s) + self.eps
        return self._a0(np.asarray(s, dtype=float) + self.eps)

    def primitive(self, s):
        """A^eps(s) = int_0^s a^eps, consistent with a(); A^eps(0) = 0."""
        if self.eps == 0.0:
            return self._A0(s)
        if self.reg_mode == "additive":
            return self._A0(s) + self.eps * np.asarray(s, dtype=float)
        sh = np.asarray(s, dtype=float) + self.eps
        return self._A0(sh) - self._A0(self.eps)

    def kernel_code(self) -> int:
        """Integer form code for the compiled solver kernels (-1: unsupported)."""
        return {"constant": 0, "power": 1, "monomial": 3}.get(self.form, -1)


def regularize_diffusion(diffusion: DiffusionLaw, eps: float, mode: str = "additive") -> DiffusionLaw:
    """Return the eps-regularized law; mode in {additive, shift}.

    Shift mode is the literal a(s+eps); it sets reg_warning (and emits a
    UserWarning) when the sampled minimum of a(s+eps) is below eps/2, which
    happens for every even-power law.
    """
    if eps <= 0:
        raise ModelError("regularization eps must be positive")
    if mode not in ("additive", "shift"):
        raise ModelError(f"unknown regularization mode {mode!r}")
    law = replace(diffusion, eps=float(eps), reg_mode=mode, reg_warning=False)
    if mode == "shift":
        grid = np.concatenate([np.linspace(-10.0, 10.0, 4001),
                               [-eps, -0.5 * eps, -2.0 * eps, 0.0]])
        amin = float(np.min(law.a(grid)))
        if amin < eps / 2.0:
            law.reg_warning = True
            warnings.warn(
                f"shift regularization: min a(s+eps) = {amin:.3e} < eps/2; "
                "strict positivity fails (use additive mode)", UserWarning)
    return law


def darcy_diffusivity(b, coef: float = 1.0, exponent: float | None = None) -> DiffusionLaw:
    """Diffusion law a(u) = u*b(u) from an equation of state b.

    Arguments:
        b: callable equation of state, or None when (coef, exponent) declare
           the power law b(u) = coef*u**exponent.
    Returns a closed-form law for power b; otherwise a tabulated law whose
    primitive is computed by quadrature.
    """
    if exponent is not None:
        q = float(exponent)
        p = q + 1.0
        if abs(q - round(q)) < 1e-12 and int(round(p)) % 2 == 0:
            # even monomial u**p == |u|**p: genuine (A1) power form
            return DiffusionLaw("power", alpha=coef, p=p)
        if abs(q - round(q)) < 1e-12:
            return DiffusionLaw("monomial", alpha=coef, p=p)
        return DiffusionLaw("tabulated", alpha=coef, p=p,
                            fn=lambda u, c=coef, q=q: c * u * np.abs(u) ** q)
    if not callable(b):
        raise ModelError("darcy_diffusivity needs a callable b or an exponent")
    return DiffusionLaw("tabulated", fn=lambda u, b=b: np.asarray(u) * np.asarray(b(u)))


# ---------------------------------------------------------------------------
# reaction expressions

_XT = sp.symbols("x y t")


class Expression:
    """Polynomial in the field values plus optional additive (x,t) forcing.

    Built from a number, a string, or a sympy expression over the declared
    field names (and x, y, t for the forcing part).  Mixed terms such as
    x*u are rejected: the structural assumptions quantify over the state
    variables with forcing folded into the constants.
    """

    def __init__(self, source, field_names):
        self.field_names = tuple(field_names)
        syms = sp.symbols(" ".join(self.field_names), seq=True)
        self.symbols = tuple(syms)
        local = {n: s for n, s in zip(self.field_names, syms)}
        local.update({"x": _XT[0], "y": _XT[1], "t": _XT[2],
                      "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "pi": sp.pi})
        try:
            if isinstance(source, str):
                expr = sp.sympify(source, locals=local)
            else:
                expr = sp.sympify(source)
        except (sp.SympifyError, SyntaxError, TypeError) as e:
            raise ModelError(f"cannot parse reaction expression {source!r}: {e}") from e

        state_syms = set(syms)
        xt_syms = set(_XT)
        poly_part = sp.Integer(0)
        forcing = sp.Integer(0)
        for term in sp.Add.make_args(sp.expand(expr)):
            free = term.free_symbols
            if free & state_syms and free & xt_syms:
                raise ModelError(
                    f"term {term} mixes state variables with (x,t); "
                    "only additive forcing is supported")
            if free & xt_syms:
                forcing += term
            else:
                poly_part += term
        try:
            poly = sp.Poly(poly_part, *syms) if syms else None
        except sp.PolynomialError as e:
            raise ModelError(f"reaction term {poly_part} is not polynomial "
                             f"in {self.field_names}: {e}") from e

        self.sympy_expr = expr
        self.forcing_expr = forcing if forcing != 0 else None
        m = len(self.field_names)
        if poly is None or poly.is_zero:
            self.coefs = np.zeros(0)
            self.expos = np.zeros((0, m), dtype=np.int64)
        else:
            terms = poly.terms()
            self.coefs = np.array([float(c) for _, c in terms])
            self.expos = np.array([list(e) for e, _ in terms], dtype=np.int64)
        self._forcing_fn = (sp.lambdify(_XT, self.forcing_expr, "numpy")
                            if self.forcing_expr is not None else None)

    @property
    def is_zero(self) -> bool:
        return self.coefs.size == 0 and self.forcing_expr is None

    @property
    def has_forcing(self) -> bool:
        return self.forcing_expr is not None

    @property
    def forcing_time_dependent(self) -> bool:
        return self.forcing_expr is not None and _XT[2] in self.forcing_expr.free_symbols

    def state_part(self, S) -> np.ndarray:
        """Evaluate the polynomial part; S has shape (m, ...)."""
        S = np.asarray(S, dtype=float)
        out = np.zeros(S.shape[1:])
        for c, e in zip(self.coefs, self.expos):
            term = np.full(S.shape[1:], c)
            for i, ei in enumerate(e):
                if ei:
                    term = term * S[i] ** int(ei)
            out += term
        return out

    def forcing_values(self, coords: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Forcing sampled at node coordinates (n, dim)."""
        n = coords.shape[0]
        if self._forcing_fn is None:
            return np.zeros(n)
        x = coords[:, 0]
        y = coords[:, 1] if coords.shape[1] > 1 else np.zeros(n)
        return np.broadcast_to(np.asarray(self._forcing_fn(x, y, t), dtype=float), (n,)).copy()

    def __call__(self, S, coords=None, t: float = 0.0) -> np.ndarray:
        val = self.state_part(S)
        if self._forcing_fn is not None:
            if coords is None:
                raise ModelError("expression has (x,t) forcing; coordinates required")
            val = val + self.forcing_values(coords, t)
        return val

    def diff(self, i: int) -> "Expression":
        """Partial derivative of the polynomial part w.r.t. field i."""
        out = Expression(0.0, self.field_names)
        keep = self.expos[:, i] > 0
        out.coefs = self.coefs[keep] * self.expos[keep, i]
        expos = self.expos[keep].copy()
        expos[:, i] -= 1
        out.expos = expos
        return out

    def table(self) -> tuple[np.ndarray, np.ndarray]:
        """(coefs, expos) arrays for the compiled kernels."""
        return self.coefs.copy(), self.expos.copy()


def zero_expression(field_names) -> Expression:
    return Expression(0.0, field_names)


# ---------------------------------------------------------------------------
# reaction spec, boundary assignment, scenario


@dataclass
class ReactionSpec:
    """Reactions f_i (bulk), g_i (dynamic boundary), h_i (static boundary).

    Declared structural constants: role-wise quadratic/m-weighted lower
    bounds with per-field constants C and a single additive constant Ctilde,
    plus (ga) growth exponents theta (for f) and beta (for g) with a single
    constant each.
    """

    f: list
    g: list
    h: list
    m_exp: np.ndarray
    C_f: np.ndarray = None
    Ct_f: float = 0.0
    C_g: np.ndarray = None
    Ct_g: float = 0.0
    C_h: np.ndarray = None
    Ct_h: float = 0.0
    theta: np.ndarray = None
    beta_g: np.ndarray = None
    Cga_f: float = None
    Cga_g: float = None
    declared: dict = field(default_factory=dict)  # role -> tuple of class tags

    def __post_init__(self):
        m = len(self.f)
        if not (len(self.g) == len(self.h) == m):
            raise ModelError("f, g, h must all have one entry per field")
        self.m_exp = np.broadcast_to(np.asarray(self.m_exp, dtype=float), (m,)).copy()
        if np.any(self.m_exp < 1.0):
            raise ModelError("dissipation exponents m_i must be >= 1")
        for name in ("C_f", "C_g", "C_h"):
            v = getattr(self, name)
            v = np.zeros(m) if v is None else np.broadcast_to(np.asarray(v, dtype=float), (m,)).copy()
            setattr(self, name, v)
        for name in ("theta", "beta_g"):
            v = getattr(self, name)
            if v is not None:
                v = np.broadcast_to(np.asarray(v, dtype=float), (m,)).copy()
                if np.any(v <= 0):
                    raise ModelError(f"growth exponents {name} must be positive")
                setattr(self, name, v)
        for role, tags in self.declared.items():
            if role not in ("f", "g", "h"):
                raise ModelError(f"unknown reaction role {role!r}")
            for tag in tags:
                if tag not in ("A2", "A3", "A3bis", "ga"):
                    raise ModelError(f"unknown structural class {tag!r}")

    @property
    def m(self) -> int:
        return len(self.f)


@dataclass
class BoundaryCondition:
    """One field's condition on one boundary side.

    dynamic: weight is the uniform delta > 0 or a spatial beta(x) >= 0
    (zero-weight nodes become algebraic Robin constraints); the reaction g_i
    comes from the ReactionSpec, h2 is the boundary source.  psi_zero removes
    flux coupling and sources entirely, which freezes the trace (Dirichlet
    data recovered from the boundary balance law).
    """

    kind: str
    value: float = 0.0
    delta: float | None = None
    beta: object = None
    h2: object = 0.0
    psi_zero: bool = False

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ModelError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dynamic":
            if self.beta is None:
                if self.delta is None:
                    raise ModelError("dynamic condition needs delta or beta(x)")
                if self.delta <= 0:
                    raise ModelError("dynamic uniform weight delta must be > 0")


@dataclass
class BoundaryAssignment:
    """per_field[i][side] -> BoundaryCondition; every side of every field set."""

    per_field: list

    def sides(self) -> tuple:
        return tuple(self.per_field[0].keys())

    @property
    def m(self) -> int:
        return len(self.per_field)

    def dynamic_fields(self) -> list:
        """J_m: fields with a dynamic condition on some part."""
        return [i for i, bc in enumerate(self.per_field)
                if any(c.kind == "dynamic" for c in bc.values())]

    def static_fields(self) -> list:
        """I_m: fields with static/Dirichlet conditions only."""
        dyn = set(self.dynamic_fields())
        return [i for i in range(self.m) if i not in dyn]

    def validate(self, mesh_boundary_labels: dict) -> None:
        sides = set(mesh_boundary_labels)
        for i, bcs in enumerate(self.per_field):
            if set(bcs) != sides:
                raise ModelError(f"field {i}: boundary sides {set(bcs)} != mesh sides {sides}")
            for side, c in bcs.items():
                if c.kind == "dynamic" and mesh_boundary_labels[side] == "gamma2":
                    raise ModelError(
                        f"field {i}: dynamic condition on {side} which is gamma2; "
                        "dynamic parts must lie on gamma1")


@dataclass
class Scenario:
    """Complete problem specification."""

    mesh: object
    field_names: tuple
    diffusion: list
    reactions: ReactionSpec
    boundary: BoundaryAssignment
    initial: list               # per field: callable(x[,y]) | scalar | Expression-like
    initial_trace: list = None  # optional per-field trace data v_0
    alpha: object = None        # porosity coefficient alpha(x), default 1
    K: object = None            # permeability K(x), default 1
    horizon: float = 1.0
    solver: object = None       # SolverConfig (solver module); None -> defaults
    monitors: object = None     # MonitorConfig; None -> defaults
    name: str = "scenario"

    def __post_init__(self):
        m = len(self.field_names)
        if not (len(self.diffusion) == self.reactions.m == self.boundary.m == len(self.initial) == m):
            raise ModelError("field count mismatch across scenario components")
        if self.horizon <= 0:
            raise ModelError("horizon T must be positive")
        labels = {}
        for side in set(self.mesh.b_side):
            nodes = [self.mesh.boundary_nodes[k] for k, s in enumerate(self.mesh.b_side) if s == side]
            g2 = set(self.mesh.gamma2.tolist())
            labels[side] = "gamma2" if all(int(n) in g2 for n in nodes) else "gamma1"
        self.boundary.validate(labels)

    @property
    def m(self) -> int:
        return len(self.field_names)

    def exponents(self) -> tuple:
        """(delta, gamma) from the declared growth/diffusion exponents."""
        p = np.array([d.p for d in self.diffusion])
        return exponents_delta_gamma(self.reactions.theta, self.reactions.beta_g, p)


def exponents_delta_gamma(theta, beta, p) -> tuple:
    """delta := max_i{2, theta_i+1, p_i/2+1},  gamma := max_i{2, beta_i+1, p_i/2+1}."""
    p = np.asarray(p, dtype=float)
    cand_d = [2.0] + list(p / 2.0 + 1.0)
    cand_g = [2.0] + list(p / 2.0 + 1.0)
    if theta is not None:
        cand_d += list(np.asarray(theta, dtype=float) + 1.0)
    if beta is not None:
        cand_g += list(np.asarray(beta, dtype=float) + 1.0)
    return float(max(cand_d)), float(max(cand_g))


# ---------------------------------------------------------------------------
# structural assumption validation


@dataclass
class AssumptionReport:
    """Per declared class: holds flag and the first violating sample if any."""

    results: dict

    def holds(self, key=None) -> bool:
        if key is None:
            return all(r["holds"] for r in self.results.values())
        return self.results[key]["holds"]

    def counterexample(self, key):
        return self.results[key]["counterexample"]


def _sample_points(box: np.ndarray, count: int) -> np.ndarray:
    """Deterministic low-discrepancy samples in the box, corners first."""
    m = box.shape[0]
    pts = [0.5 * (box[:, 0] + box[:, 1])]
    if m <= 10:
        for mask in range(2 ** m):
            corner = np.array([box[i, 1] if (mask >> i) & 1 else box[i, 0] for i in range(m)])
            pts.append(corner)
    sampler = qmc.Halton(d=m, scramble=False)
    unit = sampler.random(count)
    pts.append(box[:, 0] + unit * (box[:, 1] - box[:, 0]))
    return np.vstack([np.atleast_2d(p) for p in pts])


def validate_assumptions(scenario: Scenario, box, count: int = 2048) -> AssumptionReport:
    """Check every declared structural class on low-discrepancy samples.

    box: (m, 2) state-space bounds.  Returns the first violating point per
    class in sample order (deterministic).  A small relative slack absorbs
    floating-point roundoff in the evaluated inequalities.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    m = scenario.m
    if box.shape != (m, 2):
        raise ModelError(f"sample box must have shape ({m}, 2)")
    if count < 1000:
        raise ModelError("sample count must be >= 1000")
    S = _sample_points(box, count)           # (n_samples, m)
    R = scenario.reactions
    p_exp = np.array([d.p for d in scenario.diffusion])
    results = {}

    def record(key, lhs, rhs, slack_scale):
        # inequality lhs >= rhs with roundoff slack
        tol = 1e-12 * np.maximum(1.0, slack_scale)
        bad = lhs < rhs - tol
        idx = int(np.argmax(bad)) if np.any(bad) else None
        results[key] = {
            "holds": idx is None,
            "counterexample": None if idx is None else S[idx].copy(),
            "lhs": None if idx is None else float(lhs[idx]),
            "rhs": None if idx is None else float(rhs[idx]),
        }

    # (A1)/(A1bis) per field, from the diffusion form declarations
    for i, law in enumerate(scenario.diffusion):
        s = S[:, i]
        a_vals = law._a0(s)
        scale = np.abs(a_vals) + law.alpha * np.abs(s) ** law.p
        if law.form == "bounded_power":
            record(("A1bis", i, "lower"), a_vals, law.alpha * np.abs(s) ** law.p, scale)
            record(("A1bis", i, "upper"), law.sigma * np.abs(s) ** law.p, a_vals, scale)
        else:
            record(("A1", i), a_vals, law.alpha * np.abs(s) ** law.p, scale)

    roles = {"f": (R.f, R.C_f, R.Ct_f, list(range(m))),
             "g": (R.g, R.C_g, R.Ct_g, scenario.boundary.dynamic_fields()),
             "h": (R.h, R.C_h, R.Ct_h, scenario.boundary.static_fields())}

    ST = S.T  # (m, n_samples)
    for role, tags in R.declared.items():
        exprs, C, Ct, members = roles[role]
        vals = np.array([exprs[i].state_part(ST) for i in range(m)])
        for tag in tags:
            if tag == "A2":
                lhs = sum(vals[i] * ST[i] for i in members)
                rhs = -sum(C[i] * ST[i] ** 2 for i in members) - Ct
            elif tag == "A3":
                w = [ST[i] * np.abs(ST[i]) ** (R.m_exp[i] - 2.0) for i in range(m)]
                lhs = sum(vals[i] * w[i] for i in members)
                rhs = -sum(C[i] * np.abs(ST[i]) ** R.m_exp[i] for i in members) - Ct
            elif tag == "A3bis":
                w = [ST[i] * np.abs(ST[i]) ** (R.m_exp[i] - 2.0) for i in range(m)]
                lhs = sum(vals[i] * w[i] for i in members)
                rhs = -sum(C[i] * np.abs(ST[i]) ** (R.m_exp[i] + p_exp[i]) for i in members) - Ct
            elif tag == "ga":
                grow = np.asarray(R.theta if role == "f" else R.beta_g, dtype=float)
                Cga = R.Cga_f if role == "f" else R.Cga_g
                if Cga is None:
                    raise ModelError(f"(ga) declared for {role} without its constant")
                bound = Cga * (sum(np.abs(ST[j]) ** grow[j] for j in range(m)) + 1.0)
                worst = np.max(np.array([np.abs(vals[i]) for i in members]), axis=0) \
                    if members else np.zeros(ST.shape[1])
                record((role, "ga"), bound, worst, np.abs(bound))
                continue
            else:  # pragma: no cover - guarded in ReactionSpec
                continue
            record((role, tag), lhs, rhs, np.abs(lhs) + np.abs(rhs))

    return AssumptionReport(results)


# ---------------------------------------------------------------------------
# initial data helpers


def evaluate_profile(profile, coords: np.ndarray) -> np.ndarray:
    """Evaluate initial-data input (scalar | array | callable | expr string)."""
    n = coords.shape[0]
    if isinstance(profile, str):
        x, y = sp.symbols("x y")
        expr = sp.sympify(profile, locals={"x": x, "y": y, "sin": sp.sin,
                                           "cos": sp.cos, "exp": sp.exp, "pi": sp.pi})
        fn = sp.lambdify((x, y), expr, "numpy")
        xs = coords[:, 0]
        ys = coords[:, 1] if coords.shape[1] > 1 else np.zeros(n)
        return np.broadcast_to(np.asarray(fn(xs, ys), dtype=float), (n,)).copy()
    if callable(profile):
        return np.asarray([profile(*c) for c in coords], dtype=float)
    return np.broadcast_to(np.asarray(profile, dtype=float), (n,)).copy()
