"""Eigenproblems with the eigenvalue in the boundary condition.

Two variants of the same symmetric pencil K phi = Lambda M phi:

classic        -Lap phi = Lambda phi in Omega,
               d_n phi = Lambda phi on gamma1,
               d_n phi + phi = 0 on gamma2 (Robin);
               K = stiffness + gamma2 surface masses, M = bulk lumps +
               gamma1 surface masses, all nodes retained.

generalized    -a Lap phi - c_f phi = Lambda phi in Omega,
               a d_n phi - c_g phi = Lambda phi on gamma1,
               phi = 0 on gamma2 (eliminated);
               a := alpha (m-1) (2/(m+p))^2 from the declared coefficients.

The stiffness is assembled from the mesh face graph, so at order 2 the
discrete operator coincides with the solver's flux linearization.  order=4
(1D, even cell count) switches to quadratic spectral elements with
Gauss-Lobatto lumped mass: the mass stays diagonal and the eigenvalues gain
two orders of accuracy, which the tight eigenvalue tolerances need at fixed
mesh size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .domain import Mesh

__all__ = [
    "SpectralError", "EigenSystem", "EigenPair", "assemble_wentzell",
    "solve_spectrum", "rayleigh_quotient", "lambda1_inf", "Lambda1Report",
    "linearized_spectrum", "instability_index",
]

VARIANTS = ("classic", "generalized", "shifted")
RQ_MODES = ("gamma1_mass", "paper_x2")


class SpectralError(ValueError):
    pass


@dataclass
class EigenSystem:
    """Symmetric pencil (K, diagonal M) over the kept mesh nodes.

    mass_bulk/mass_surf split M = mass_bulk + mass_surf so shifted pencils
    can weight bulk and boundary separately.  kept maps pencil rows to mesh
    node indices (identity unless gamma2 was eliminated).
    """

    variant: str
    mesh: Mesh
    K: np.ndarray
    mass_bulk: np.ndarray
    mass_surf: np.ndarray
    kept: np.ndarray
    gamma2_measure: float
    order: int = 2
    coefficients: dict = field(default_factory=dict)

    @property
    def M(self) -> np.ndarray:
        return self.mass_bulk + self.mass_surf

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise SpectralError(f"unknown variant {self.variant!r}")
        scale = float(np.max(np.abs(self.K))) or 1.0
        if np.max(np.abs(self.K - self.K.T)) > 1e-12 * scale:
            raise SpectralError("K not symmetric to 1e-12 relative")
        if np.any(self.M <= 0):
            raise SpectralError("mass diagonal must be strictly positive")


@dataclass
class EigenPair:
    """j follows the ordering conventions of the continuous problem:
    1-based when gamma2 is present (Lambda_1 > 0 simple), 0-based when the
    spectrum starts with the constant mode Lambda_0 = 0."""

    j: int
    value: float
    vector: np.ndarray
    residual: float


def _stiffness_p1(mesh: Mesh, n: int) -> np.ndarray:
    K = np.zeros((n, n))
    fi, fj = mesh.faces[:, 0], mesh.faces[:, 1]
    t = mesh.face_trans
    np.add.at(K, (fi, fi), t)
    np.add.at(K, (fj, fj), t)
    np.add.at(K, (fi, fj), -t)
    np.add.at(K, (fj, fi), -t)
    return K


def _stiffness_gll(mesh: Mesh, n: int) -> tuple:
    """1D quadratic spectral elements on node pairs, Gauss-Lobatto lumping.

    Element of length H over nodes (2k, 2k+1, 2k+2):
        Ke = 1/(3H) [[7,-8,1],[-8,16,-8],[1,-8,7]],  Me = H diag(1/6,4/6,1/6).
    """
    if mesh.dimension != 1:
        raise SpectralError("order=4 assembly is one-dimensional")
    cells = mesh.cells[0]
    if cells % 2:
        raise SpectralError("order=4 assembly needs an even cell count")
    K = np.zeros((n, n))
    mb = np.zeros(n)
    h = mesh.extents[0] / cells
    H = 2.0 * h
    Ke = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / (3.0 * H)
    Me = H * np.array([1.0, 4.0, 1.0]) / 6.0
    for e in range(cells // 2):
        idx = np.array([2 * e, 2 * e + 1, 2 * e + 2])
        K[np.ix_(idx, idx)] += Ke
        mb[idx] += Me
    return K, mb


def assemble_wentzell(mesh: Mesh, variant: str = "classic", order: int = 2,
                      alpha: float = 1.0, m: float = 2.0, p: float = 0.0,
                      c_f: float = 0.0, c_g: float = 0.0) -> EigenSystem:
    """Assemble the pencil for either variant.

    classic ignores the coefficient arguments.  generalized derives the
    diffusion scale a = alpha (m-1) (2/(m+p))^2 and eliminates gamma2 nodes.
    """
    if variant not in ("classic", "generalized"):
        raise SpectralError(f"variant must be classic or generalized, got {variant!r}")
    if order not in (2, 4):
        raise SpectralError("order must be 2 or 4")
    n = mesh.n_nodes
    if order == 2:
        K = _stiffness_p1(mesh, n)
        mb = mesh.bulk_weights.copy()
    else:
        K, mb = _stiffness_gll(mesh, n)
    ms = np.zeros(n)
    g2 = set(int(v) for v in mesh.gamma2)
    pos = mesh.boundary_pos
    g2_measure = sum(float(mesh.surface_weights[pos[v]]) for v in g2)

    coeffs = {}
    if variant == "classic":
        for node in mesh.gamma1:
            ms[int(node)] = mesh.surface_weights[pos[int(node)]]
        for node in g2:
            K[node, node] += mesh.surface_weights[pos[node]]
        kept = np.arange(n)
    else:
        if m <= 1.0:
            raise SpectralError("generalized variant needs m > 1 (a vanishes at m=1)")
        if alpha <= 0:
            raise SpectralError("generalized variant needs alpha > 0")
        a = alpha * (m - 1.0) * (2.0 / (m + p)) ** 2
        coeffs = {"alpha": alpha, "m": m, "p": p, "c_f": c_f, "c_g": c_g, "a": a}
        K *= a
        K -= np.diag(c_f * mb)
        for node in mesh.gamma1:
            k = int(node)
            ms[k] = mesh.surface_weights[pos[k]]
            K[k, k] -= c_g * ms[k]
        kept = np.array([j for j in range(n) if j not in g2], dtype=int)
        if kept.size == 0:
            raise SpectralError("all nodes eliminated (degenerate all-Dirichlet input)")
        K = K[np.ix_(kept, kept)]
        mb = mb[kept]
        ms = ms[kept]

    sys = EigenSystem(variant=variant, mesh=mesh, K=K, mass_bulk=mb,
                      mass_surf=ms, kept=kept, gamma2_measure=g2_measure,
                      order=order, coefficients=coeffs)
    sys.validate()
    return sys


def solve_spectrum(system: EigenSystem, k: int = 6) -> list:
    """k smallest eigenpairs, ascending, M-orthonormal eigenvectors.

    For Wentzell variants with gamma2 present, asserts the qualitative
    spectral picture: Lambda_1 > 0 simple with a single-signed phi_1.
    """
    n = system.size
    if not (1 <= k <= n):
        raise SpectralError(f"requested {k} pairs from a size-{n} system")
    d = 1.0 / np.sqrt(system.M)
    Kw = d[:, None] * system.K * d[None, :]
    Kw = 0.5 * (Kw + Kw.T)
    try:
        vals, vecs = linalg.eigh(Kw, subset_by_index=[0, k - 1])
    except linalg.LinAlgError as e:
        raise SpectralError(f"eigensolver failed: {e}") from e
    pairs = []
    base = 1 if system.gamma2_measure > 0 else 0
    for idx in range(k):
        phi = d * vecs[:, idx]
        nrm = math.sqrt(float(phi @ (system.M * phi)))
        phi = phi / nrm
        if phi[np.argmax(np.abs(phi))] < 0:
            phi = -phi
        Kphi = system.K @ phi
        res = float(np.linalg.norm(Kphi - vals[idx] * system.M * phi))
        # null modes have |K phi| ~ roundoff; floor the bound at machine
        # precision relative to the operator scale
        lim = max(1e-8 * float(np.linalg.norm(Kphi)),
                  1e-12 * float(np.linalg.norm(system.K)) * float(np.linalg.norm(phi)))
        if res > lim:
            raise SpectralError(
                f"eigenpair {idx}: residual {res:.3e} exceeds 1e-8*|K phi|")
        pairs.append(EigenPair(j=base + idx, value=float(vals[idx]),
                               vector=phi, residual=res))
    if system.variant in ("classic", "generalized") and system.gamma2_measure > 0:
        lam1, phi1 = pairs[0].value, pairs[0].vector
        if lam1 <= 0:
            raise SpectralError(f"Lambda_1 = {lam1} not positive with gamma2 present")
        if len(pairs) > 1 and pairs[1].value - lam1 <= 0:
            raise SpectralError("Lambda_1 not simple (zero gap)")
        if not (np.all(phi1 > 0) or np.all(phi1 < 0)):
            raise SpectralError("phi_1 not single-signed")
    return pairs


def rayleigh_quotient(system: EigenSystem, phi, mode: str = "gamma1_mass") -> float:
    """Quotient of the assembled form over one of two denominators.

    gamma1_mass: phi' K phi / phi' M phi (consistent with the weak form);
    paper_x2: the denominator additionally counts the gamma2 trace mass, as
    the X^2 norm is printed.  For eliminated systems the two coincide.
    """
    if mode not in RQ_MODES:
        raise SpectralError(f"mode must be one of {RQ_MODES}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (system.size,):
        raise SpectralError(f"phi must have shape ({system.size},)")
    if not np.any(phi):
        raise SpectralError("Rayleigh quotient of the zero vector")
    num = float(phi @ (system.K @ phi))
    den = float(phi @ (system.M * phi))
    if mode == "paper_x2":
        pos = system.mesh.boundary_pos
        node_to_row = {int(nd): r for r, nd in enumerate(system.kept)}
        for node in system.mesh.gamma2:
            r = node_to_row.get(int(node))
            if r is not None:
                den += float(system.mesh.surface_weights[pos[int(node)]]) * phi[r] ** 2
    return num / den


@dataclass
class Lambda1Report:
    value: float
    per_system: list
    dissipative: bool


def lambda1_inf(systems) -> Lambda1Report:
    """Lambda_1 := min_i Lambda_{1,i} over the per-field generalized systems;
    dissipative flag is Lambda_1 > 0."""
    if not systems:
        raise SpectralError("lambda1_inf needs at least one system")
    firsts = [solve_spectrum(s, 1)[0].value for s in systems]
    val = min(firsts)
    return Lambda1Report(value=val, per_system=firsts, dissipative=val > 0)


def linearized_spectrum(lambdas, nu: float, shift_f: float, shift_g: float) -> list:
    """Per Wentzell eigenvalue, the two determinant-branch roots

        zeta = -nu Lambda_j + shift_f   and   zeta = -nu Lambda_j + shift_g.

    The scalar-ansatz determinant is diagonal, so the branches simply shift
    the rescaled eigenvalue; they coincide iff the shifts do.
    """
    if nu <= 0:
        raise SpectralError("nu must be positive")
    return [(-nu * float(lam) + shift_f, -nu * float(lam) + shift_g)
            for lam in np.asarray(lambdas, dtype=float)]


def instability_index(source, nu: float, shifts, method: str = "direct") -> int:
    """Number of unstable modes of the linearization.

    heuristic: positive roots over both branches of linearized_spectrum.
    direct: positive eigenvalues of the pencil -nu K + s_f M_bulk + s_g M_g1
    against M (needs an EigenSystem; with a plain eigenvalue list it is only
    defined for equal shifts, where the branches collapse and the count is
    #{j : nu Lambda_j < s}).
    """
    if nu <= 0:
        raise SpectralError("nu must be positive")
    if np.ndim(shifts) == 0:
        s_f = s_g = float(shifts)
    else:
        s_f, s_g = (float(v) for v in shifts)
    if method not in ("heuristic", "direct"):
        raise SpectralError(f"method must be heuristic or direct, got {method!r}")

    if isinstance(source, EigenSystem):
        if method == "heuristic":
            vals = linalg.eigh(np.diag(1.0 / np.sqrt(source.M)) @ source.K
                               @ np.diag(1.0 / np.sqrt(source.M)),
                               eigvals_only=True)
            roots = linearized_spectrum(vals, nu, s_f, s_g)
            return int(sum((zf > 0) + (zg > 0) for zf, zg in roots))
        A = -nu * source.K + np.diag(s_f * source.mass_bulk + s_g * source.mass_surf)
        d = 1.0 / np.sqrt(source.M)
        Aw = d[:, None] * A * d[None, :]
        vals = linalg.eigh(0.5 * (Aw + Aw.T), eigvals_only=True)
        return int(np.count_nonzero(vals > 0))

    lams = np.asarray(source, dtype=float)
    roots = linearized_spectrum(lams, nu, s_f, s_g)
    if method == "heuristic":
        return int(sum((zf > 0) + (zg > 0) for zf, zg in roots))
    if s_f != s_g:
        raise SpectralError(
            "direct count from a bare eigenvalue list needs equal shifts; "
            "assemble the pencil for the unequal case")
    return int(np.count_nonzero(-nu * lams + s_f > 0))
