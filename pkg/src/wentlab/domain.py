"""Meshes, the bulk-plus-boundary measure space, and discrete field states.

The continuum state space lives on the closure of Omega together with the
measure dmu = dx (+) dS, so that mu(A) = |A ∩ Omega| + S(A ∩ Gamma).  A Mesh
discretizes an interval or an axis-aligned rectangle with a tensor grid and
carries two weight systems at once:

* trapezoidal lumped bulk weights at every node (boundary nodes own the half
  cell), summing exactly to |Omega|;
* surface weights at boundary nodes, summing exactly to |Gamma|.  In 1D the
  surface measure is the counting measure (weight 1 per endpoint, |Gamma|=2);
  in 2D each boundary node owns half of each adjacent boundary edge.

The boundary is partitioned into gamma1 and gamma2 node sets.  Corner nodes
in 2D belong to exactly one part: gamma2 whenever any adjacent side is
gamma2, else gamma1 (side priority left, right, bottom, top for the stencil
normal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REGIONS = ("bulk", "gamma1", "gamma2", "closure")
SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")


@dataclass
class Mesh:
    """Tensor mesh of an interval (0,L) or rectangle (0,Lx)x(0,Ly).

    Node ordering is lexicographic by coordinate: 1D by x; 2D the node with
    x-index i and y-index j sits at flat index i*(ny+1)+j.
    """

    dimension: int
    extents: tuple
    cells: tuple
    coords: np.ndarray          # (n_nodes, dimension)
    bulk_weights: np.ndarray    # (n_nodes,) lumped trapezoid weights
    boundary_nodes: np.ndarray  # (n_b,) sorted node indices
    gamma1: np.ndarray          # subset of boundary_nodes
    gamma2: np.ndarray          # subset of boundary_nodes
    surface_weights: np.ndarray  # (n_b,) aligned with boundary_nodes
    faces: np.ndarray           # (n_faces, 2) node index pairs
    face_trans: np.ndarray      # (n_faces,) transverse weight / spacing
    face_midpoints: np.ndarray  # (n_faces, dimension)
    # One-sided boundary stencil along the outward normal, aligned with
    # boundary_nodes: the two nodes stepping inward and the grid spacing.
    b_inward1: np.ndarray = field(default=None, repr=False)
    b_inward2: np.ndarray = field(default=None, repr=False)
    b_spacing: np.ndarray = field(default=None, repr=False)
    b_side: tuple = field(default=(), repr=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_nodes.shape[0]

    @property
    def boundary_pos(self) -> dict:
        """Map node index -> position in the boundary_nodes array."""
        if not hasattr(self, "_bpos"):
            self._bpos = {int(n): k for k, n in enumerate(self.boundary_nodes)}
        return self._bpos

    def surface_weights_on(self, nodes: np.ndarray) -> np.ndarray:
        pos = self.boundary_pos
        return np.array([self.surface_weights[pos[int(n)]] for n in nodes])

    def is_gamma2(self, node: int) -> bool:
        return int(node) in set(int(v) for v in self.gamma2)

    def validate(self) -> None:
        g1, g2 = set(self.gamma1.tolist()), set(self.gamma2.tolist())
        if g1 & g2:
            raise ValueError("gamma1 and gamma2 overlap")
        if g1 | g2 != set(self.boundary_nodes.tolist()):
            raise ValueError("gamma1 and gamma2 do not cover the boundary")
        vol = float(np.prod(self.extents))
        if abs(self.bulk_weights.sum() - vol) > 1e-12 * vol:
            raise ValueError("bulk weights do not sum to |Omega|")
        perim = 2.0 if self.dimension == 1 else 2.0 * sum(self.extents)
        if abs(self.surface_weights.sum() - perim) > 1e-12 * perim:
            raise ValueError("surface weights do not sum to |Gamma|")


@dataclass
class FieldState:
    """m coupled fields: bulk node values plus independent trace values.

    Traces may disagree with the boundary node values at t=0 (the continuum
    problem admits u_{i0}|_Gamma != v_{i0}); the solver couples them after
    the first step.
    """

    t: float
    bulk: np.ndarray   # (m, n_nodes)
    trace: np.ndarray  # (m, n_boundary)
    blown_up: bool = False

    def __post_init__(self):
        self.bulk = np.atleast_2d(np.asarray(self.bulk, dtype=float))
        self.trace = np.atleast_2d(np.asarray(self.trace, dtype=float))
        if not self.blown_up:
            if not (np.all(np.isfinite(self.bulk)) and np.all(np.isfinite(self.trace))):
                raise ValueError("non-finite field values in a state not flagged blown_up")

    @property
    def m(self) -> int:
        return self.bulk.shape[0]

    def copy(self) -> "FieldState":
        return FieldState(self.t, self.bulk.copy(), self.trace.copy(), self.blown_up)


def _trapezoid_weights(n_cells: int, h: float) -> np.ndarray:
    w = np.full(n_cells + 1, h)
    w[0] = w[-1] = h / 2.0
    return w


def build_mesh(dimension: int, extents, cells, boundary: dict) -> Mesh:
    """Construct a Mesh.

    Arguments:
        dimension: 1 or 2.
        extents: length (1D) or (Lx, Ly); all > 0.
        cells: cell count (1D) or (nx, ny); each >= 4.
        boundary: side -> "gamma1" | "gamma2" for every side
            ("left","right" in 1D; plus "bottom","top" in 2D).
    """
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    cells = tuple(int(c) for c in np.atleast_1d(cells))
    if len(extents) != dimension or len(cells) != dimension:
        raise ValueError("extents/cells do not match dimension")
    if any(e <= 0 for e in extents):
        raise ValueError("extents must be positive")
    if any(c < 4 for c in cells):
        raise ValueError("cell counts must be >= 4")
    sides = SIDES_1D if dimension == 1 else SIDES_2D
    for s in sides:
        if boundary.get(s) not in ("gamma1", "gamma2"):
            raise ValueError(f"side {s!r} must be labeled gamma1 or gamma2")

    if dimension == 1:
        return _build_mesh_1d(extents[0], cells[0], boundary)
    return _build_mesh_2d(extents, cells, boundary)


def _build_mesh_1d(length: float, n: int, boundary: dict) -> Mesh:
    h = length / n
    x = np.linspace(0.0, length, n + 1)
    coords = x[:, None]
    bulk_w = _trapezoid_weights(n, h)

    bnodes = np.array([0, n])
    side_of = ("left", "right")
    g1 = np.array([bnodes[k] for k in range(2) if boundary[side_of[k]] == "gamma1"], dtype=int)
    g2 = np.array([bnodes[k] for k in range(2) if boundary[side_of[k]] == "gamma2"], dtype=int)
    surf_w = np.ones(2)  # counting measure: |Gamma| = 2

    fi = np.arange(n)
    faces = np.column_stack([fi, fi + 1])
    trans = np.full(n, 1.0 / h)
    mids = ((x[:-1] + x[1:]) / 2.0)[:, None]

    mesh = Mesh(1, (length,), (n,), coords, bulk_w, bnodes, g1, g2, surf_w,
                faces, trans, mids,
                b_inward1=np.array([1, n - 1]), b_inward2=np.array([2, n - 2]),
                b_spacing=np.array([h, h]), b_side=side_of)
    mesh.validate()
    return mesh


def _build_mesh_2d(extents, cells, boundary: dict) -> Mesh:
    (lx, ly), (nx, ny) = extents, cells
    hx, hy = lx / nx, ly / ny
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)

    def nid(i, j):
        return i * (ny + 1) + j

    n_nodes = (nx + 1) * (ny + 1)
    coords = np.empty((n_nodes, 2))
    for i in range(nx + 1):
        for j in range(ny + 1):
            coords[nid(i, j)] = (xs[i], ys[j])

    wx = _trapezoid_weights(nx, hx)
    wy = _trapezoid_weights(ny, hy)
    bulk_w = np.empty(n_nodes)
    for i in range(nx + 1):
        for j in range(ny + 1):
            bulk_w[nid(i, j)] = wx[i] * wy[j]

    # Boundary bookkeeping.  sides_of[node] lists the touching sides in the
    # fixed priority order; corners touch two.
    sides_of: dict = {}

    def touch(node, side):
        sides_of.setdefault(node, [])
        if side not in sides_of[node]:
            sides_of[node].append(side)

    for j in range(ny + 1):
        touch(nid(0, j), "left")
        touch(nid(nx, j), "right")
    for i in range(nx + 1):
        touch(nid(i, 0), "bottom")
        touch(nid(i, ny), "top")

    bnodes = np.array(sorted(sides_of), dtype=int)
    surf_w = np.empty(len(bnodes))
    part = []
    owner = []
    edge_len = {"left": hy, "right": hy, "bottom": hx, "top": hx}
    for k, node in enumerate(bnodes):
        sides = sides_of[int(node)]
        i, j = divmod(int(node), ny + 1)
        w = 0.0
        for s in sides:
            # half of each adjacent boundary edge on that side
            if s in ("left", "right"):
                w += (hy if 0 < j < ny else hy / 2.0)
            else:
                w += (hx if 0 < i < nx else hx / 2.0)
        surf_w[k] = w
        labels = [boundary[s] for s in sides]
        lab = "gamma2" if "gamma2" in labels else "gamma1"
        part.append(lab)
        # owning side: first side in priority order matching the partition
        own = next(s for s in SIDES_2D if s in sides and boundary[s] == lab)
        owner.append(own)
    g1 = bnodes[[p == "gamma1" for p in part]]
    g2 = bnodes[[p == "gamma2" for p in part]]

    # faces: x-directed carry wy/hx, y-directed carry wx/hy
    fa, fb, tr, mid = [], [], [], []
    for i in range(nx):
        for j in range(ny + 1):
            fa.append(nid(i, j)); fb.append(nid(i + 1, j))
            tr.append(wy[j] / hx)
            mid.append(((xs[i] + xs[i + 1]) / 2.0, ys[j]))
    for i in range(nx + 1):
        for j in range(ny):
            fa.append(nid(i, j)); fb.append(nid(i, j + 1))
            tr.append(wx[i] / hy)
            mid.append((xs[i], (ys[j] + ys[j + 1]) / 2.0))
    faces = np.column_stack([np.array(fa), np.array(fb)])

    inward = {"left": (1, 0, hx), "right": (-1, 0, hx), "bottom": (0, 1, hy), "top": (0, -1, hy)}
    in1 = np.empty(len(bnodes), dtype=int)
    in2 = np.empty(len(bnodes), dtype=int)
    spac = np.empty(len(bnodes))
    for k, node in enumerate(bnodes):
        di, dj, hh = inward[owner[k]]
        i, j = divmod(int(node), ny + 1)
        in1[k] = nid(i + di, j + dj)
        in2[k] = nid(i + 2 * di, j + 2 * dj)
        spac[k] = hh

    mesh = Mesh(2, (lx, ly), (nx, ny), coords, bulk_w, bnodes, g1, g2, surf_w,
                faces, np.array(tr), np.array(mid),
                b_inward1=in1, b_inward2=in2, b_spacing=spac, b_side=tuple(owner))
    mesh.validate()
    return mesh


def measure_of(mesh: Mesh, region: str) -> float:
    """mu of a region under dmu = dx (+) dS."""
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}")
    if region == "bulk":
        return float(mesh.bulk_weights.sum())
    pos = mesh.boundary_pos
    if region == "gamma1":
        return float(sum(mesh.surface_weights[pos[int(n)]] for n in mesh.gamma1))
    if region == "gamma2":
        return float(sum(mesh.surface_weights[pos[int(n)]] for n in mesh.gamma2))
    return float(mesh.bulk_weights.sum()) + float(mesh.surface_weights.sum())


def _coefficient_values(coef, coords) -> np.ndarray:
    """Evaluate a coefficient field given as None (=1), scalar, array, or callable."""
    n = coords.shape[0]
    if coef is None:
        return np.ones(n)
    if callable(coef):
        vals = np.asarray([coef(*c) for c in coords], dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(coef, dtype=float), (n,)).copy()
    return vals


def total_mass(state: FieldState, mesh: Mesh, alpha=None, beta=None, field_index: int = 0) -> float:
    """Quadrature of  int_Omega alpha u dx + int_Gamma beta u dS  for one field.

    alpha and beta may be None (=1), scalars, node arrays, or callables of the
    coordinates.  Negative coefficient values are rejected.
    """
    a = _coefficient_values(alpha, mesh.coords)
    b = _coefficient_values(beta, mesh.coords[mesh.boundary_nodes])
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("coefficient fields alpha, beta must be nonnegative")
    u = state.bulk[field_index]
    v = state.trace[field_index]
    return float(np.sum(mesh.bulk_weights * a * u) + np.sum(mesh.surface_weights * b * v))
