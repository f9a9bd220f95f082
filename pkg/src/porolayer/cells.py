"""Periodic elasticity cell problems on the solid part of the reference cell.

Two families are solved for every in-plane index pair ``(a, b)``:

* standard:  find periodic, mean-zero ``chi`` with
  ``int_{Z^s} A (D(chi) + M_ab) : D(v) = 0`` for all periodic ``v``;
* bending:   same with ``M_ab`` replaced by ``-y3 M_ab``.

Mean-zero is imposed over the solid part (the field only lives there).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .geometry import build_cell_mesh, require_valid


@dataclass(frozen=True)
class CellLoadCase:
    """In-plane index pair (0-based, ``alpha <= beta``) and load kind."""

    alpha: int
    beta: int
    kind: str = "standard"

    def __post_init__(self):
        if self.kind not in ("standard", "bending"):
            raise ValueError(f"unknown load kind {self.kind!r}")
        if self.alpha > self.beta:
            a, b = self.beta, self.alpha
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta", b)

    def matrix(self, dim):
        M = np.zeros((dim, dim))
        M[self.alpha, self.beta] += 0.5
        M[self.beta, self.alpha] += 0.5
        return M

    @property
    def key(self):
        return f"{self.kind}_{self.alpha + 1}{self.beta + 1}"


def in_plane_pairs(dim):
    """Index pairs consumed by the plate tensors: (11, 22, 12) in 3D, (11) in 2D."""
    return [(0, 0), (1, 1), (0, 1)] if dim == 3 else [(0, 0)]


def all_load_cases(dim):
    return [CellLoadCase(a, b, kind) for kind in ("standard", "bending")
            for a, b in in_plane_pairs(dim)]


class CellOperator:
    """Assembled, immutable stiffness of one cell mesh; shared by all load cases."""

    def __init__(self, mesh, tensors=None):
        self.mesh = mesh
        spec = mesh.spec
        d = spec.dimension
        self.dim = d
        self.ref = fem.ReferenceElement(d, order=1)
        solid = mesh.solid
        self.A = spec.voxel_tensor(solid) if tensors is None else np.asarray(tensors, float)
        self.h = mesh.h
        self.Ke = fem.element_stiffness_batch(self.h, self.A)

        # node set: solid nodes plus the masters of periodic solid slaves
        nodes = mesh.solid_nodes
        master = mesh.periodic_image(nodes)
        nodes = np.union1d(nodes, master)
        self.nodes = nodes
        local = -np.ones(len(mesh.coords), dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        self.local = local
        self.elem_nodes = local[mesh.elements[solid]]
        self.elem_dofs = fem.vector_dofs(self.elem_nodes, d)
        n_dofs = len(nodes) * d
        self.n_dofs = n_dofs
        self.K = fem.assemble(self.Ke, self.elem_dofs, shape=(n_dofs, n_dofs))

        # lumped nodal weights int N_a over Z^s
        N, _ = self.ref.basis()
        w_loc = np.einsum("q,qa->a", self.ref.weights, N) * mesh.element_volume
        node_w = np.bincount(self.elem_nodes.ravel(),
                             weights=np.broadcast_to(w_loc, self.elem_nodes.shape).ravel(),
                             minlength=len(nodes))
        comps = np.tile(np.arange(d), len(nodes))
        weights = np.zeros((d, n_dofs))
        for c in range(d):
            weights[c, c::d] = node_w
        is_slave = np.isin(nodes, mesh.periodic_slaves)
        slave_nodes = np.flatnonzero(is_slave)
        master_nodes = local[mesh.periodic_image(nodes[slave_nodes])]
        self.cmap = fem.ConstraintMap(
            n_dofs=n_dofs,
            slaves=fem.vector_dofs(slave_nodes[:, None], d).ravel(),
            masters=fem.vector_dofs(master_nodes[:, None], d).ravel(),
            components=comps, mean_weights=weights)

        origins = mesh.element_origin(solid)
        self.quad_points = origins[:, None, :] + self.ref.points[None] * self.h  # (e, q, d)

    # -- loads ---------------------------------------------------------------

    def prescribed_strain(self, case):
        """Macroscopic strain ``G`` at the quadrature points, shape ``(e, q, d, d)``."""
        M = case.matrix(self.dim)
        ne, nq = self.quad_points.shape[:2]
        if case.kind == "standard":
            return np.broadcast_to(M, (ne, nq, self.dim, self.dim))
        y3 = self.quad_points[..., -1]
        return -y3[..., None, None] * M

    def load(self, case):
        """Right-hand side ``-int A G : D(v)`` on the solid node set."""
        G = self.prescribed_strain(case)
        _, dN = self.ref.basis()
        grad = dN / self.h                                   # (q, a, j)
        stress = np.einsum("eijkl,eqkl->eqij", self.A, G)
        vol = self.mesh.element_volume
        fe = -np.einsum("q,qaj,eqij->eai", self.ref.weights, grad, stress) * vol
        return fem.assemble_vector(fe.reshape(len(fe), -1), self.elem_dofs, self.n_dofs)

    def reduced(self, rhs):
        return fem.apply_constraints(fem.SparseOperator(self.K), rhs, self.cmap)

    # -- fields --------------------------------------------------------------

    def strain(self, values):
        """Symmetric gradient of a nodal field at quadrature points ``(e, q, d, d)``."""
        _, dN = self.ref.basis()
        grad = dN / self.h
        u = values[self.elem_nodes]                          # (e, a, i)
        g = np.einsum("qaj,eai->eqij", grad, u)
        return 0.5 * (g + g.transpose(0, 1, 3, 2))

    def energy(self, values, case):
        E = self.strain(values) + self.prescribed_strain(case)
        return self.energy_product(E, E)

    def energy_product(self, E1, E2):
        """``int_{Z^s} A E1 : E2`` for strain fields at quadrature points."""
        vol = self.mesh.element_volume
        return float(np.einsum("q,eijkl,eqkl,eqij->", self.ref.weights, self.A, E1, E2) * vol)


def assemble_cell_load(mesh, tensors, case):
    """Load vector of a cell problem on the solid node set of ``mesh``."""
    return CellOperator(mesh, tensors).load(case)


@dataclass
class CellSolution:
    """Nodal displacement of one cell problem on the solid node set."""

    case: CellLoadCase
    values: np.ndarray
    residual: float
    iterations: int
    operator: CellOperator = field(repr=False)
    ritz_min: float = float("nan")

    @property
    def mesh(self):
        return self.operator.mesh

    def grid_values(self):
        """Values on every grid node; NaN away from the solid."""
        out = np.full((len(self.mesh.coords), self.operator.dim), np.nan)
        out[self.operator.nodes] = self.values
        img = self.mesh.periodic_image(np.arange(len(self.mesh.coords)))
        solid = np.isin(np.arange(len(out)), self.operator.nodes)
        out[solid] = out[img[solid]]
        return out

    def strain(self):
        return self.operator.strain(self.values)

    def total_strain(self):
        return self.strain() + self.operator.prescribed_strain(self.case)

    def energy(self):
        return self.operator.energy(self.values, self.case)

    def component_means(self):
        w = self.operator.cmap.mean_weights
        flat = self.values.ravel()
        return np.array([wc @ flat / wc.sum() for wc in w])


def solve_cell_problem(mesh, tensors=None, case=CellLoadCase(0, 0), cfg=fem.SolveConfig(),
                       operator=None, check_geometry=True):
    """Solve one cell problem; returns a :class:`CellSolution`."""
    if check_geometry:
        require_valid(mesh)
    op = operator if operator is not None else CellOperator(mesh, tensors)
    rhs = op.load(case)
    red = op.reduced(rhs)
    y, info = fem.solve_spd(red.op, red.rhs, cfg)
    values = red.expand(y).reshape(-1, op.dim)
    res = info.residuals[-1] if info.residuals else 0.0
    return CellSolution(case, values, res, info.iterations, op, info.ritz_min)


def solve_all_cells(mesh, cfg=fem.SolveConfig(), jobs=1, check_geometry=True):
    """All load cases needed by the plate tensors, sharing one operator."""
    if check_geometry:
        require_valid(mesh)
    op = CellOperator(mesh)
    cases = all_load_cases(mesh.dim)
    run = lambda c: solve_cell_problem(mesh, case=c, cfg=cfg, operator=op,
                                       check_geometry=False)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            sols = list(pool.map(run, cases))
    else:
        sols = [run(c) for c in cases]
    return {s.case.key: s for s in sols}


def solve_spec_cells(spec, cfg=fem.SolveConfig(), jobs=1, check_geometry=True):
    return solve_all_cells(build_cell_mesh(spec), cfg=cfg, jobs=jobs,
                           check_geometry=check_geometry)


def residual_check(sol):
    """Residual diagnostics of a cell solution.

    The nodal residual ``K chi - f`` after periodic summation is split into
    interior nodes and boundary nodes (Gamma and S+-); a boundary entry is the
    weak traction residual tested against that node's hat function.
    """
    op = sol.operator
    mesh = op.mesh
    d = op.dim
    f = op.load(sol.case)
    r_full = op.K @ sol.values.ravel() - f
    P = op.cmap.prolongation()
    r = (P.T @ r_full)
    keep = np.setdiff1d(np.arange(op.n_dofs), op.cmap.slaves)
    node_of = keep // d

    bnodes = set()
    coords = mesh.coords
    # nodes touching a fluid element or the top/bottom faces count as boundary
    if len(mesh.fluid):
        bnodes.update(np.intersect1d(mesh.elements[mesh.fluid].ravel(),
                                     mesh.solid_nodes).tolist())
    ztop, zbot = coords[:, -1].max(), coords[:, -1].min()
    on_face = np.flatnonzero(np.isclose(coords[:, -1], ztop) | np.isclose(coords[:, -1], zbot))
    bnodes.update(np.intersect1d(on_face, mesh.solid_nodes).tolist())
    bglobal = mesh.periodic_image(np.array(sorted(bnodes), dtype=np.int64)) \
        if bnodes else np.zeros(0, np.int64)
    is_boundary = np.isin(op.nodes[node_of], bglobal)
    # the periodically summed load can vanish (e.g. shear of a homogeneous cell), so
    # normalise by the element-level load before summation
    scale = max(np.linalg.norm(f), np.linalg.norm(op.K @ sol.values.ravel()), 1e-300)

    grid = sol.grid_values()
    slaves = mesh.periodic_slaves
    ok = ~np.isnan(grid[slaves, 0])
    mismatch = np.abs(grid[slaves][ok] - grid[mesh.periodic_masters][ok]).max(initial=0.0)
    return {
        "interior_residual": float(np.linalg.norm(r[~is_boundary]) / scale),
        "traction_residual": float(np.linalg.norm(r[is_boundary]) / scale),
        "periodicity_mismatch": float(mismatch),
        "component_means": sol.component_means().tolist(),
    }
