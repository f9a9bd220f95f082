"""Structured tensor-product quadrilateral meshes with Q2 velocity / Q1 pressure.

Elements are numbered ``e = i * nz + j`` for column ``i`` (along x) and row
``j`` (along z).  Q2 nodes live on the ``(2 nx + 1) x (2 nz + 1)`` grid made of
element corners and midpoints, Q1 nodes on the corner grid; both are numbered
in C order over ``(x, z)``.  Vector dofs are node-major: ``2 * node + comp``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from . import fem


def graded_breaks(length, h0, hmax, ratio=1.3):
    """Breakpoints on ``[0, length]`` growing geometrically from ``h0`` to ``hmax``.

    A short remainder is merged with the previous interval (split evenly if
    that would exceed ``hmax``) so the breakpoints end exactly at ``length``.
    """
    if length <= 0 or h0 <= 0:
        raise ValueError("length and h0 must be positive")
    hmax = max(hmax, h0)
    pts = [0.0]
    h = h0
    while pts[-1] + h < length - 1e-12 * length:
        pts.append(pts[-1] + h)
        h = min(h * ratio, hmax)
    if len(pts) > 1 and length - pts[-1] < 0.5 * (pts[-1] - pts[-2]):
        pts.pop()
        rest = length - pts[-1]
        n = int(np.ceil(rest / hmax - 1e-12))
        pts.extend(pts[-1] + rest * np.arange(1, n) / n)
    pts.append(length)
    return np.array(pts)


def symmetric_identity(dim):
    """``A`` with ``A E : F = E : F`` on symmetric matrices."""
    I = np.eye(dim)
    return 0.5 * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))


@dataclass
class QuadMesh:
    """Rectangular tensor-product mesh given by x and z breakpoints."""

    xb: np.ndarray
    zb: np.ndarray
    quad: int = 3
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.xb = np.asarray(self.xb, dtype=float)
        self.zb = np.asarray(self.zb, dtype=float)
        for b in (self.xb, self.zb):
            if b.ndim != 1 or len(b) < 2 or np.any(np.diff(b) <= 0):
                raise ValueError("breakpoints must be strictly increasing with >= 2 entries")

    # -- counts and connectivity ----------------------------------------------

    @property
    def nx(self):
        return len(self.xb) - 1

    @property
    def nz(self):
        return len(self.zb) - 1

    @property
    def n_elements(self):
        return self.nx * self.nz

    @property
    def n_q2(self):
        return (2 * self.nx + 1) * (2 * self.nz + 1)

    @property
    def n_q1(self):
        return (self.nx + 1) * (self.nz + 1)

    @cached_property
    def x2(self):
        mid = 0.5 * (self.xb[:-1] + self.xb[1:])
        out = np.empty(2 * self.nx + 1)
        out[0::2], out[1::2] = self.xb, mid
        return out

    @cached_property
    def z2(self):
        mid = 0.5 * (self.zb[:-1] + self.zb[1:])
        out = np.empty(2 * self.nz + 1)
        out[0::2], out[1::2] = self.zb, mid
        return out

    @cached_property
    def q2_coords(self):
        X, Z = np.meshgrid(self.x2, self.z2, indexing="ij")
        return np.column_stack([X.ravel(), Z.ravel()])

    @cached_property
    def q1_coords(self):
        X, Z = np.meshgrid(self.xb, self.zb, indexing="ij")
        return np.column_stack([X.ravel(), Z.ravel()])

    @cached_property
    def element_ij(self):
        i, j = np.divmod(np.arange(self.n_elements), self.nz)
        return i, j

    @cached_property
    def q2_elements(self):
        i, j = self.element_ij
        a, b = np.divmod(np.arange(9), 3)
        return (2 * i[:, None] + a) * (2 * self.nz + 1) + 2 * j[:, None] + b

    @cached_property
    def q1_elements(self):
        i, j = self.element_ij
        a, b = np.divmod(np.arange(4), 2)
        return (i[:, None] + a) * (self.nz + 1) + j[:, None] + b

    @cached_property
    def h(self):
        i, j = self.element_ij
        return np.column_stack([np.diff(self.xb)[i], np.diff(self.zb)[j]])

    @cached_property
    def origin(self):
        i, j = self.element_ij
        return np.column_stack([self.xb[i], self.zb[j]])

    @cached_property
    def centers(self):
        return self.origin + 0.5 * self.h

    def q2_nodes_where(self, pred):
        """Q2 node ids whose coordinates satisfy ``pred(x, z)``."""
        c = self.q2_coords
        return np.flatnonzero(pred(c[:, 0], c[:, 1]))

    # -- reference data ---------------------------------------------------------

    @cached_property
    def _ref(self):
        pts, w = fem.box_quadrature(2, self.quad)
        N2, dN2 = fem.lagrange_basis(2, pts)
        N1, dN1 = fem.lagrange_basis(1, pts)
        return pts, w, N2, dN2, N1, dN1

    def quadrature_points(self, elems=None):
        """Physical quadrature points ``(e, q, 2)`` and weights ``(e, q)``."""
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        pts, w, *_ = self._ref
        h = self.h[elems]
        xq = self.origin[elems][:, None, :] + pts[None] * h[:, None, :]
        return xq, w[None] * np.prod(h, axis=1)[:, None]

    # -- element matrices and assembly -----------------------------------------

    def _vdofs(self, elems):
        return fem.vector_dofs(self.q2_elements[elems], 2)

    def _scale(self, elems, weight):
        return np.broadcast_to(np.asarray(weight, float), (len(elems),))

    def velocity_mass(self, elems=None, weight=1.0):
        """Vector Q2 mass ``int w v . V`` on the chosen elements."""
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        Me = fem.element_mass_batch(self.h[elems], order=2, ncomp=2, quad=self.quad)
        Me = Me * self._scale(elems, weight)[:, None, None]
        n = 2 * self.n_q2
        return fem.assemble(Me, self._vdofs(elems), shape=(n, n))

    def viscous(self, elems=None, weight=1.0):
        """``int w D(v) : D(V)``."""
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        A = np.broadcast_to(symmetric_identity(2), (len(elems), 2, 2, 2, 2))
        Ke = fem.element_stiffness_batch(self.h[elems], A, order=2, quad=self.quad, check=False)
        Ke = Ke * self._scale(elems, weight)[:, None, None]
        n = 2 * self.n_q2
        return fem.assemble(Ke, self._vdofs(elems), shape=(n, n))

    def elasticity(self, elems, tensors, weight=1.0):
        """``int w A D(u) : D(V)`` with one tensor per element."""
        elems = np.asarray(elems)
        n = 2 * self.n_q2
        if len(elems) == 0:
            return fem.assemble(np.zeros((0, 18, 18)), np.zeros((0, 18), int), shape=(n, n))
        Ke = fem.element_stiffness_batch(self.h[elems], tensors, order=2, quad=self.quad)
        Ke = Ke * self._scale(elems, weight)[:, None, None]
        return fem.assemble(Ke, self._vdofs(elems), shape=(n, n))

    def divergence(self, elems=None, weight=1.0, pressure_nodes=None, connectivity=None,
                   n_pressure=None):
        """``B[p, v] = int w q div v`` with Q1 ``q`` on the chosen elements.

        Returns a ``(n_q1, 2 n_q2)`` matrix, or only the rows in
        ``pressure_nodes`` if given.  ``connectivity`` (one row of four
        pressure ids per entry of ``elems``) overrides the Q1 numbering, e.g.
        to make the pressure discontinuous across an interface.
        """
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        conn = self.q1_elements[elems] if connectivity is None else np.asarray(connectivity)
        npr = self.n_q1 if n_pressure is None else n_pressure
        _, w, _, dN2, N1, _ = self._ref
        h = self.h[elems]
        vol = np.prod(h, axis=1) * self._scale(elems, weight)
        G = dN2[None] / h[:, None, None, :]                   # (e, q, a, i)
        Be = np.einsum("q,e,qp,eqai->epai", w, vol, N1, G).reshape(len(elems), 4, 18)
        rows = np.broadcast_to(conn[:, :, None], Be.shape)
        cols = np.broadcast_to(self._vdofs(elems)[:, None, :], Be.shape)
        B = sparse.coo_matrix((Be.ravel(), (rows.ravel(), cols.ravel())),
                              shape=(npr, 2 * self.n_q2)).tocsr()
        if pressure_nodes is not None:
            B = B[np.asarray(pressure_nodes)]
        return B

    def pressure_mass(self, elems=None, weight=1.0, connectivity=None, n_pressure=None):
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        conn = self.q1_elements[elems] if connectivity is None else np.asarray(connectivity)
        npr = self.n_q1 if n_pressure is None else n_pressure
        Me = fem.element_mass_batch(self.h[elems], order=1, quad=self.quad)
        Me = Me * self._scale(elems, weight)[:, None, None]
        return fem.assemble(Me, conn, shape=(npr, npr))

    def load(self, f, elems=None, weight=1.0, t=0.0):
        """``int w f . V`` for ``f(t, x, z) -> (fx, fz)`` evaluated at quadrature points."""
        elems = np.arange(self.n_elements) if elems is None else np.asarray(elems)
        xq, wq = self.quadrature_points(elems)
        fx, fz = f(t, xq[..., 0], xq[..., 1])
        F = np.stack(np.broadcast_arrays(fx, fz), axis=-1) * self._scale(elems, weight)[:, None, None]
        _, _, N2, *_ = self._ref
        fe = np.einsum("eq,qa,eqi->eai", wq, N2, F).reshape(len(elems), 18)
        return fem.assemble_vector(fe, self._vdofs(elems), 2 * self.n_q2)

    # -- evaluation ------------------------------------------------------------

    def locate(self, points):
        """Element ids and reference coordinates of points (clipped to the mesh)."""
        p = np.atleast_2d(np.asarray(points, float))
        i = np.clip(np.searchsorted(self.xb, p[:, 0], side="right") - 1, 0, self.nx - 1)
        j = np.clip(np.searchsorted(self.zb, p[:, 1], side="right") - 1, 0, self.nz - 1)
        e = i * self.nz + j
        s = (p - self.origin[e]) / self.h[e]
        return e, s

    def contains(self, points, tol=1e-12):
        p = np.atleast_2d(np.asarray(points, float))
        return ((p[:, 0] >= self.xb[0] - tol) & (p[:, 0] <= self.xb[-1] + tol)
                & (p[:, 1] >= self.zb[0] - tol) & (p[:, 1] <= self.zb[-1] + tol))

    def evaluate_velocity(self, v, points, grad=False):
        """Q2 vector field (node-major dofs) at points: values ``(P, 2)``.

        With ``grad=True`` also returns the gradient ``(P, 2, 2)``, ``[i, j] = d_j v_i``.
        """
        e, s = self.locate(points)
        N, dN = fem.lagrange_basis(2, s)
        V = np.asarray(v).reshape(-1, 2)[self.q2_elements[e]]    # (P, 9, 2)
        val = np.einsum("pa,pai->pi", N, V)
        if not grad:
            return val
        G = dN / self.h[e][:, None, :]
        return val, np.einsum("paj,pai->pij", G, V)

    def evaluate_pressure(self, p, points):
        e, s = self.locate(points)
        N, _ = fem.lagrange_basis(1, s)
        return np.einsum("pa,pa->p", N, np.asarray(p)[self.q1_elements[e]])

    def interpolate_velocity(self, f, t=0.0):
        """Nodal Q2 interpolant of ``f(t, x, z) -> (fx, fz)``."""
        c = self.q2_coords
        fx, fz = f(t, c[:, 0], c[:, 1])
        return np.column_stack(np.broadcast_arrays(fx, fz)).ravel()
