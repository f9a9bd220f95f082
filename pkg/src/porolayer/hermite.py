"""Clamped 1D plate discretisation: cubic Hermite transverse field, linear in-plane field."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import fem


def hermite_shapes(s, h):
    """Cubic Hermite shape functions on an element of length ``h``.

    Returns values, first and second x-derivatives, each ``(P, 4)``, for the
    local dofs (value, slope) at the left node then at the right node.
    """
    s = np.asarray(s, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), s.shape)
    one = np.ones_like(s)
    N = np.stack([1 - 3 * s**2 + 2 * s**3, h * (s - 2 * s**2 + s**3),
                  3 * s**2 - 2 * s**3, h * (-s**2 + s**3)], axis=-1)
    dN = np.stack([(-6 * s + 6 * s**2) / h, 1 - 4 * s + 3 * s**2,
                   (6 * s - 6 * s**2) / h, -2 * s + 3 * s**2], axis=-1)
    d2N = np.stack([(-6 * one + 12 * s) / h**2, (-4 * one + 6 * s) / h,
                    (6 * one - 12 * s) / h**2, (-2 * one + 6 * s) / h], axis=-1)
    return N, dN, d2N


@dataclass
class ClampedBeam:
    """Plate on ``[0, L]`` with clamped ends.

    Transverse unknowns are Hermite dofs ``(u, u')`` at interior nodes; the
    in-plane unknown is a piecewise-linear field at interior nodes.
    """

    length: float
    n_elements: int
    quad: int = 4

    def __post_init__(self):
        if self.length <= 0 or self.n_elements < 1:
            raise ValueError("plate needs positive length and at least one element")

    @cached_property
    def nodes(self):
        return np.linspace(0.0, self.length, self.n_elements + 1)

    @property
    def h(self):
        return self.length / self.n_elements

    @property
    def n_bending(self):
        """Free Hermite dofs (interior nodes only)."""
        return 2 * (self.n_elements - 1)

    @property
    def n_membrane(self):
        return self.n_elements - 1

    def _full_to_free(self, n_per_node):
        n_full = n_per_node * (self.n_elements + 1)
        keep = np.arange(n_per_node, n_full - n_per_node)
        return sparse.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))),
                                 shape=(n_full, len(keep)))

    @cached_property
    def _elem_dofs(self):
        e = np.arange(self.n_elements)
        herm = np.column_stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3])
        lin = np.column_stack([e, e + 1])
        return herm, lin

    def _assemble(self, Ke, dofs_r, dofs_c, nr, nc, Pr, Pc):
        rows = np.broadcast_to(dofs_r[:, :, None], Ke.shape)
        cols = np.broadcast_to(dofs_c[:, None, :], Ke.shape)
        K = sparse.coo_matrix((Ke.ravel(), (rows.ravel(), cols.ravel())), shape=(nr, nc)).tocsr()
        return (Pr.T @ K @ Pc).tocsr()

    @cached_property
    def _qdata(self):
        s, w = fem.gauss_points(self.quad)
        return s, w, hermite_shapes(s, self.h)

    def mass(self):
        """``int u V`` on free Hermite dofs."""
        s, w, (N, _, _) = self._qdata
        me = np.einsum("q,qa,qb->ab", w, N, N) * self.h
        return self._hh(me)

    def bending(self):
        """``int u'' V''`` on free Hermite dofs."""
        s, w, (_, _, d2N) = self._qdata
        ke = np.einsum("q,qa,qb->ab", w, d2N, d2N) * self.h
        return self._hh(ke)

    def _hh(self, ke):
        herm, _ = self._elem_dofs
        Ke = np.broadcast_to(ke, (self.n_elements, 4, 4))
        P = self._full_to_free(2)
        n = 2 * (self.n_elements + 1)
        return self._assemble(Ke, herm, herm, n, n, P, P)

    def membrane(self):
        """``int u1' U'`` on free linear dofs."""
        ke = np.array([[1.0, -1.0], [-1.0, 1.0]]) / self.h
        _, lin = self._elem_dofs
        Ke = np.broadcast_to(ke, (self.n_elements, 2, 2))
        P = self._full_to_free(1)
        n = self.n_elements + 1
        return self._assemble(Ke, lin, lin, n, n, P, P)

    def coupling(self):
        """``C[U, u] = int u'' U'`` (rows: linear dofs, columns: Hermite dofs)."""
        s, w, (_, _, d2N) = self._qdata
        dL = np.array([-1.0, 1.0]) / self.h
        ke = np.einsum("q,a,qb->ab", w, dL, d2N) * self.h
        herm, lin = self._elem_dofs
        Ke = np.broadcast_to(ke, (self.n_elements, 2, 4))
        return self._assemble(Ke, lin, herm, self.n_elements + 1, 2 * (self.n_elements + 1),
                              self._full_to_free(1), self._full_to_free(2))

    def load(self, g, t=0.0):
        """``int g V`` for ``g(t, x)`` on free Hermite dofs."""
        s, w, (N, _, _) = self._qdata
        x = self.nodes[:-1, None] + s[None] * self.h
        gq = np.broadcast_to(np.asarray(g(t, x), dtype=float), x.shape)
        fe = np.einsum("q,eq,qa->ea", w, gq, N) * self.h
        herm, _ = self._elem_dofs
        f = np.bincount(herm.ravel(), weights=fe.ravel(), minlength=2 * (self.n_elements + 1))
        return self._full_to_free(2).T @ f

    def stiffness_blocks(self, a, b, c):
        """Energy form ``a u1'U1' + b (u'' U1' + u1' V'') + c u'' V''`` split into blocks.

        Returns ``(S_bb, S_mb, S_mm)`` for bending-bending, membrane-bending and
        membrane-membrane couplings; the full form is symmetric
        ``[[S_bb, S_mb.T], [S_mb, S_mm]]``.
        """
        return c * self.bending(), b * self.coupling(), a * self.membrane()

    # -- evaluation -------------------------------------------------------------

    def _locate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = np.clip(np.floor(x / self.h).astype(int), 0, self.n_elements - 1)
        return e, (x - self.nodes[e]) / self.h

    def hermite_matrix(self, x, deriv=0):
        """Matrix mapping free Hermite dofs to the ``deriv``-th derivative at points ``x``."""
        e, s = self._locate(x)
        N = hermite_shapes(s, self.h)[deriv]
        herm, _ = self._elem_dofs
        rows = np.repeat(np.arange(len(e)), 4)
        M = sparse.coo_matrix((N.ravel(), (rows, herm[e].ravel())),
                              shape=(len(e), 2 * (self.n_elements + 1))).tocsr()
        return (M @ self._full_to_free(2)).tocsr()

    def linear_matrix(self, x, deriv=0):
        e, s = self._locate(x)
        if deriv == 0:
            N = np.column_stack([1 - s, s])
        else:
            N = np.broadcast_to(np.array([-1.0, 1.0]) / self.h, (len(e), 2))
        _, lin = self._elem_dofs
        rows = np.repeat(np.arange(len(e)), 2)
        M = sparse.coo_matrix((np.asarray(N).ravel(), (rows, lin[e].ravel())),
                              shape=(len(e), self.n_elements + 1)).tocsr()
        return (M @ self._full_to_free(1)).tocsr()

    def evaluate(self, q, x, deriv=0):
        return self.hermite_matrix(x, deriv) @ q

    def evaluate_membrane(self, u1, x, deriv=0):
        return self.linear_matrix(x, deriv) @ u1

    def interpolate(self, f, df):
        """Hermite interpolant of ``f`` with derivative ``df`` at the interior nodes."""
        xi = self.nodes[1:-1]
        return np.column_stack([f(xi), df(xi)]).ravel()
