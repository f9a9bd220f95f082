"""Finite-element kernels and linear solvers shared by all solvers.

Elements are tensor-product Lagrange elements (Q1 or Q2) on axis-aligned
boxes. Local degrees of freedom are ordered node-major: ``(node, component)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    """Iteration stopped before reaching the tolerance.

    Carries the best iterate and the residual history.
    """

    def __init__(self, message, x=None, history=None):
        super().__init__(message)
        self.x = x
        self.history = history


class IndefiniteOperatorError(SolverError):
    def __init__(self, index, curvature):
        super().__init__(f"negative curvature p^T A p = {curvature:.3e} "
                         f"in search direction {index}")
        self.index = index
        self.curvature = curvature


class SingularOperatorError(SolverError):
    pass


class ConstraintError(ValueError):
    pass


class RankDeficiencyError(SolverError):
    pass


# -- reference elements -------------------------------------------------------

def gauss_points(n):
    """Gauss-Legendre points and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _lagrange_1d(order, x):
    nodes = np.linspace(0.0, 1.0, order + 1)
    x = np.asarray(x, dtype=float)
    N = np.ones((len(x), order + 1))
    dN = np.zeros((len(x), order + 1))
    for a in range(order + 1):
        others = [b for b in range(order + 1) if b != a]
        for b in others:
            N[:, a] *= (x - nodes[b]) / (nodes[a] - nodes[b])
        for c in others:
            term = np.full(len(x), 1.0 / (nodes[a] - nodes[c]))
            for b in others:
                if b != c:
                    term *= (x - nodes[b]) / (nodes[a] - nodes[b])
            dN[:, a] += term
    return N, dN


def lagrange_basis(order, points):
    """Tensor-product shape functions on the unit box.

    ``points`` has shape ``(q, d)``. Returns ``N`` of shape ``(q, n)`` and
    reference gradients ``dN`` of shape ``(q, n, d)`` with the local nodes in
    C order over ``{0..order}^d``.
    """
    points = np.atleast_2d(points)
    q, d = points.shape
    one = [_lagrange_1d(order, points[:, k]) for k in range(d)]
    idx = list(np.ndindex(*(order + 1,) * d))
    N = np.ones((q, len(idx)))
    dN = np.ones((q, len(idx), d))
    for a, multi in enumerate(idx):
        for k in range(d):
            Nk, dNk = one[k]
            N[:, a] *= Nk[:, multi[k]]
            for j in range(d):
                dN[:, a, j] *= dNk[:, multi[k]] if j == k else Nk[:, multi[k]]
    return N, dN


def box_quadrature(dim, n):
    x, w = gauss_points(n)
    pts = np.array(list(np.ndindex(*(n,) * dim)))
    return x[pts], np.prod(w[pts], axis=1)


@dataclass(frozen=True)
class ReferenceElement:
    dim: int
    order: int = 1
    quad: int | None = None

    def __post_init__(self):
        if self.quad is None:
            object.__setattr__(self, "quad", self.order + 1)

    @property
    def points(self):
        return box_quadrature(self.dim, self.quad)[0]

    @property
    def weights(self):
        return box_quadrature(self.dim, self.quad)[1]

    def basis(self, points=None):
        return lagrange_basis(self.order, self.points if points is None else points)

    @property
    def n_nodes(self):
        return (self.order + 1) ** self.dim


def check_elasticity_tensor(A, tol=1e-12):
    A = np.asarray(A, dtype=float)
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    defect = max(np.abs(A - A.transpose(1, 0, 2, 3)).max(initial=0.0),
                 np.abs(A - A.transpose(0, 1, 3, 2)).max(initial=0.0),
                 np.abs(A - A.transpose(2, 3, 0, 1)).max(initial=0.0))
    if defect > tol * scale:
        raise ValueError(f"elasticity tensor lacks minor/major symmetry (defect {defect:.2e})")
    return A


def element_stiffness_elasticity(h, A, order=1, quad=None):
    """Local stiffness of ``A D(u) : D(v)`` on a box of edge lengths ``h``.

    ``A`` is a ``(d, d, d, d)`` tensor constant on the element. Returns a
    ``(n d, n d)`` matrix.
    """
    h = np.asarray(h, dtype=float)
    A = check_elasticity_tensor(A)
    return element_stiffness_batch(h[None], A[None], order, quad)[0]


def element_stiffness_batch(h, A, order=1, quad=None, check=True):
    """Vectorised :func:`element_stiffness_elasticity`.

    ``h`` is ``(e, d)`` (or ``(d,)`` shared by all elements), ``A`` is
    ``(e, d, d, d, d)``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    if check:
        for Ae in A[: min(len(A), 64)]:
            check_elasticity_tensor(Ae)
    ref = ReferenceElement(d, order, quad)
    _, dN = ref.basis()
    w = ref.weights
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(A), d))
    G = dN[None] / h[:, None, None, :]                    # (e, q, a, j)
    vol = np.prod(h, axis=1)
    K = np.einsum("q,e,eqaj,eijkl,eqbl->eaibk", w, vol, G, A, G, optimize=True)
    n = dN.shape[1]
    return K.reshape(len(A), n * d, n * d)


def element_mass_batch(h, order=1, ncomp=1, quad=None):
    """Consistent mass matrices, identity across vector components."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    d = h.shape[1]
    ref = ReferenceElement(d, order, quad or order + 2)
    N, _ = ref.basis()
    m = np.einsum("q,qa,qb->ab", ref.weights, N, N)
    vol = np.prod(h, axis=1)
    M = vol[:, None, None] * m[None]
    if ncomp == 1:
        return M
    n = m.shape[0]
    eye = np.eye(ncomp)
    return np.einsum("eab,ij->eaibj", M, eye).reshape(len(h), n * ncomp, n * ncomp)


def vector_dofs(nodes, ncomp):
    """Expand node indices ``(e, n)`` to dof indices ``(e, n * ncomp)``."""
    nodes = np.asarray(nodes)
    return (nodes[..., None] * ncomp + np.arange(ncomp)).reshape(*nodes.shape[:-1],
                                                                 nodes.shape[-1] * ncomp)


def assemble(local, rows, cols=None, shape=None):
    """Sum local matrices ``(e, r, c)`` into a CSR matrix."""
    if cols is None:
        cols = rows
    e, r, c = local.shape
    I = np.broadcast_to(rows[:, :, None], (e, r, c)).ravel()
    J = np.broadcast_to(cols[:, None, :], (e, r, c)).ravel()
    if shape is None:
        n = int(max(rows.max(), cols.max())) + 1
        shape = (n, n)
    return sp.csr_matrix((local.ravel(), (I, J)), shape=shape)


def assemble_vector(local, rows, n):
    return np.bincount(rows.ravel(), weights=local.ravel(), minlength=n)


# -- operators and constraints ---------------------------------------------------

@dataclass
class SparseOperator:
    """Sparse matrix with symmetry flag and optional known null space.

    ``nullspace`` rows form an orthonormal basis of the kernel that the
    solver projects out. ``singular`` marks a detected kernel that nobody
    took care of.
    """

    matrix: sp.csr_matrix
    symmetric: bool = True
    nullspace: np.ndarray | None = None
    singular: bool = False

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("operator must be square")
        if self.symmetric:
            big = abs(self.matrix).max() if self.matrix.nnz else 0.0
            asym = abs(self.matrix - self.matrix.T).max() if self.matrix.nnz else 0.0
            if asym > 1e-14 * big:
                raise ValueError(f"operator flagged symmetric but asymmetry is {asym:.2e}")

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


@dataclass(frozen=True)
class ConstraintMap:
    """Periodic master/slave identification plus optional mean-zero functionals.

    ``components[i]`` is the vector component of dof ``i``; ``mean_weights``
    holds one row of functional weights per component.
    """

    n_dofs: int
    slaves: np.ndarray
    masters: np.ndarray
    components: np.ndarray | None = None
    mean_weights: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.slaves, dtype=np.int64)
        m = np.asarray(self.masters, dtype=np.int64)
        object.__setattr__(self, "slaves", s)
        object.__setattr__(self, "masters", m)
        if s.shape != m.shape:
            raise ConstraintError("slaves and masters differ in length")
        if len(np.unique(s)) != len(s):
            raise ConstraintError("a dof is slave to more than one master")
        if np.intersect1d(s, m).size:
            raise ConstraintError("constraint chain detected: a slave is also a master")
        if self.offset != 0.0:
            raise ConstraintError("only homogeneous constraints are supported")
        if self.mean_weights is not None:
            w = np.atleast_2d(self.mean_weights)
            object.__setattr__(self, "mean_weights", w)
            if np.any(w.sum(axis=1) <= 0):
                raise ConstraintError("mean-zero functional needs positive total weight")

    def prolongation(self):
        """Sparse ``P`` with full = P @ reduced."""
        n = self.n_dofs
        keep = np.setdiff1d(np.arange(n), self.slaves)
        red = -np.ones(n, dtype=np.int64)
        red[keep] = np.arange(len(keep))
        col = red.copy()
        col[self.slaves] = red[self.masters]
        return sp.csr_matrix((np.ones(n), (np.arange(n), col)), shape=(n, len(keep)))


@dataclass
class ReducedSystem:
    op: SparseOperator
    rhs: np.ndarray
    P: sp.csr_matrix
    cmap: ConstraintMap

    def expand(self, y):
        """Full vector from a reduced one, shifted to satisfy the mean-zero functionals."""
        x = self.P @ y
        cm = self.cmap
        if cm.mean_weights is not None and cm.components is not None:
            for c, w in enumerate(cm.mean_weights):
                mask = cm.components == c
                x[mask] -= (w @ x) / w[mask].sum()
        return x

    def reduce(self, x):
        """Inverse of :meth:`expand` on periodic vectors (drops slave values)."""
        keep = np.setdiff1d(np.arange(self.cmap.n_dofs), self.cmap.slaves)
        return np.asarray(x)[keep]


def apply_constraints(op, rhs, cmap):
    """Eliminate periodic slaves and record the constant-mode kernel."""
    if isinstance(op, SparseOperator):
        mat, symmetric = op.matrix, op.symmetric
    else:
        mat, symmetric = sp.csr_matrix(op), True
    if mat.shape[0] != cmap.n_dofs or len(rhs) != cmap.n_dofs:
        raise ConstraintError("constraint map does not match operator dimension")
    P = cmap.prolongation()
    K = (P.T @ mat @ P).tocsr()
    K = (0.5 * (K + K.T)).tocsr() if symmetric else K
    b = P.T @ np.asarray(rhs, dtype=float)

    kernel = []
    if cmap.components is not None:
        comp_red = np.zeros(P.shape[1], dtype=np.int64)
        comp_red[P.indices] = cmap.components  # every reduced col has the master's component
        scale = abs(K).max() if K.nnz else 1.0
        for c in np.unique(cmap.components):
            e = (comp_red == c).astype(float)
            if np.abs(K @ e).max() <= 1e-10 * scale * max(1.0, np.sqrt(e.sum())):
                kernel.append(e / np.linalg.norm(e))
    nullspace = np.array(kernel) if kernel else None
    if nullspace is not None and cmap.mean_weights is None:
        red = SparseOperator(K, symmetric, nullspace=None, singular=True)
    else:
        red = SparseOperator(K, symmetric, nullspace=nullspace)
    return ReducedSystem(red, b, P, cmap)


# -- SPD iterative solver ------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-10
    max_iter: int = 20000
    preconditioner: str = "diagonal"
    raise_on_fail: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)
    ritz_min: float = float("nan")
    ritz_max: float = float("nan")


def _ritz_extremes(alphas, betas):
    k = len(alphas)
    if k == 0:
        return float("nan"), float("nan")
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    for i in range(k):
        diag[i] = 1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i > 0 else 0.0)
        if i < k - 1:
            off[i] = np.sqrt(max(betas[i], 0.0)) / alphas[i]
    ev = sla.eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(ev.min()), float(ev.max())


def solve_spd(op, rhs, cfg=SolveConfig()):
    """Preconditioned conjugate gradients with kernel projection.

    Returns ``(x, info)``. A flagged null space is projected out of the
    right-hand side, the preconditioned residuals, and the iterate, so the
    method works on the orthogonal complement of the kernel.
    """
    if not isinstance(op, SparseOperator):
        op = SparseOperator(op)
    if op.singular:
        raise SingularOperatorError("operator has an unhandled kernel "
                                    "(constant modes without a mean-zero functional)")
    A = op.matrix
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError("right-hand side dimension mismatch")
    Z = op.nullspace

    def project(v):
        return v if Z is None else v - Z.T @ (Z @ v)

    b = project(b)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, SolveInfo(True, 0, [0.0])
    if cfg.preconditioner == "diagonal":
        dinv = A.diagonal().copy()
        dinv[dinv == 0] = 1.0
        dinv = 1.0 / dinv
    else:
        dinv = np.ones_like(b)
    r = b.copy()
    z = project(dinv * r)
    p = z.copy()
    rz = r @ z
    history = [1.0]
    alphas, betas = [], []
    best = (1.0, x.copy())
    converged = False
    for k in range(cfg.max_iter):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise IndefiniteOperatorError(k, float(pAp))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        alphas.append(alpha)
        if res < best[0]:
            best = (res, x.copy())
        if res <= cfg.tol:
            converged = True
            break
        z = project(dinv * r)
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    x = project(x)
    true_res = np.linalg.norm(b - A @ x) / bnorm
    lo, hi = _ritz_extremes(alphas, betas)
    info = SolveInfo(converged and true_res <= 10 * cfg.tol, len(alphas), history, lo, hi)
    if not info.converged and cfg.raise_on_fail:
        raise ConvergenceError(f"CG stopped after {len(alphas)} iterations at "
                               f"relative residual {true_res:.3e}", best[1], history)
    return x, info


# -- dense oracle -------------------------------------------------------------

DENSE_CAP = 5000


def dense_oracle_solve(op, rhs, cap=DENSE_CAP):
    """Direct LU solve with one step of iterative refinement.

    ``op`` is a matrix, a :class:`SparseOperator` (kernel handled by bordering
    with the null-space basis) or a saddle description ``(K, B)`` for
    ``K x - B^T p = f, B x = g`` with ``rhs = (f, g)``.
    """
    if isinstance(op, tuple):
        K, B = op
        K = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
        B = B.toarray() if sp.issparse(B) else np.atleast_2d(np.asarray(B, dtype=float))
        f, g = rhs
        n, m = K.shape[0], B.shape[0]
        if n + m > cap:
            raise ValueError(f"dense oracle capped at {cap} unknowns, got {n + m}")
        big = np.block([[K, -B.T], [B, np.zeros((m, m))]])
        sol = _lu_refined(big, np.concatenate([f, g]))
        return sol[:n], sol[n:]
    nullspace = None
    if isinstance(op, SparseOperator):
        nullspace = op.nullspace
        op = op.matrix
    A = op.toarray() if sp.issparse(op) else np.asarray(op, dtype=float)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    k = 0 if nullspace is None else len(nullspace)
    if n + k > cap:
        raise ValueError(f"dense oracle capped at {cap} unknowns, got {n + k}")
    if k:
        Z = nullspace
        big = np.block([[A, Z.T], [Z, np.zeros((k, k))]])
        b = b - Z.T @ (Z @ b)
        return _lu_refined(big, np.concatenate([b, np.zeros(k)]))[:n]
    return _lu_refined(A, b)


def _lu_refined(A, b):
    lu = sla.lu_factor(A)
    x = sla.lu_solve(lu, b)
    x += sla.lu_solve(lu, b - A @ x)
    return x


# -- saddle point systems -------------------------------------------------------

def _pressure_gauge_needed(B, tol=1e-10):
    B = sp.csr_matrix(B)
    if B.shape[0] == 0:
        return False
    ones = np.ones(B.shape[0])
    scale = abs(B).max() * np.sqrt(B.shape[0])
    return np.linalg.norm(B.T @ ones) <= tol * max(scale, 1e-300)


class SaddleSolver:
    """Factorisation of ``[[K, B^T], [B, -C]]``-type systems for repeated solves.

    Solves ``K x - B^T p = f, B x = g``. A pressure gauge ``w . p = 0`` is
    appended as an extra multiplier when the pressure block is only defined
    up to constants; ``gauge`` must be given exactly then.
    """

    def __init__(self, K, B, gauge=None, method="auto", dense_threshold=2000,
                 tol=1e-12, max_iter=5000):
        K = sp.csr_matrix(K)
        B = sp.csr_matrix(B)
        self.n, self.m = K.shape[0], B.shape[0]
        if gauge is not None:
            gauge = np.atleast_2d(np.asarray(gauge, dtype=float))
            if gauge.shape[0] != 1:
                raise RankDeficiencyError("at most one pressure gauge may be supplied")
        needs = _pressure_gauge_needed(B)
        if needs and gauge is None:
            raise RankDeficiencyError("divergence block has constant pressures in its "
                                      "kernel; a pressure gauge is required")
        if not needs and gauge is not None:
            raise RankDeficiencyError("pressure gauge supplied but the divergence "
                                      "block already has full row rank")
        self.k = 0 if gauge is None else 1
        blocks = [[K, B.T], [B, None]]
        if gauge is not None:
            blocks = [[K, B.T, None], [B, None, sp.csr_matrix(gauge.T)],
                      [None, sp.csr_matrix(gauge), None]]
        self.matrix = sp.bmat(blocks, format="csc")
        size = self.matrix.shape[0]
        if method == "auto":
            method = "dense" if size <= dense_threshold else "direct"
        self.method = method
        self.tol, self.max_iter = tol, max_iter
        if method == "dense":
            self._dense = sla.lu_factor(self.matrix.toarray())
        elif method == "direct":
            self._lu = spla.splu(self.matrix, permc_spec="COLAMD")
        elif method == "minres":
            d = np.abs(K.diagonal())
            d[d == 0] = 1.0
            schur = np.abs(np.asarray((B.multiply(B)) @ (1.0 / d)).ravel())
            schur[schur == 0] = 1.0
            diag = np.concatenate([d, schur, np.ones(self.k)])
            self._prec = spla.LinearOperator(self.matrix.shape, matvec=lambda v: v / diag)
        else:
            raise ValueError(f"unknown saddle method {method!r}")

    def solve(self, f, g):
        rhs = np.concatenate([np.asarray(f, float), np.asarray(g, float), np.zeros(self.k)])
        # unknown q = -p keeps the block matrix symmetric
        if self.method == "dense":
            sol = sla.lu_solve(self._dense, rhs)
        elif self.method == "direct":
            sol = self._lu.solve(rhs)
            sol += self._lu.solve(rhs - self.matrix @ sol)
        else:
            sol, info = spla.minres(self.matrix, rhs, M=self._prec, rtol=self.tol,
                                    maxiter=self.max_iter)
            if info != 0:
                raise ConvergenceError(f"MINRES did not converge (info={info})", sol)
        x = sol[: self.n]
        q = sol[self.n: self.n + self.m]
        res = np.linalg.norm(self.matrix @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
        self.last_residual = res
        if self.method == "minres" and res > 10 * self.tol * max(1.0, np.sqrt(len(rhs))):
            raise ConvergenceError(f"saddle residual {res:.2e} above tolerance", x)
        return x, -q


def solve_saddle(K, B, f, g, gauge=None, method="auto", dense_threshold=2000, tol=1e-12):
    """One-shot solve of ``K x - B^T p = f, B x = g``; returns ``(x, p)``."""
    return SaddleSolver(K, B, gauge=gauge, method=method,
                        dense_threshold=dense_threshold, tol=tol).solve(f, g)
