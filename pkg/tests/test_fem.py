import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from porolayer import fem
from porolayer.cells import CellLoadCase, CellOperator
from porolayer.geometry import build_cell_mesh, full_solid_spec, isotropic_tensor

A_UNIT = isotropic_tensor(1.0, 1.0, 3)


def _nodal(fun, d=3):
    """Nodal values of a vector field on the unit reference box (C-ordered corners)."""
    corners = np.array(list(np.ndindex(*(2,) * d)), float)
    return np.array([fun(c) for c in corners]).ravel()


def test_gauss_rule_integrates_cubics():
    x, w = fem.gauss_points(2)
    assert np.isclose(w @ x**3, 0.25) and np.isclose(w @ x**2, 1.0 / 3.0)


def test_element_kernel_contains_rigid_motions():
    K = fem.element_stiffness_elasticity(np.ones(3), A_UNIT)
    assert np.allclose(K, K.T, atol=1e-14)
    u = _nodal(lambda y: [1.0, -2.0, 0.5])
    assert abs(u @ K @ u) < 1e-12
    rot = _nodal(lambda y: [-y[1], y[0], 0.0])
    assert abs(rot @ K @ rot) < 1e-12
    ev = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(ev) < 1e-10 * ev.max()) == 6 and ev.min() > -1e-12


def test_element_kernel_dimension_2d():
    K = fem.element_stiffness_elasticity(np.ones(2), isotropic_tensor(1.0, 1.0, 2))
    ev = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(ev) < 1e-10 * ev.max()) == 3


def test_constant_strain_energy_is_lambda_plus_two_mu():
    K = fem.element_stiffness_elasticity(np.ones(3), A_UNIT)
    u = _nodal(lambda y: [y[0], 0.0, 0.0])
    assert u @ K @ u == pytest.approx(3.0, rel=1e-14)


def test_non_symmetric_tensor_rejected():
    A = A_UNIT.copy()
    A[0, 0, 1, 1] += 0.1
    with pytest.raises(ValueError, match="symmetry"):
        fem.element_stiffness_elasticity(np.ones(3), A)


def test_identity_with_one_pair_reduces_by_one():
    cm = fem.ConstraintMap(n_dofs=5, slaves=[4], masters=[0])
    red = fem.apply_constraints(sp.identity(5), np.ones(5), cm)
    assert red.op.shape == (4, 4)


def test_constraint_chain_rejected():
    with pytest.raises(fem.ConstraintError, match="chain"):
        fem.ConstraintMap(n_dofs=4, slaves=[2, 3], masters=[0, 2])


def test_mean_weights_must_be_positive():
    with pytest.raises(fem.ConstraintError):
        fem.ConstraintMap(n_dofs=2, slaves=[], masters=[], components=np.zeros(2, int),
                          mean_weights=np.zeros((1, 2)))


def test_periodic_cell_without_mean_zero_is_singular():
    op = CellOperator(build_cell_mesh(full_solid_spec((2, 2, 2))))
    cm = op.cmap
    bare = fem.ConstraintMap(cm.n_dofs, cm.slaves, cm.masters, components=cm.components)
    red = fem.apply_constraints(fem.SparseOperator(op.K), op.load(CellLoadCase(0, 0)), bare)
    assert red.op.singular
    with pytest.raises(fem.SingularOperatorError):
        fem.solve_spd(red.op, red.rhs)


def test_mean_zero_solution_and_exact_periodicity():
    mesh = build_cell_mesh(full_solid_spec((3, 3, 4)))
    op = CellOperator(mesh)
    red = op.reduced(op.load(CellLoadCase(0, 1, "bending")))
    y, info = fem.solve_spd(red.op, red.rhs, fem.SolveConfig(tol=1e-12))
    x = red.expand(y)
    assert info.converged and info.ritz_min > 0
    for c, w in enumerate(op.cmap.mean_weights):
        assert abs(w @ x) / w.sum() < 1e-12
    X = x.reshape(-1, 3)
    loc = op.local
    assert np.array_equal(X[loc[mesh.periodic_slaves]], X[loc[mesh.periodic_masters]])
    # expansion then reduction is the identity on the reduced space
    assert np.allclose(red.reduce(red.P @ y), y, rtol=0, atol=0)


def test_solve_spd_zero_rhs():
    x, info = fem.solve_spd(sp.identity(4, format="csr"), np.zeros(4))
    assert info.iterations == 0 and not x.any()


def test_solve_spd_diagonal():
    x, _ = fem.solve_spd(sp.diags([2.0, 1.0]), np.array([2.0, 1.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)


def test_solve_spd_matches_dense_oracle(rng):
    R = rng.standard_normal((50, 50))
    A = R @ R.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x, info = fem.solve_spd(sp.csr_matrix(A), b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10
    ref = fem.dense_oracle_solve(A, b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_indefinite_operator_names_direction():
    A = sp.diags([1.0, -1.0])
    with pytest.raises(fem.IndefiniteOperatorError) as exc:
        fem.solve_spd(fem.SparseOperator(A), np.array([1.0, 2.0]), fem.SolveConfig(preconditioner="none"))
    assert exc.value.index == 0 and exc.value.curvature < 0


def test_non_convergence_carries_best_iterate(rng):
    R = rng.standard_normal((40, 40))
    A = R @ R.T + 1e-3 * np.eye(40)
    cfg = fem.SolveConfig(max_iter=3)
    with pytest.raises(fem.ConvergenceError) as exc:
        fem.solve_spd(sp.csr_matrix(A), rng.standard_normal(40), cfg)
    assert exc.value.x.shape == (40,) and len(exc.value.history) == 4


def test_solve_config_bounds():
    with pytest.raises(ValueError):
        fem.SolveConfig(tol=1.5)
    with pytest.raises(ValueError):
        fem.SolveConfig(max_iter=0)


def test_saddle_hand_solution():
    x, p = fem.solve_saddle(sp.identity(2), sp.csr_matrix([[1.0, 1.0]]), np.zeros(2), [1.0])
    assert np.allclose(x, [0.5, 0.5], atol=1e-15) and np.allclose(p, [0.5], atol=1e-15)
    xd, pd = fem.dense_oracle_solve((sp.identity(2), np.array([[1.0, 1.0]])),
                                    (np.zeros(2), np.array([1.0])))
    assert np.allclose(xd, x) and np.allclose(pd, p)


@pytest.mark.parametrize("method", ["dense", "direct", "minres"])
def test_saddle_zero_rhs(method):
    x, p = fem.solve_saddle(sp.identity(2), sp.csr_matrix([[1.0, 1.0]]), np.zeros(2), [0.0],
                            method=method)
    assert not np.any(x) and not np.any(p)


def test_saddle_gauge_rules():
    K = sp.identity(2)
    B = sp.csr_matrix([[1.0, 0.0], [-1.0, 0.0]])   # constants in the kernel of B^T
    with pytest.raises(fem.RankDeficiencyError):
        fem.solve_saddle(K, B, np.zeros(2), np.zeros(2))
    with pytest.raises(fem.RankDeficiencyError):
        fem.solve_saddle(K, sp.csr_matrix([[1.0, 1.0]]), np.zeros(2), [0.0], gauge=[1.0])


def test_stokes_box_with_zero_forcing_is_quiescent():
    from porolayer.quadmesh import QuadMesh
    m = QuadMesh(np.linspace(0, 1, 4), np.linspace(0, 1, 4))
    c2 = m.q2_coords
    bnd = (np.isclose(c2, 0) | np.isclose(c2, 1)).any(axis=1)
    free = fem.vector_dofs(np.flatnonzero(~bnd)[:, None], 2).ravel()
    K = m.viscous()[free][:, free]
    B = m.divergence()[:, free]
    gauge = np.ones((1, m.n_q1)) / m.n_q1
    x, p = fem.solve_saddle(K, B, np.zeros(len(free)), np.zeros(B.shape[0]), gauge=gauge)
    assert not np.any(np.abs(x) > 1e-14) and not np.any(np.abs(p) > 1e-14)


def test_dense_oracle_identity_and_cap():
    b = np.arange(5.0)
    assert np.array_equal(fem.dense_oracle_solve(np.eye(5), b), b)
    with pytest.raises(ValueError, match="capped"):
        fem.dense_oracle_solve(np.eye(5), b, cap=4)


def test_dense_oracle_hilbert_residual():
    n = 8
    H = 1.0 / (np.arange(n)[:, None] + np.arange(n)[None] + 1.0)
    b = np.ones(n)
    x = fem.dense_oracle_solve(H, b)
    assert np.linalg.norm(H @ x - b) / np.linalg.norm(b) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), hx=st.floats(0.2, 3.0), hy=st.floats(0.2, 3.0),
       hz=st.floats(0.2, 3.0), lam=st.floats(0.0, 5.0), mu=st.floats(0.1, 5.0))
def test_element_energy_identity(seed, hx, hy, hz, lam, mu):
    """x^T K x equals the sum of element energies; rigid motions cost nothing."""
    gen = np.random.default_rng(seed)
    h = np.array([hx, hy, hz])
    A = isotropic_tensor(lam, mu, 3)
    conn = np.array([[0, 1, 2, 3, 4, 5, 6, 7], [4, 5, 6, 7, 8, 9, 10, 11]])
    dofs = fem.vector_dofs(conn, 3)
    Ke = fem.element_stiffness_batch(h, np.stack([A, A]))
    K = fem.assemble(Ke, dofs, shape=(36, 36))
    x = gen.standard_normal(36)
    parts = sum(x[d] @ k @ x[d] for d, k in zip(dofs, Ke))
    total = x @ (K @ x)
    assert abs(total - parts) <= 1e-12 * abs(parts)
    assert np.allclose(Ke[0], Ke[0].T, atol=1e-13 * abs(Ke[0]).max())
    assert np.linalg.eigvalsh(Ke[0]).min() > -1e-10 * abs(Ke[0]).max()
