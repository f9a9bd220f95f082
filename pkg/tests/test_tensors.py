import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porolayer import fem
from porolayer.cells import solve_all_cells
from porolayer.geometry import (MicrostructureSpec, build_cell_mesh, channel_slab_spec,
                                full_solid_spec, random_spec)
from porolayer.tensors import (EffectivePlateTensors, TensorInputError, audit_tensors,
                               compute_tensors, effective_tensors, gram_matrix, to_voigt)

TIGHT = fem.SolveConfig(tol=1e-12)


@pytest.fixture(scope="module")
def solid_tensors(solid_cells_3d):
    return compute_tensors(solid_cells_3d)


def test_full_solid_membrane_closed_form(solid_tensors):
    a = solid_tensors.a
    assert a[0, 0, 0, 0] == pytest.approx(8.0 / 3.0, rel=1e-8)
    assert a[1, 1, 1, 1] == pytest.approx(8.0 / 3.0, rel=1e-8)
    assert a[0, 0, 1, 1] == pytest.approx(2.0 / 3.0, rel=1e-8)
    # shear: 2 mu M12 : M12 = 1/2 ... with mu = 1 gives a_1212 = mu = 1
    assert a[0, 1, 0, 1] == pytest.approx(1.0, rel=1e-8)
    assert np.abs(solid_tensors.b).max() <= 1e-10
    assert solid_tensors.solid_volume == pytest.approx(2.0)


def test_full_solid_bending_converges_to_a_third(solid_tensors):
    c = solid_tensors.c[0, 0, 0, 0]
    assert abs(c - 8.0 / 9.0) < 0.01
    assert c > 8.0 / 9.0


def test_audit_full_solid(solid_tensors):
    rep = audit_tensors(solid_tensors)
    assert rep.passed and rep.min_eigenvalue > 0
    assert max(v for d in rep.defects.values() for v in d.values()) < 1e-12


def test_audit_reports_injected_asymmetry(solid_tensors):
    a = solid_tensors.a.copy()
    a[0, 0, 1, 1] += 3e-4
    t = EffectivePlateTensors(a, solid_tensors.b, solid_tensors.c, 2.0)
    rep = audit_tensors(t)
    assert rep.defects["a"]["major"] == pytest.approx(3e-4, rel=1e-9)
    assert not rep.passed_symmetry and not rep.passed


def test_audit_zero_tensors():
    z = np.zeros((2, 2, 2, 2))
    rep = audit_tensors(EffectivePlateTensors(z, z, z, 1.0))
    assert rep.min_eigenvalue == 0.0
    assert not rep.passed_coercivity


def test_voigt_gram_matrix_basis_independent(solid_tensors):
    """Eigenvalues of the Voigt form equal those of the tensor acting on symmetric matrices."""
    A = to_voigt(solid_tensors.a)
    basis = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]),
             np.array([[0.0, 1.0], [1.0, 0.0]]) / np.sqrt(2.0)]
    G = np.array([[np.einsum("ijkl,ij,kl->", solid_tensors.a, e, f) for f in basis]
                  for e in basis])
    assert np.allclose(A, G, atol=1e-14)
    assert gram_matrix(solid_tensors).shape == (6, 6)


def test_energy_consistency(solid_cells_3d, solid_tensors):
    vs = solid_tensors.solid_volume
    for key, (i, j) in (("standard_11", (0, 0)), ("standard_22", (1, 1)),
                        ("standard_12", (0, 1))):
        assert solid_tensors.a[i, j, i, j] * vs == pytest.approx(
            solid_cells_3d[key].energy(), rel=1e-12)
    assert solid_tensors.c[0, 0, 0, 0] * vs == pytest.approx(
        solid_cells_3d["bending_11"].energy(), rel=1e-12)


def test_bending_entries_form_cauchy_sequence():
    vals = [effective_tensors(full_solid_spec((2, 2, n)), TIGHT, check_geometry=False).c[0, 0, 0, 0]
            for n in (4, 8, 16, 32)]
    diffs = np.abs(np.diff(vals))
    assert np.all(diffs[1:] < diffs[:-1])


def test_channel_slab_is_even_so_b_vanishes():
    t = effective_tensors(channel_slab_spec((4, 4, 8)), TIGHT)
    assert np.abs(t.b).max() <= 1e-10
    assert audit_tensors(t).passed


def test_strip_2d_scalars(strip_cells):
    t = compute_tensors(strip_cells)
    a, b, c = t.scalars()
    # strip |y3| < 1/2 in 2D plane strain: a* = 4 mu (lambda + mu)/(lambda + 2 mu)
    assert a == pytest.approx(8.0 / 3.0, rel=1e-10)
    assert abs(b) <= 1e-10
    assert t.solid_volume == pytest.approx(1.0)
    assert 0 < c < a


def test_missing_case_rejected(solid_cells_3d):
    partial = {k: v for k, v in solid_cells_3d.items() if k != "bending_12"}
    with pytest.raises(TensorInputError, match="bending_12"):
        compute_tensors(partial)


def test_mixed_meshes_rejected(solid_cells_3d):
    other = solve_all_cells(build_cell_mesh(full_solid_spec((2, 2, 2), lam=2.0)),
                            check_geometry=False)
    mixed = dict(solid_cells_3d)
    mixed["bending_12"] = other["bending_12"]
    with pytest.raises(TensorInputError, match="different"):
        compute_tensors(mixed)


def test_json_round_trip(tmp_path, solid_tensors):
    path = tmp_path / "tensors.json"
    solid_tensors.save(path)
    back = EffectivePlateTensors.load(path)
    for name in ("a", "b", "c"):
        assert np.array_equal(getattr(back, name), getattr(solid_tensors, name))
    assert back.provenance == solid_tensors.provenance
    assert set(solid_tensors.to_dict()) == {"a_star", "b_star", "c_star", "solid_volume",
                                            "provenance"}


def test_from_dict_rejects_bad_shapes():
    with pytest.raises(TensorInputError):
        EffectivePlateTensors.from_dict({"a_star": [[1.0]], "b_star": [[0.0]],
                                         "c_star": [[1.0]]})
    with pytest.raises(TensorInputError, match="c_star"):
        EffectivePlateTensors.from_dict({"a_star": [[[[1.0]]]], "b_star": [[[[0.0]]]]})


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_random_cells_audit(seed):
    t = effective_tensors(random_spec(np.random.default_rng(seed), (3, 3, 5)), TIGHT)
    rep = audit_tensors(t)
    assert rep.relative_defect <= 1e-10
    assert rep.min_eigenvalue > 0


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mirror_symmetric_cells_have_zero_b(seed):
    base = random_spec(np.random.default_rng(seed), (3, 3, 6))
    ind = base.indicator | base.indicator[..., ::-1]
    lam = 0.5 * (base.lam + base.lam[..., ::-1])
    mu = 0.5 * (base.mu + base.mu[..., ::-1])
    spec = MicrostructureSpec(3, base.resolution, ind, lam=lam, mu=mu)
    assert spec.is_even_in_y3()
    t = compute_tensors(solve_all_cells(build_cell_mesh(spec), TIGHT, check_geometry=False))
    assert np.abs(t.b).max() <= 1e-10
