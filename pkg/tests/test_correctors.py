import numpy as np
import pytest

from porolayer.correctors import (CellField, CorrectorError, SamplePoints, compare_runs,
                                  error_table, is_monotone_decreasing, reconstruct_u2,
                                  sample_micro, sample_reconstruction, slope_fits,
                                  velocity_identity_defect)
from porolayer.macro import MacroConfig, MacroSystem, run_macro
from porolayer.micro import MicroConfig, MicroSystem
from porolayer.tensors import EffectivePlateTensors, compute_tensors


def down(t, x, z):
    return 0.0 * x, -np.sin(np.pi * x) + 0.0 * z


@pytest.fixture(scope="module")
def micro_system(strip_spec):
    return MicroSystem(MicroConfig(k=4, cell=strip_spec, h_max=0.5, grading=2.0, dt=0.1, T=0.2))


@pytest.fixture(scope="module")
def macro_run(strip_cells):
    t = compute_tensors(strip_cells)
    cfg = MacroConfig(tensors=t, nz=4, n_plate=8, dt=0.1, T=0.3, f_plus=down,
                      g=lambda t, x: np.cos(3 * t) * x * (1 - x)).volume_consistent()
    return run_macro(cfg)


def test_u2_zero_coefficients(strip_cells):
    assert not np.any(reconstruct_u2(0.0, 0.0, strip_cells))


def test_u2_single_coefficient_is_chi(strip_cells):
    assert np.array_equal(reconstruct_u2(1.0, 0.0, strip_cells), strip_cells["standard_11"].values)


def test_u2_linearity(strip_cells):
    u2 = reconstruct_u2(1.0, 2.0, strip_cells)
    expected = strip_cells["standard_11"].values + 2.0 * strip_cells["bending_11"].values
    assert np.array_equal(u2, expected)


def test_u2_off_diagonal_pairs_in_3d(solid_cells_3d):
    M12 = np.array([[0.0, 0.5], [0.5, 0.0]])
    u2 = reconstruct_u2(M12, np.zeros((2, 2)), solid_cells_3d)
    assert np.array_equal(u2, solid_cells_3d["standard_12"].values)


def test_u2_missing_cell(strip_cells):
    partial = {"standard_11": strip_cells["standard_11"]}
    with pytest.raises(CorrectorError, match="bending_11"):
        reconstruct_u2(0.0, 1.0, partial)


def test_cell_field_matches_nodal_values(strip_cells):
    cf = CellField(strip_cells)
    op = cf.op
    y = op.mesh.coords[op.nodes]
    y = y[(y[:, 0] < 1.0) & (np.abs(y[:, 1]) < 0.5)]          # interior solid nodes
    vals = cf.value("bending_11", y)
    ref = strip_cells["bending_11"].values[op.local[
        np.array([np.flatnonzero(np.all(np.isclose(op.mesh.coords, p), axis=1))[0] for p in y])]]
    assert np.allclose(vals, ref, atol=1e-14)


def test_zero_macro_state_reconstructs_zero(micro_system, macro_run, strip_cells):
    samples = SamplePoints.from_micro(micro_system)
    rec = sample_reconstruction(macro_run.system, macro_run.system.zero_state(), samples,
                                strip_cells)
    for v in rec.values.values():
        assert not np.any(v)
    assert not np.any(rec.full_displacement)


def test_static_plate_state_sampling(micro_system, macro_run):
    sys_ = macro_run.system
    st = sys_.zero_state()
    st.u = sys_.beam.interpolate(lambda x: x**2 * (1 - x) ** 2,
                                 lambda x: 2 * x * (1 - x) * (1 - 2 * x))
    samples = SamplePoints.from_micro(micro_system)
    rec = sample_reconstruction(sys_, st, samples)
    x, z = samples.points["solid"].T
    eps = samples.eps
    u0 = sys_.beam.evaluate(st.u, x)
    assert np.allclose(rec.values["layer_vertical_displacement"], u0, atol=1e-15)
    assert np.ptp(u0) > 0
    assert np.allclose(rec.values["layer_vertical_displacement"], x**2 * (1 - x) ** 2, atol=1e-3)
    inplane = -(z / eps) * sys_.beam.evaluate(st.u, x, 1)
    assert np.allclose(rec.values["layer_inplane_displacement"], inplane, atol=1e-15)


def test_velocity_identity(micro_system, macro_run, strip_cells):
    samples = SamplePoints.from_micro(micro_system)
    recs = [sample_reconstruction(macro_run.system, s, samples, strip_cells)
            for s in macro_run.snapshots]
    dt = macro_run.system.cfg.dt
    for a, b in zip(recs, recs[1:]):
        assert np.abs(b.layer_velocity).max() > 0
        assert velocity_identity_defect(a, b, dt) <= 1e-14


def test_self_comparison_is_zero(micro_system, macro_run, strip_cells):
    samples = SamplePoints.from_micro(micro_system)
    rec = [sample_reconstruction(macro_run.system, s, samples, strip_cells).values
           for s in macro_run.snapshots]
    table = error_table(rec, rec, [s.t for s in macro_run.snapshots], samples)
    assert all(v == 0.0 for v in table.values())


def test_micro_sampling_layout(micro_system, macro_run, strip_cells):
    samples = SamplePoints.from_micro(micro_system)
    mic = sample_micro(micro_system, micro_system.zero_state(), samples)
    rec = sample_reconstruction(macro_run.system, macro_run.final, samples, strip_cells).values
    for key in rec:
        assert np.shape(mic[key]) == np.shape(rec[key])


def test_extent_mismatch(micro_system, strip_cells):
    t = compute_tensors(strip_cells)
    short = MacroSystem(MacroConfig(tensors=t, L=0.5, nz=2, n_plate=4))
    samples = SamplePoints.from_micro(micro_system)
    with pytest.raises(CorrectorError, match="beyond"):
        sample_reconstruction(short, short.zero_state(), samples)


def test_compare_runs_rejects_different_lengths(strip_spec, strip_cells):
    from porolayer.micro import run_micro
    mic = run_micro(MicroConfig(k=4, cell=strip_spec, L=0.5, h_max=0.5, grading=2.0, dt=0.1,
                                T=0.1))
    mac = run_macro(MacroConfig(tensors=compute_tensors(strip_cells), nz=2, n_plate=4, dt=0.1,
                                T=0.1))
    with pytest.raises(CorrectorError, match="lengths"):
        compare_runs(mic, mac, strip_cells)


def test_slope_fits_and_notice():
    tables = [{"eps": e, "err": 2 * e, "zero": 0.0} for e in (0.25, 0.125, 0.0625)]
    slopes = slope_fits(tables)
    assert slopes["err"] == pytest.approx(1.0)
    assert np.isnan(slopes["zero"])
    with pytest.warns(UserWarning, match="two eps"):
        assert slope_fits(tables[:1]) == {}
    assert is_monotone_decreasing(tables, "err")
    assert not is_monotone_decreasing(tables, "zero")


def test_plate_mass_only_tensors_reconstruct(micro_system):
    z = EffectivePlateTensors.from_scalars(0.0, 0.0, 0.0, 1.0)
    run = run_macro(MacroConfig(tensors=z, nz=2, n_plate=4, dt=0.1, T=0.1, f_plus=down))
    samples = SamplePoints.from_micro(micro_system)
    rec = sample_reconstruction(run.system, run.final, samples)
    assert np.all(np.isfinite(rec.values["layer_fluid_velocity"]))
