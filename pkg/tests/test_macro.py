import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porolayer.macro import (InitialDataError, MacroConfig, MacroConfigError, MacroSystem,
                             run_macro, static_plate_deflection)
from porolayer.tensors import EffectivePlateTensors

TENS = EffectivePlateTensors.from_scalars(8.0 / 3.0, 0.0, 8.0 / 9.0, 1.0)


def swirl_plus(t, x, z):
    """Divergence-free field vanishing on the walls and on z = 0 (stream function s^2 s^2)."""
    sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
    sz, cz = np.sin(np.pi * z), np.cos(np.pi * z)
    return 2 * np.pi * sx**2 * sz * cz, -2 * np.pi * sx * cx * sz**2


def swirl_minus(t, x, z):
    vx, vz = swirl_plus(t, x, -z)
    return -vx, vz


def small(**kw):
    base = dict(tensors=TENS, nz=4, n_plate=4, dt=0.02, T=0.1)
    base.update(kw)
    return MacroConfig(**base)


def test_zero_data_stays_zero():
    run = run_macro(small())
    assert len(run.snapshots) == 6
    for s in run.snapshots:
        for arr in (s.v_plus, s.v_minus, s.p_plus, s.p_minus, s.u, s.w, s.u1):
            assert not np.any(arr)
    assert np.all(run.series["energy"] == 0.0)


def test_t_zero_gives_projected_initial_data():
    cfg = small(T=0.0, v0_plus=swirl_plus, v0_minus=swirl_minus)
    run = run_macro(cfg)
    assert len(run.snapshots) == 1
    s = run.final
    assert run.system.divergence_residual(s) < 1e-12
    assert not np.any(s.u) and not np.any(s.w)
    # the projection is the identity up to discretisation of a divergence-free field
    v = run.system.top.interpolate_velocity(swirl_plus)
    assert np.linalg.norm(s.v_plus - v) < 0.1 * np.linalg.norm(v)


def test_energy_dissipation_and_divergence():
    run = run_macro(small(T=0.4, v0_plus=swirl_plus, v0_minus=swirl_minus))
    E = run.series["energy"]
    assert E[0] > 0
    assert np.all(np.diff(E) < 0)
    assert run.series["divergence_residual"].max() < 1e-10
    for s in run.snapshots:
        assert run.system.trace_defect(s) < 1e-14


def test_theta_half_runs_and_dissipates():
    run = run_macro(small(theta=0.5, T=0.2, v0_plus=swirl_plus, v0_minus=swirl_minus))
    E = run.series["energy"]
    assert np.all(np.diff(E) <= 1e-12 * E[0])


def test_plate_stiffness_block_matches_hand_matrix():
    t = EffectivePlateTensors.from_scalars(1.0, 0.0, 1.0, 1.0)
    sys_ = MacroSystem(MacroConfig(tensors=t, L=2.0, nz=2, n_plate=2))
    assert np.allclose(sys_.S[sys_.sl_w, sys_.sl_w].toarray(), np.diag([24.0, 8.0]))


def test_zero_tensors_give_plate_mass_only():
    z = EffectivePlateTensors.from_scalars(0.0, 0.0, 0.0, 1.0)
    sys_ = MacroSystem(MacroConfig(tensors=z, nz=2, n_plate=4))
    assert sys_.S.nnz == 0 or abs(sys_.S).max() == 0
    assert sys_.sizes["zeta"] == 0


def test_no_coupling_block_when_b_vanishes():
    sys_ = MacroSystem(small())
    assert abs(sys_.S[sys_.sl_z, sys_.sl_w]).max() == 0.0
    coupled = MacroSystem(small(tensors=EffectivePlateTensors.from_scalars(2.0, 0.3, 1.0, 1.0)))
    assert abs(coupled.S[coupled.sl_z, coupled.sl_w]).max() > 0


def test_energy_of_pure_plate_state():
    sys_ = MacroSystem(small())
    st = sys_.zero_state()
    st.u = sys_.beam.interpolate(lambda x: x**2 * (1 - x) ** 2,
                                 lambda x: 2 * x * (1 - x) * (1 - 2 * x))
    expected = 0.5 * TENS.scalars()[2] * st.u @ (sys_.beam.bending() @ st.u)
    assert sys_.energy(st) == pytest.approx(expected, rel=1e-14)


def test_energy_additivity_of_independent_parts():
    sys_ = MacroSystem(small())
    a = sys_.initial_state()
    a.v_plus = sys_.top.interpolate_velocity(swirl_plus)
    b = sys_.zero_state()
    b.u = np.linspace(0.1, 0.3, sys_.beam.n_bending)
    both = a.copy()
    both.u = b.u
    assert sys_.energy(both) == pytest.approx(sys_.energy(a) + sys_.energy(b), rel=1e-14)


def test_static_plate_limit():
    q = 2.0
    cfg = small(n_plate=16, nx=8, nz=4, dt=50.0, T=1000.0, g=lambda t, x: q + 0.0 * x,
                tensors=EffectivePlateTensors.from_scalars(1.0, 0.0, 0.5, 1.0))
    run = run_macro(cfg)
    x = run.system.beam.nodes[1:-1]
    ex = static_plate_deflection(x, q, 0.5, 1.0)
    assert np.allclose(run.final.u[0::2], ex, rtol=1e-6)


def test_implicit_euler_is_first_order_in_time():
    # stiff plate modes make dt >= 0.01 pre-asymptotic; fit below that
    g = lambda t, x: np.sin(4 * t) * np.sin(np.pi * x)
    dts = np.array([0.005, 0.0025, 0.00125, 0.000625])
    finals = [run_macro(small(dt=dt, T=0.4, g=g)).final.u for dt in dts]
    d = np.array([np.linalg.norm(finals[i] - finals[i + 1]) for i in range(3)])
    order = np.polyfit(np.log(dts[:-1]), np.log(d), 1)[0]
    assert abs(order - 1.0) < 0.15


def test_mirror_symmetry_of_downward_loading():
    down = lambda t, x, z: (0.0 * x, -np.sin(np.pi * x) + 0.0 * z)
    run = run_macro(small(T=0.1, f_plus=down, f_minus=down))
    s, sys_ = run.final, run.system
    pts = np.array([[0.3, 0.4], [0.7, 0.15], [0.5, 0.9]])
    vp = sys_.top.evaluate_velocity(s.v_plus, pts)
    vm = sys_.bottom.evaluate_velocity(s.v_minus, pts * [1, -1])
    assert np.allclose(vm, vp * [-1, 1], atol=1e-12 * np.abs(vp).max())


@pytest.mark.parametrize("v0, what", [
    (lambda t, x, z: (np.sin(np.pi * x) + 0 * z, 0 * x), "tangential"),
    (lambda t, x, z: (0 * x, 1.0 + 0 * z), "walls"),
    (lambda t, x, z: (0 * x, np.sin(np.pi * x) * np.cos(np.pi * z)), "vertical trace"),
])
def test_incompatible_initial_data(v0, what):
    with pytest.raises(InitialDataError, match=what):
        MacroSystem(small(v0_plus=v0)).initial_state()


def test_config_validation():
    with pytest.raises(MacroConfigError):
        small(dt=-1.0)
    with pytest.raises(MacroConfigError):
        small(theta=0.7)
    with pytest.raises(MacroConfigError, match="b\\*"):
        MacroSystem(small(tensors=EffectivePlateTensors.from_scalars(0.0, 0.5, 1.0),
                          check_tensors=False))
    with pytest.raises(MacroConfigError, match="audit"):
        MacroSystem(small(tensors=EffectivePlateTensors.from_scalars(1.0, 0.0, -1.0)))


def test_volume_consistent_preset():
    cfg = small().volume_consistent(2.0)
    assert cfg.m_inertia == 2.0 and cfg.m_stiffness == TENS.solid_volume


@settings(max_examples=5, deadline=None)
@given(scale=st.floats(-3.0, 3.0).filter(lambda s: abs(s) > 1e-3))
def test_response_is_linear_in_the_data(scale):
    f = lambda t, x, z: (0 * x, -np.sin(np.pi * x) + 0 * z)
    fs = lambda t, x, z: (0 * x, -scale * np.sin(np.pi * x) + 0 * z)
    a = run_macro(small(T=0.04, f_plus=f)).final
    b = run_macro(small(T=0.04, f_plus=fs)).final
    assert np.allclose(b.u, scale * a.u, atol=1e-13)
    assert np.allclose(b.v_plus, scale * a.v_plus, atol=1e-13)
