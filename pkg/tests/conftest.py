import numpy as np
import pytest

from porolayer import fem
from porolayer.cells import solve_all_cells
from porolayer.geometry import build_cell_mesh, full_solid_spec, slab_spec


@pytest.fixture(scope="session")
def strip_spec():
    """2D layer cell: solid strip |y3| < 1/2 on a 4 x 8 voxel grid."""
    return slab_spec((4, 8), half_thickness=0.5)


@pytest.fixture(scope="session")
def strip_cells(strip_spec):
    return solve_all_cells(build_cell_mesh(strip_spec), cfg=fem.SolveConfig(tol=1e-12))


@pytest.fixture(scope="session")
def solid_cells_3d():
    """Cell solutions of the full-solid isotropic cube (lambda = mu = 1), 4^3 voxels."""
    mesh = build_cell_mesh(full_solid_spec((4, 4, 4)))
    return solve_all_cells(mesh, cfg=fem.SolveConfig(tol=1e-12), check_geometry=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Collects one pass/fail line per acceptance criterion.

    The test fills ``box["id"]``, ``box["detail"]`` and ``box["ok"]`` before
    asserting; anything left unset reports as a failure.
    """
    box = {}
    yield box
    ok = bool(box.get("ok")) and not getattr(request.node, "_failed_call", False)
    line = f"criterion {box.get('id', '?')}: {'PASS' if ok else 'FAIL'}  {box.get('detail', '')}"
    request.config.stash.setdefault(_VERDICTS, []).append(line)
    capman = request.config.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    if call.when == "call" and outcome.get_result().failed:
        item._failed_call = True


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
