"""Cell problems and effective plate tensors.

Run with ``python3 gallery/01_cell_problems.py``.

We start from the simplest layer there is, a solid block with lambda = mu = 1.
Its cell solutions are known in closed form, so it doubles as a sanity check:
the in-plane stretch corrector is linear in y3 and the membrane tensor is
exact on any voxel grid.  Then we refine in y3 to watch the bending tensor
approach 8/9 at second order, and finish with a perforated 3D cell.
"""
import numpy as np

from porolayer import fem
from porolayer.cells import solve_all_cells
from porolayer.geometry import build_cell_mesh, full_solid_spec, random_spec, slab_spec
from porolayer.tensors import audit_tensors, compute_tensors

strict = fem.SolveConfig(tol=1e-12)

# %% The full-solid block -----------------------------------------------------------
# The top and bottom faces are solid here, which the coupled model excludes, so the
# geometry check is skipped for this oracle case.
cells = solve_all_cells(build_cell_mesh(full_solid_spec((4, 4, 4))), cfg=strict,
                        check_geometry=False)
t = compute_tensors(cells)
print("full solid, 4^3 voxels")
print(f"  a*1111 = {t.a[0, 0, 0, 0]:.15f}   (8/3 = {8 / 3:.15f})")
print(f"  a*1122 = {t.a[0, 0, 1, 1]:.15f}   (2/3 = {2 / 3:.15f})")
print(f"  a*1212 = {t.a[0, 1, 0, 1]:.15f}   (1)")
print(f"  max |b*| = {np.abs(t.b).max():.1e}")

# The stretch corrector is -y3/3 in the vertical component, up to the mean-zero shift.
chi = cells["standard_11"]
y3 = chi.mesh.coords[chi.operator.nodes, -1]
print(f"  chi11 vs -y3/3: max gap {np.abs(chi.values[:, 2] + y3 / 3).max():.1e}")

# %% Bending tensor under refinement -----------------------------------------------
print("\nc*1111 as the vertical resolution doubles")
prev = None
for n3 in (4, 8, 16, 32):
    c = compute_tensors(solve_all_cells(build_cell_mesh(full_solid_spec((4, 4, n3))),
                                        cfg=strict, check_geometry=False)).c[0, 0, 0, 0]
    err = c - 8 / 9
    rate = "" if prev is None else f"   rate {np.log2(prev / err):.2f}"
    print(f"  n3 = {n3:2d}: c* = {c:.10f}, error {err:.3e}{rate}")
    prev = err

# %% A perforated layer --------------------------------------------------------------
# random_spec carves a connected fluid channel and random holes out of a slab that
# stays clear of the top and bottom faces, with random voxel-wise Lame constants.
spec = random_spec(np.random.default_rng(2024))
rep = audit_tensors(compute_tensors(solve_all_cells(build_cell_mesh(spec), cfg=strict)))
print(f"\nrandom cell: solid fraction {spec.indicator.mean():.2f}, "
      f"symmetry defect {rep.relative_defect:.1e}, "
      f"smallest eigenvalue of the plate form {rep.min_eigenvalue:.3f}")

# %% The 2D strip used by the vertical-slice runs ---------------------------------------
strip = compute_tensors(solve_all_cells(build_cell_mesh(slab_spec((4, 8), 0.5)), cfg=strict))
a, b, c = strip.scalars()
print(f"\n2D strip |y3| < 1/2: a* = {a:.6f}, b* = {b:.1e}, c* = {c:.6f}, "
      f"|Z^s| = {strip.solid_volume}")
