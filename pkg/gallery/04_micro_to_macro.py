"""Comparing eps-resolved runs with the reconstructed effective solution.

Run with ``python3 gallery/04_micro_to_macro.py``.

The effective run is computed once on a fine mesh.  Each micro run is then
sampled at its own Gauss points, and the macro fields are lifted to the same
points: bulk velocities shifted by eps, the layer displacement built from the
deflection, the in-plane field and the cell correctors.  Every relative error
should shrink as the period does.
"""
from porolayer import fem
from porolayer.cells import solve_all_cells
from porolayer.correctors import compare_runs, is_monotone_decreasing, slope_fits
from porolayer.geometry import build_cell_mesh, slab_spec
from porolayer.macro import MacroConfig, run_macro
from porolayer.micro import MicroConfig, down_forcing, run_micro
from porolayer.tensors import compute_tensors

cell = slab_spec((4, 8), 0.5)
cells = solve_all_cells(build_cell_mesh(cell), cfg=fem.SolveConfig(tol=1e-12))
dt, T = 0.05, 1.0
macro = run_macro(MacroConfig(compute_tensors(cells), nx=64, n_plate=64, nz=24, grading=1.12,
                              dt=dt, T=T, f_plus=down_forcing).volume_consistent(2.0))

tables = []
for k in (8, 16, 32):
    tables.append(compare_runs(run_micro(MicroConfig(k, cell, dt=dt, T=T)), macro, cells))
    print(f"k = {k} done")

keys = [k for k in tables[0] if k != "eps"]
slopes = slope_fits(tables)
print("\n" + "error".ljust(30) + "".join(f"eps={t['eps']:<9.4g}" for t in tables) + "slope")
for key in keys:
    row = "".join(f"{t[key]:<13.4e}" for t in tables)
    mark = "" if is_monotone_decreasing(tables, key) else "   (not monotone)"
    print(key.ljust(30) + row + f"{slopes.get(key, float('nan')):.2f}{mark}")
