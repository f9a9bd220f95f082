"""How the epsilon-resolved solution scales with the period.

Run with ``python3 gallery/03_micro_scalings.py``.

The layer holds k = 1/eps copies of the strip cell.  Each quantity in the
a-priori report is already multiplied by the eps power that should make it
order one, so a flat column means the scaling holds.  The one quantity that
does not stay flat is the layer pressure: it is bounded but keeps shrinking,
because the fluid inside the layer only feels the bulk pressure through a
thin film.
"""
from porolayer.geometry import slab_spec
from porolayer.micro import MicroConfig, apriori_report, run_micro, scaling_study

cell = slab_spec((4, 8), 0.5)
reports = []
for k in (4, 8, 16):
    run = run_micro(MicroConfig(k, cell, dt=0.05, T=1.0))
    reports.append(apriori_report(run))
    print(f"k = {k:2d}: {run.system.n_unknowns} unknowns, "
          f"worst divergence {run.series['divergence_residual'].max():.1e}")

keys = [k for k in reports[0] if k.endswith("_scaled")]
print("\n" + "quantity".ljust(20) + "".join(f"eps={r['eps']:<9.4g}" for r in reports))
for key in keys:
    print(key.ljust(20) + "".join(f"{r[key]:<13.4e}" for r in reports))

study = scaling_study(reports)
print(f"\nunscaled |D u| slope against eps: {study['Du_slope']:.3f} (expected about 1.5)")
for key, ratio in sorted(study["ratios"].items(), key=lambda kv: -kv[1])[:3]:
    print(f"  largest max/min ratio: {key} {ratio:.2f}")
