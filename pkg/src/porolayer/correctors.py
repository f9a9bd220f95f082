"""Approximation fields built from macro and cell data, and micro-vs-macro errors.

All comparisons are done on the micro mesh: fields are sampled at its Gauss
points, region by region, and combined into relative space-time L2 errors.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import fem
from .cells import CellLoadCase, in_plane_pairs
from .micro import MicroMesh


class CorrectorError(ValueError):
    pass


# -- second-order corrector ------------------------------------------------------

def reconstruct_u2(membrane_strain, curvature, cells):
    """``u2 = sum_ij (membrane_strain_ij chi_ij + curvature_ij chiB_ij)`` nodewise.

    Parameters
    ----------
    membrane_strain, curvature : array_like
        Symmetric in-plane matrices ``(p, p)`` (or scalars in the 2D analogue).
    cells : dict
        Cell solutions keyed by load-case key.

    Returns
    -------
    ndarray
        Nodal values ``(n_nodes, d)`` on the solid node set of the cell.
    """
    E = np.atleast_2d(np.asarray(membrane_strain, dtype=float))
    K = np.atleast_2d(np.asarray(curvature, dtype=float))
    any_sol = next(iter(cells.values()))
    d = any_sol.operator.dim
    out = np.zeros_like(any_sol.values)
    for kind, coef in (("standard", E), ("bending", K)):
        for a, b in in_plane_pairs(d):
            c = coef[a, b] if a == b else coef[a, b] + coef[b, a]
            if c == 0:
                continue
            key = CellLoadCase(a, b, kind).key
            if key not in cells:
                raise CorrectorError(f"missing cell solution {key}")
            out = out + c * cells[key].values
    return out


class CellField:
    """Point evaluation of 2D cell solutions at ``y = (frac(x / eps), z / eps)``."""

    def __init__(self, cells):
        self.cells = cells
        sol = next(iter(cells.values()))
        self.op = sol.operator
        if self.op.dim != 2:
            raise CorrectorError("point evaluation is only available for 2D cells")
        self.mesh = self.op.mesh
        self.n1, self.n3 = self.mesh.spec.resolution
        self._elem_of_voxel = -np.ones(self.n1 * self.n3, dtype=int)
        self._elem_of_voxel[self.mesh.solid] = np.arange(len(self.mesh.solid))

    def _locate(self, y):
        h = self.mesh.h
        i1 = np.clip(np.floor(y[:, 0] / h[0]).astype(int), 0, self.n1 - 1)
        i3 = np.clip(np.floor((y[:, 1] + 1.0) / h[1]).astype(int), 0, self.n3 - 1)
        e = self._elem_of_voxel[i1 * self.n3 + i3]
        if np.any(e < 0):
            raise CorrectorError("sample point falls outside the solid part of the cell")
        origin = self.mesh.element_origin(self.mesh.solid[e])
        s = (y - origin) / h
        return e, s

    def cell_coords(self, x, z, eps):
        return np.column_stack([np.mod(x / eps, 1.0), z / eps])

    def value(self, key, y):
        e, s = self._locate(y)
        N, _ = fem.lagrange_basis(1, s)
        vals = self.cells[key].values[self.op.elem_nodes[e]]           # (P, 4, 2)
        return np.einsum("pa,pai->pi", N, vals)

    def total_strain(self, key, y):
        """``D_y chi + G`` at points (standard or bending prescribed strain)."""
        e, s = self._locate(y)
        N, dN = fem.lagrange_basis(1, s)
        G = dN / self.mesh.h
        vals = self.cells[key].values[self.op.elem_nodes[e]]
        g = np.einsum("paj,pai->pij", G, vals)
        D = 0.5 * (g + g.transpose(0, 2, 1))
        M = self.cells[key].case.matrix(2)
        if self.cells[key].case.kind == "standard":
            return D + M
        return D - y[:, 1][:, None, None] * M


# -- sampling ---------------------------------------------------------------------------

@dataclass
class SamplePoints:
    """Gauss points of the micro mesh grouped by region."""

    eps: float
    points: dict      # region name -> (P, 2)
    weights: dict     # region name -> (P,)
    elems: dict       # region name -> element ids (one per element, before flattening)

    @classmethod
    def from_micro(cls, system):
        mm = system.mm
        names = {"upper": MicroMesh.UPPER, "lower": MicroMesh.LOWER,
                 "layer_fluid": MicroMesh.LAYER_FLUID, "solid": MicroMesh.SOLID}
        pts, wts, els = {}, {}, {}
        for key, reg in names.items():
            e = mm.elements(reg)
            xq, wq = mm.mesh.quadrature_points(e)
            pts[key] = xq.reshape(-1, 2)
            wts[key] = wq.ravel()
            els[key] = e
        return cls(mm.eps, pts, wts, els)


def sample_micro(system, state, samples):
    """Micro fields at the sample points, in the layout of :func:`sample_reconstruction`."""
    mesh = system.mesh
    eps = samples.eps
    _, _, N2, dN2, N1, _ = mesh._ref

    def at_q(vec, e, grad=False):
        V = vec.reshape(-1, 2)[mesh.q2_elements[e]]                  # (e, 9, 2)
        val = np.einsum("qa,eai->eqi", N2, V).reshape(-1, 2)
        if not grad:
            return val
        G = dN2[None] / mesh.h[e][:, None, None, :]
        g = np.einsum("eqaj,eai->eqij", G, V).reshape(-1, 2, 2)
        return val, g

    out = {}
    out["bulk_velocity_upper"] = at_q(state.v, samples.elems["upper"])
    out["bulk_velocity_lower"] = at_q(state.v, samples.elems["lower"])
    es = samples.elems["solid"]
    u, gu = at_q(state.u, es, grad=True)
    out["layer_vertical_displacement"] = u[:, 1]
    out["layer_inplane_displacement"] = u[:, 0] / eps
    out["scaled_strain"] = 0.5 * (gu + gu.transpose(0, 2, 1)) / eps
    out["layer_fluid_velocity"] = at_q(state.v, samples.elems["layer_fluid"])
    ef = samples.elems["layer_fluid"]
    fluid = system.mm.fluid
    pos = np.searchsorted(fluid, ef)
    P = state.p[system.pressure_conn[pos]]                             # (e, 4)
    out["layer_pressure"] = np.einsum("qa,ea->eq", N1, P).ravel()
    return out


@dataclass
class ReconstructedFields:
    """Approximation fields at the sample points for one time instant."""

    t: float
    eps: float
    values: dict
    first_order_displacement: np.ndarray   # u0 e3 + eps (u1 - (x3/eps) u0') on layer fluid points
    layer_velocity: np.ndarray             # v_app^M on the same points
    full_displacement: np.ndarray          # u_app including eps^2 u2 on solid points


def sample_reconstruction(macro_system, state, samples, cells=None):
    """Evaluate the approximation fields of a macro state on the micro samples."""
    eps = samples.eps
    beam = macro_system.beam
    L = macro_system.cfg.L
    for pts in samples.points.values():
        if len(pts) and (pts[:, 0].max() > L + 1e-12 or pts[:, 0].min() < -1e-12):
            raise CorrectorError("micro samples extend beyond the macro interface")
    out = {}
    up = samples.points["upper"] - np.array([0.0, eps])
    lo = samples.points["lower"] + np.array([0.0, eps])
    out["bulk_velocity_upper"] = macro_system.top.evaluate_velocity(state.v_plus, up)
    out["bulk_velocity_lower"] = macro_system.bottom.evaluate_velocity(state.v_minus, lo)

    def plate(x):
        return dict(u=beam.evaluate(state.u, x), du=beam.evaluate(state.u, x, 1),
                    d2u=beam.evaluate(state.u, x, 2), w=beam.evaluate(state.w, x),
                    dw=beam.evaluate(state.w, x, 1),
                    u1=beam.evaluate_membrane(state.u1, x),
                    du1_dx=beam.evaluate_membrane(state.u1, x, 1),
                    du1_dt=beam.evaluate_membrane(state.du1, x))

    xs, zs = samples.points["solid"].T
    ps = plate(xs)
    out["layer_vertical_displacement"] = ps["u"]
    out["layer_inplane_displacement"] = ps["u1"] - (zs / eps) * ps["du"]
    full = np.column_stack([eps * ps["u1"] - zs * ps["du"], ps["u"]])
    if cells is not None:
        cf = CellField(cells)
        y = cf.cell_coords(xs, zs, eps)
        ks, kb = CellLoadCase(0, 0).key, CellLoadCase(0, 0, "bending").key
        out["scaled_strain"] = (ps["du1_dx"][:, None, None] * cf.total_strain(ks, y)
                                + ps["d2u"][:, None, None] * cf.total_strain(kb, y))
        u2 = ps["du1_dx"][:, None] * cf.value(ks, y) + ps["d2u"][:, None] * cf.value(kb, y)
        full = full + eps**2 * u2
    else:
        strain = np.zeros((len(xs), 2, 2))
        strain[:, 0, 0] = ps["du1_dx"] - (zs / eps) * ps["d2u"]
        out["scaled_strain"] = strain

    xf, zf = samples.points["layer_fluid"].T
    pf = plate(xf)
    vapp = np.column_stack([eps * pf["du1_dt"] - zf * pf["dw"], pf["w"]])
    out["layer_fluid_velocity"] = vapp
    out["layer_pressure"] = np.zeros(len(xf))
    first = np.column_stack([eps * pf["u1"] - zf * pf["du"], pf["u"]])
    return ReconstructedFields(state.t, eps, out, first, vapp, full)


def velocity_identity_defect(prev, curr, dt, theta=1.0):
    """Largest gap between ``v_app^M`` and the time derivative of the first two orders.

    The macro update is ``u^{n+1} = u^n + dt (theta w^{n+1} + (1 - theta) w^n)`` (and
    likewise for the in-plane field), so the discrete derivative of the first two
    orders must equal the theta-average of the layer velocity samples.
    """
    ddt = (curr.first_order_displacement - prev.first_order_displacement) / dt
    avg = theta * curr.layer_velocity + (1 - theta) * prev.layer_velocity
    return float(np.abs(ddt - avg).max(initial=0.0))


# -- error tables --------------------------------------------------------------------

ERROR_FIELDS = {
    "bulk_velocity_upper": "upper",
    "bulk_velocity_lower": "lower",
    "layer_vertical_displacement": "solid",
    "layer_inplane_displacement": "solid",
    "scaled_strain": "solid",
    "layer_fluid_velocity": "layer_fluid",
}


def _time_weights(times):
    t = np.asarray(times, dtype=float)
    if len(t) == 1:
        return np.ones(1)
    w = np.zeros(len(t))
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def error_table(micro_series, recon_series, times, samples):
    """Relative space-time L2 errors between two sequences of sampled fields.

    ``micro_series`` and ``recon_series`` are lists (one entry per time) of
    dicts in the layout of :func:`sample_micro`.  The layer pressure has no
    nonzero reference, so its absolute norm is reported instead (unscaled and
    with the ``eps^{-1/2}`` factor).
    """
    tw = _time_weights(times)
    out = {}
    for key, region in ERROR_FIELDS.items():
        w = samples.weights[region]
        num = den = 0.0
        for a, b, wt in zip(micro_series, recon_series, tw):
            diff = np.asarray(a[key]) - np.asarray(b[key])
            ref = np.asarray(b[key])
            num += wt * np.sum(w * np.sum(diff.reshape(len(w), -1) ** 2, axis=1))
            den += wt * np.sum(w * np.sum(ref.reshape(len(w), -1) ** 2, axis=1))
        out[key] = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
    w = samples.weights["layer_fluid"]
    pn = sum(wt * np.sum(w * (np.asarray(a["layer_pressure"]) - np.asarray(b["layer_pressure"])) ** 2)
             for a, b, wt in zip(micro_series, recon_series, tw))
    out["layer_pressure"] = float(np.sqrt(pn))
    out["layer_pressure_scaled"] = float(np.sqrt(pn) / np.sqrt(samples.eps))
    return out


def compare_runs(micro_run, macro_run, cells=None, times=None):
    """Error table of one micro run against the reconstruction of a macro run.

    Times are the micro snapshot times (all of them by default); the macro
    run must hold snapshots at the same instants.
    """
    system = micro_run.system
    samples = SamplePoints.from_micro(system)
    if abs(macro_run.system.cfg.L - system.cfg.L) > 1e-12:
        raise CorrectorError("micro and macro interface lengths differ")
    snaps = micro_run.snapshots
    if times is not None:
        snaps = [s for s in snaps if np.any(np.isclose(s.t, times))]
    mic, rec, ts = [], [], []
    for s in snaps:
        ms = macro_run.state_at(s.t)
        mic.append(sample_micro(system, s, samples))
        rec.append(sample_reconstruction(macro_run.system, ms, samples, cells).values)
        ts.append(s.t)
    table = error_table(mic, rec, ts, samples)
    table["eps"] = samples.eps
    return table


def slope_fits(tables):
    """Log-log slopes of every error quantity against eps.

    With fewer than two eps values no fit is possible; a warning is issued and
    an empty dict returned.
    """
    eps = np.array([t["eps"] for t in tables], dtype=float)
    if len(np.unique(eps)) < 2:
        warnings.warn("slope fits need at least two eps values; slopes omitted", stacklevel=2)
        return {}
    out = {}
    for key in tables[0]:
        if key == "eps":
            continue
        vals = np.array([t[key] for t in tables])
        if np.all(vals > 0):
            out[key] = float(np.polyfit(np.log(eps), np.log(vals), 1)[0])
        else:
            out[key] = float("nan")
    return out


def is_monotone_decreasing(tables, key):
    """True when the error shrinks as eps decreases."""
    order = np.argsort([-t["eps"] for t in tables])
    vals = [tables[i][key] for i in order]
    return all(b < a for a, b in zip(vals, vals[1:]))
