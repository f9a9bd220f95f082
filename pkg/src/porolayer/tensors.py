"""Effective plate tensors from cell solutions, plus their algebraic audit."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cells import CellLoadCase, in_plane_pairs, solve_all_cells
from .geometry import build_cell_mesh

VOIGT = [(0, 0), (1, 1), (0, 1)]
_VOIGT_W = np.array([1.0, 1.0, np.sqrt(2.0)])


class TensorInputError(ValueError):
    """Cell solutions that cannot be combined into tensors."""


@dataclass
class EffectivePlateTensors:
    """In-plane fourth-order tensors, shape ``(p, p, p, p)`` with ``p = dim - 1``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    solid_volume: float
    provenance: dict = field(default_factory=dict)

    @property
    def planar_dim(self):
        return self.a.shape[0]

    def scalars(self):
        """The (1,1,1,1) entries, as used by the vertical-slice plate."""
        return float(self.a[0, 0, 0, 0]), float(self.b[0, 0, 0, 0]), float(self.c[0, 0, 0, 0])

    def to_dict(self):
        return {"a_star": self.a.tolist(), "b_star": self.b.tolist(),
                "c_star": self.c.tolist(), "solid_volume": float(self.solid_volume),
                "provenance": dict(self.provenance)}

    @classmethod
    def from_dict(cls, data):
        try:
            arrs = [np.asarray(data[k], dtype=float) for k in ("a_star", "b_star", "c_star")]
        except KeyError as exc:
            raise TensorInputError(f"missing tensor field {exc.args[0]!r}") from None
        shape = arrs[0].shape
        if len(shape) != 4 or len(set(shape)) != 1 or any(x.shape != shape for x in arrs):
            raise TensorInputError(f"tensor arrays must share a (p,p,p,p) shape, got "
                                   f"{[x.shape for x in arrs]}")
        return cls(*arrs, float(data.get("solid_volume", np.nan)),
                   dict(data.get("provenance", {})))

    @classmethod
    def from_scalars(cls, a, b, c, solid_volume=1.0):
        """Slice-mode tensors with only the (1,1,1,1) entries."""
        mk = lambda v: np.full((1, 1, 1, 1), float(v))
        return cls(mk(a), mk(b), mk(c), solid_volume, {"source": "scalars"})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _fill(T, pairs_vals):
    for (a, b, c, d), v in pairs_vals:
        for i, j in {(a, b), (b, a)}:
            for k, l in {(c, d), (d, c)}:
                T[i, j, k, l] = v


def compute_tensors(solutions, cfg_tol=None):
    """Quadrature evaluation of ``a*``, ``b*``, ``c*``.

    Parameters
    ----------
    solutions : dict
        Cell solutions keyed by ``CellLoadCase.key`` (as from ``solve_all_cells``);
        all must share one operator (same mesh and material).
    """
    sols = list(solutions.values())
    if not sols:
        raise TensorInputError("no cell solutions")
    op = sols[0].operator
    for s in sols[1:]:
        if s.operator is not op and (s.operator.mesh.spec != op.mesh.spec
                                     or not np.array_equal(s.operator.A, op.A)):
            raise TensorInputError("cell solutions come from different meshes or materials")
    d = op.dim
    p = d - 1
    pairs = in_plane_pairs(d)
    need = [CellLoadCase(a, b, k).key for k in ("standard", "bending") for a, b in pairs]
    missing = [k for k in need if k not in solutions]
    if missing:
        raise TensorInputError(f"missing cell solutions: {missing}")

    E = {pr: solutions[CellLoadCase(*pr).key].total_strain() for pr in pairs}
    H = {pr: solutions[CellLoadCase(*pr, "bending").key].total_strain() for pr in pairs}
    vs = op.mesh.solid_volume
    a = np.zeros((p,) * 4)
    b = np.zeros((p,) * 4)
    c = np.zeros((p,) * 4)
    va, vb, vc = [], [], []
    for P1 in pairs:
        for P2 in pairs:
            va.append(((*P1, *P2), op.energy_product(E[P1], E[P2]) / vs))
            vb.append(((*P1, *P2), op.energy_product(H[P1], E[P2]) / vs))
            vc.append(((*P1, *P2), op.energy_product(H[P1], H[P2]) / vs))
    _fill(a, va)
    _fill(b, vb)
    _fill(c, vc)
    spec = op.mesh.spec
    prov = {"geometry_hash": spec.digest(), "resolution": list(spec.resolution),
            "solver_tol": cfg_tol, "dimension": d}
    return EffectivePlateTensors(a, b, c, vs, prov)


def effective_tensors(spec, cfg=fem.SolveConfig(), jobs=1, check_geometry=True):
    """Cell solves plus tensor assembly for a microstructure spec."""
    sols = solve_all_cells(build_cell_mesh(spec), cfg=cfg, jobs=jobs,
                           check_geometry=check_geometry)
    return compute_tensors(sols, cfg_tol=cfg.tol)


# -- audit ---------------------------------------------------------------------

def to_voigt(T):
    """``(p,p,p,p)`` tensor to its Voigt matrix with sqrt(2) shear weights."""
    p = T.shape[0]
    idx = VOIGT if p == 2 else [(0, 0)]
    w = _VOIGT_W[:len(idx)]
    return np.array([[T[i, j, k, l] * w[m] * w[n] for n, (k, l) in enumerate(idx)]
                     for m, (i, j) in enumerate(idx)])


def gram_matrix(t):
    """Matrix of ``(E, H) -> a E:E + 2 b H:E + c H:H`` in Voigt coordinates."""
    A, B, C = to_voigt(t.a), to_voigt(t.b), to_voigt(t.c)
    return np.block([[A, B.T], [B, C]])


def symmetry_defects(T):
    """Absolute major and minor symmetry defects of a fourth-order tensor."""
    return {"major": float(np.abs(T - T.transpose(2, 3, 0, 1)).max()),
            "minor_left": float(np.abs(T - T.transpose(1, 0, 2, 3)).max()),
            "minor_right": float(np.abs(T - T.transpose(0, 1, 3, 2)).max())}


@dataclass
class AuditReport:
    defects: dict
    relative_defect: float
    min_eigenvalue: float
    symmetry_tol: float
    passed_symmetry: bool
    passed_coercivity: bool

    @property
    def passed(self):
        return self.passed_symmetry and self.passed_coercivity

    def to_dict(self):
        return {"defects": self.defects, "relative_defect": self.relative_defect,
                "min_eigenvalue": self.min_eigenvalue, "symmetry_tol": self.symmetry_tol,
                "passed_symmetry": self.passed_symmetry,
                "passed_coercivity": self.passed_coercivity, "passed": self.passed}


def audit_tensors(t, symmetry_tol=1e-10):
    """Symmetry defects and coercivity of the combined plate form.

    ``a*`` and ``c*`` are checked for major and both minor symmetries; ``b*``
    only for minor ones, since the cross term has no reason to be major
    symmetric.  The relative defect is the largest absolute defect over the
    largest tensor entry.
    """
    defects = {"a": symmetry_defects(t.a), "c": symmetry_defects(t.c)}
    bd = symmetry_defects(t.b)
    defects["b"] = {k: v for k, v in bd.items() if k != "major"}
    worst = max(v for dd in defects.values() for v in dd.values())
    scale = max(np.abs(t.a).max(), np.abs(t.b).max(), np.abs(t.c).max())
    rel = worst / scale if scale > 0 else worst
    G = gram_matrix(t)
    lam = float(np.linalg.eigvalsh(0.5 * (G + G.T)).min())
    return AuditReport(defects, float(rel), lam, symmetry_tol,
                       bool(rel <= symmetry_tol), bool(lam > 0))
