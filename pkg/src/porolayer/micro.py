"""Epsilon-resolved reference solver on a 2D vertical slice.

The domain is ``(0, L) x (-H - eps, H + eps)``; the strip ``|z| < eps`` is
tiled by ``L / eps`` copies of the scaled layer cell.  One continuous Q2
velocity field lives on every node: in fluid elements it is the fluid
velocity, in solid elements the solid velocity ``d_t u``.  Sharing nodes on
the fluid-solid interface makes the kinematic condition exact, and the
traction conditions are natural.  Q1 pressure lives on fluid-element vertices.

Element weights follow the scaled weak form: bulk fluid 1, layer fluid
``1/eps`` (inertia, viscosity, pressure, forcing), solid ``1/eps`` inertia and
``1/eps^3`` elasticity.  The solid displacement is integrated from the
velocity with the theta rule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from . import fem
from .geometry import MicrostructureSpec, build_cell_mesh, require_valid
from .macro import zero_bulk
from .quadmesh import QuadMesh, graded_breaks

log = logging.getLogger(__name__)


class MicroConfigError(ValueError):
    pass


def down_forcing(t, x, z):
    """Default upper-bulk forcing ``(0, -sin(pi x))``, constant in time."""
    return 0.0 * x, -np.sin(np.pi * x) + 0.0 * z


@dataclass
class MicroConfig:
    """Parameters of an epsilon-resolved run.

    Parameters
    ----------
    k : int
        ``1 / eps``; ``L * k`` must be an integer.
    cell : MicrostructureSpec
        2D layer cell on ``(0, 1) x (-1, 1)``.
    refine : int
        Elements per voxel along each axis.
    h_max : float
        Largest bulk element height; bulk rows grow geometrically from the
        layer element height by ``grading``.
    f_plus, f_minus : callable
        Physical bulk forcing ``f(t, x, z)`` on the unshifted domains; it is
        applied as ``f(x -+ eps e3)``.
    f_layer : callable, optional
        Layer fluid forcing ``f(t, x, z)`` (multiplied by ``1/eps`` like the
        other layer terms).
    F0_plus, F0_minus, F0_layer : callable, optional
        Data of the stationary problem producing a compatible initial velocity.
    """

    k: int
    cell: MicrostructureSpec
    H: float = 1.0
    L: float = 1.0
    refine: int = 1
    h_max: float = 0.125
    grading: float = 1.5
    dt: float = 0.05
    T: float = 1.0
    theta: float = 1.0
    viscosity: float = 1.0
    f_plus: Callable = down_forcing
    f_minus: Callable = zero_bulk
    f_layer: Optional[Callable] = None
    F0_plus: Optional[Callable] = None
    F0_minus: Optional[Callable] = None
    F0_layer: Optional[Callable] = None
    snapshot_stride: int = 1
    saddle_method: str = "auto"
    check_geometry: bool = True

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise MicroConfigError(f"epsilon_inverse must be an integer >= 2, got {self.k}")
        self.k = int(self.k)
        if self.cell.dimension != 2:
            raise MicroConfigError("the micro solver needs a 2D layer cell")
        cells = self.L * self.k
        if abs(cells - round(cells)) > 1e-9 or round(cells) < 1:
            raise MicroConfigError(f"L / eps = {cells} is not a positive integer")
        for name in ("H", "L", "dt", "h_max", "viscosity"):
            if not getattr(self, name) > 0:
                raise MicroConfigError(f"{name} must be positive")
        if self.T < 0:
            raise MicroConfigError("T must be nonnegative")
        if self.theta not in (0.5, 1.0):
            raise MicroConfigError(f"theta must be 1 or 1/2, got {self.theta}")
        if self.grading < 1.0:
            raise MicroConfigError("grading must be >= 1")
        if int(self.refine) < 1:
            raise MicroConfigError("refine must be >= 1")

    @property
    def eps(self):
        return 1.0 / self.k

    @property
    def n_cells(self):
        return int(round(self.L * self.k))

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass
class MicroMesh:
    """Global mesh with element classes and interface facets."""

    mesh: QuadMesh
    eps: float
    region: np.ndarray        # 0 = lower bulk, 1 = layer fluid, 2 = solid, 3 = upper bulk
    voxel: np.ndarray         # flat voxel index of layer elements (-1 in the bulk)
    gamma: np.ndarray         # rows (solid element, fluid element) sharing a facet
    s_plus: np.ndarray        # layer elements with a facet on z = +eps
    s_minus: np.ndarray
    warnings: list = field(default_factory=list)

    LOWER, LAYER_FLUID, SOLID, UPPER = 0, 1, 2, 3

    def elements(self, *regions):
        return np.flatnonzero(np.isin(self.region, regions))

    @property
    def fluid(self):
        return self.elements(self.LOWER, self.LAYER_FLUID, self.UPPER)

    @property
    def solid(self):
        return self.elements(self.SOLID)

    @property
    def layer(self):
        return self.elements(self.LAYER_FLUID, self.SOLID)


def build_micro_mesh(cfg: MicroConfig) -> MicroMesh:
    """Conforming mesh of the epsilon-domain, graded away from the layer."""
    spec = cfg.cell
    eps = cfg.eps
    n1, n3 = spec.resolution
    r = int(cfg.refine)
    if cfg.check_geometry and spec.indicator.any():
        require_valid(build_cell_mesh(spec))
    xb = np.linspace(0.0, cfg.L, cfg.n_cells * n1 * r + 1)
    zl = eps * np.linspace(-1.0, 1.0, n3 * r + 1)
    h0 = 2 * eps / (n3 * r)
    up = graded_breaks(cfg.H, h0, cfg.h_max, cfg.grading)
    zb = np.concatenate([-(eps + up[::-1]), zl[1:-1], eps + up])
    mesh = QuadMesh(xb, zb)

    zc = mesh.centers[:, 1]
    xc = mesh.centers[:, 0]
    in_layer = np.abs(zc) < eps
    region = np.where(zc > 0, MicroMesh.UPPER, MicroMesh.LOWER)
    y1 = np.mod(xc / eps, 1.0)
    y3 = zc / eps
    i1 = np.clip(np.floor(y1 * n1).astype(int), 0, n1 - 1)
    i3 = np.clip(np.floor((y3 + 1.0) / 2.0 * n3).astype(int), 0, n3 - 1)
    vox = np.where(in_layer, i1 * n3 + i3, -1)
    ind = spec.indicator.ravel()
    solid = in_layer & ind[np.maximum(vox, 0)]
    region = np.where(in_layer, np.where(solid, MicroMesh.SOLID, MicroMesh.LAYER_FLUID), region)

    # facets between solid and layer-fluid elements (solid/bulk contacts belong to S+-)
    i, j = mesh.element_ij
    nz = mesh.nz
    rows = []
    for di, dj in ((1, 0), (0, 1)):
        nb_ok = (i + di < mesh.nx) & (j + dj < nz)
        e = np.flatnonzero(nb_ok)
        nb = (i[e] + di) * nz + j[e] + dj
        s_e, s_n = region[e] == MicroMesh.SOLID, region[nb] == MicroMesh.SOLID
        f_e, f_n = region[e] == MicroMesh.LAYER_FLUID, region[nb] == MicroMesh.LAYER_FLUID
        mix = (s_e & f_n) | (f_e & s_n)
        rows.append(np.column_stack([np.where(s_e, e, nb)[mix], np.where(s_e, nb, e)[mix]]))
    gamma = np.vstack(rows) if rows else np.zeros((0, 2), int)
    top_row = np.flatnonzero(in_layer & np.isclose(mesh.origin[:, 1] + mesh.h[:, 1], eps))
    bot_row = np.flatnonzero(in_layer & np.isclose(mesh.origin[:, 1], -eps))
    warnings = []
    if not np.any(solid):
        warnings.append("layer has no solid phase; the run reduces to Stokes flow")
    return MicroMesh(mesh, eps, region, vox, gamma, top_row, bot_row, warnings)


@dataclass
class MicroState:
    t: float
    v: np.ndarray    # velocity on all Q2 nodes (fluid velocity or solid velocity)
    p: np.ndarray    # pressure on fluid Q1 nodes
    u: np.ndarray    # solid displacement (zero away from solid nodes)

    def copy(self):
        return MicroState(self.t, self.v.copy(), self.p.copy(), self.u.copy())


class MicroSystem:
    """Assembled weighted operators of the scaled weak form."""

    def __init__(self, cfg: MicroConfig, mm: Optional[MicroMesh] = None):
        self.cfg = cfg
        self.mm = mm or build_micro_mesh(cfg)
        for w in self.mm.warnings:
            log.warning(w)
        mesh = self.mm.mesh
        eps = cfg.eps
        self.mesh = mesh
        lo, lf, so, up = (self.mm.elements(r) for r in range(4))
        self.parts = dict(lower=lo, layer_fluid=lf, solid=so, upper=up)
        mu = cfg.viscosity

        # raw (unweighted) region matrices, reused by the norm tables
        self.raw_mass = {k: mesh.velocity_mass(v) for k, v in self.parts.items()}
        self.raw_visc = {k: mesh.viscous(v) for k, v in self.parts.items()}
        self.M = (self.raw_mass["lower"] + self.raw_mass["upper"]
                  + (self.raw_mass["layer_fluid"] + self.raw_mass["solid"]) / eps).tocsr()
        self.Kv = (mu * (self.raw_visc["lower"] + self.raw_visc["upper"])
                   + mu * self.raw_visc["layer_fluid"] / eps).tocsr()
        spec = cfg.cell
        A = spec.voxel_tensor(self.mm.voxel[so]) if len(so) else np.zeros((0, 2, 2, 2, 2))
        self.Kel = mesh.elasticity(so, A, weight=1.0 / eps**3).tocsr()

        # pressure: Q1 on fluid elements, discontinuous across S+- (the layer
        # pressure carries a 1/eps stress scaling, so it jumps there)
        fluid = self.mm.fluid
        is_lf = self.mm.region[fluid] == MicroMesh.LAYER_FLUID
        conn = mesh.q1_elements[fluid] + np.where(is_lf, mesh.n_q1, 0)[:, None]
        pnodes, conn = np.unique(conn, return_inverse=True)
        conn = conn.reshape(-1, 4)
        self.pressure_nodes = pnodes
        self.pressure_conn = conn
        npr = len(pnodes)
        wdiv = np.where(is_lf, 1.0 / eps, 1.0)
        Bfull = mesh.divergence(fluid, weight=wdiv, connectivity=conn, n_pressure=npr)
        self.raw_pmass = {}
        for key, reg in (("lower", MicroMesh.LOWER), ("upper", MicroMesh.UPPER),
                         ("layer_fluid", MicroMesh.LAYER_FLUID)):
            sel = self.mm.region[fluid] == reg
            self.raw_pmass[key] = mesh.pressure_mass(fluid[sel], connectivity=conn[sel],
                                                     n_pressure=npr)

        c2 = mesh.q2_coords
        wall = np.isclose(c2[:, 0], 0.0) | np.isclose(c2[:, 0], cfg.L)
        self.wall_nodes = np.flatnonzero(wall)
        free_nodes = np.flatnonzero(~wall)
        self.free = fem.vector_dofs(free_nodes[:, None], 2).ravel()
        n = 2 * mesh.n_q2
        self.P = sparse.csr_matrix((np.ones(len(self.free)), (self.free, np.arange(len(self.free)))),
                                   shape=(n, len(self.free)))
        self.B = (Bfull @ self.P).tocsr()
        solid_nodes = np.unique(mesh.q2_elements[so]) if len(so) else np.zeros(0, int)
        self.solid_nodes = solid_nodes
        mask = np.zeros(mesh.n_q2, bool)
        mask[solid_nodes] = True
        self.solid_mask = np.repeat(mask, 2)
        self._solver = None

    @property
    def n_unknowns(self):
        return len(self.free) + len(self.pressure_nodes)

    def step_matrix(self, dt=None):
        dt = self.cfg.dt if dt is None else dt
        th = self.cfg.theta
        Mr = self.P.T @ self.M @ self.P
        Kr = self.P.T @ self.Kv @ self.P
        Er = self.P.T @ self.Kel @ self.P
        return (Mr / dt + th * Kr + th * th * dt * Er).tocsr()

    def solver(self):
        if self._solver is None:
            self._solver = fem.SaddleSolver(self.step_matrix(), self.B,
                                            method=self.cfg.saddle_method)
        return self._solver

    def forcing(self, t):
        cfg = self.cfg
        eps = cfg.eps
        mesh = self.mesh
        fp = lambda s, x, z: cfg.f_plus(s, x, z - eps)
        fm = lambda s, x, z: cfg.f_minus(s, x, z + eps)
        F = mesh.load(fp, self.parts["upper"], t=t) + mesh.load(fm, self.parts["lower"], t=t)
        if cfg.f_layer is not None and len(self.parts["layer_fluid"]):
            F = F + mesh.load(cfg.f_layer, self.parts["layer_fluid"], weight=1.0 / eps, t=t)
        return F

    def zero_state(self):
        n = 2 * self.mesh.n_q2
        return MicroState(0.0, np.zeros(n), np.zeros(len(self.pressure_nodes)), np.zeros(n))

    def initial_state(self):
        """Compatible initial velocity from the stationary scaled Stokes problem.

        The fluid velocity is held at zero on solid nodes (the solid starts at
        rest) and on the walls; with no data the initial state is zero.
        """
        cfg = self.cfg
        st = self.zero_state()
        if cfg.F0_plus is None and cfg.F0_minus is None and cfg.F0_layer is None:
            return st
        eps = cfg.eps
        mesh = self.mesh
        F = np.zeros(2 * mesh.n_q2)
        if cfg.F0_plus is not None:
            F += mesh.load(lambda s, x, z: cfg.F0_plus(s, x, z - eps), self.parts["upper"])
        if cfg.F0_minus is not None:
            F += mesh.load(lambda s, x, z: cfg.F0_minus(s, x, z + eps), self.parts["lower"])
        if cfg.F0_layer is not None and len(self.parts["layer_fluid"]):
            F += mesh.load(cfg.F0_layer, self.parts["layer_fluid"], weight=1.0 / eps)
        keep = ~self.solid_mask[self.free]
        P = self.P[:, np.flatnonzero(keep)]
        K = (P.T @ self.Kv @ P).tocsr()
        B = (self.B[:, np.flatnonzero(keep)]).tocsr()
        x, p = fem.solve_saddle(K, B, P.T @ F, np.zeros(B.shape[0]))
        st.v = P @ x
        st.p = p
        return st

    def step_system(self, state, dt=None, with_matrix=True):
        """Saddle blocks ``(K, B, f, g)`` of one step from ``state`` (reduced dofs)."""
        cfg = self.cfg
        th = cfg.theta
        dt = cfg.dt if dt is None else dt
        F = th * self.forcing(state.t + dt) + (1 - th) * self.forcing(state.t)
        v, u = state.v, state.u
        rhs = (self.M @ v) / dt - (1 - th) * (self.Kv @ v) \
            - self.Kel @ (u + th * (1 - th) * dt * v) + F
        K = self.step_matrix(dt) if with_matrix else None
        return K, self.B, self.P.T @ rhs, np.zeros(self.B.shape[0])

    def advance(self, state, dt=None):
        cfg = self.cfg
        th = cfg.theta
        dt = cfg.dt if dt is None else dt
        solver = self.solver() if dt == cfg.dt else fem.SaddleSolver(
            self.step_matrix(dt), self.B, method=cfg.saddle_method)
        _, _, f, g = self.step_system(state, dt, with_matrix=False)
        x, p = solver.solve(f, g)
        if not np.all(np.isfinite(x)):
            raise fem.SolverError("micro step produced non-finite values")
        v_new = self.P @ x
        u_new = np.where(self.solid_mask, state.u + dt * (th * v_new + (1 - th) * state.v), 0.0)
        return MicroState(state.t + dt, v_new, p, u_new)

    # -- diagnostics -------------------------------------------------------------------

    def energy(self, state):
        return float(0.5 * state.v @ (self.M @ state.v) + 0.5 * state.u @ (self.Kel @ state.u))

    def divergence_residual(self, state):
        return float(np.abs(self.B @ (self.P.T @ state.v)).max(initial=0.0))

    def norms(self, state):
        """Unscaled L2 norms of the quantities in the a priori table."""
        q = lambda A, x: float(np.sqrt(max(x @ (A @ x), 0.0)))
        v, u = state.v, state.u
        u1 = u.copy()
        u1[1::2] = 0.0
        out = {}
        for side in ("upper", "lower"):
            out[f"v_{side}"] = q(self.raw_mass[side], v)
            out[f"Dv_{side}"] = q(self.raw_visc[side], v)
            out[f"p_{side}"] = q(self.raw_pmass[side], state.p)
        out["v_layer"] = q(self.raw_mass["layer_fluid"], v)
        out["Dv_layer"] = q(self.raw_visc["layer_fluid"], v)
        out["p_layer"] = q(self.raw_pmass["layer_fluid"], state.p)
        out["dtu"] = q(self.raw_mass["solid"], v)
        out["u_inplane"] = q(self.raw_mass["solid"], u1)
        out["Du"] = q(self.raw_visc["solid"], u)
        return out


# pre-scaling exponent of eps for each a priori quantity
APRIORI_SCALING = {
    "v_upper": 0.0, "Dv_upper": 0.0, "p_upper": 0.0,
    "v_lower": 0.0, "Dv_lower": 0.0, "p_lower": 0.0,
    "v_layer": -0.5, "Dv_layer": -0.5, "p_layer": -0.5, "dtu": -0.5,
    "u_inplane": -1.5, "Du": -1.5,
}


@dataclass
class MicroRun:
    system: MicroSystem
    snapshots: list
    series: dict
    sup_norms: dict

    @property
    def cfg(self):
        return self.system.cfg

    @property
    def final(self):
        return self.snapshots[-1]


def run_micro(cfg: MicroConfig, system: Optional[MicroSystem] = None, callback=None):
    sys_ = system or MicroSystem(cfg)
    st = sys_.initial_state()
    snaps = [st.copy()]
    ser = {k: [] for k in ("t", "energy", "divergence_residual")}
    sup = {}

    def record(s):
        ser["t"].append(s.t)
        ser["energy"].append(sys_.energy(s))
        ser["divergence_residual"].append(sys_.divergence_residual(s))
        for k, v in sys_.norms(s).items():
            sup[k] = max(sup.get(k, 0.0), v)

    record(st)
    for n in range(cfg.n_steps):
        st = sys_.advance(st)
        record(st)
        if (n + 1) % cfg.snapshot_stride == 0 or n + 1 == cfg.n_steps:
            snaps.append(st.copy())
        if callback is not None:
            callback(n + 1, st)
    return MicroRun(sys_, snaps, {k: np.array(v) for k, v in ser.items()}, sup)


def apriori_report(run: MicroRun):
    """Time-sup norms, pre-scaled by the powers of eps the a priori bounds carry.

    Keys ending in ``_scaled`` hold the pre-scaled values; ``Du_unscaled`` is
    kept for the slope fit.
    """
    eps = run.cfg.eps
    out = {"eps": eps}
    for k, p in APRIORI_SCALING.items():
        out[f"{k}_scaled"] = run.sup_norms.get(k, 0.0) * eps**p
    out["Du_unscaled"] = run.sup_norms.get("Du", 0.0)
    return out


def scaling_study(reports):
    """Max/min ratio of each pre-scaled quantity and the unscaled ``|D u|`` slope."""
    eps = np.array([r["eps"] for r in reports])
    ratios = {}
    for k in APRIORI_SCALING:
        vals = np.array([r[f"{k}_scaled"] for r in reports])
        ratios[k] = float(vals.max() / vals.min()) if vals.min() > 0 else float("inf")
    du = np.array([r["Du_unscaled"] for r in reports])
    slope = float(np.polyfit(np.log(eps), np.log(du), 1)[0]) if np.all(du > 0) else float("nan")
    return {"ratios": ratios, "Du_slope": slope}
