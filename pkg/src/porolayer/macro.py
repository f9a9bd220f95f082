"""Monolithic solver for the effective model on a 2D vertical slice.

Bulk Stokes flow fills ``(0, L) x (0, H)`` above and ``(0, L) x (-H, 0)``
below the interface ``z = 0``; the interface carries a clamped plate whose
transverse velocity is the vertical bulk velocity on the interface and whose
in-plane displacement follows quasi-statically.

Discretisation: Q2/Q1 Taylor-Hood in the bulk, cubic Hermite transverse
displacement and piecewise-linear in-plane displacement on the plate, theta
time stepping with one sparse factorisation per run.  The interface velocity
of the bulk is slaved to the plate: horizontal components vanish and the
vertical component is the plate velocity at the Q2 trace nodes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from . import fem
from .hermite import ClampedBeam
from .quadmesh import QuadMesh
from .tensors import EffectivePlateTensors, audit_tensors

log = logging.getLogger(__name__)

Forcing = Callable[[float, np.ndarray, np.ndarray], tuple]


def zero_bulk(t, x, z):
    return 0.0 * x, 0.0 * x


def zero_plate(t, x):
    return 0.0 * x


class MacroConfigError(ValueError):
    pass


class InitialDataError(MacroConfigError):
    """Initial velocity incompatible with the interface or wall constraints."""


def interface_breaks(H, nz, grading=1.0):
    """Breakpoints on ``[0, H]`` refined towards 0 with successive ratio ``grading``."""
    if abs(grading - 1.0) < 1e-14:
        return np.linspace(0.0, H, nz + 1)
    j = np.arange(nz + 1)
    return H * (grading**j - 1.0) / (grading**nz - 1.0)


@dataclass
class MacroConfig:
    """Parameters of a macro run.

    ``m_inertia`` scales the plate inertia and ``m_stiffness`` the plate
    energy; both default to 1.  :meth:`volume_consistent` returns the
    variant with ``m_inertia = |Z|`` and ``m_stiffness = |Z^s|``.
    """

    tensors: EffectivePlateTensors
    H: float = 1.0
    L: float = 1.0
    nx: Optional[int] = None
    nz: int = 8
    n_plate: int = 8
    dt: float = 1e-2
    T: float = 0.1
    theta: float = 1.0
    viscosity: float = 1.0
    m_inertia: float = 1.0
    m_stiffness: float = 1.0
    grading: float = 1.0
    f_plus: Forcing = zero_bulk
    f_minus: Forcing = zero_bulk
    g: Callable = zero_plate
    v0_plus: Forcing = zero_bulk
    v0_minus: Forcing = zero_bulk
    snapshot_stride: int = 1
    saddle_method: str = "auto"
    check_tensors: bool = True

    def __post_init__(self):
        if self.nx is None:
            self.nx = self.n_plate
        for name in ("H", "L", "dt", "viscosity", "m_inertia", "m_stiffness", "grading"):
            if not getattr(self, name) > 0:
                raise MacroConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.T < 0:
            raise MacroConfigError(f"T must be nonnegative, got {self.T}")
        if self.theta not in (0.5, 1.0):
            raise MacroConfigError(f"theta must be 1 or 1/2, got {self.theta}")
        for name in ("nx", "nz", "n_plate", "snapshot_stride"):
            if int(getattr(self, name)) < 1:
                raise MacroConfigError(f"{name} must be >= 1")
        if self.n_plate < 2:
            raise MacroConfigError("n_plate must be >= 2 (clamped plate needs an interior node)")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def plate_coefficients(self):
        return self.tensors.scalars()

    def volume_consistent(self, cell_volume=2.0):
        return replace(self, m_inertia=float(cell_volume),
                       m_stiffness=float(self.tensors.solid_volume))


@dataclass
class MacroState:
    t: float
    v_plus: np.ndarray
    v_minus: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    u: np.ndarray          # transverse displacement, free Hermite dofs
    w: np.ndarray          # transverse velocity
    u1: np.ndarray         # in-plane displacement, free linear dofs
    du1: np.ndarray = None  # in-plane velocity over the last step

    def __post_init__(self):
        if self.du1 is None:
            self.du1 = np.zeros_like(self.u1)

    def copy(self):
        return MacroState(self.t, *(np.array(a, copy=True) for a in (
            self.v_plus, self.v_minus, self.p_plus, self.p_minus, self.u, self.w,
            self.u1, self.du1)))


class MacroSystem:
    """Assembled operators and the stepping factorisation for one config."""

    def __init__(self, cfg: MacroConfig):
        self.cfg = cfg
        a, b, c = cfg.plate_coefficients()
        self.a, self.b, self.c = a, b, c
        zero = a == 0 and b == 0 and c == 0
        if cfg.check_tensors and not zero:
            rep = audit_tensors(cfg.tensors)
            if not rep.passed:
                raise MacroConfigError(f"tensor audit failed: {rep.to_dict()}")
        self.has_membrane = a != 0
        if b != 0 and a == 0:
            raise MacroConfigError("b* nonzero with a* = 0 leaves the in-plane field undetermined")

        xb = np.linspace(0.0, cfg.L, cfg.nx + 1)
        zb = interface_breaks(cfg.H, cfg.nz, cfg.grading)
        self.top = QuadMesh(xb, zb)
        self.bottom = QuadMesh(xb, -zb[::-1])
        self.beam = ClampedBeam(cfg.L, cfg.n_plate)

        self.blocks = {}
        E, free = {}, {}
        nb = self.beam.n_bending
        for side, mesh in (("plus", self.top), ("minus", self.bottom)):
            c2 = mesh.q2_coords
            wall = np.isclose(c2[:, 0], 0.0) | np.isclose(c2[:, 0], cfg.L)
            sigma = np.isclose(c2[:, 1], 0.0) & ~wall
            fixed = wall | sigma
            fdofs = fem.vector_dofs(np.flatnonzero(~fixed)[:, None], 2).ravel()
            sig_nodes = np.flatnonzero(sigma)
            T = self.beam.hermite_matrix(c2[sig_nodes, 0])           # (n_sig, nb)
            n = 2 * mesh.n_q2
            Ef = sparse.csr_matrix((np.ones(len(fdofs)), (fdofs, np.arange(len(fdofs)))),
                                   shape=(n, len(fdofs)))
            Tfull = sparse.coo_matrix(T)
            Ew = sparse.csr_matrix((Tfull.data, (2 * sig_nodes[Tfull.row] + 1, Tfull.col)),
                                   shape=(n, nb))
            E[side] = (Ef, Ew)
            free[side] = fdofs
            self.blocks[side] = dict(
                M=mesh.velocity_mass(), K=mesh.viscous(weight=cfg.viscosity),
                B=mesh.divergence(), sigma_nodes=sig_nodes, wall_nodes=np.flatnonzero(wall))
        self.free = free
        self.E = E
        n_p, n_m = len(free["plus"]), len(free["minus"])
        nm = self.beam.n_membrane if self.has_membrane else 0
        self.sizes = dict(plus=n_p, minus=n_m, w=nb, zeta=nm)
        self.offsets = np.cumsum([0, n_p, n_m, nb, nm])
        N = self.offsets[-1]

        def embed(side):
            Ef, Ew = E[side]
            n = Ef.shape[0]
            z_other = sparse.csr_matrix((n, n_m if side == "plus" else n_p))
            parts = [Ef, z_other] if side == "plus" else [z_other, Ef]
            return sparse.hstack(parts + [Ew, sparse.csr_matrix((n, nm))]).tocsr()

        self.P = {s: embed(s) for s in ("plus", "minus")}
        self.Mp = self.beam.mass()
        Sbb, Smb, Smm = self.beam.stiffness_blocks(a, b, c)
        self.S_parts = (Sbb, Smb, Smm)

        sl_w = slice(self.offsets[2], self.offsets[3])
        sl_z = slice(self.offsets[3], self.offsets[4])
        self.sl_w, self.sl_z = sl_w, sl_z

        def place(block, r, cidx):
            out = sparse.lil_matrix((N, N))
            out[r, cidx] = block
            return out.tocsr()

        M = sum(self.P[s].T @ self.blocks[s]["M"] @ self.P[s] for s in self.P)
        M = M + place(cfg.m_inertia * self.Mp, sl_w, sl_w)
        K = sum(self.P[s].T @ self.blocks[s]["K"] @ self.P[s] for s in self.P)
        S = place(Sbb, sl_w, sl_w)
        if nm:
            S = S + place(Smb, sl_z, sl_w) + place(Smb.T, sl_w, sl_z) + place(Smm, sl_z, sl_z)
        self.M, self.K, self.S = M.tocsr(), K.tocsr(), (cfg.m_stiffness * S).tocsr()
        self.B = sparse.vstack([self.blocks["plus"]["B"] @ self.P["plus"],
                                self.blocks["minus"]["B"] @ self.P["minus"]]).tocsr()
        self.n_p1 = (self.top.n_q1, self.bottom.n_q1)
        self._solver = None

    # -- helpers -----------------------------------------------------------------

    @property
    def n_unknowns(self):
        return self.offsets[-1]

    def step_matrix(self, dt=None):
        dt = self.cfg.dt if dt is None else dt
        th = self.cfg.theta
        return (self.M / dt + th * self.K + th * th * dt * self.S).tocsr()

    def solver(self):
        if self._solver is None:
            self._solver = fem.SaddleSolver(self.step_matrix(), self.B,
                                            method=self.cfg.saddle_method)
        return self._solver

    def pack(self, state):
        """Velocity-like unknown vector ``[v+free, v-free, w, 0]`` of a state."""
        y = np.zeros(self.n_unknowns)
        y[self.offsets[0]:self.offsets[1]] = state.v_plus[self.free["plus"]]
        y[self.offsets[1]:self.offsets[2]] = state.v_minus[self.free["minus"]]
        y[self.sl_w] = state.w
        return y

    def unpack_velocity(self, y):
        return self.P["plus"] @ y, self.P["minus"] @ y

    def forcing(self, t):
        cfg = self.cfg
        F = self.P["plus"].T @ self.top.load(cfg.f_plus, t=t)
        F = F + self.P["minus"].T @ self.bottom.load(cfg.f_minus, t=t)
        F[self.sl_w] += self.beam.load(cfg.g, t=t)
        return F

    def elastic_vector(self, u, u1):
        """``S`` applied to the displacement pair, in the (w, zeta) slots."""
        y = np.zeros(self.n_unknowns)
        y[self.sl_w] = u
        if self.sizes["zeta"]:
            y[self.sl_z] = u1
        return self.S @ y

    # -- diagnostics ---------------------------------------------------------------

    def energy(self, state):
        cfg = self.cfg
        kin = 0.5 * state.v_plus @ (self.blocks["plus"]["M"] @ state.v_plus)
        kin += 0.5 * state.v_minus @ (self.blocks["minus"]["M"] @ state.v_minus)
        kin += 0.5 * cfg.m_inertia * state.w @ (self.Mp @ state.w)
        y = np.zeros(self.n_unknowns)
        y[self.sl_w] = state.u
        if self.sizes["zeta"]:
            y[self.sl_z] = state.u1
        return float(kin + 0.5 * y @ (self.S @ y))

    def elastic_energy(self, state):
        y = np.zeros(self.n_unknowns)
        y[self.sl_w] = state.u
        if self.sizes["zeta"]:
            y[self.sl_z] = state.u1
        return float(0.5 * y @ (self.S @ y))

    def divergence_residual(self, state):
        r1 = self.blocks["plus"]["B"] @ state.v_plus
        r2 = self.blocks["minus"]["B"] @ state.v_minus
        return float(max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0)))

    def trace_defect(self, state):
        """Largest mismatch between bulk interface velocity and the plate velocity."""
        out = 0.0
        for side, v in (("plus", state.v_plus), ("minus", state.v_minus)):
            nodes = self.blocks[side]["sigma_nodes"]
            x = (self.top if side == "plus" else self.bottom).q2_coords[nodes, 0]
            vv = v.reshape(-1, 2)[nodes]
            wt = self.beam.evaluate(state.w, x)
            out = max(out, np.abs(vv[:, 0]).max(initial=0), np.abs(vv[:, 1] - wt).max(initial=0))
        return float(out)

    def midpoint_displacement(self, state):
        return float(self.beam.evaluate(state.u, [0.5 * self.cfg.L])[0])

    # -- initial data and stepping ------------------------------------------------------

    def zero_state(self):
        return MacroState(0.0, np.zeros(2 * self.top.n_q2), np.zeros(2 * self.bottom.n_q2),
                          np.zeros(self.top.n_q1), np.zeros(self.bottom.n_q1),
                          np.zeros(self.beam.n_bending), np.zeros(self.beam.n_bending),
                          np.zeros(self.beam.n_membrane))

    def initial_state(self, tol=1e-12):
        """Projected initial velocities with zero plate displacement and velocity."""
        cfg = self.cfg
        vp = self.top.interpolate_velocity(cfg.v0_plus)
        vm = self.bottom.interpolate_velocity(cfg.v0_minus)
        scale = max(np.abs(vp).max(initial=0), np.abs(vm).max(initial=0), 1.0)
        for side, v in (("plus", vp), ("minus", vm)):
            V = v.reshape(-1, 2)
            blk = self.blocks[side]
            bad_wall = np.abs(V[blk["wall_nodes"]]).max(initial=0)
            if bad_wall > tol * scale:
                raise InitialDataError(
                    f"initial velocity on the {side} side violates no-slip on the walls "
                    f"x = 0, L (max |v| = {bad_wall:.3e})")
            Vs = V[blk["sigma_nodes"]]
            if np.abs(Vs[:, 0]).max(initial=0) > tol * scale:
                raise InitialDataError(
                    f"initial velocity on the {side} side has nonzero tangential trace on the "
                    f"interface (max {np.abs(Vs[:, 0]).max():.3e})")
            if np.abs(Vs[:, 1]).max(initial=0) > tol * scale:
                raise InitialDataError(
                    f"initial velocity on the {side} side has nonzero vertical trace on the "
                    f"interface while the plate starts at rest (max {np.abs(Vs[:, 1]).max():.3e})")
        st = self.zero_state()
        if scale == 1.0 and not (np.any(vp) or np.any(vm)):
            return st
        # L2 projection onto the discretely divergence-free constrained space (w = 0)
        idx = np.r_[self.offsets[0]:self.offsets[2]]
        Mv = self.M[idx][:, idx]
        Bv = self.B[:, idx]
        y0 = np.zeros(self.n_unknowns)
        y0[self.offsets[0]:self.offsets[1]] = vp[self.free["plus"]]
        y0[self.offsets[1]:self.offsets[2]] = vm[self.free["minus"]]
        rhs = self.M[idx] @ y0
        try:
            x, _ = fem.solve_saddle(Mv, Bv, rhs, np.zeros(Bv.shape[0]))
        except fem.SolverError as exc:
            raise InitialDataError(f"projection of the initial velocity failed: {exc}") from exc
        y = np.zeros(self.n_unknowns)
        y[idx] = x
        st.v_plus, st.v_minus = self.unpack_velocity(y)
        return st

    def advance(self, state, dt=None):
        """One theta step; returns the new state."""
        cfg = self.cfg
        th = cfg.theta
        dt = cfg.dt if dt is None else dt
        solver = self.solver() if dt == cfg.dt else fem.SaddleSolver(
            self.step_matrix(dt), self.B, method=cfg.saddle_method)
        y_old = self.pack(state)
        F = th * self.forcing(state.t + dt) + (1 - th) * self.forcing(state.t)
        rhs = self.M @ y_old / dt - (1 - th) * (self.K @ y_old) + F
        Sy = self.elastic_vector(state.u, state.u1)
        Sw = self.elastic_vector(state.w, np.zeros_like(state.u1))
        rhs[self.sl_w] -= Sy[self.sl_w] + th * (1 - th) * dt * Sw[self.sl_w]
        if self.sizes["zeta"]:
            rhs[self.sl_z] -= th * (Sy[self.sl_z] + (1 - th) * dt * Sw[self.sl_z])
        y, p = solver.solve(rhs, np.zeros(self.B.shape[0]))
        if not np.all(np.isfinite(y)):
            raise fem.SolverError("macro step produced non-finite values")
        vp, vm = self.unpack_velocity(y)
        w = y[self.sl_w]
        u = state.u + dt * (th * w + (1 - th) * state.w)
        if self.sizes["zeta"]:
            du1 = th * y[self.sl_z]
            u1 = state.u1 + dt * du1
        else:
            du1 = np.zeros_like(state.u1)
            u1 = state.u1
        n1 = self.n_p1[0]
        return MacroState(state.t + dt, vp, vm, p[:n1], p[n1:], u, w, u1, du1)


@dataclass
class MacroRun:
    system: MacroSystem
    snapshots: list
    series: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.snapshots[-1]

    def series_rows(self):
        keys = ["t", "energy", "midpoint_displacement", "divergence_residual"]
        return keys, np.column_stack([self.series[k] for k in keys])

    def state_at(self, t, tol=1e-9):
        for s in self.snapshots:
            if abs(s.t - t) <= tol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no macro snapshot at t = {t}")


def run_macro(cfg: MacroConfig, system: Optional[MacroSystem] = None, callback=None):
    """Initialise, step to ``T`` and collect the diagnostic time series."""
    sys_ = system or MacroSystem(cfg)
    st = sys_.initial_state()
    snaps = [st.copy()]
    ser = {k: [] for k in ("t", "energy", "midpoint_displacement", "divergence_residual")}

    def record(s):
        ser["t"].append(s.t)
        ser["energy"].append(sys_.energy(s))
        ser["midpoint_displacement"].append(sys_.midpoint_displacement(s))
        ser["divergence_residual"].append(sys_.divergence_residual(s))

    record(st)
    for n in range(cfg.n_steps):
        st = sys_.advance(st)
        record(st)
        if (n + 1) % cfg.snapshot_stride == 0 or n + 1 == cfg.n_steps:
            snaps.append(st.copy())
        if callback is not None:
            callback(n + 1, st)
    log.debug("macro run finished: %d steps", cfg.n_steps)
    return MacroRun(sys_, snaps, {k: np.array(v) for k, v in ser.items()})


def static_plate_deflection(x, q, c, L):
    """Clamped plate under uniform load: ``q x^2 (L - x)^2 / (24 c)``."""
    x = np.asarray(x, dtype=float)
    return q * x**2 * (L - x) ** 2 / (24.0 * c)
