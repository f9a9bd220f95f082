"""Voxel microstructures of the periodic reference cell.

The reference cell is ``Z = Y x (-1, 1)`` with ``Y = (0, 1)^(d-1)``. The last
axis is always the transverse coordinate ``y3``; all other axes are lateral
and periodic. A cell is described by a voxel grid carrying a solid/fluid
indicator and an elastic material on the solid voxels.

JSON layout of a microstructure file::

    {
      "dimension": 3,
      "resolution": [n1, n2, n3],
      "indicator": [0, 1, ...],          # flat, row-major, 1 = solid
      "material": {"lame": [lambda, mu]} # or {"lambda": [...], "mu": [...]}
                                         # or {"tensor": [[[[...]]]]}
      "allow_single_phase": false        # optional
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


class MicrostructureError(ValueError):
    """Raised for malformed or inconsistent microstructure input."""


class DimensionError(MicrostructureError):
    pass


class GeometryError(ValueError):
    """Raised when a cell violates a hard geometric requirement."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def isotropic_tensor(lam, mu, dim):
    """Fourth-order isotropic elasticity tensor ``lam I(x)I + 2 mu I_sym``."""
    eye = np.eye(dim)
    return (lam * np.einsum("ij,kl->ijkl", eye, eye)
            + mu * (np.einsum("ik,jl->ijkl", eye, eye)
                    + np.einsum("il,jk->ijkl", eye, eye)))


def tensor_symmetry_defect(A):
    """Largest violation of the minor and major symmetries of ``A``."""
    A = np.asarray(A, dtype=float)
    return max(np.abs(A - A.transpose(1, 0, 2, 3)).max(initial=0.0),
               np.abs(A - A.transpose(0, 1, 3, 2)).max(initial=0.0),
               np.abs(A - A.transpose(2, 3, 0, 1)).max(initial=0.0))


def min_symmetric_eigenvalue(A):
    """Smallest eigenvalue of ``A`` as a quadratic form on symmetric matrices."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    basis = []
    for i in range(d):
        for j in range(i, d):
            B = np.zeros((d, d))
            if i == j:
                B[i, i] = 1.0
            else:
                B[i, j] = B[j, i] = np.sqrt(0.5)
            basis.append(B)
    G = np.array([[np.einsum("ijkl,kl,ij->", A, Bb, Ba) for Bb in basis]
                  for Ba in basis])
    return float(np.linalg.eigvalsh(0.5 * (G + G.T)).min())


@dataclass
class MicrostructureSpec:
    """Voxel description of the reference cell.

    ``indicator`` has shape ``resolution`` and is ``True`` on solid voxels.
    The material is either uniform (``lame`` or ``tensor``) or given per
    voxel through ``lam`` / ``mu`` arrays of shape ``resolution``.
    """

    dimension: int
    resolution: tuple
    indicator: np.ndarray
    lame: tuple | None = None
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    tensor: np.ndarray | None = None
    allow_single_phase: bool = False

    def __post_init__(self):
        self.resolution = tuple(int(n) for n in self.resolution)
        self.indicator = np.asarray(self.indicator, dtype=bool)
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=float)
            self.mu = np.asarray(self.mu, dtype=float)
        if self.tensor is not None:
            self.tensor = np.asarray(self.tensor, dtype=float)
        self.validate()

    def validate(self):
        if self.dimension not in (2, 3):
            raise DimensionError(f"dimension must be 2 or 3, got {self.dimension}")
        if len(self.resolution) != self.dimension:
            raise DimensionError(
                f"resolution has {len(self.resolution)} entries for "
                f"dimension {self.dimension}")
        if min(self.resolution) < 2:
            raise DimensionError("every axis needs at least 2 voxels")
        if self.indicator.shape != self.resolution:
            raise DimensionError(
                f"indicator shape {self.indicator.shape} != {self.resolution}")
        n_solid = int(self.indicator.sum())
        if not self.allow_single_phase and (n_solid == 0
                                            or n_solid == self.indicator.size):
            raise MicrostructureError(
                "cell needs at least one solid and one fluid voxel "
                "(set allow_single_phase to override)")
        given = [self.lame is not None, self.lam is not None,
                 self.tensor is not None]
        if sum(given) != 1:
            raise MicrostructureError("exactly one material description required")
        if self.lame is not None:
            lam, mu = self.lame
            if lam < 0 or mu <= 0:
                raise MicrostructureError("need lambda >= 0 and mu > 0")
        if self.lam is not None:
            if self.lam.shape != self.resolution or self.mu.shape != self.resolution:
                raise DimensionError("per-voxel material arrays have wrong shape")
            solid = self.indicator
            if np.any(~np.isfinite(self.lam[solid])) or np.any(self.lam[solid] < 0) \
                    or np.any(self.mu[solid] <= 0):
                raise MicrostructureError(
                    "material undefined or not admissible on a solid voxel")
        if self.tensor is not None:
            d = self.dimension
            if self.tensor.shape != (d, d, d, d):
                raise DimensionError(f"tensor must have shape {(d,) * 4}")
            if tensor_symmetry_defect(self.tensor) > 1e-12 * np.abs(self.tensor).max():
                raise MicrostructureError("material tensor is not symmetric")
            if min_symmetric_eigenvalue(self.tensor) <= 0:
                raise MicrostructureError("material tensor is not coercive")

    @property
    def shape(self):
        return self.resolution

    @property
    def voxel_size(self):
        h = [1.0 / n for n in self.resolution[:-1]]
        h.append(2.0 / self.resolution[-1])
        return np.array(h)

    def voxel_tensor(self, flat_index):
        """Elasticity tensors for the voxels ``flat_index`` (C order)."""
        flat_index = np.atleast_1d(flat_index)
        d = self.dimension
        if self.tensor is not None:
            return np.broadcast_to(self.tensor, (len(flat_index), d, d, d, d)).copy()
        if self.lame is not None:
            lam = np.full(len(flat_index), float(self.lame[0]))
            mu = np.full(len(flat_index), float(self.lame[1]))
        else:
            lam = self.lam.ravel()[flat_index]
            mu = self.mu.ravel()[flat_index]
        eye = np.eye(d)
        ii = np.einsum("ij,kl->ijkl", eye, eye)
        sym = np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
        return lam[:, None, None, None, None] * ii + mu[:, None, None, None, None] * sym

    def is_even_in_y3(self):
        """True when indicator and material are mirror symmetric in ``y3``."""
        flip = lambda a: np.flip(a, axis=-1)
        if not np.array_equal(self.indicator, flip(self.indicator)):
            return False
        if self.lam is not None:
            s = self.indicator
            return (np.allclose(np.where(s, self.lam, 0), flip(np.where(s, self.lam, 0)))
                    and np.allclose(np.where(s, self.mu, 0), flip(np.where(s, self.mu, 0))))
        if self.tensor is not None:
            # reflection y3 -> -y3 flips the sign of components with an odd number of 3-indices
            d = self.dimension
            sign = np.ones((d,) * 4)
            for idx in np.ndindex(*sign.shape):
                sign[idx] = (-1) ** sum(i == d - 1 for i in idx)
            return np.allclose(self.tensor * sign, self.tensor)
        return True

    def refined(self, factor):
        """Spec with every voxel split into ``factor`` voxels per axis."""
        factor = int(factor)
        if factor == 1:
            return self
        rep = lambda a: None if a is None else _upsample(a, factor)
        return MicrostructureSpec(
            dimension=self.dimension,
            resolution=tuple(n * factor for n in self.resolution),
            indicator=_upsample(self.indicator, factor),
            lame=self.lame, lam=rep(self.lam), mu=rep(self.mu), tensor=self.tensor,
            allow_single_phase=self.allow_single_phase)

    def to_dict(self):
        out = {
            "dimension": self.dimension,
            "resolution": list(self.resolution),
            "indicator": self.indicator.astype(int).ravel().tolist(),
        }
        if self.lame is not None:
            out["material"] = {"lame": [float(self.lame[0]), float(self.lame[1])]}
        elif self.lam is not None:
            out["material"] = {"lambda": self.lam.ravel().tolist(),
                               "mu": self.mu.ravel().tolist()}
        else:
            out["material"] = {"tensor": self.tensor.tolist()}
        if self.allow_single_phase:
            out["allow_single_phase"] = True
        return out

    def digest(self):
        """Content hash used to tag derived artifacts."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, MicrostructureSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _upsample(a, factor):
    a = np.asarray(a)
    for ax in range(a.ndim):
        a = np.repeat(a, factor, axis=ax)
    return a


def spec_from_dict(data):
    """Build a :class:`MicrostructureSpec` from the documented JSON layout."""
    for key in ("dimension", "resolution", "indicator", "material"):
        if key not in data:
            raise MicrostructureError(f"missing field '{key}'")
    try:
        dim = int(data["dimension"])
        res = tuple(int(n) for n in data["resolution"])
    except (TypeError, ValueError) as exc:
        raise MicrostructureError(f"field 'dimension'/'resolution': {exc}") from None
    if len(res) != dim:
        raise DimensionError(f"resolution has {len(res)} entries for dimension {dim}")
    n = int(np.prod(res))
    ind = np.asarray(data["indicator"])
    if ind.ndim != 1 or ind.size != n:
        raise DimensionError(
            f"field 'indicator': expected {n} entries, got {ind.size}")
    if not np.isin(ind, (0, 1)).all():
        raise MicrostructureError("field 'indicator': entries must be 0 or 1")
    mat = data["material"]
    kwargs = {}
    if "lame" in mat:
        lam, mu = (float(v) for v in mat["lame"])
        kwargs["lame"] = (lam, mu)
    elif "lambda" in mat and "mu" in mat:
        lam = np.asarray(mat["lambda"], dtype=float)
        mu = np.asarray(mat["mu"], dtype=float)
        if lam.size != n or mu.size != n:
            raise DimensionError(
                f"field 'material': per-voxel arrays need {n} entries")
        kwargs["lam"] = lam.reshape(res)
        kwargs["mu"] = mu.reshape(res)
    elif "tensor" in mat:
        kwargs["tensor"] = np.asarray(mat["tensor"], dtype=float)
    else:
        raise MicrostructureError("field 'material': expected 'lame', "
                                  "'lambda'/'mu' or 'tensor'")
    return MicrostructureSpec(dimension=dim, resolution=res,
                              indicator=ind.reshape(res).astype(bool),
                              allow_single_phase=bool(data.get("allow_single_phase", False)),
                              **kwargs)


def parse_microstructure(path):
    """Read and validate a microstructure JSON file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MicrostructureError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return spec_from_dict(data)
    except MicrostructureError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_microstructure(spec, path):
    path = Path(path)
    path.write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


# -- mesh ------------------------------------------------------------------

@dataclass
class CellMesh:
    """Voxel mesh of the reference cell (one Q1 element per voxel).

    Nodes live on the full, non-periodic grid of ``(n + 1)`` points per axis.
    ``periodic_slaves[k]`` is identified with ``periodic_masters[k]``; every
    master has all lateral grid indices strictly below ``n``.

    Facets are stored as ``(element, axis, side)`` rows where ``side`` is 0
    for the lower and 1 for the upper face of the element along ``axis``.
    ``gamma`` stores ``(solid_element, fluid_element, axis)`` rows, lateral
    neighbours found through the periodic wrap.
    """

    spec: MicrostructureSpec
    coords: np.ndarray
    elements: np.ndarray
    solid: np.ndarray
    fluid: np.ndarray
    gamma: np.ndarray
    top: np.ndarray
    bottom: np.ndarray
    lateral: np.ndarray
    periodic_slaves: np.ndarray
    periodic_masters: np.ndarray
    solid_nodes: np.ndarray = field(default=None)
    fluid_nodes: np.ndarray = field(default=None)

    @property
    def dim(self):
        return self.spec.dimension

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def h(self):
        return self.spec.voxel_size

    @property
    def element_volume(self):
        return float(np.prod(self.h))

    @property
    def volume(self):
        return self.n_elements * self.element_volume

    @property
    def solid_volume(self):
        return len(self.solid) * self.element_volume

    def element_origin(self, elements=None):
        if elements is None:
            elements = np.arange(self.n_elements)
        return self.coords[self.elements[elements, 0]]

    def periodic_image(self, node):
        """Master node of ``node`` (itself when not a slave)."""
        lookup = np.arange(len(self.coords))
        lookup[self.periodic_slaves] = self.periodic_masters
        return lookup[node]


def _grid_node_index(shape_nodes):
    return np.arange(np.prod(shape_nodes)).reshape(shape_nodes)


def build_cell_mesh(spec):
    """Voxel mesh with facet sets and lateral periodic node pairing."""
    res = spec.resolution
    d = spec.dimension
    nshape = tuple(n + 1 for n in res)
    node_id = _grid_node_index(nshape)
    axes = [np.linspace(0.0, 1.0, n + 1) for n in res[:-1]]
    axes.append(np.linspace(-1.0, 1.0, res[-1] + 1))
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)

    # element connectivity, local node order = C order over {0,1}^d
    offsets = list(np.ndindex(*(2,) * d))
    elem_idx = np.stack(np.meshgrid(*[np.arange(n) for n in res], indexing="ij"),
                        axis=-1).reshape(-1, d)
    elements = np.empty((len(elem_idx), len(offsets)), dtype=np.int64)
    for a, off in enumerate(offsets):
        idx = elem_idx + np.array(off)
        elements[:, a] = node_id[tuple(idx.T)]

    ind = spec.indicator.ravel()
    solid = np.flatnonzero(ind)
    fluid = np.flatnonzero(~ind)

    eid = np.arange(len(elem_idx)).reshape(res)
    gamma = []
    for ax in range(d):
        if ax < d - 1:
            nb = np.roll(eid, -1, axis=ax)     # periodic wrap on lateral axes
            a_ids, b_ids = eid.ravel(), nb.ravel()
        else:
            a_ids = np.take(eid, range(res[ax] - 1), axis=ax).ravel()
            b_ids = np.take(eid, range(1, res[ax]), axis=ax).ravel()
        sa, sb = ind[a_ids], ind[b_ids]
        m1 = sa & ~sb
        m2 = ~sa & sb
        gamma.extend(zip(a_ids[m1], b_ids[m1], np.full(m1.sum(), ax)))
        gamma.extend(zip(b_ids[m2], a_ids[m2], np.full(m2.sum(), ax)))
    gamma = np.array(gamma, dtype=np.int64).reshape(-1, 3)

    def faces(ax, side):
        sl = np.take(eid, [0 if side == 0 else res[ax] - 1], axis=ax).ravel()
        return np.column_stack([sl, np.full_like(sl, ax), np.full_like(sl, side)])

    top = faces(d - 1, 1)
    bottom = faces(d - 1, 0)
    lateral = np.vstack([faces(ax, s) for ax in range(d - 1) for s in (0, 1)]) \
        if d > 1 else np.zeros((0, 3), dtype=np.int64)

    # periodic pairing: every node with a lateral index == n maps to index mod n
    grid_idx = np.stack(np.meshgrid(*[np.arange(n) for n in nshape], indexing="ij"),
                        axis=-1).reshape(-1, d)
    master_idx = grid_idx.copy()
    for ax in range(d - 1):
        master_idx[:, ax] = master_idx[:, ax] % res[ax]
    master = node_id[tuple(master_idx.T)]
    slaves = np.flatnonzero(master != np.arange(len(master)))

    mesh = CellMesh(spec=spec, coords=coords, elements=elements, solid=solid,
                    fluid=fluid, gamma=gamma, top=top, bottom=bottom,
                    lateral=lateral, periodic_slaves=slaves,
                    periodic_masters=master[slaves])
    mesh.solid_nodes = np.unique(elements[solid])
    mesh.fluid_nodes = np.unique(elements[fluid]) if len(fluid) else np.zeros(0, np.int64)
    return mesh


# -- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    solid_connected: bool
    fluid_connected: bool
    clearance: bool
    lateral_periodic: bool
    layer_connected: bool
    warnings: list
    errors: list

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return {
            "solid_connected": self.solid_connected,
            "fluid_connected": self.fluid_connected,
            "clearance": self.clearance,
            "lateral_periodic": self.lateral_periodic,
            "layer_connected": self.layer_connected,
            "warnings": list(self.warnings),
            "errors": list(self.errors),
        }


def periodic_components(mask):
    """Face-connected components of ``mask`` with wrap on lateral axes.

    Returns the label array (0 = background) and the number of components.
    """
    labels, n = ndimage.label(mask)
    if n == 0:
        return labels, 0
    parent = np.arange(n + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ax in range(mask.ndim - 1):
        first = np.take(labels, 0, axis=ax).ravel()
        last = np.take(labels, -1, axis=ax).ravel()
        for a, b in zip(first, last):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n + 1)])
    uniq, relabeled = np.unique(roots, return_inverse=True)
    out = relabeled.reshape(-1)[labels.ravel()].reshape(labels.shape)
    return out, len(uniq) - 1


def validate_geometry(mesh):
    """Check the hypotheses the cell problems and the coupled model rely on.

    Connectivity and lateral periodicity problems are errors; a solid that
    touches the top or bottom face is reported as a warning only. In 2D a
    laterally connected solid necessarily splits the fluid into an upper and
    a lower part, so there the fluid check asks instead that every fluid
    component reaches the top or bottom face.
    """
    spec = mesh.spec
    ind = spec.indicator
    d = spec.dimension
    warnings, errors = [], []

    _, n_solid = periodic_components(ind)
    solid_connected = n_solid == 1
    if not solid_connected:
        errors.append(f"solid phase has {n_solid} periodic components")

    fluid = ~ind
    flabels, n_fluid = periodic_components(fluid)
    if n_fluid == 0:
        fluid_connected = True
    elif d == 3:
        fluid_connected = n_fluid == 1
    else:
        touching = set(np.unique(np.take(flabels, 0, axis=-1))) | \
            set(np.unique(np.take(flabels, -1, axis=-1)))
        fluid_connected = all(c in touching for c in range(1, n_fluid + 1))
    if not fluid_connected:
        errors.append(f"fluid phase is disconnected ({n_fluid} components)")

    clearance = not (np.take(ind, 0, axis=-1).any() or np.take(ind, -1, axis=-1).any())
    if not clearance:
        warnings.append("solid touches the top/bottom faces S+-; the coupled "
                        "model's clearance hypothesis fails")

    lateral_periodic = True
    for ax in range(d - 1):
        if not np.array_equal(np.take(ind, 0, axis=ax), np.take(ind, -1, axis=ax)):
            lateral_periodic = False
            errors.append(f"indicator traces differ on the periodic faces of axis {ax}")

    layer_connected = all(
        (np.take(ind, 0, axis=ax) & np.take(ind, -1, axis=ax)).any()
        for ax in range(d - 1))
    if not layer_connected:
        errors.append("solid does not reach the lateral faces; the assembled "
                      "layer solid would be disconnected")

    return ValidationReport(solid_connected, fluid_connected, clearance,
                            lateral_periodic, layer_connected, warnings, errors)


def require_valid(mesh):
    report = validate_geometry(mesh)
    if not report.ok:
        raise GeometryError("; ".join(report.errors), report)
    return report


# -- constructors -----------------------------------------------------------

def full_solid_spec(resolution, lam=1.0, mu=1.0):
    res = tuple(resolution)
    return MicrostructureSpec(dimension=len(res), resolution=res,
                              indicator=np.ones(res, dtype=bool), lame=(lam, mu),
                              allow_single_phase=True)


def y3_centers(resolution):
    n3 = resolution[-1]
    return -1.0 + (np.arange(n3) + 0.5) * 2.0 / n3


def slab_spec(resolution, half_thickness=0.5, lam=1.0, mu=1.0):
    """Solid slab ``|y3| <= half_thickness`` spanning the whole cell."""
    res = tuple(resolution)
    y3 = y3_centers(res)
    ind = np.broadcast_to(np.abs(y3) < half_thickness, res).copy()
    return MicrostructureSpec(dimension=len(res), resolution=res, indicator=ind,
                              lame=(lam, mu))


def channel_slab_spec(resolution, half_thickness=0.5, channel=0.5, lam=1.0, mu=1.0):
    """3D slab with a centred vertical square channel of side ``channel``."""
    spec = slab_spec(resolution, half_thickness, lam, mu)
    n1, n2, _ = spec.resolution
    c1 = (np.arange(n1) + 0.5) / n1
    c2 = (np.arange(n2) + 0.5) / n2
    hole = (np.abs(c1 - 0.5)[:, None] < channel / 2) & (np.abs(c2 - 0.5)[None, :] < channel / 2)
    ind = spec.indicator & ~hole[:, :, None]
    return MicrostructureSpec(dimension=3, resolution=spec.resolution, indicator=ind,
                              lame=(lam, mu))


def random_spec(rng, resolution=(4, 4, 6), max_tries=200):
    """Random admissible 3D cell with per-voxel isotropic materials.

    Starts from a slab clear of the top and bottom faces, punches a vertical
    channel, then removes random voxels from the inside while the cell keeps
    passing :func:`validate_geometry`.
    """
    res = tuple(resolution)
    n1, n2, n3 = res
    for _ in range(max_tries):
        ind = np.zeros(res, dtype=bool)
        ind[:, :, 1:n3 - 1] = True
        i, j = rng.integers(1, n1 - 1), rng.integers(1, n2 - 1)
        ind[i, j, :] = False
        candidates = [(a, b, c) for a in range(1, n1 - 1) for b in range(1, n2 - 1)
                      for c in range(1, n3 - 1)]
        rng.shuffle(candidates)
        for a, b, c in candidates[: len(candidates) // 3]:
            ind[a, b, c] = False
            if periodic_components(ind)[1] != 1 or periodic_components(~ind)[1] != 1:
                ind[a, b, c] = True
        lam = rng.uniform(0.0, 2.0, size=res)
        mu = rng.uniform(0.5, 2.0, size=res)
        spec = MicrostructureSpec(dimension=3, resolution=res, indicator=ind,
                                  lam=lam, mu=mu)
        if validate_geometry(build_cell_mesh(spec)).ok:
            return spec
    raise RuntimeError("could not draw an admissible random cell")
