"""Structured voxel meshes, DOF maps, and benchmark problem presets.

The domain is a box of nelx x nely x nelz unit-cube trilinear hex elements.
Node ids run x-fastest: node(i,j,k) = i + j*(nelx+1) + k*(nelx+1)*(nely+1),
and each node carries DOFs (3*id, 3*id+1, 3*id+2) for (ux, uy, uz). Elements
are numbered x-fastest as well. The element-to-DOF table (edof) is the whole
connectivity the matrix-free operators need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Local hex corner offsets, bottom face counterclockwise then top face.
# This single order is shared with the element stiffness builder; mixing
# conventions would silently scramble the operator.
CORNER_OFFSETS = np.array(
    [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class StructuredMesh:
    """Voxel grid of unit-cube hex elements."""

    nelx: int
    nely: int
    nelz: int

    def __post_init__(self):
        if min(self.nelx, self.nely, self.nelz) < 1:
            raise ValueError("element counts must be positive")

    @property
    def n_elem(self) -> int:
        return self.nelx * self.nely * self.nelz

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1) * (self.nelz + 1)

    @property
    def n_dof(self) -> int:
        return 3 * self.n_nodes

    def node_id(self, i, j, k):
        """Node index for grid coordinates, x-fastest."""
        return i + j * (self.nelx + 1) + k * (self.nelx + 1) * (self.nely + 1)

    def element_id(self, ei, ej, ek):
        return ei + ej * self.nelx + ek * self.nelx * self.nely

    def node_grid(self):
        """(i, j, k) integer coordinates of every node, shape (n_nodes, 3)."""
        k, j, i = np.meshgrid(
            np.arange(self.nelz + 1),
            np.arange(self.nely + 1),
            np.arange(self.nelx + 1),
            indexing="ij",
        )
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)

    def element_centers(self):
        """Element center coordinates in element-width units, x-fastest."""
        k, j, i = np.meshgrid(
            np.arange(self.nelz), np.arange(self.nely), np.arange(self.nelx), indexing="ij"
        )
        return np.stack([i.ravel() + 0.5, j.ravel() + 0.5, k.ravel() + 0.5], axis=1)


def build_edof(mesh: StructuredMesh) -> np.ndarray:
    """Element-to-DOF table, shape (n_elem, 24), int32.

    Row e lists the 24 global DOFs of element e in corner order, three DOFs
    (ux, uy, uz) per corner. int32 suffices up to ~700M DOFs and is what the
    traffic model charges (4 bytes per index).
    """
    ek, ej, ei = np.meshgrid(
        np.arange(mesh.nelz), np.arange(mesh.nely), np.arange(mesh.nelx), indexing="ij"
    )
    ei = ei.ravel()
    ej = ej.ravel()
    ek = ek.ravel()
    nodes = np.empty((mesh.n_elem, 8), dtype=np.int64)
    for a, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        nodes[:, a] = mesh.node_id(ei + dx, ej + dy, ek + dz)
    edof = (3 * nodes[:, :, None] + np.arange(3)[None, None, :]).reshape(mesh.n_elem, 24)
    if edof.max() >= np.iinfo(np.int32).max:
        raise ValueError("mesh too large for int32 DOF indices")
    return np.ascontiguousarray(edof, dtype=np.int32)


@dataclass
class BoundaryConditions:
    """Fixed DOFs and the load vector for one problem instance."""

    fixed_dofs: np.ndarray  # sorted unique int array of constrained DOFs
    force: np.ndarray  # length n_dof, zero on fixed DOFs

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        self.force = np.asarray(self.force, dtype=np.float64)
        self.force[self.fixed_dofs] = 0.0

    def free_mask(self, n_dof: int) -> np.ndarray:
        mask = np.ones(n_dof, dtype=bool)
        mask[self.fixed_dofs] = False
        return mask


@dataclass
class ProblemPreset:
    """A named benchmark problem: mesh, supports, loads, and SIMP targets."""

    name: str
    mesh: StructuredMesh
    bcs: BoundaryConditions
    volume_fraction: float
    filter_radius: float = 1.5
    scale: float = 1.0


# Reference element counts at scale 1.0.
_REFERENCE_DIMS = {
    "cantilever": (120, 60, 30),
    "mbb": (150, 50, 25),
    "bridge": (150, 50, 25),
    "torsion": (165, 55, 55),
}

_VOLUME_FRACTIONS = {"cantilever": 0.30, "mbb": 0.50, "bridge": 0.30, "torsion": 0.25}

PRESET_NAMES = tuple(_REFERENCE_DIMS)

# Scale 1/5 of the cantilever (24x12x6, 1728 elements) runs a full SIMP
# continuation in seconds on one core; the verification suite lives there.
DESK_SCALE = 0.2


def _snap_node(mesh: StructuredMesh, fx: float, fy: float, fz: float):
    """Nearest grid node to fractional face coordinates in [0,1]^3."""
    i = int(round(fx * mesh.nelx))
    j = int(round(fy * mesh.nely))
    k = int(round(fz * mesh.nelz))
    return mesh.node_id(i, j, k)


def _scaled_dims(name: str, scale: float):
    rx, ry, rz = _REFERENCE_DIMS[name]
    dims = (rx * scale, ry * scale, rz * scale)
    out = tuple(int(round(d)) for d in dims)
    for d, o in zip(dims, out):
        if abs(d - o) > 1e-9 or o < 1:
            raise ValueError(
                f"scale {scale} gives non-integer element counts {dims} for preset {name!r}"
            )
    return out


def make_preset(name: str, scale: float = 1.0) -> ProblemPreset:
    """Build one of the named problems at a given linear mesh scale.

    Loads total one force unit; elements stay unit cubes at every scale, so
    scaling changes resolution and domain extent together.
    """
    if name not in _REFERENCE_DIMS:
        raise ValueError(f"unknown preset {name!r}, expected one of {PRESET_NAMES}")
    nelx, nely, nelz = _scaled_dims(name, scale)
    mesh = StructuredMesh(nelx, nely, nelz)
    grid = mesh.node_grid()
    force = np.zeros(mesh.n_dof)
    fixed: list[np.ndarray] = []

    if name == "cantilever":
        # Clamped left face, unit -y point load at the right-face midpoint.
        left = np.flatnonzero(grid[:, 0] == 0)
        fixed.append((3 * left[:, None] + np.arange(3)).ravel())
        n = _snap_node(mesh, 1.0, 0.5, 0.5)
        force[3 * n + 1] = -1.0
    elif name == "mbb":
        # Symmetry half-model: ux on the whole x=0 face, uy pinned at the
        # bottom-right mid-depth node, unit -y load at the top-left mid-depth
        # node. z translation and one rotation stay free by construction;
        # the load is orthogonal to both, so CG runs on the singular system.
        left = np.flatnonzero(grid[:, 0] == 0)
        fixed.append(3 * left)
        pin = _snap_node(mesh, 1.0, 0.0, 0.5)
        fixed.append(np.array([3 * pin + 1]))
        n = _snap_node(mesh, 0.0, 1.0, 0.5)
        force[3 * n + 1] = -1.0
    elif name == "bridge":
        # Pinned lower-left edge, x-rollers (uy, uz fixed) on the lower-right
        # edge, unit total -y load spread over the mid-depth top line.
        lower_left = np.flatnonzero((grid[:, 0] == 0) & (grid[:, 1] == 0))
        fixed.append((3 * lower_left[:, None] + np.arange(3)).ravel())
        lower_right = np.flatnonzero((grid[:, 0] == nelx) & (grid[:, 1] == 0))
        fixed.append(3 * lower_right + 1)
        fixed.append(3 * lower_right + 2)
        kz = int(round(0.5 * nelz))
        top_line = np.flatnonzero((grid[:, 1] == nely) & (grid[:, 2] == kz))
        force[3 * top_line + 1] = -1.0 / top_line.size
    elif name == "torsion":
        # Clamped left face; equal-and-opposite distributed z loads on the
        # top and bottom edges of the right face twist the bar about x.
        left = np.flatnonzero(grid[:, 0] == 0)
        fixed.append((3 * left[:, None] + np.arange(3)).ravel())
        top = np.flatnonzero((grid[:, 0] == nelx) & (grid[:, 1] == nely))
        bot = np.flatnonzero((grid[:, 0] == nelx) & (grid[:, 1] == 0))
        force[3 * top + 2] = 1.0 / top.size
        force[3 * bot + 2] = -1.0 / bot.size

    bcs = BoundaryConditions(np.concatenate(fixed), force)
    return ProblemPreset(
        name=name,
        mesh=mesh,
        bcs=bcs,
        volume_fraction=_VOLUME_FRACTIONS[name],
        filter_radius=1.5,
        scale=scale,
    )


def cantilever_bcs(mesh: StructuredMesh) -> BoundaryConditions:
    """Clamped-left-face, tip-loaded BCs for an arbitrary mesh.

    Used by small verification meshes that are not preset scales.
    """
    grid = mesh.node_grid()
    left = np.flatnonzero(grid[:, 0] == 0)
    fixed = (3 * left[:, None] + np.arange(3)).ravel()
    force = np.zeros(mesh.n_dof)
    n = _snap_node(mesh, 1.0, 0.5, 0.5)
    force[3 * n + 1] = -1.0
    return BoundaryConditions(fixed, force)
