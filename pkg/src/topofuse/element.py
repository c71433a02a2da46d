"""Trilinear hexahedral element stiffness and SIMP material scaling.

One 24x24 unit-modulus stiffness matrix serves every element of the voxel
grid; per-element density enters only as the scalar SIMP factor. The corner
order is shared with mesh.CORNER_OFFSETS.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import CORNER_OFFSETS, StructuredMesh

RHO_MIN = 1e-9


@dataclass(frozen=True)
class SimpParams:
    """SIMP interpolation: E(rho) = rho_min + (1 - rho_min) * rho**p."""

    p: float = 3.0
    rho_min: float = RHO_MIN

    def __post_init__(self):
        if self.p < 1.0:
            raise ValueError("penalization exponent must be >= 1")
        if not 0.0 < self.rho_min < 1.0:
            raise ValueError("rho_min must lie in (0, 1)")


def simp_scale(rho, params: SimpParams = SimpParams()):
    """Element stiffness factor for densities in [0, 1]."""
    rho = np.asarray(rho)
    if np.any(rho < -1e-12) or np.any(rho > 1.0 + 1e-12):
        raise ValueError("densities must lie in [0, 1]")
    return params.rho_min + (1.0 - params.rho_min) * np.clip(rho, 0.0, 1.0) ** params.p


def simp_scale_derivative(rho, params: SimpParams = SimpParams()):
    """d(simp_scale)/d(rho), used by the compliance sensitivities."""
    rho = np.asarray(rho)
    return params.p * (1.0 - params.rho_min) * np.clip(rho, 0.0, 1.0) ** (params.p - 1.0)


def _shape_gradients(xi: float, eta: float, zeta: float) -> np.ndarray:
    """d(N_a)/d(xi_i) for the 8 trilinear shape functions, shape (8, 3)."""
    signs = 2.0 * CORNER_OFFSETS - 1.0  # corner positions in [-1, 1]^3
    grads = np.empty((8, 3))
    for a, (sx, sy, sz) in enumerate(signs):
        grads[a, 0] = 0.125 * sx * (1.0 + sy * eta) * (1.0 + sz * zeta)
        grads[a, 1] = 0.125 * sy * (1.0 + sx * xi) * (1.0 + sz * zeta)
        grads[a, 2] = 0.125 * sz * (1.0 + sx * xi) * (1.0 + sy * eta)
    return grads


def elasticity_matrix(nu: float) -> np.ndarray:
    """Isotropic 3D elasticity in Voigt order (xx, yy, zz, yz, xz, xy), E = 1."""
    c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu))
    d = np.zeros((6, 6))
    d[:3, :3] = c * nu
    np.fill_diagonal(d[:3, :3], c * (1.0 - nu))
    d[3:, 3:] = np.eye(3) * (0.5 / (1.0 + nu))
    return d


@lru_cache(maxsize=8)
def unit_stiffness(nu: float = 0.3) -> np.ndarray:
    """24x24 stiffness of a unit-cube element with E = 1.

    Full 2x2x2 Gauss quadrature; for a unit cube the Jacobian is diag(1/2)
    and the quadrature integrates the (per-axis quadratic) integrand exactly.
    The result is returned read-only so every operator can share one copy.
    """
    d = elasticity_matrix(nu)
    g = 1.0 / np.sqrt(3.0)
    ke = np.zeros((24, 24))
    det_j = 0.125  # (1/2)^3
    for xi in (-g, g):
        for eta in (-g, g):
            for zeta in (-g, g):
                grads = _shape_gradients(xi, eta, zeta) * 2.0  # dN/dx = dN/dxi * 2
                b = np.zeros((6, 24))
                for a in range(8):
                    dx, dy, dz = grads[a]
                    c = 3 * a
                    b[0, c] = dx
                    b[1, c + 1] = dy
                    b[2, c + 2] = dz
                    b[3, c + 1] = dz
                    b[3, c + 2] = dy
                    b[4, c] = dz
                    b[4, c + 2] = dx
                    b[5, c] = dy
                    b[5, c + 1] = dx
                ke += b.T @ d @ b * det_j
    ke = 0.5 * (ke + ke.T)  # kill quadrature-order roundoff asymmetry
    ke.setflags(write=False)
    return ke


# Dense assembly is an oracle for small meshes, not a solver path; the guard
# keeps anyone from accidentally assembling a production-size matrix.
DENSE_DOF_LIMIT = 10_000


def assemble_dense(
    mesh: StructuredMesh,
    edof: np.ndarray,
    scaled_density: np.ndarray,
    fixed_dofs=None,
    nu: float = 0.3,
) -> np.ndarray:
    """Explicit global stiffness for verification meshes (n_dof <= 10,000).

    Applies the same masking convention as the matrix-free operators: fixed
    rows/columns are zeroed with a unit diagonal.
    """
    if mesh.n_dof > DENSE_DOF_LIMIT:
        raise ValueError(
            f"dense assembly limited to {DENSE_DOF_LIMIT} DOFs, mesh has {mesh.n_dof}"
        )
    ke = unit_stiffness(nu)
    k = np.zeros((mesh.n_dof, mesh.n_dof))
    for e in range(mesh.n_elem):
        dofs = edof[e]
        k[np.ix_(dofs, dofs)] += scaled_density[e] * ke
    if fixed_dofs is not None and len(fixed_dofs) > 0:
        fixed = np.asarray(fixed_dofs)
        k[fixed, :] = 0.0
        k[:, fixed] = 0.0
        k[fixed, fixed] = 1.0
    return k
