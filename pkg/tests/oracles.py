"""Independent reference implementations the test suite checks against.

Everything here is deliberately written by a different route than the
package code: exact rational arithmetic for the element matrix, explicit
python loops for connectivity and assembly, frexp/rint arithmetic for the
16-bit rounding, and brute-force distance enumeration for the filter. The
frozen element table in data/ke_exact_nu03.json was produced once by
generate_exact_ke below (symbolic integration, ~20 s) and checked in.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).parent / "data"

# hex corner order convention under test: bottom face CCW, then top face CCW
CORNERS = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]

BF16_MAX = float(2.0**127 * (255.0 / 128.0))


def load_exact_ke() -> np.ndarray:
    """Frozen exact unit element stiffness for nu = 3/10, as float64."""
    with open(DATA_DIR / "ke_exact_nu03.json") as fh:
        table = json.load(fh)
    return np.array([[Fraction(p, q) for p, q in row] for row in table], dtype=np.float64)


def generate_exact_ke(nu_num: int = 3, nu_den: int = 10):
    """Regenerate the frozen table by exact symbolic integration.

    Trilinear hex on a unit cube: physical gradients are 2 * d/dxi on the
    [-1, 1]^3 reference cube and detJ = 1/8. Returns a list of [num, den]
    pairs; dump it over data/ke_exact_nu03.json to refresh the fixture.
    """
    import sympy as sp

    xi, eta, zeta = sp.symbols("xi eta zeta")
    nu = sp.Rational(nu_num, nu_den)
    c = 1 / ((1 + nu) * (1 - 2 * nu))
    D = sp.zeros(6, 6)
    for a in range(3):
        for b in range(3):
            D[a, b] = c * (1 - nu) if a == b else c * nu
    for a in range(3, 6):
        D[a, a] = c * (1 - 2 * nu) / 2
    B = sp.zeros(6, 24)
    for n, (ox, oy, oz) in enumerate(CORNERS):
        sx, sy, sz = 2 * ox - 1, 2 * oy - 1, 2 * oz - 1
        shape = sp.Rational(1, 8) * (1 + sx * xi) * (1 + sy * eta) * (1 + sz * zeta)
        g = [2 * sp.diff(shape, v) for v in (xi, eta, zeta)]
        col = 3 * n
        B[0, col] = g[0]
        B[1, col + 1] = g[1]
        B[2, col + 2] = g[2]
        B[3, col + 1] = g[2]
        B[3, col + 2] = g[1]
        B[4, col] = g[2]
        B[4, col + 2] = g[0]
        B[5, col] = g[1]
        B[5, col + 1] = g[0]
    integrand = (B.T * D * B) * sp.Rational(1, 8)
    ke = [[None] * 24 for _ in range(24)]
    for i in range(24):
        for j in range(i, 24):
            val = sp.integrate(
                sp.integrate(sp.integrate(sp.expand(integrand[i, j]), (xi, -1, 1)), (eta, -1, 1)),
                (zeta, -1, 1),
            )
            val = sp.nsimplify(val)
            ke[i][j] = [int(val.p), int(val.q)]
            ke[j][i] = ke[i][j]
    return ke


def oracle_edof(nelx: int, nely: int, nelz: int) -> np.ndarray:
    """Per-element global DOF table by explicit loops, x-fastest numbering."""

    def nid(i, j, k):
        return i + j * (nelx + 1) + k * (nelx + 1) * (nely + 1)

    rows = []
    for ez in range(nelz):
        for ey in range(nely):
            for ex in range(nelx):
                dofs = []
                for ox, oy, oz in CORNERS:
                    n = nid(ex + ox, ey + oy, ez + oz)
                    dofs.extend((3 * n, 3 * n + 1, 3 * n + 2))
                rows.append(dofs)
    return np.array(rows, dtype=np.int64)


def oracle_dense(
    edof: np.ndarray,
    ke: np.ndarray,
    scale: np.ndarray,
    n_dof: int,
    fixed_dofs: np.ndarray,
) -> np.ndarray:
    """Dense stiffness by per-element accumulation, identity on fixed DOFs."""
    K = np.zeros((n_dof, n_dof))
    for e in range(edof.shape[0]):
        dofs = np.asarray(edof[e], dtype=np.int64)
        K[np.ix_(dofs, dofs)] += scale[e] * ke
    K[fixed_dofs, :] = 0.0
    K[:, fixed_dofs] = 0.0
    K[fixed_dofs, fixed_dofs] = 1.0
    return K


def oracle_matvec(edof, scale, v, fixed_dofs, n_dof, ke=None) -> np.ndarray:
    """w = K v via direct accumulation from the frozen exact element table.

    Same constraint convention as the dense oracle: input entries on fixed
    DOFs are masked out (zeroed columns) and the output carries them through
    (unit diagonal).
    """
    ke = load_exact_ke() if ke is None else ke
    v = np.asarray(v, dtype=np.float64)
    x = v.copy()
    x[fixed_dofs] = 0.0
    u_elem = x[edof]
    f_elem = np.asarray(scale, dtype=np.float64)[:, None] * (u_elem @ ke.T)
    out = np.zeros(n_dof, dtype=np.float64)
    np.add.at(out, np.asarray(edof, dtype=np.int64).ravel(), f_elem.ravel())
    out[fixed_dofs] = v[fixed_dofs]
    return out


def simp_scale_reference(rho, p, rho_min=1e-9) -> np.ndarray:
    return rho_min + (1.0 - rho_min) * np.asarray(rho, dtype=np.float64) ** p


def bf16_reference(x) -> np.ndarray:
    """Round float64 values (exact float32 inputs) to bfloat16, RNE.

    Arithmetic route: frexp to split mantissa/exponent, rint for
    ties-to-even on an 8-bit mantissa in the normal range, and an absolute
    2^-133 grid in the subnormal range. No bit manipulation.
    """
    x = np.asarray(x, dtype=np.float64)
    m, e = np.frexp(x)
    normal = np.abs(x) >= 2.0**-126
    yn = np.ldexp(np.rint(m * 256.0), e - 8)
    quantum = 2.0**-133
    ys = np.rint(x / quantum) * quantum
    out = np.where(normal, yn, ys)
    out = np.where(np.abs(out) > BF16_MAX, np.copysign(np.inf, x), out)
    out = np.where(np.isinf(x), x, out)
    out = np.where(x == 0.0, x, out)  # keeps signed zeros
    out = np.where(np.isnan(x), np.nan, out)
    return out


def oracle_filter_matrix(nelx: int, nely: int, nelz: int, rmin: float) -> np.ndarray:
    """Row-normalized cone weights by O(n^2) center-distance enumeration."""
    centers = []
    for ez in range(nelz):
        for ey in range(nely):
            for ex in range(nelx):
                centers.append((ex + 0.5, ey + 0.5, ez + 0.5))
    centers = np.asarray(centers)
    n = len(centers)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            dist = np.sqrt(np.sum((centers[i] - centers[j]) ** 2))
            W[i, j] = max(0.0, rmin - dist)
    return W / W.sum(axis=1, keepdims=True)


def fd_compliance_gradient(problem, rho_raw, rmin, beta, p, h=1e-6, cg_tol=1e-10):
    """Central finite differences of compliance through the full pipeline.

    Every probe re-filters, re-projects, and re-solves equilibrium with CG
    at cg_tol from a cold start, so the only shared state with the analytic
    path is the forward model itself.
    """
    from topofuse.element import SimpParams
    from topofuse.mesh import build_edof
    from topofuse.operator import MatFreeOperator
    from topofuse.simp import build_cone_filter, heaviside_projection
    from topofuse.solver import CgConfig, solve_equilibrium

    mesh, bcs = problem.mesh, problem.bcs
    edof = build_edof(mesh)
    filt = build_cone_filter(mesh, rmin)
    cg = CgConfig(rel_tol=cg_tol, max_iter=5000)

    def compliance(rho):
        phys = heaviside_projection(filt @ rho, beta)
        op = MatFreeOperator(mesh, edof, bcs, phys, SimpParams(p), "fp64", "fused", "serial")
        _, report = solve_equilibrium(op, bcs.force, cg)
        assert report.converged, "FD probe solve must converge"
        return report.compliance

    grad = np.zeros_like(rho_raw)
    for k in range(rho_raw.size):
        up = rho_raw.copy()
        dn = rho_raw.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (compliance(up) - compliance(dn)) / (2.0 * h)
    return grad
