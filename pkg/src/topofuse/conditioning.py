"""Matrix-free condition-number estimation for the stiffness operator.

kappa = lambda_max / lambda_min on the free DOFs, with lambda_max from power
iteration (Rayleigh quotients, monotone nondecreasing on an SPD operator) and
lambda_min from inverse iteration whose inner solves reuse the Jacobi-PCG.
Start vectors are seeded and masked to the free subspace, which the operator
preserves, so fixed-DOF unit diagonal entries never contaminate the
estimates. kappa * 2**-8 against 1 is the go/no-go test for plain BF16.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .element import SimpParams
from .mesh import BoundaryConditions, StructuredMesh, build_edof
from .operator import MatFreeOperator
from .precision import EPS_BF16, FP64
from .solver import CgConfig, pcg

BF16_KAPPA_LIMIT = 1.0 / EPS_BF16  # 256: beyond this, eps * kappa >= 1


@dataclass
class PowerResult:
    value: float
    steps: int
    capped: bool
    history: np.ndarray  # Rayleigh quotient per step


@dataclass
class InverseResult:
    value: float
    steps: int
    capped: bool
    inner_iterations: int
    history: np.ndarray


@dataclass
class KappaReport:
    n_elem: int
    p: float
    lambda_max: float
    lambda_min: float
    kappa: float
    eps_kappa: float  # 2**-8 * kappa
    power_steps: int
    inverse_steps: int
    capped: bool  # either estimator hit its step cap

    @property
    def beyond_bf16_barrier(self) -> bool:
        return self.kappa > BF16_KAPPA_LIMIT


def _seeded_start(n_dof: int, free_mask: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_dof)
    x[~free_mask] = 0.0
    return x / np.linalg.norm(x)


def power_iteration(
    apply_op,
    n_dof: int,
    free_mask: np.ndarray,
    rel_tol: float = 1e-6,
    max_steps: int = 50,
    seed: int = 42,
) -> PowerResult:
    """Largest eigenvalue via power iteration with Rayleigh-quotient readout.

    The quotient sequence must be nondecreasing on an SPD operator; a drop
    beyond 1e-12 relative slack means the operator is broken and raises. If
    the step cap binds, the returned value is a conservative lower bound and
    the result is flagged capped.
    """
    x = _seeded_start(n_dof, free_mask, seed)
    history: list[float] = []
    capped = True
    steps = 0
    for step in range(1, max_steps + 1):
        y = apply_op(x)
        lam = float(np.dot(x, y))
        if history and lam < history[-1] * (1.0 - 1e-12):
            raise RuntimeError(
                f"Rayleigh quotient decreased at step {step}: {history[-1]} -> {lam}"
            )
        history.append(lam)
        steps = step
        yn = float(np.linalg.norm(y))
        if yn == 0.0:
            raise RuntimeError("power iteration hit a zero vector")
        x = y / yn
        if step > 1 and abs(history[-1] - history[-2]) <= rel_tol * abs(history[-1]):
            capped = False
            break
    return PowerResult(value=history[-1], steps=steps, capped=capped, history=np.asarray(history))


def inverse_iteration(
    apply_op,
    diag: np.ndarray,
    n_dof: int,
    free_mask: np.ndarray,
    rel_tol: float = 1e-4,
    max_steps: int = 6,
    seed: int = 123,
    inner_tol: float = 1e-8,
    inner_cap: int = 2000,
) -> InverseResult:
    """Smallest eigenvalue via inverse iteration, PCG inner solves.

    Each step solves K y = x to inner_tol and reads lambda_min as the
    reciprocal Rayleigh quotient 1 / (x . y) of the normalized iterate.
    """
    x = _seeded_start(n_dof, free_mask, seed)
    inner_cfg = CgConfig(rel_tol=inner_tol, max_iter=inner_cap)
    history: list[float] = []
    total_inner = 0
    capped = True
    steps = 0
    y = None
    for step in range(1, max_steps + 1):
        x0 = y  # previous solve is a good warm start once directions settle
        y, rep = pcg(apply_op, x, diag, inner_cfg, x0=x0)
        total_inner += rep.iterations
        lam = 1.0 / float(np.dot(x, y))
        history.append(lam)
        steps = step
        x = y / float(np.linalg.norm(y))
        if step > 1 and abs(history[-1] - history[-2]) <= rel_tol * abs(history[-1]):
            capped = False
            break
    return InverseResult(
        value=history[-1],
        steps=steps,
        capped=capped,
        inner_iterations=total_inner,
        history=np.asarray(history),
    )


def estimate_kappa(
    mesh: StructuredMesh,
    bcs: BoundaryConditions,
    density: np.ndarray,
    simp: SimpParams = SimpParams(),
    edof: np.ndarray | None = None,
    power_tol: float = 1e-6,
    power_steps: int = 50,
    inverse_tol: float = 1e-4,
    inverse_steps: int = 6,
    inner_tol: float = 1e-8,
    inner_cap: int = 2000,
    backend: str | None = None,
) -> KappaReport:
    """Condition number of the FP64 stiffness operator at a density state."""
    if edof is None:
        edof = build_edof(mesh)
    op = MatFreeOperator(
        mesh, edof, bcs, density, simp, FP64, variant="fused", scatter="serial", backend=backend
    )
    free = op.free_mask
    power = power_iteration(
        op.apply, mesh.n_dof, free, rel_tol=power_tol, max_steps=power_steps, seed=42
    )
    inverse = inverse_iteration(
        op.apply,
        op.diagonal(),
        mesh.n_dof,
        free,
        rel_tol=inverse_tol,
        max_steps=inverse_steps,
        seed=123,
        inner_tol=inner_tol,
        inner_cap=inner_cap,
    )
    kappa = power.value / inverse.value
    return KappaReport(
        n_elem=mesh.n_elem,
        p=simp.p,
        lambda_max=power.value,
        lambda_min=inverse.value,
        kappa=kappa,
        eps_kappa=EPS_BF16 * kappa,
        power_steps=power.steps,
        inverse_steps=inverse.steps,
        capped=power.capped or inverse.capped,
    )


KAPPA_CSV_COLUMNS = (
    "n_elem",
    "p",
    "lambda_max",
    "lambda_min",
    "kappa",
    "eps_kappa",
    "power_steps",
    "inverse_steps",
    "capped",
)


def kappa_csv_rows(reports: list[KappaReport]) -> list[dict]:
    return [
        {
            "n_elem": r.n_elem,
            "p": r.p,
            "lambda_max": r.lambda_max,
            "lambda_min": r.lambda_min,
            "kappa": r.kappa,
            "eps_kappa": r.eps_kappa,
            "power_steps": r.power_steps,
            "inverse_steps": r.inverse_steps,
            "capped": int(r.capped),
        }
        for r in reports
    ]
