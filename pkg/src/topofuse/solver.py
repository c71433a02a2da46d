"""Jacobi-preconditioned CG and mixed-precision iterative refinement.

The stopping rule is the unpreconditioned relative recurrence residual
||r_k|| / ||f|| <= rel_tol, with the true residual recomputed periodically to
keep recurrence drift honest. Solves in quantized precision are expected to
stall against the eps * kappa barrier; the refinement wrapper detects the
stagnation instead of looping to its outer cap.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .operator import MatFreeOperator
from .precision import round_to_bf16


class DivergenceError(RuntimeError):
    """Raised when the CG recurrence produces non-finite values."""

    def __init__(self, iteration: int, detail: str):
        super().__init__(f"CG diverged at iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass(frozen=True)
class CgConfig:
    rel_tol: float = 1e-5
    max_iter: int = 1000
    recompute_every: int = 50  # true-residual refresh period; 0 disables
    quantize_krylov: bool = False  # also round CG direction/residual to bf16

    def __post_init__(self):
        if self.rel_tol <= 0 or self.max_iter < 1 or self.recompute_every < 0:
            raise ValueError("invalid CG configuration")


@dataclass
class SolveReport:
    converged: bool
    termination: str  # converged | max_iter | breakdown | floor
    iterations: int
    rel_residual: float
    residual_history: np.ndarray
    matvecs: int
    wall_time: float
    compliance: float | None = None
    precision: str = ""
    variant: str = ""
    verified_rel_residual: float | None = None


def pcg(
    apply_op,
    b: np.ndarray,
    diag: np.ndarray,
    config: CgConfig = CgConfig(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned CG on the operator callable, in b's storage precision.

    Scalar recurrences use the dot products of the stored vectors (FP32 dots
    for FP32/BF16 storage); norms are compared as Python floats. A zero RHS
    returns immediately; non-finite recurrence values raise DivergenceError;
    a non-positive curvature p.K.p terminates with termination="breakdown"
    (possible when quantization makes the effective operator indefinite).
    """
    t0 = time.perf_counter()
    b = np.ascontiguousarray(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        report = SolveReport(
            converged=True,
            termination="converged",
            iterations=0,
            rel_residual=0.0,
            residual_history=np.zeros(1),
            matvecs=0,
            wall_time=time.perf_counter() - t0,
        )
        return np.zeros_like(b), report

    matvecs = 0
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=b.dtype, copy=True)
        r = b - apply_op(x)
        matvecs += 1
    inv_diag = 1.0 / np.asarray(diag, dtype=b.dtype)
    z = r * inv_diag
    p = z.copy()
    rz = float(np.dot(r, z))
    rel = float(np.linalg.norm(r)) / bnorm
    history = [rel]
    converged = rel <= config.rel_tol
    termination = "converged" if converged else "max_iter"
    it = 0
    while not converged and it < config.max_iter:
        it += 1
        q = apply_op(p)
        matvecs += 1
        pq = float(np.dot(p, q))
        if not math.isfinite(pq) or not math.isfinite(rz):
            raise DivergenceError(it, "non-finite curvature or residual product")
        if pq <= 0.0:
            termination = "breakdown"
            break
        alpha = rz / pq
        x += alpha * p
        if config.recompute_every and it % config.recompute_every == 0:
            r = b - apply_op(x)
            matvecs += 1
        else:
            r -= alpha * q
        rn = float(np.linalg.norm(r))
        if not math.isfinite(rn):
            raise DivergenceError(it, "non-finite residual norm")
        rel = rn / bnorm
        history.append(rel)
        if rel <= config.rel_tol:
            converged = True
            termination = "converged"
            break
        z = r * inv_diag
        rz_new = float(np.dot(r, z))
        beta = rz_new / rz
        p = z + beta * p
        if config.quantize_krylov:
            p = round_to_bf16(p)
            r = round_to_bf16(r)
        rz = rz_new
    report = SolveReport(
        converged=converged,
        termination=termination,
        iterations=it,
        rel_residual=rel,
        residual_history=np.asarray(history),
        matvecs=matvecs,
        wall_time=time.perf_counter() - t0,
    )
    return x, report


def solve_equilibrium(
    op: MatFreeOperator,
    f: np.ndarray,
    config: CgConfig = CgConfig(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve K(rho) u = f with Jacobi-PCG in the operator's precision.

    The recurrence residual governs stopping; the report then carries an
    FP64-recomputed residual in verified_rel_residual, and converged is only
    kept when that honest value is within 2x the tolerance (the factor
    absorbs storage-precision slack in FP32 runs). A stop whose recurrence
    passed but whose verified residual did not is reported as
    termination="floor": the working precision hit its attainable-accuracy
    floor. Quantized (BF16) operators also skip the periodic true-residual
    refresh, since a residual recomputed through the rounding operator sits
    O(eps * kappa) away from the recurrence and the solve would never
    terminate; their floor reports are how false convergence surfaces.
    """
    rhs = np.ascontiguousarray(f, dtype=op.precision.dtype)
    diag = op.diagonal()
    if op.precision.quantized and config.recompute_every:
        config = replace(config, recompute_every=0)
    u, report = pcg(op.apply, rhs, diag, config, x0=x0)
    report.compliance = op.compliance(f, u)
    report.precision = op.precision.tag
    report.variant = op.variant
    fnorm = float(np.linalg.norm(np.asarray(f, dtype=np.float64)))
    verified = 0.0 if fnorm == 0.0 else fp64_relative_residual(op, f, u)
    report.verified_rel_residual = verified
    if report.converged and verified > 2.0 * config.rel_tol:
        report.converged = False
        report.termination = "floor"
    return u, report


def fp64_relative_residual(op: MatFreeOperator, f: np.ndarray, u: np.ndarray) -> float:
    """||f - K u|| / ||f|| recomputed through the FP64 reference matvec."""
    f64 = np.asarray(f, dtype=np.float64)
    r = f64 - op.apply_fp64(u)
    return float(np.linalg.norm(r) / np.linalg.norm(f64))


@dataclass(frozen=True)
class IrConfig:
    inner_tol: float = 1e-3
    outer_tol: float = 1e-5
    max_outer: int = 8
    stagnation_drop: float = 0.05  # minimum useful outer-residual reduction


@dataclass
class IrReport:
    converged: bool
    stagnated: bool
    outer_steps: int
    inner_iterations: list[int]
    total_inner: int
    outer_residuals: list[float]
    compliance: float
    wall_time: float


def solve_refined(
    op_outer: MatFreeOperator,
    op_inner: MatFreeOperator,
    f: np.ndarray,
    ir: IrConfig = IrConfig(),
    cg: CgConfig = CgConfig(),
) -> tuple[np.ndarray, IrReport]:
    """Iterative refinement: FP32 outer residuals, quantized inner solves.

    Each correction solves the inner (BF16) operator to ir.inner_tol and adds
    it to the running FP32 solution; the outer residual is recomputed with
    the FP32 operator. Stops on the outer tolerance, the outer cap, or when
    two consecutive corrections each reduce the outer residual by less than
    stagnation_drop, which is the eps * kappa barrier signature.
    """
    t0 = time.perf_counter()
    rhs = np.ascontiguousarray(f, dtype=op_outer.precision.dtype)
    fnorm = float(np.linalg.norm(rhs))
    u = np.zeros_like(rhs)
    r = rhs.copy()
    diag_inner = op_inner.diagonal()
    # Inner corrections stop on the recurrence residual (recompute disabled):
    # the FP32 outer residual is the honest accuracy measure here.
    inner_cfg = CgConfig(
        rel_tol=ir.inner_tol,
        max_iter=cg.max_iter,
        recompute_every=0,
        quantize_krylov=cg.quantize_krylov,
    )
    outer_residuals = [1.0]
    inner_iterations: list[int] = []
    converged = False
    stagnated = False
    for _ in range(ir.max_outer):
        e, inner_report = pcg(op_inner.apply, r, diag_inner, inner_cfg)
        inner_iterations.append(inner_report.iterations)
        u += e
        r = rhs - op_outer.apply(u)
        rel = float(np.linalg.norm(r)) / fnorm
        outer_residuals.append(rel)
        if rel <= ir.outer_tol:
            converged = True
            break
        if len(outer_residuals) >= 3:
            drops = [
                1.0 - outer_residuals[-1] / outer_residuals[-2],
                1.0 - outer_residuals[-2] / outer_residuals[-3],
            ]
            if all(d < ir.stagnation_drop for d in drops):
                stagnated = True
                break
    report = IrReport(
        converged=converged,
        stagnated=stagnated,
        outer_steps=len(inner_iterations),
        inner_iterations=inner_iterations,
        total_inner=int(sum(inner_iterations)),
        outer_residuals=outer_residuals,
        compliance=op_outer.compliance(f, u),
        wall_time=time.perf_counter() - t0,
    )
    return u, report
