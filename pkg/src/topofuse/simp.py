"""Three-field SIMP topology optimization with continuation and restarts.

Design field rho (raw, what OC updates) -> cone-filtered rho_bar -> smoothed
Heaviside projection rho_phys (what the operator and compliance see).
Sensitivities chain back through the projection derivative and the filter
transpose. A continuation schedule stiffens penalization and projection in
phases while shrinking the filter radius and the OC move limit; a restart
rule rewinds to the best selected design when compliance blows up, and the
selection gate (p >= 3, grayness < 0.25, minimum compliance) picks the
iterate the run reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .element import SimpParams, simp_scale_derivative
from .mesh import ProblemPreset, StructuredMesh, build_edof
from .operator import MatFreeOperator
from .precision import get_precision
from .solver import CgConfig, pcg

HEAVISIDE_ETA = 0.5


# -- density filter and projection --------------------------------------------


def build_cone_filter(mesh: StructuredMesh, rmin: float) -> sp.csr_matrix:
    """Row-stochastic cone filter over element centers.

    Weight max(0, rmin - dist) with distances in element widths; rows are
    normalized to sum to one, so filtering preserves constants exactly.
    """
    if rmin <= 0:
        raise ValueError("filter radius must be positive")
    nx, ny, nz = mesh.nelx, mesh.nely, mesh.nelz
    ids = np.arange(mesh.n_elem, dtype=np.int64).reshape(nz, ny, nx)  # ids[k, j, i]
    reach = int(np.ceil(rmin))  # offsets beyond the radius drop out at w <= 0
    rows, cols, vals = [], [], []
    for dk in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            for di in range(-reach, reach + 1):
                w = rmin - np.sqrt(di * di + dj * dj + dk * dk)
                if w <= 0.0:
                    continue
                src = ids[
                    max(0, -dk) : nz - max(0, dk),
                    max(0, -dj) : ny - max(0, dj),
                    max(0, -di) : nx - max(0, di),
                ]
                dst = ids[
                    max(0, dk) : nz + min(0, dk),
                    max(0, dj) : ny + min(0, dj),
                    max(0, di) : nx + min(0, di),
                ]
                rows.append(dst.ravel())
                cols.append(src.ravel())
                vals.append(np.full(src.size, w))
    w = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_elem, mesh.n_elem),
    ).tocsr()
    inv_rowsum = 1.0 / np.asarray(w.sum(axis=1)).ravel()
    return sp.diags(inv_rowsum) @ w


def heaviside_projection(rho_bar: np.ndarray, beta: float, eta: float = HEAVISIDE_ETA):
    """Smoothed Heaviside pushing intermediate densities toward 0/1.

    Identity-like for small beta, step-like for large beta; output stays in
    [0, 1] and is monotone in rho_bar.
    """
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (rho_bar - eta))) / denom


def heaviside_derivative(rho_bar: np.ndarray, beta: float, eta: float = HEAVISIDE_ETA):
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta / (np.cosh(beta * (rho_bar - eta)) ** 2 * denom)


def grayness(rho: np.ndarray) -> float:
    """4 * mean(rho * (1 - rho)): 0 for a 0/1 design, 1 for all-0.5."""
    rho = np.asarray(rho)
    return float(4.0 * np.mean(rho * (1.0 - rho)))


# -- sensitivities and the OC update -------------------------------------------


def compliance_sensitivity(
    op: MatFreeOperator, u: np.ndarray, rho_phys: np.ndarray
) -> np.ndarray:
    """dc/d(rho_phys), elementwise: -d(simp_scale)/d(rho) * u_e^T Ke u_e."""
    energies = op.element_energies(u)
    return -simp_scale_derivative(rho_phys, op.simp) * energies


def chain_to_design(
    dc_phys: np.ndarray, filt: sp.csr_matrix, rho_bar: np.ndarray, beta: float
) -> np.ndarray:
    """Pull a physical-density sensitivity back to the raw design field."""
    return filt.T @ (heaviside_derivative(rho_bar, beta) * dc_phys)


def oc_update(
    rho: np.ndarray,
    dc: np.ndarray,
    dv: np.ndarray,
    volume_fraction: float,
    move: float,
    volume=None,
    vol_tol: float = 1e-6,
    damping: float = 0.5,
    max_bisect: int = 200,
) -> np.ndarray:
    """Optimality-criteria step with bisection on the volume multiplier.

    rho_new = clamp(rho * (-dc / (lam * dv))**damping, rho +- move, [0, 1]);
    lam is bisected until |volume(rho_new) - volume_fraction| <= vol_tol.
    `volume` defaults to the raw mean, matching a constraint posed on the
    design field. When the move window cannot reach the target at all
    (possible with nonlinear measures like a projected volume), the step
    saturates at the nearest achievable candidate instead of failing.
    """
    dc = np.asarray(dc, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    if np.any(dc > 1e-12):
        raise ValueError("compliance sensitivities must be non-positive")
    if np.any(dv <= 0):
        raise ValueError("volume sensitivities must be positive")
    if volume is None:
        volume = lambda r: float(np.mean(r))
    lower = np.maximum(0.0, rho - move)
    upper = np.minimum(1.0, rho + move)
    ratio = -dc / dv

    def candidate(lam: float) -> np.ndarray:
        return np.clip(rho * (ratio / lam) ** damping, lower, upper)

    # volume(candidate) is nonincreasing in lam; expand to bracket the target.
    lam_lo, lam_hi = 1.0, 1.0
    for _ in range(200):
        if volume(candidate(lam_lo)) >= volume_fraction:
            break
        lam_lo *= 0.5
    else:
        return candidate(lam_lo)  # even the fullest step stays under target
    for _ in range(200):
        if volume(candidate(lam_hi)) <= volume_fraction:
            break
        lam_hi *= 2.0
    else:
        return candidate(lam_hi)  # even the emptiest step stays over target
    best = None
    for _ in range(max_bisect):
        lam = 0.5 * (lam_lo + lam_hi)
        cand = candidate(lam)
        vol = volume(cand)
        if best is None or abs(vol - volume_fraction) < best[0]:
            best = (abs(vol - volume_fraction), cand)
        if abs(vol - volume_fraction) <= vol_tol:
            return cand
        if vol > volume_fraction:
            lam_lo = lam
        else:
            lam_hi = lam
    if best[0] <= vol_tol:
        return best[1]
    raise RuntimeError(f"OC bisection stalled with volume error {best[0]:.3e}")


# -- continuation schedule ------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    start: int  # first iteration of the phase, 1-based inclusive
    end: int
    p: float
    beta: float
    move: float
    rmin_end: float


@dataclass(frozen=True)
class ScheduleState:
    p: float
    beta: float
    move: float
    rmin: float


@dataclass(frozen=True)
class ContinuationSchedule:
    phases: tuple[Phase, ...]
    rmin_start: float = 1.5

    def __post_init__(self):
        ph = self.phases
        if not ph or ph[0].start != 1:
            raise ValueError("schedule must start at iteration 1")
        for a, b in zip(ph, ph[1:]):
            if b.start != a.end + 1:
                raise ValueError("phases must partition the iteration range")
            if b.p < a.p or b.beta < a.beta or b.move > a.move or b.rmin_end > a.rmin_end:
                raise ValueError(
                    "continuation must stiffen: p/beta nondecreasing, move/rmin nonincreasing"
                )

    @property
    def total_iterations(self) -> int:
        return self.phases[-1].end

    def at(self, iteration: int) -> ScheduleState:
        """Schedule state for a 1-based iteration index."""
        if not 1 <= iteration <= self.total_iterations:
            raise ValueError(f"iteration {iteration} outside schedule range")
        rmin_in = self.rmin_start
        for ph in self.phases:
            if iteration <= ph.end:
                if ph.end == ph.start:
                    rmin = ph.rmin_end
                else:
                    frac = (iteration - ph.start) / (ph.end - ph.start)
                    rmin = rmin_in + (ph.rmin_end - rmin_in) * frac
                return ScheduleState(p=ph.p, beta=ph.beta, move=ph.move, rmin=rmin)
            rmin_in = ph.rmin_end
        raise AssertionError("unreachable")


def default_schedule(total_iterations: int = 120) -> ContinuationSchedule:
    """Four-phase continuation; boundaries scale with the iteration budget."""
    if total_iterations < 4:
        raise ValueError("schedule needs at least 4 iterations")

    def scaled(boundary: int) -> int:
        return max(1, int(round(boundary * total_iterations / 120)))

    b1, b2, b3 = scaled(15), scaled(40), scaled(65)
    b1 = min(b1, total_iterations - 3)
    b2 = min(max(b2, b1 + 1), total_iterations - 2)
    b3 = min(max(b3, b2 + 1), total_iterations - 1)
    phases = (
        Phase(1, b1, p=1.5, beta=1.0, move=0.20, rmin_end=1.5),
        Phase(b1 + 1, b2, p=3.5, beta=4.0, move=0.15, rmin_end=1.35),
        Phase(b2 + 1, b3, p=4.5, beta=16.0, move=0.08, rmin_end=1.25),
        Phase(b3 + 1, total_iterations, p=4.5, beta=32.0, move=0.05, rmin_end=1.20),
    )
    return ContinuationSchedule(phases=phases, rmin_start=1.5)


# -- the optimization loop -------------------------------------------------------


@dataclass(frozen=True)
class SimpConfig:
    schedule: ContinuationSchedule | None = None
    precision: str = "fp64"
    variant: str = "fused"
    scatter: str = "serial"
    nu: float = 0.3
    seed: int = 42
    warm_start: bool = True
    cg: CgConfig = field(default_factory=CgConfig)
    volume_on: str = "raw"  # raw | projected
    restart_threshold: float = 1.12
    select_p_min: float = 3.0
    select_gray_max: float = 0.25
    filter_rebuild_delta: float = 0.05
    backend: str | None = None

    def __post_init__(self):
        if self.volume_on not in ("raw", "projected"):
            raise ValueError("volume_on must be raw|projected")


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    grayness: float
    cg_iterations: int
    cg_converged: bool
    p: float
    beta: float
    move: float
    rmin: float
    volume: float
    restarted: bool
    wall_s: float


@dataclass
class SelectedRecord:
    iteration: int
    compliance: float
    grayness: float
    rho_raw: np.ndarray
    rho_phys: np.ndarray
    u: np.ndarray
    p: float
    beta: float


@dataclass
class SimpResult:
    history: list[IterationRecord]
    selected: SelectedRecord | None
    restart_count: int
    rho_raw: np.ndarray
    rho_phys: np.ndarray
    total_cg_iterations: int
    wall_s: float
    config: SimpConfig
    preset_name: str = ""


def run_simp(problem: ProblemPreset, config: SimpConfig = SimpConfig()) -> SimpResult:
    """Run the full continuation SIMP loop on one problem instance.

    The design starts uniform at the volume fraction, each iteration solves
    equilibrium in the configured operator precision (warm-started from the
    previous displacement), applies the selection and restart rules, then
    takes one OC step. Restart iterations rewind the design and warm-start
    state to the selected record instead of stepping.
    """
    t_start = time.perf_counter()
    mesh, bcs = problem.mesh, problem.bcs
    vf = problem.volume_fraction
    schedule = config.schedule or default_schedule()
    precision = get_precision(config.precision)
    edof = build_edof(mesh)
    rho = np.full(mesh.n_elem, vf, dtype=np.float64)

    rmin_built = schedule.at(1).rmin
    filt = build_cone_filter(mesh, rmin_built)
    u_warm: np.ndarray | None = None
    selected: SelectedRecord | None = None
    restart_count = 0
    history: list[IterationRecord] = []
    total_cg = 0

    for it in range(1, schedule.total_iterations + 1):
        t_iter = time.perf_counter()
        st = schedule.at(it)
        if abs(st.rmin - rmin_built) >= config.filter_rebuild_delta:
            filt = build_cone_filter(mesh, st.rmin)
            rmin_built = st.rmin
        simp = SimpParams(p=st.p)
        rho_bar = filt @ rho
        rho_phys = heaviside_projection(rho_bar, st.beta)
        op = MatFreeOperator(
            mesh,
            edof,
            bcs,
            rho_phys,
            simp,
            precision,
            variant=config.variant,
            scatter=config.scatter,
            nu=config.nu,
            backend=config.backend,
        )
        rhs = np.ascontiguousarray(bcs.force, dtype=precision.dtype)
        x0 = None
        if config.warm_start and u_warm is not None:
            x0 = np.ascontiguousarray(u_warm, dtype=precision.dtype)
        u, rep = pcg(op.apply, rhs, op.diagonal(), config.cg, x0=x0)
        total_cg += rep.iterations
        c = op.compliance(bcs.force, u)
        g = grayness(rho_phys)

        if (
            st.p >= config.select_p_min
            and g < config.select_gray_max
            and (selected is None or c < selected.compliance)
        ):
            selected = SelectedRecord(
                iteration=it,
                compliance=c,
                grayness=g,
                rho_raw=rho.copy(),
                rho_phys=rho_phys.copy(),
                u=np.asarray(u, dtype=np.float64).copy(),
                p=st.p,
                beta=st.beta,
            )

        restarted = False
        if selected is not None and c > config.restart_threshold * selected.compliance:
            # Blow-up: rewind design and warm start to the selected iterate.
            rho = selected.rho_raw.copy()
            u_warm = selected.u.copy()
            restart_count += 1
            restarted = True
        else:
            u_warm = np.asarray(u, dtype=np.float64)
            dc_phys = compliance_sensitivity(op, u, rho_phys)
            dc = chain_to_design(dc_phys, filt, rho_bar, st.beta)
            if config.volume_on == "raw":
                dv = np.ones(mesh.n_elem)
                volume = None
            else:
                dv = chain_to_design(np.ones(mesh.n_elem), filt, rho_bar, st.beta)
                dv = np.maximum(dv, 1e-12)
                beta_now = st.beta
                volume = lambda r: float(
                    np.mean(heaviside_projection(filt @ r, beta_now))
                )
            rho = oc_update(rho, dc, dv, vf, st.move, volume=volume)

        history.append(
            IterationRecord(
                iteration=it,
                compliance=c,
                grayness=g,
                cg_iterations=rep.iterations,
                cg_converged=rep.converged,
                p=st.p,
                beta=st.beta,
                move=st.move,
                rmin=st.rmin,
                volume=float(np.mean(rho)),
                restarted=restarted,
                wall_s=time.perf_counter() - t_iter,
            )
        )

    final_state = schedule.at(schedule.total_iterations)
    rho_bar = filt @ rho
    rho_phys = heaviside_projection(rho_bar, final_state.beta)
    return SimpResult(
        history=history,
        selected=selected,
        restart_count=restart_count,
        rho_raw=rho,
        rho_phys=rho_phys,
        total_cg_iterations=total_cg,
        wall_s=time.perf_counter() - t_start,
        config=config,
        preset_name=problem.name,
    )
