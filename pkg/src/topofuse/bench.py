"""Matvec microbenchmarks and the repeat / determinism / high-cap studies.

Timing uses perf_counter_ns with explicit warmup; every timed configuration
is numerically gated first (fused vs three-stage outputs compared, timed
output compared against an untimed reference) so timing can never mask a
numerics regression. Study reports carry their raw per-run records plus
aggregates that can be recomputed from the records.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import available_backends
from .io import read_csv, write_csv
from .mesh import BoundaryConditions, ProblemPreset, StructuredMesh, build_edof, cantilever_bcs
from .element import SimpParams
from .operator import MatFreeOperator, effective_bandwidth, memory_footprint, traffic_model
from .precision import get_precision
from .simp import SimpConfig, run_simp
from .solver import CgConfig, solve_equilibrium

INDEX_PATTERNS = ("structured", "seeded_random")
HIGHCAP_THRESHOLD = 5e-4


def adaptive_repeats(n_elem: int) -> int:
    """Per-measurement repeat count, shrinking with problem size."""
    return max(100, min(2000, int(5e7 // n_elem)))


def bench_mesh(n_elem: int) -> StructuredMesh:
    """Nearest 4:2:1 box to the requested element count (exact at 8k^3)."""
    k = max(1, round((n_elem / 8.0) ** (1.0 / 3.0)))
    return StructuredMesh(4 * k, 2 * k, k)


@dataclass(frozen=True)
class MicrobenchConfig:
    n_elem: int
    precision: str = "fp32"
    variant: str = "fused"
    scatter: str = "serial"
    index_pattern: str = "structured"
    repeats: int | None = None  # None -> adaptive_repeats(actual n_elem)
    warmup: int = 10
    seed: int = 42
    backend: str | None = None

    def __post_init__(self):
        if self.index_pattern not in INDEX_PATTERNS:
            raise ValueError(f"index_pattern must be one of {INDEX_PATTERNS}")
        if self.warmup < 0 or (self.repeats is not None and self.repeats < 1):
            raise ValueError("invalid repeat/warmup counts")


@dataclass
class StudyReport:
    kind: str
    columns: list[str]
    records: list[dict]
    aggregates: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        write_csv(path, self.columns, self.records)

    @classmethod
    def from_csv(cls, path, kind: str) -> "StudyReport":
        columns, records = read_csv(path)
        report = cls(kind=kind, columns=columns, records=records)
        report.aggregates = compute_aggregates(kind, records)
        return report

    def verify_aggregates(self, tol: float = 1e-12) -> bool:
        """Recompute aggregates from the records and compare to stored."""
        fresh = compute_aggregates(self.kind, self.records)
        if set(fresh) != set(self.aggregates):
            return False
        for key, value in fresh.items():
            stored = self.aggregates[key]
            if isinstance(value, float) and isinstance(stored, float):
                scale = max(abs(value), abs(stored), 1.0)
                if abs(value - stored) > tol * scale:
                    return False
            elif value != stored:
                return False
        return True


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size <= 1:
        return float(arr.mean()) if arr.size else 0.0, 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def compute_aggregates(kind: str, records: list[dict]) -> dict:
    """Aggregate rule per study kind; pure function of the records."""
    if not records:
        return {}
    if kind == "repeat":
        wall_mean, wall_std = _mean_std([r["wall_s"] for r in records])
        c_mean, c_std = _mean_std([r["compliance"] for r in records])
        return {
            "n": len(records),
            "wall_mean_s": wall_mean,
            "wall_std_s": wall_std,
            "wall_cv_pct": 0.0 if wall_mean == 0.0 else 100.0 * wall_std / wall_mean,
            "compliance_mean": c_mean,
            "compliance_std": c_std,
        }
    if kind == "determinism":
        comps = [r["compliance"] for r in records]
        c_ref = records[0]["c_ref_fp64"]
        c_min, c_max = min(comps), max(comps)
        return {
            "n": len(records),
            "c_min": c_min,
            "c_max": c_max,
            "c_ref_fp64": c_ref,
            "spread_rel": (c_max - c_min) / c_ref,
            "max_dc_vs_ref": max(abs(c - c_ref) for c in comps) / c_ref,
        }
    if kind == "highcap":
        by_cap = {r["cg_cap"]: r for r in records}
        caps = sorted(by_cap)
        c_low = by_cap[caps[0]]["selected_compliance"]
        c_high = by_cap[caps[-1]]["selected_compliance"]
        rel = abs(c_high - c_low) / c_low
        return {
            "cap_low": caps[0],
            "cap_high": caps[-1],
            "c_low": c_low,
            "c_high": c_high,
            "rel_diff": rel,
            "threshold": HIGHCAP_THRESHOLD,
            "passes": rel <= HIGHCAP_THRESHOLD,
        }
    return {}


def _build_bench_problem(config: MicrobenchConfig):
    """Operator plus input vector for one microbench configuration."""
    mesh = bench_mesh(config.n_elem)
    edof = build_edof(mesh)
    bcs = cantilever_bcs(mesh)
    rng = np.random.default_rng(config.seed)
    if config.index_pattern == "seeded_random":
        # relabel the global DOF numbering: same 24-per-row structure and
        # scatter-collision histogram, no spatial locality left
        perm = rng.permutation(mesh.n_dof).astype(np.int32)
        edof = np.ascontiguousarray(perm[edof])
        force = np.zeros(mesh.n_dof)
        force[perm] = bcs.force
        bcs = BoundaryConditions(
            fixed_dofs=np.sort(perm[bcs.fixed_dofs]).astype(np.int64), force=force
        )
    rho = rng.uniform(0.05, 1.0, size=mesh.n_elem)
    op = MatFreeOperator(
        mesh,
        edof,
        bcs,
        rho,
        SimpParams(3.0),
        get_precision(config.precision),
        config.variant,
        config.scatter,
        backend=config.backend,
    )
    v = rng.standard_normal(mesh.n_dof).astype(op.precision.dtype)
    return op, v


def _equivalence_gate(op: MatFreeOperator, v: np.ndarray, config: MicrobenchConfig) -> float:
    """Cross-check the timed variant against its sibling before timing."""
    other_variant = "three_stage" if op.variant == "fused" else "fused"
    twin = MatFreeOperator(
        op.mesh,
        op.edof,
        op.bcs,
        op.density,
        op.simp,
        op.precision,
        other_variant,
        op.scatter,
        backend=config.backend,
    )
    a = np.asarray(op.apply(v), dtype=np.float64)
    b = np.asarray(twin.apply(v), dtype=np.float64)
    denom = float(np.linalg.norm(a))
    rel = float(np.linalg.norm(a - b)) / denom if denom else 0.0
    tol = {"fp64": 1e-12, "fp32": 1e-5, "bf16": 1e-3}[op.precision.tag]
    if rel > tol:
        raise AssertionError(
            f"variant equivalence gate failed: {rel:.3e} > {tol:.0e} "
            f"({op.precision.tag}, {config.index_pattern})"
        )
    return rel


def _time_reps(fn, warmup: int, repeats: int) -> tuple[float, float, float]:
    """(mean_us, std_us, min_us) over repeats, after warmup calls."""
    for _ in range(warmup):
        fn()
    times = np.empty(repeats, dtype=np.float64)
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times[i] = (time.perf_counter_ns() - t0) * 1e-3
    std = float(times.std(ddof=1)) if repeats > 1 else 0.0
    return float(times.mean()), std, float(times.min())


def run_matvec_bench(config: MicrobenchConfig) -> dict:
    """Time one operator configuration; returns a flat record.

    Three-stage runs also carry per-stage timings in two conventions:
    in-pass (stages clocked back-to-back inside one pipeline traversal) and
    solo (each stage repeated on frozen inputs). The in-pass stage sum is a
    lower bound on the full pipeline time, which is always measured
    separately and reported as mean_us.
    """
    op, v = _build_bench_problem(config)
    n_elem = op.mesh.n_elem
    repeats = config.repeats or adaptive_repeats(n_elem)
    equivalence_rel = _equivalence_gate(op, v, config)

    reference = op.apply(v)
    mean_us, std_us, min_us = _time_reps(lambda: op.apply(v), config.warmup, repeats)
    timed = op.apply(v)
    drift = float(np.linalg.norm(np.asarray(timed - reference, dtype=np.float64)))
    if drift != 0.0:
        raise AssertionError("timed apply mutated numerics vs untimed reference")

    traffic = traffic_model(op.variant, op.precision)
    record = {
        "n_elem": n_elem,
        "n_dof": op.n_dof,
        "variant": op.variant,
        "precision": op.precision.tag,
        "scatter": op.scatter,
        "backend": op.backend_name,
        "index_pattern": config.index_pattern,
        "repeats": repeats,
        "warmup": config.warmup,
        "mean_us": mean_us,
        "std_us": std_us,
        "min_us": min_us,
        "equivalence_rel": equivalence_rel,
        "bytes_per_element": traffic.bytes_with_indices,
        "intensity_ideal": traffic.intensity_ideal,
        "effective_bw_gbs": effective_bandwidth(traffic.bytes_with_indices, n_elem, mean_us * 1e-6)
        / 1e9,
        "modeled_footprint_bytes": memory_footprint(n_elem, op.n_dof, op.variant, op.precision),
    }

    if op.variant == "three_stage":
        record.update(_stage_timings(op, v, config.warmup, repeats, mean_us))
    return record


def _stage_timings(op: MatFreeOperator, v: np.ndarray, warmup: int, repeats: int, pipeline_us: float) -> dict:
    k = op.kernels
    x = np.where(op.free_mask, v.astype(op.precision.dtype), 0)
    x = np.ascontiguousarray(x, dtype=op.precision.dtype)
    quantized = op.precision.quantized
    acc_dtype = np.float64 if op.precision.tag != "fp64" else op.precision.dtype

    def gemm(u_elem):
        return k.gemm_bf16(u_elem, op.ke, op.scale) if quantized else k.gemm(u_elem, op.ke, op.scale)

    def scatter(f_elem):
        acc = np.zeros(op.n_dof, dtype=np.float64 if quantized else acc_dtype)
        if op.scatter == "serial":
            k.scatter_serial(op.edof, f_elem, acc)
        else:
            k.scatter_atomic(op.edof, f_elem, acc)
        return acc.astype(op.precision.dtype, copy=False)

    # in-pass: the three stages clocked back-to-back inside one traversal
    for _ in range(warmup):
        scatter(gemm(k.gather(op.edof, x)))
    sums = np.zeros(3)
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        u_elem = k.gather(op.edof, x)
        t1 = time.perf_counter_ns()
        f_elem = gemm(u_elem)
        t2 = time.perf_counter_ns()
        scatter(f_elem)
        t3 = time.perf_counter_ns()
        sums += [(t1 - t0) * 1e-3, (t2 - t1) * 1e-3, (t3 - t2) * 1e-3]
    inpass = sums / repeats

    # solo: each stage repeated on frozen inputs
    u_elem = k.gather(op.edof, x)
    f_elem = gemm(u_elem)
    solo_gather, _, _ = _time_reps(lambda: k.gather(op.edof, x), warmup, repeats)
    solo_gemm, _, _ = _time_reps(lambda: gemm(u_elem), warmup, repeats)
    solo_scatter, _, _ = _time_reps(lambda: scatter(f_elem), warmup, repeats)

    return {
        "stage_gather_us": float(inpass[0]),
        "stage_gemm_us": float(inpass[1]),
        "stage_scatter_us": float(inpass[2]),
        "stage_sum_us": float(inpass.sum()),  # lower bound on pipeline_us
        "stage_gather_solo_us": solo_gather,
        "stage_gemm_solo_us": solo_gemm,
        "stage_scatter_solo_us": solo_scatter,
        "pipeline_us": pipeline_us,
    }


MATVEC_COLUMNS = [
    "n_elem",
    "n_dof",
    "variant",
    "precision",
    "scatter",
    "backend",
    "index_pattern",
    "repeats",
    "warmup",
    "mean_us",
    "std_us",
    "min_us",
    "speedup_vs_fp64_3stage",
    "equivalence_rel",
    "bytes_per_element",
    "intensity_ideal",
    "effective_bw_gbs",
    "modeled_footprint_bytes",
    "stage_gather_us",
    "stage_gemm_us",
    "stage_scatter_us",
    "stage_sum_us",
    "stage_gather_solo_us",
    "stage_gemm_solo_us",
    "stage_scatter_solo_us",
    "pipeline_us",
]


def run_matvec_suite(
    n_elem: int,
    precisions=("fp64", "fp32"),
    variants=("three_stage", "fused"),
    scatter: str = "serial",
    index_pattern: str = "structured",
    repeats: int | None = None,
    warmup: int = 10,
    backend: str | None = None,
    backends: tuple[str, ...] | None = None,
    seed: int = 42,
) -> StudyReport:
    """Grid of precision x variant (x backend); speedups vs FP64 three-stage.

    Passing backends=None times the single resolved backend; an explicit
    tuple (e.g. from available_backends()) times each, which is how the
    vectorized fallback is compared against the compiled kernels.
    """
    backend_list = list(backends) if backends is not None else [backend]
    records = []
    for be in backend_list:
        for precision in precisions:
            for variant in variants:
                cfg = MicrobenchConfig(
                    n_elem=n_elem,
                    precision=precision,
                    variant=variant,
                    scatter=scatter,
                    index_pattern=index_pattern,
                    repeats=repeats,
                    warmup=warmup,
                    seed=seed,
                    backend=be,
                )
                records.append(run_matvec_bench(cfg))
    baselines = {
        rec["backend"]: rec["mean_us"]
        for rec in records
        if rec["variant"] == "three_stage" and rec["precision"] == "fp64"
    }
    for rec in records:
        base = baselines.get(rec["backend"])
        rec["speedup_vs_fp64_3stage"] = base / rec["mean_us"] if base else ""
        for col in MATVEC_COLUMNS:
            rec.setdefault(col, "")
    return StudyReport(kind="matvec", columns=MATVEC_COLUMNS, records=records)


def compare_backends(
    n_elem: int,
    precision: str = "fp32",
    variants=("three_stage", "fused"),
    **kwargs,
) -> StudyReport:
    """Same grid on every importable backend for a direct comparison."""
    report = run_matvec_suite(
        n_elem, precisions=(precision,), variants=variants, backends=available_backends(), **kwargs
    )
    report.kind = "backend"
    return report


REPEAT_COLUMNS = ["run", "wall_s", "compliance", "selected_iteration", "grayness", "total_cg", "restarts"]


def run_repeat_study(problem: ProblemPreset, n_runs: int = 5, config: SimpConfig | None = None) -> StudyReport:
    """N identical SIMP runs; wall-time variability plus compliance stability."""
    config = config or SimpConfig()
    records = []
    for run in range(n_runs):
        result = run_simp(problem, config)
        records.append(
            {
                "run": run,
                "wall_s": result.wall_s,
                "compliance": result.selected.compliance,
                "selected_iteration": result.selected.iteration,
                "grayness": result.selected.grayness,
                "total_cg": result.total_cg_iterations,
                "restarts": result.restart_count,
            }
        )
    report = StudyReport(kind="repeat", columns=REPEAT_COLUMNS, records=records)
    report.aggregates = compute_aggregates("repeat", records)
    return report


DETERMINISM_COLUMNS = ["run", "compliance", "iterations", "termination", "wall_s", "c_ref_fp64"]


def run_determinism_study(
    problem: ProblemPreset,
    n_runs: int = 10,
    cg: CgConfig = CgConfig(),
    backend: str | None = None,
) -> StudyReport:
    """Cold-start fused parallel-atomic FP32 solves at uniform density 0.5.

    The scatter race order is the only nondeterminism candidate in the whole
    pipeline; the spread of these N compliances against a serial FP64
    reference bounds it.
    """
    mesh, bcs = problem.mesh, problem.bcs
    edof = build_edof(mesh)
    rho = np.full(mesh.n_elem, 0.5)
    simp = SimpParams(3.0)
    ref_op = MatFreeOperator(mesh, edof, bcs, rho, simp, "fp64", "fused", "serial", backend=backend)
    _, ref_report = solve_equilibrium(ref_op, bcs.force, cg)
    c_ref = ref_report.compliance
    records = []
    for run in range(n_runs):
        op = MatFreeOperator(
            mesh, edof, bcs, rho, simp, "fp32", "fused", "parallel_atomic", backend=backend
        )
        _, report = solve_equilibrium(op, bcs.force, cg)
        records.append(
            {
                "run": run,
                "compliance": report.compliance,
                "iterations": report.iterations,
                "termination": report.termination,
                "wall_s": report.wall_time,
                "c_ref_fp64": c_ref,
            }
        )
    report = StudyReport(kind="determinism", columns=DETERMINISM_COLUMNS, records=records)
    report.aggregates = compute_aggregates("determinism", records)
    return report


BF16_STUDY_COLUMNS = [
    "n_elem",
    "label",
    "compliance",
    "delta_c_vs_ref",
    "iterations",
    "outer_steps",
    "termination",
    "kappa",
    "eps_kappa",
    "wall_s",
]


def run_bf16_study(
    problem: ProblemPreset,
    cg: CgConfig = CgConfig(),
    inner_tols: tuple[float, float] = (1e-3, 1e-5),
    backend: str | None = None,
) -> StudyReport:
    """Four-row low-precision solve study at uniform density 0.5.

    Rows: the FP32 reference solve, the plain quantized-BF16 solve, and the
    FP32/BF16 refinement loop at each inner tolerance. delta_c is each row's
    relative compliance error against the FP32 reference; the condition
    number of the system is estimated once for barrier context.
    """
    from .conditioning import estimate_kappa
    from .solver import IrConfig, solve_refined

    mesh, bcs = problem.mesh, problem.bcs
    edof = build_edof(mesh)
    rho = np.full(mesh.n_elem, 0.5)
    simp = SimpParams(3.0)
    kappa_report = estimate_kappa(mesh, bcs, rho, simp, edof=edof, backend=backend)

    op32 = MatFreeOperator(mesh, edof, bcs, rho, simp, "fp32", "fused", "serial", backend=backend)
    opb = MatFreeOperator(mesh, edof, bcs, rho, simp, "bf16", "fused", "serial", backend=backend)
    _, ref = solve_equilibrium(op32, bcs.force, cg)
    c_ref = ref.compliance

    def row(label, compliance, iterations, outer_steps, termination, wall_s):
        return {
            "n_elem": mesh.n_elem,
            "label": label,
            "compliance": compliance,
            "delta_c_vs_ref": abs(compliance - c_ref) / c_ref,
            "iterations": iterations,
            "outer_steps": outer_steps,
            "termination": termination,
            "kappa": kappa_report.kappa,
            "eps_kappa": kappa_report.eps_kappa,
            "wall_s": wall_s,
        }

    records = [row("fp32_ref", c_ref, ref.iterations, 0, ref.termination, ref.wall_time)]
    _, plain = solve_equilibrium(opb, bcs.force, cg)
    records.append(
        row("bf16_plain", plain.compliance, plain.iterations, 0, plain.termination, plain.wall_time)
    )
    for tol in inner_tols:
        _, ir = solve_refined(op32, opb, bcs.force, IrConfig(inner_tol=tol), cg)
        term = "converged" if ir.converged else ("stagnated" if ir.stagnated else "max_outer")
        records.append(
            row(f"ir_{tol:g}", ir.compliance, ir.total_inner, ir.outer_steps, term, ir.wall_time)
        )
    return StudyReport(kind="bf16_study", columns=BF16_STUDY_COLUMNS, records=records)


HIGHCAP_COLUMNS = ["cg_cap", "selected_compliance", "selected_iteration", "restarts", "total_cg", "wall_s"]


def run_highcap_validation(
    problem: ProblemPreset,
    caps: tuple[int, int] = (1000, 5000),
    config: SimpConfig | None = None,
) -> StudyReport:
    """Paired SIMP runs differing only in the CG iteration cap."""
    config = config or SimpConfig()
    records = []
    for cap in caps:
        cfg = replace(config, cg=replace(config.cg, max_iter=cap))
        result = run_simp(problem, cfg)
        records.append(
            {
                "cg_cap": cap,
                "selected_compliance": result.selected.compliance,
                "selected_iteration": result.selected.iteration,
                "restarts": result.restart_count,
                "total_cg": result.total_cg_iterations,
                "wall_s": result.wall_s,
            }
        )
    report = StudyReport(kind="highcap", columns=HIGHCAP_COLUMNS, records=records)
    report.aggregates = compute_aggregates("highcap", records)
    return report
