"""Matrix-free 3D SIMP topology optimization on structured hex meshes.

Core pipeline: a structured mesh and its per-element DOF table feed a
matrix-free stiffness operator (fused single-pass or gather/GEMM/scatter
three-stage, in FP64/FP32/emulated-BF16), solved with Jacobi-preconditioned
CG inside a continuation SIMP loop. Conditioning estimates, a traffic and
roofline model, low-precision refinement studies, and a benchmark harness
round out the toolkit.
"""

from .backend import available_backends, default_backend_name, get_backend
from .bench import (
    MicrobenchConfig,
    StudyReport,
    adaptive_repeats,
    bench_mesh,
    compare_backends,
    run_bf16_study,
    run_determinism_study,
    run_highcap_validation,
    run_matvec_bench,
    run_matvec_suite,
    run_repeat_study,
)
from .conditioning import (
    BF16_KAPPA_LIMIT,
    KappaReport,
    estimate_kappa,
    inverse_iteration,
    power_iteration,
)
from .element import RHO_MIN, SimpParams, assemble_dense, elasticity_matrix, simp_scale, unit_stiffness
from .mesh import (
    DESK_SCALE,
    PRESET_NAMES,
    BoundaryConditions,
    ProblemPreset,
    StructuredMesh,
    build_edof,
    cantilever_bcs,
    make_preset,
)
from .operator import (
    DEVICE_CEILINGS,
    MatFreeOperator,
    RooflineConfig,
    TrafficReport,
    effective_bandwidth,
    memory_footprint,
    roofline_bound,
    traffic_model,
)
from .precision import BF16, EPS_BF16, FP32, FP64, Precision, get_precision, quantize, round_to_bf16
from .simp import (
    ContinuationSchedule,
    Phase,
    SimpConfig,
    SimpResult,
    build_cone_filter,
    default_schedule,
    grayness,
    heaviside_projection,
    run_simp,
)
from .solver import (
    CgConfig,
    DivergenceError,
    IrConfig,
    IrReport,
    SolveReport,
    fp64_relative_residual,
    pcg,
    solve_equilibrium,
    solve_refined,
)

__version__ = "0.1.0"

__all__ = [
    "BF16",
    "BF16_KAPPA_LIMIT",
    "BoundaryConditions",
    "CgConfig",
    "ContinuationSchedule",
    "DESK_SCALE",
    "DEVICE_CEILINGS",
    "DivergenceError",
    "EPS_BF16",
    "FP32",
    "FP64",
    "IrConfig",
    "IrReport",
    "KappaReport",
    "MatFreeOperator",
    "MicrobenchConfig",
    "PRESET_NAMES",
    "Phase",
    "Precision",
    "ProblemPreset",
    "RHO_MIN",
    "RooflineConfig",
    "SimpConfig",
    "SimpParams",
    "SimpResult",
    "SolveReport",
    "StructuredMesh",
    "StudyReport",
    "TrafficReport",
    "adaptive_repeats",
    "assemble_dense",
    "available_backends",
    "bench_mesh",
    "build_cone_filter",
    "build_edof",
    "cantilever_bcs",
    "compare_backends",
    "default_backend_name",
    "default_schedule",
    "effective_bandwidth",
    "elasticity_matrix",
    "estimate_kappa",
    "fp64_relative_residual",
    "get_backend",
    "get_precision",
    "grayness",
    "heaviside_projection",
    "inverse_iteration",
    "make_preset",
    "memory_footprint",
    "pcg",
    "power_iteration",
    "quantize",
    "roofline_bound",
    "round_to_bf16",
    "run_bf16_study",
    "run_determinism_study",
    "run_highcap_validation",
    "run_matvec_bench",
    "run_matvec_suite",
    "run_repeat_study",
    "run_simp",
    "simp_scale",
    "solve_equilibrium",
    "solve_refined",
    "traffic_model",
    "unit_stiffness",
]
