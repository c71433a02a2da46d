"""Matrix-free stiffness operators and their traffic/roofline accounting.

The global stiffness action w = sum_e B_e^T (k_e * Ke) B_e v is evaluated
without assembling a matrix, in one of two shapes:

  three_stage  gather -> batched per-element product -> scatter, with the
               (n_elem, 24) gather and force intermediates genuinely
               materialized in memory between stages;
  fused        one pass per element with no materialized intermediates,
               halving element-data traffic.

Scatter accumulation is either `serial` (element-major, bitwise-reproducible)
or `parallel_atomic` (atomic adds, reproducible only within tolerance on
multicore hosts). Fixed DOFs are masked on input and carry a unit diagonal,
so the operator agrees with a dense-assembled matrix on any input vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import get_backend
from .element import SimpParams, simp_scale, unit_stiffness
from .mesh import BoundaryConditions, StructuredMesh
from .precision import FP64, Precision, get_precision, quantize, round_to_bf16

VARIANTS = ("three_stage", "fused")
SCATTER_MODES = ("serial", "parallel_atomic")

# One multiply-add per element-matrix entry per element.
FLOPS_PER_ELEMENT = 2 * 24 * 24
INDEX_BYTES_PER_ELEMENT = 24 * 4  # one int32 edof row
DENSITY_BYTES_PER_ELEMENT = 4


class MatFreeOperator:
    """Matrix-free K(rho) with a fixed variant, precision, and scatter mode."""

    def __init__(
        self,
        mesh: StructuredMesh,
        edof: np.ndarray,
        bcs: BoundaryConditions,
        density: np.ndarray,
        simp: SimpParams = SimpParams(),
        precision: Precision | str = FP64,
        variant: str = "fused",
        scatter: str = "serial",
        nu: float = 0.3,
        backend: str | None = None,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if scatter not in SCATTER_MODES:
            raise ValueError(f"scatter must be one of {SCATTER_MODES}")
        self.mesh = mesh
        self.edof = edof
        self.bcs = bcs
        self.simp = simp
        self.precision = get_precision(precision) if isinstance(precision, str) else precision
        self.variant = variant
        self.scatter = scatter
        self.nu = nu
        self.kernels = get_backend(backend)
        self.backend_name = "numba" if self.kernels.PARALLEL else "numpy"

        self.n_dof = mesh.n_dof
        self.free_mask = bcs.free_mask(self.n_dof)
        self.fixed_dofs = bcs.fixed_dofs
        self.density = np.asarray(density, dtype=np.float64)
        if self.density.shape != (mesh.n_elem,):
            raise ValueError("density must have one entry per element")

        self.ke64 = unit_stiffness(nu)
        self.scale64 = np.asarray(simp_scale(self.density, simp), dtype=np.float64)
        dtype = self.precision.dtype
        self.ke = np.ascontiguousarray(self.ke64, dtype=dtype)
        self.scale = self.scale64.astype(dtype)
        self.n_apply = 0  # matvec counter for solver/bench reports

    def _masked_input(self, v: np.ndarray) -> np.ndarray:
        x = np.where(self.free_mask, np.asarray(v, dtype=self.precision.dtype), 0)
        x = np.ascontiguousarray(x, dtype=self.precision.dtype)
        if self.precision.quantized:
            x = round_to_bf16(x)
        return x

    def apply(self, v: np.ndarray) -> np.ndarray:
        """w = K v in the operator's variant/precision/scatter mode."""
        x = self._masked_input(v)
        out = np.zeros(self.n_dof, dtype=self.precision.dtype)
        quantized = self.precision.quantized
        k = self.kernels
        if self.variant == "fused":
            if self.scatter == "serial":
                fn = k.fused_serial_bf16 if quantized else k.fused_serial
            else:
                fn = k.fused_atomic_bf16 if quantized else k.fused_atomic
            fn(self.edof, self.ke, self.scale, x, out)
        else:
            u_elem = k.gather(self.edof, x)
            f_elem = k.gemm_bf16(u_elem, self.ke, self.scale) if quantized else k.gemm(
                u_elem, self.ke, self.scale
            )
            # Histogram-style reduction accumulates in FP64 and casts back.
            acc = out if self.precision.tag == "fp64" else np.zeros(self.n_dof, dtype=np.float64)
            if self.scatter == "serial":
                k.scatter_serial(self.edof, f_elem, acc)
            else:
                k.scatter_atomic(self.edof, f_elem, acc)
            if acc is not out:
                out[:] = acc
        out[self.fixed_dofs] = np.asarray(v, dtype=self.precision.dtype)[self.fixed_dofs]
        self.n_apply += 1
        return out

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    def diagonal(self) -> np.ndarray:
        """Jacobi diagonal via a matrix-free pass; 1.0 on fixed DOFs."""
        if self.precision.quantized:
            out = np.zeros(self.n_dof, dtype=np.float32)
            self.kernels.jacobi_diag_bf16(self.edof, np.diag(self.ke).copy(), self.scale, out)
        else:
            acc = np.zeros(self.n_dof, dtype=np.float64)
            self.kernels.jacobi_diag(self.edof, np.diag(self.ke).copy(), self.scale, acc)
            out = acc.astype(self.precision.dtype)
        out[self.fixed_dofs] = 1.0
        return out

    def apply_fp64(self, v: np.ndarray) -> np.ndarray:
        """FP64 evaluation of the system this operator represents.

        For fp64/fp32 operators this is the exact master-data matvec; for
        bf16 it applies the same quantized entries and quantized input in
        FP64 accumulation, i.e. the linearization the solver actually saw.
        """
        x64 = np.where(self.free_mask, np.asarray(v, dtype=np.float64), 0.0)
        out = np.zeros(self.n_dof, dtype=np.float64)
        if not self.precision.quantized:
            u_elem = x64[self.edof]
            f_elem = self.scale64[:, None] * (u_elem @ self.ke64.T)
            np.add.at(out, self.edof.ravel(), f_elem.ravel())
        else:
            xq = round_to_bf16(x64.astype(np.float32)).astype(np.float64)
            f = np.zeros((self.edof.shape[0], 24), dtype=np.float64)
            for j in range(24):
                kcol = round_to_bf16(self.scale[:, None] * self.ke[None, :, j]).astype(np.float64)
                f += kcol * xq[self.edof[:, j], None]
            np.add.at(out, self.edof.ravel(), f.ravel())
        out[self.fixed_dofs] = np.asarray(v, dtype=np.float64)[self.fixed_dofs]
        return out

    def element_energies(self, u: np.ndarray) -> np.ndarray:
        """u_e^T Ke u_e per element (unit modulus), FP64."""
        return self.kernels.element_energies(self.edof, self.ke64, np.asarray(u, np.float64))

    def compliance(self, f: np.ndarray, u: np.ndarray) -> float:
        return float(np.dot(np.asarray(f, np.float64), np.asarray(u, np.float64)))


def jacobi_diagonal(op: MatFreeOperator) -> np.ndarray:
    return op.diagonal()


# -- traffic model and roofline ------------------------------------------------


@dataclass(frozen=True)
class TrafficReport:
    """Modeled DRAM bytes per element for one operator configuration."""

    variant: str
    precision: str
    scalar_bytes: int
    bytes_element_data: int  # displacement/force scalars only
    bytes_with_indices: int  # plus the edof row and the density scalar
    flops_per_element: int
    intensity_ideal: float  # FLOP per element-data byte
    intensity_profile: float  # FLOP per byte including indices + density


def traffic_model(variant: str, precision: Precision | str) -> TrafficReport:
    """Bytes/element the memory system must move for one matvec.

    The three-stage pipeline touches each element scalar four times (gather
    read, force write, force read, scatter update); the fused kernel touches
    it twice. The with-indices figure adds one int32 edof row (96 B) and one
    4-byte density scalar per element. BF16 stores FP32, so it counts 4-byte
    scalars.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    prec = get_precision(precision) if isinstance(precision, str) else precision
    w = prec.scalar_bytes
    accesses = 4 if variant == "three_stage" else 2
    element_data = accesses * 24 * w
    with_indices = element_data + INDEX_BYTES_PER_ELEMENT + DENSITY_BYTES_PER_ELEMENT
    return TrafficReport(
        variant=variant,
        precision=prec.tag,
        scalar_bytes=w,
        bytes_element_data=element_data,
        bytes_with_indices=with_indices,
        flops_per_element=FLOPS_PER_ELEMENT,
        intensity_ideal=FLOPS_PER_ELEMENT / element_data,
        intensity_profile=FLOPS_PER_ELEMENT / with_indices,
    )


@dataclass(frozen=True)
class RooflineConfig:
    """Compute ceiling and memory bandwidth of one execution target."""

    peak_flops: float  # FLOP/s
    bandwidth: float  # bytes/s

    def __post_init__(self):
        if self.peak_flops <= 0 or self.bandwidth <= 0:
            raise ValueError("roofline ceilings must be positive")

    @property
    def ridge(self) -> float:
        """Intensity where the machine turns compute-bound, FLOP/byte."""
        return self.peak_flops / self.bandwidth


# Datasheet ceilings of the accelerator the shipped study configs model.
DEVICE_CEILINGS = {
    "fp64": RooflineConfig(peak_flops=1.29e12, bandwidth=1.008e12),
    "fp32": RooflineConfig(peak_flops=82.6e12, bandwidth=1.008e12),
    "bf16": RooflineConfig(peak_flops=165.2e12, bandwidth=1.008e12),
}


def roofline_bound(config: RooflineConfig, intensity: float) -> float:
    """Attainable FLOP/s at a given arithmetic intensity."""
    if intensity <= 0:
        raise ValueError("arithmetic intensity must be positive")
    return min(config.peak_flops, intensity * config.bandwidth)


def effective_bandwidth(bytes_per_element: int, n_elem: int, seconds: float) -> float:
    """Achieved bytes/s implied by a measured per-matvec wall time."""
    if seconds <= 0:
        raise ValueError("wall time must be positive")
    return bytes_per_element * n_elem / seconds


def memory_footprint(n_elem: int, n_dof: int, variant: str, precision: Precision | str) -> int:
    """Modeled bytes of persistent state one matvec configuration holds.

    Counts the edof table, density and scale arrays, the unit element matrix,
    input/output vectors and the Jacobi diagonal; the three-stage variant
    adds its two (n_elem, 24) intermediates.
    """
    prec = get_precision(precision) if isinstance(precision, str) else precision
    w = prec.scalar_bytes
    total = n_elem * INDEX_BYTES_PER_ELEMENT  # edof
    total += n_elem * (8 + w)  # fp64 density master + working-precision scale
    total += 24 * 24 * w  # shared element matrix
    total += 3 * n_dof * w  # v, w, jacobi diagonal
    if variant == "three_stage":
        total += 2 * n_elem * 24 * w
    return total
