"""Pure-numpy kernel backend.

Fallback for environments without numba, selected with TOPOFUSE_BACKEND=numpy.
Signatures mirror _kernels_numba. The fused kernels keep the exact operation
order of the element-major reference loop (per-term scaling, j-order
accumulation, element-major scatter via np.add.at), so serial fused results
are bitwise-identical across backends. Vectorized numpy cannot avoid
materializing column intermediates, so the no-intermediate property of the
fused path is only architectural in the numba backend.
"""

from __future__ import annotations

import numpy as np

from .precision import round_to_bf16

PARALLEL = False  # this backend never threads; atomic modes run serially


def gather(edof: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Stage 1: materialize per-element DOF values, shape (n_elem, 24)."""
    return v[edof]


def gemm(u_elem: np.ndarray, ke: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Stage 2: batched f_e = scale_e * (Ke @ u_e), materialized."""
    return scale[:, None] * (u_elem @ ke.T)


def gemm_bf16(u_elem: np.ndarray, ke: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Stage 2 with bfloat16 input quantization, FP32 accumulation.

    Each scaled matrix entry is rounded to bfloat16 before use; u_elem is
    expected pre-quantized. Accumulates over j in index order.
    """
    n_elem = u_elem.shape[0]
    f = np.zeros((n_elem, 24), dtype=np.float32)
    for j in range(24):
        kcol = round_to_bf16(scale[:, None] * ke[None, :, j].astype(np.float32))
        f += kcol * u_elem[:, j, None]
    return f


def scatter_serial(edof: np.ndarray, f_elem: np.ndarray, acc: np.ndarray) -> None:
    """Stage 3: accumulate element forces into acc, element-major order."""
    np.add.at(acc, edof.ravel(), f_elem.ravel().astype(acc.dtype, copy=False))


def scatter_atomic(edof: np.ndarray, f_elem: np.ndarray, acc: np.ndarray) -> None:
    scatter_serial(edof, f_elem, acc)


def _fused_accumulate(edof, ke, scale, v, quantized):
    """Shared j-order accumulation for the fused kernels.

    Term order matches the reference loop: (scale_e * K[i,j]) * u_j, summed
    over j starting from zero, so results are bitwise-equal to a serial
    element-major loop in any one precision.
    """
    n_elem = edof.shape[0]
    f = np.zeros((n_elem, 24), dtype=v.dtype)
    for j in range(24):
        kcol = scale[:, None] * ke[None, :, j]
        if quantized:
            kcol = round_to_bf16(kcol)
        f += kcol * v[edof[:, j], None]
    return f


def fused_serial(edof, ke, scale, v, out) -> None:
    f = _fused_accumulate(edof, ke, scale, v, quantized=False)
    np.add.at(out, edof.ravel(), f.ravel())


def fused_serial_bf16(edof, ke, scale, v, out) -> None:
    f = _fused_accumulate(edof, ke, scale, v, quantized=True)
    np.add.at(out, edof.ravel(), f.ravel())


def fused_atomic(edof, ke, scale, v, out) -> None:
    fused_serial(edof, ke, scale, v, out)


def fused_atomic_bf16(edof, ke, scale, v, out) -> None:
    fused_serial_bf16(edof, ke, scale, v, out)


def jacobi_diag(edof, ke_diag, scale, out) -> None:
    """Matrix-free diagonal: out[g] += scale_e * Ke[l,l] over all (e, l)."""
    contrib = scale[:, None] * ke_diag[None, :]
    np.add.at(out, edof.ravel(), contrib.ravel().astype(out.dtype, copy=False))


def jacobi_diag_bf16(edof, ke_diag, scale, out) -> None:
    contrib = round_to_bf16(scale[:, None].astype(np.float32) * ke_diag[None, :].astype(np.float32))
    np.add.at(out, edof.ravel(), contrib.ravel().astype(out.dtype, copy=False))


def element_energies(edof, ke, u) -> np.ndarray:
    """u_e^T Ke u_e per element in FP64, for compliance sensitivities."""
    ue = u[edof].astype(np.float64, copy=False)
    return np.einsum("ei,ei->e", ue @ ke.astype(np.float64), ue)
