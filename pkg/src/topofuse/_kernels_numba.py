"""Numba kernel backend: the hot matvec loops as @njit machine code.

Default backend when numba imports. Two llvmlite intrinsics back the parts
numba does not expose on CPU: an atomicrmw float add for the parallel_atomic
scatter mode, and float32<->uint32 bitcasts for in-kernel bfloat16 rounding.

Kernel conventions shared with _kernels_numpy:
  - serial fused accumulates element-major with per-term scaling
    (scale_e * K[i,j]) * u_j in j order, so results are bitwise-equal to a
    plain reference loop in the same precision;
  - three-stage genuinely materializes the (n_elem, 24) gather and force
    intermediates between stages;
  - three-stage scatter accumulates in FP64 and casts back (histogram-style
    reduction), fused scatter accumulates in the working precision;
  - bf16 kernels round the scaled matrix entries to bfloat16 per term and
    expect v pre-quantized; products accumulate in FP32.
"""

from __future__ import annotations

import numpy as np
from llvmlite import ir
from numba import njit, prange, types
from numba.core import cgutils
from numba.extending import intrinsic

PARALLEL = True  # atomic modes may run multithreaded in this backend


@intrinsic
def _atomic_add(typingctx, arr, idx, val):
    """out[idx] += val as an LLVM atomicrmw fadd (race-free under prange)."""
    if not isinstance(arr, types.Array) or arr.dtype not in (types.float32, types.float64):
        return None
    sig = types.void(arr, types.intp, arr.dtype)

    def codegen(context, builder, signature, args):
        arr_t = signature.args[0]
        ary = context.make_array(arr_t)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, arr_t, ary, [args[1]])
        builder.atomic_rmw("fadd", ptr, args[2], "monotonic")
        return context.get_dummy_value()

    return sig, codegen


@intrinsic
def _f32_bits(typingctx, x):
    sig = types.uint32(types.float32)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.IntType(32))

    return sig, codegen


@intrinsic
def _bits_f32(typingctx, u):
    sig = types.float32(types.uint32)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.FloatType())

    return sig, codegen


@njit(inline="always")
def _bf16(x):
    """Scalar round-to-nearest-even bfloat16 quantization of an FP32 value."""
    u = _f32_bits(np.float32(x))
    if (u & np.uint32(0x7F800000)) == np.uint32(0x7F800000):
        if (u & np.uint32(0x007FFFFF)) != np.uint32(0):
            return _bits_f32(((u >> np.uint32(16)) << np.uint32(16)) | np.uint32(0x00400000))
        return _bits_f32(u)
    bias = np.uint32(0x7FFF) + ((u >> np.uint32(16)) & np.uint32(1))
    return _bits_f32(((u + bias) >> np.uint32(16)) << np.uint32(16))


# -- three-stage pipeline -----------------------------------------------------


@njit(cache=True)
def _gather_kernel(edof, v, u_elem):
    for e in range(edof.shape[0]):
        for j in range(24):
            u_elem[e, j] = v[edof[e, j]]


def gather(edof, v):
    u_elem = np.empty((edof.shape[0], 24), dtype=v.dtype)
    _gather_kernel(edof, v, u_elem)
    return u_elem


@njit(cache=True)
def _gemm_kernel(u_elem, ke, scale, f_elem):
    zero = ke[0, 0] * 0
    for e in range(u_elem.shape[0]):
        for i in range(24):
            acc = zero
            for j in range(24):
                acc += ke[i, j] * u_elem[e, j]
            f_elem[e, i] = scale[e] * acc


def gemm(u_elem, ke, scale):
    f_elem = np.empty((u_elem.shape[0], 24), dtype=u_elem.dtype)
    _gemm_kernel(u_elem, ke, scale, f_elem)
    return f_elem


@njit(cache=True)
def _gemm_bf16_kernel(u_elem, ke, scale, f_elem):
    for e in range(u_elem.shape[0]):
        se = scale[e]
        for i in range(24):
            acc = np.float32(0.0)
            for j in range(24):
                acc += _bf16(se * ke[i, j]) * u_elem[e, j]
            f_elem[e, i] = acc


def gemm_bf16(u_elem, ke, scale):
    f_elem = np.empty((u_elem.shape[0], 24), dtype=np.float32)
    _gemm_bf16_kernel(u_elem, ke, scale, f_elem)
    return f_elem


@njit(cache=True)
def scatter_serial(edof, f_elem, acc):
    for e in range(edof.shape[0]):
        for i in range(24):
            acc[edof[e, i]] += f_elem[e, i]


@njit(parallel=True, cache=True)
def scatter_atomic(edof, f_elem, acc):
    for e in prange(edof.shape[0]):
        for i in range(24):
            _atomic_add(acc, edof[e, i], f_elem[e, i])


# -- fused single-pass kernels ------------------------------------------------


@njit(cache=True)
def _fused_serial_kernel(edof, ke, scale, v, out, u_local):
    zero = ke[0, 0] * 0
    for e in range(edof.shape[0]):
        se = scale[e]
        for j in range(24):
            u_local[j] = v[edof[e, j]]
        for i in range(24):
            acc = zero
            for j in range(24):
                acc += (se * ke[i, j]) * u_local[j]
            out[edof[e, i]] += acc


def fused_serial(edof, ke, scale, v, out):
    u_local = np.empty(24, dtype=v.dtype)
    _fused_serial_kernel(edof, ke, scale, v, out, u_local)


@njit(cache=True)
def _fused_serial_bf16_kernel(edof, ke, scale, v, out, u_local):
    for e in range(edof.shape[0]):
        se = scale[e]
        for j in range(24):
            u_local[j] = v[edof[e, j]]
        for i in range(24):
            acc = np.float32(0.0)
            for j in range(24):
                acc += _bf16(se * ke[i, j]) * u_local[j]
            out[edof[e, i]] += acc


def fused_serial_bf16(edof, ke, scale, v, out):
    u_local = np.empty(24, dtype=np.float32)
    _fused_serial_bf16_kernel(edof, ke, scale, v, out, u_local)


@njit(parallel=True, cache=True)
def _fused_atomic_kernel(edof, ke, scale, v, out):
    zero = ke[0, 0] * 0
    for e in prange(edof.shape[0]):
        se = scale[e]
        for i in range(24):
            acc = zero
            for j in range(24):
                acc += (se * ke[i, j]) * v[edof[e, j]]
            _atomic_add(out, edof[e, i], acc)


def fused_atomic(edof, ke, scale, v, out):
    _fused_atomic_kernel(edof, ke, scale, v, out)


@njit(parallel=True, cache=True)
def _fused_atomic_bf16_kernel(edof, ke, scale, v, out):
    for e in prange(edof.shape[0]):
        se = scale[e]
        for i in range(24):
            acc = np.float32(0.0)
            for j in range(24):
                acc += _bf16(se * ke[i, j]) * v[edof[e, j]]
            _atomic_add(out, edof[e, i], acc)


def fused_atomic_bf16(edof, ke, scale, v, out):
    _fused_atomic_bf16_kernel(edof, ke, scale, v, out)


# -- diagonal and element energies --------------------------------------------


@njit(cache=True)
def _jacobi_kernel(edof, ke_diag, scale, acc):
    for e in range(edof.shape[0]):
        se = scale[e]
        for l in range(24):
            acc[edof[e, l]] += se * ke_diag[l]


def jacobi_diag(edof, ke_diag, scale, out):
    _jacobi_kernel(edof, ke_diag, scale, out)


@njit(cache=True)
def _jacobi_bf16_kernel(edof, ke_diag, scale, acc):
    for e in range(edof.shape[0]):
        se = scale[e]
        for l in range(24):
            acc[edof[e, l]] += _bf16(se * ke_diag[l])


def jacobi_diag_bf16(edof, ke_diag, scale, out):
    _jacobi_bf16_kernel(edof, ke_diag, scale, out)


@njit(cache=True)
def _energies_kernel(edof, ke, u, out):
    for e in range(edof.shape[0]):
        total = 0.0
        for i in range(24):
            row = 0.0
            for j in range(24):
                row += ke[i, j] * u[edof[e, j]]
            total += u[edof[e, i]] * row
        out[e] = total


def element_energies(edof, ke, u):
    out = np.empty(edof.shape[0], dtype=np.float64)
    _energies_kernel(edof, np.asarray(ke, dtype=np.float64), np.asarray(u, dtype=np.float64), out)
    return out
