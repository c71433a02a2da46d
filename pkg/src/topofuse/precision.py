"""Precision policies and emulated-bfloat16 rounding.

All storage stays in IEEE FP32/FP64; the BF16 path is emulated by rounding
FP32 values to the nearest bfloat16-representable value (round to nearest,
ties to even) at well-defined quantization points, while products accumulate
in FP32. bfloat16 keeps the FP32 exponent and an 8-bit significand, so its
unit roundoff is 2**-8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Unit roundoffs for the supported working precisions.
EPS_FP64 = 2.0 ** -53
EPS_FP32 = 2.0 ** -24
EPS_BF16 = 2.0 ** -8

# Largest finite bfloat16 value: exponent 127, significand 255/128.
BF16_MAX = float(2.0 ** 127 * (255.0 / 128.0))


@dataclass(frozen=True)
class Precision:
    """Working-precision policy shared by operators and solvers.

    tag            one of "fp64", "fp32", "bf16"
    unit_roundoff  classical unit roundoff of the arithmetic the tag emulates
    """

    tag: str
    unit_roundoff: float

    @property
    def dtype(self):
        """Storage dtype. BF16 is emulated, so it stores FP32."""
        return np.float64 if self.tag == "fp64" else np.float32

    @property
    def scalar_bytes(self) -> int:
        """Bytes moved per stored scalar in the traffic model."""
        return 8 if self.tag == "fp64" else 4

    @property
    def quantized(self) -> bool:
        return self.tag == "bf16"


FP64 = Precision("fp64", EPS_FP64)
FP32 = Precision("fp32", EPS_FP32)
BF16 = Precision("bf16", EPS_BF16)

_PRECISIONS = {"fp64": FP64, "fp32": FP32, "bf16": BF16}


def get_precision(tag: str) -> Precision:
    try:
        return _PRECISIONS[tag]
    except KeyError:
        raise ValueError(f"unknown precision tag {tag!r}, expected fp64|fp32|bf16") from None


def round_to_bf16(x):
    """Round FP32 values to the nearest bfloat16 value, ties to even.

    Works on scalars or arrays; input is cast to float32 first, output is
    float32 holding exactly bfloat16-representable values. NaN payloads are
    quieted, infinities and signed zeros pass through, and values beyond the
    bfloat16 range round to infinity like hardware does.
    """
    x32 = np.asarray(x, dtype=np.float32)
    u = x32.view(np.uint32)
    exp_all_ones = (u & np.uint32(0x7F800000)) == np.uint32(0x7F800000)
    # RNE on the high 16 bits: add 0x7FFF plus the parity of the kept LSB.
    bias = np.uint32(0x7FFF) + ((u >> np.uint32(16)) & np.uint32(1))
    rounded = ((u + bias) >> np.uint32(16)) << np.uint32(16)
    keep = (u >> np.uint32(16)) << np.uint32(16)  # truncation, used for inf
    nan_mask = exp_all_ones & ((u & np.uint32(0x007FFFFF)) != 0)
    out = np.where(exp_all_ones, np.where(nan_mask, keep | np.uint32(0x00400000), keep), rounded)
    result = out.astype(np.uint32).view(np.float32)
    if np.isscalar(x) or x32.ndim == 0:
        return np.float32(result)
    return result


def quantize(v: np.ndarray, precision: Precision) -> np.ndarray:
    """Cast an array into a precision's storage, quantizing for BF16.

    FP64 is the identity, FP32 is an exact downcast, BF16 additionally rounds
    every entry to the nearest bfloat16 value (stored as FP32).
    """
    if precision.tag == "fp64":
        return np.asarray(v, dtype=np.float64)
    v32 = np.asarray(v, dtype=np.float32)
    if precision.tag == "fp32":
        return v32
    return round_to_bf16(v32)
