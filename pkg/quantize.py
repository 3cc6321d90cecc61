"""
INT7 fixed-point arithmetic for the spiking network

Weights and activations use a signed symmetric code: the real value `scale`
maps to code +63 and -64 is never produced. Dot products accumulate in wide
(64-bit) integers. Learning rates are unsigned fractions with `frac_bits`
fractional bits, and 1/g comes from an integer reciprocal table, so the whole
learning path is free of platform float rounding.

Rescaling used by fixed_update (Q = max code, S = Q^2, A = 2^frac_bits):

    real w = W/Q,  real x = X/Q,  real y = Y/S,  real alpha = a/A
    dW = Q * alpha * r * (x - w*y) = a * r * (X*S - W*Y) / (A * S)

rounded half-to-even, then clamped to [-Q, +Q].
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np

from config import config
from core import DimensionMismatchError, InvariantViolation

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GOODNESS_TABLE_SIZE = 1024
WIDE_LIMIT = 1 << 62


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed symmetric fixed-point format for weights and activations"""

    bits: int = 7
    scale: float = 1.0
    frac_bits: int = 12
    rounding: str = "half-even"

    @property
    def max_code(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def alpha_one(self) -> int:
        """Fixed-point code of alpha = 1"""
        return 1 << self.frac_bits

    @property
    def activation_scale(self) -> int:
        """S: the wide-integer activation of a unit vector with itself"""
        return self.max_code * self.max_code

    @property
    def normalizer(self) -> int:
        return self.alpha_one * self.activation_scale

    def to_metadata(self) -> Dict[str, Any]:
        return {
            "version": FORMAT_VERSION,
            "bits": self.bits,
            "scale": self.scale,
            "max_code": self.max_code,
            "frac_bits": self.frac_bits,
            "rounding": self.rounding,
            "activation_scale": self.activation_scale,
            "normalizer": self.normalizer,
        }


INT7 = FixedPointFormat()


@dataclass
class QuantizationStats:
    """Counts components clamped into range"""

    clamped: int = 0


def round_half_even_div(num: np.ndarray, den: int) -> np.ndarray:
    """Exact integer num/den rounded half-to-even (den > 0)"""
    num = np.asarray(num, dtype=np.int64)
    q = np.floor_divide(num, den)
    twice_rem = 2 * (num - q * den)
    up = (twice_rem > den) | ((twice_rem == den) & (q % 2 == 1))
    return q + up.astype(np.int64)


def quantize_vec(
    v: np.ndarray,
    fmt: FixedPointFormat = INT7,
    stats: Optional[QuantizationStats] = None,
) -> np.ndarray:
    """Real vector -> integer codes, round_half_even(v/scale * Q)"""
    arr = np.asarray(getattr(v, "values", v), dtype=np.float64)
    out_of_range = int(np.count_nonzero(np.abs(arr) > fmt.scale))
    if out_of_range:
        first = stats is not None and stats.clamped == 0
        if stats is not None:
            stats.clamped += out_of_range
        message = f"Clamped {out_of_range} components into [-{fmt.scale}, {fmt.scale}]"
        if first:
            logger.warning(f"{message}; later clamps are counted and logged at DEBUG")
        else:
            logger.debug(message)
        arr = np.clip(arr, -fmt.scale, fmt.scale)
    codes = np.rint(arr / fmt.scale * fmt.max_code).astype(np.int64)
    return np.clip(codes, -fmt.max_code, fmt.max_code)


def dequantize_vec(q: np.ndarray, fmt: FixedPointFormat = INT7) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * fmt.scale / fmt.max_code


def int_dot(w_row: np.ndarray, x_q: np.ndarray, fmt: FixedPointFormat = INT7) -> int:
    """Exact wide-integer dot product"""
    w_row = np.asarray(w_row, dtype=np.int64)
    x_q = np.asarray(x_q, dtype=np.int64)
    if w_row.shape != x_q.shape:
        raise DimensionMismatchError(f"Dimension mismatch: {w_row.shape} vs {x_q.shape}")
    if config.DEBUG and w_row.shape[0] * fmt.max_code * fmt.max_code >= WIDE_LIMIT:
        raise InvariantViolation("Wide accumulator could overflow", {"d": w_row.shape[0]})
    return int(np.dot(w_row, x_q))


def fixed_update(
    w_row: np.ndarray,
    x_q: np.ndarray,
    y_wide: int,
    alpha_fp: int,
    r: int,
    fmt: FixedPointFormat = INT7,
) -> np.ndarray:
    """Fixed-point self-normalizing update of one weight row (see module doc)"""
    w_row = np.asarray(w_row, dtype=np.int64)
    if r == 0:
        return w_row.copy()
    x_q = np.asarray(x_q, dtype=np.int64)
    num = int(alpha_fp) * int(r) * (x_q * fmt.activation_scale - w_row * int(y_wide))
    delta = round_half_even_div(num, fmt.normalizer)
    return np.clip(w_row + delta, -fmt.max_code, fmt.max_code)


@lru_cache(maxsize=8)
def reciprocal_table(frac_bits: int) -> np.ndarray:
    """round_half_even(2^frac_bits / g) for g in [1, 1024]; entry 0 unused"""
    one = np.array([1 << frac_bits], dtype=np.int64)
    table = np.array(
        [0] + [int(round_half_even_div(one, g)[0]) for g in range(1, GOODNESS_TABLE_SIZE + 1)],
        dtype=np.int64,
    )
    table.setflags(write=False)
    return table


def alpha_for_goodness(goodness: int, fmt: FixedPointFormat = INT7) -> int:
    """Fixed-point 1/g; g beyond the table saturates at its last entry"""
    g = min(max(int(goodness), 1), GOODNESS_TABLE_SIZE)
    return int(reciprocal_table(fmt.frac_bits)[g])


def alpha_to_float(alpha_fp: int, fmt: FixedPointFormat = INT7) -> float:
    return alpha_fp / fmt.alpha_one
