"""
Core vector math for the CLP engine

This module provides the pieces every other module shares: the FeatureVector
stream element, L2 normalization, dot-product similarity, a counter-based
seeded random generator, per-learner cost counters and the error hierarchy.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

NORM_EPSILON = 1e-12
UNIT_TOLERANCE = 1e-6

ArrayLike = Union[np.ndarray, Iterable[float]]


class ClpError(Exception):
    """Base exception for the CLP engine"""

    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ZeroVectorError(ClpError):
    """Raised when a sample has (numerically) zero norm"""


class DimensionMismatchError(ClpError):
    """Raised when two vectors that must agree in length do not"""


class InvariantViolation(ClpError):
    """Raised when a checked property of the engine does not hold"""

    exit_code = 3


@dataclass(frozen=True)
class FeatureVector:
    """One stream element: a d-dimensional sample with an optional class label"""

    values: np.ndarray
    label: Optional[int] = None
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DimensionMismatchError(
                "FeatureVector values must be one-dimensional",
                {"shape": values.shape},
            )
        if self.label is not None and int(self.label) < 0:
            raise ValueError(f"Class labels must be non-negative, got {self.label}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return int(self.values.shape[0])


def l2_normalize(v: ArrayLike, label: Optional[int] = None) -> FeatureVector:
    """Scale v to unit L2 norm, keeping its direction.

    Raises:
        ZeroVectorError: if the norm is below 1e-12
    """
    if isinstance(v, FeatureVector):
        label = v.label if label is None else label
        v = v.values
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm < NORM_EPSILON:
        raise ZeroVectorError("Cannot normalize a zero vector", {"norm": norm})
    return FeatureVector(arr / norm, label, normalized=True)


def _as_array(v: Union[FeatureVector, ArrayLike]) -> np.ndarray:
    if isinstance(v, FeatureVector):
        return v.values
    return np.asarray(v, dtype=np.float64)


def dot(a: Union[FeatureVector, ArrayLike], b: Union[FeatureVector, ArrayLike]) -> float:
    """Inner product; cosine similarity when both operands are unit vectors"""
    a_arr = _as_array(a)
    b_arr = _as_array(b)
    if a_arr.shape != b_arr.shape:
        raise DimensionMismatchError(
            f"Dimension mismatch: {a_arr.shape[0]} vs {b_arr.shape[0]}",
            {"left": a_arr.shape, "right": b_arr.shape},
        )
    return float(np.dot(a_arr, b_arr))


def is_unit(v: Union[FeatureVector, ArrayLike], tol: float = UNIT_TOLERANCE) -> bool:
    return abs(float(np.linalg.norm(_as_array(v))) - 1.0) <= tol


# SplitMix64 constants. Rng(seed) output i is mix(seed + (i + 1) * GOLDEN_GAMMA),
# so Rng(0) starts 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4 (see FORMATS.md).
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB
MASK_64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_2)
        return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based SplitMix64 generator.

    Draws depend only on (seed, position in the stream), never on numpy's or the
    platform's default generator.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK_64
        self.counter = 0

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        """Child generator for an independent stream keyed by integers"""
        state = int(seed) & MASK_64
        for key in keys:
            mixed = _mix64(np.array([(state ^ (int(key) & MASK_64))], dtype=np.uint64)
                           + np.uint64(GOLDEN_GAMMA))
            state = int(mixed[0])
        return cls(state)

    def next_u64(self, n: int = 1) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN_GAMMA)
        return _mix64(z)

    def uniform(self, n: int = 1) -> np.ndarray:
        """Floats in [0, 1) with 53 random bits"""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normal(self, n: int = 1) -> np.ndarray:
        """Standard normal draws (Box-Muller, both branches used)"""
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, high: int, n: int = 1) -> np.ndarray:
        """Integers in [0, high)"""
        if high < 1:
            raise ValueError("high must be >= 1")
        draws = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(draws, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)"""
        order = np.arange(n, dtype=np.int64)
        if n < 2:
            return order
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            order[i], order[j] = order[j], order[i]
        return order

    def unit_vectors(self, count: int, d: int) -> np.ndarray:
        """count random directions on the unit sphere in R^d"""
        raw = self.normal(count * d).reshape(count, d)
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return raw / np.maximum(norms, NORM_EPSILON)


@dataclass
class CostCounters:
    """Per-learner operation counters (energy is not modeled; these stand in)"""

    samples: int = 0
    weight_writes: int = 0
    macs: int = 0
    spikes: int = 0
    rule_evaluations: int = 0
    allocations: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)
