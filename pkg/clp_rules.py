"""
CLP weight-update rules

Two rules for moving one prototype's weight vector given an input x, a
learning rate alpha, a third-factor sign r and the post-synaptic activation
y = w.x:

* update_explicit: the original CLP rule, dw = alpha*r*x followed by
  renormalization to unit length.
* update_selfnorm: the local rule dw = alpha*r*(x - w*y). Its decay term keeps
  the norm close to one without any global normalization step; for unit w and x
  the squared norm after one step is exactly 1 + alpha^2 * r^2 * (1 - y^2).

update_selfnorm never renormalizes. Use norm_drift to monitor norm health.
"""

import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from config import config
from core import ClpError, DimensionMismatchError, NORM_EPSILON

logger = logging.getLogger(__name__)

ALPHA_MAX = 1.0
ALPHA_WARN = 0.3
Y_TOLERANCE = 1e-9

_large_alpha_count = 0
_large_alpha_lock = threading.Lock()


class DegenerateUpdateError(ClpError):
    """Raised when the explicit rule would renormalize a zero vector"""


def _note_large_alpha(alpha: float) -> None:
    global _large_alpha_count
    with _large_alpha_lock:
        _large_alpha_count += 1
        occurrence = _large_alpha_count
    if occurrence == 1:
        logger.warning(
            f"Learning rate {alpha:.3f} exceeds {ALPHA_WARN} on an imprinted prototype; "
            "weight norms may drift (further occurrences logged at DEBUG)"
        )
    else:
        logger.debug(f"Large learning rate {alpha:.3f} (occurrence {occurrence})")


def large_alpha_count() -> int:
    """Updates so far, process-wide, that used a learning rate above ALPHA_WARN"""
    with _large_alpha_lock:
        return _large_alpha_count


@dataclass(frozen=True)
class UpdateInputs:
    """Everything one update of one prototype needs.

    y is passed in rather than recomputed: in the spiking network it is a stored
    post-synaptic trace, so both execution paths share this type.
    """

    w: np.ndarray
    x: np.ndarray
    alpha: float
    r: int
    y: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        x = np.asarray(getattr(self.x, "values", self.x), dtype=np.float64)
        if w.shape != x.shape:
            raise DimensionMismatchError(
                f"Dimension mismatch: weights {w.shape} vs input {x.shape}"
            )
        if self.r not in (-1, 0, 1):
            raise ValueError(f"Third factor r must be -1, 0 or +1, got {self.r}")
        if self.r != 0 and not 0.0 < self.alpha <= ALPHA_MAX:
            raise ValueError(f"Learning rate must lie in (0, {ALPHA_MAX}], got {self.alpha}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)

        if config.DEBUG and abs(float(np.dot(w, x)) - self.y) > Y_TOLERANCE:
            raise ValueError(f"y={self.y} does not match dot(w, x)={float(np.dot(w, x))}")
        if self.r != 0 and self.alpha > ALPHA_WARN and np.any(w):
            _note_large_alpha(self.alpha)

    @classmethod
    def build(cls, w: np.ndarray, x: np.ndarray, alpha: float, r: int) -> "UpdateInputs":
        """Inputs with y computed from w and x"""
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(getattr(x, "values", x), dtype=np.float64)
        return cls(w, x, alpha, r, float(np.dot(w, x)))


def update_selfnorm(u: UpdateInputs) -> np.ndarray:
    """w + alpha*r*(x - w*y)"""
    if u.r == 0:
        return u.w.copy()
    return u.w + u.alpha * u.r * (u.x - u.w * u.y)


def update_explicit(u: UpdateInputs) -> np.ndarray:
    """(w + alpha*r*x) / ||w + alpha*r*x||

    Raises:
        DegenerateUpdateError: if the unnormalized update vanishes
    """
    if u.r == 0:
        return u.w.copy()
    raw = u.w + u.alpha * u.r * u.x
    norm = float(np.linalg.norm(raw))
    if norm < NORM_EPSILON:
        raise DegenerateUpdateError(
            "Explicit update cancels the weight vector exactly",
            {"alpha": u.alpha, "r": u.r},
        )
    return raw / norm


def norm_drift(u: UpdateInputs) -> float:
    """||update_selfnorm(u)||^2 - 1"""
    updated = update_selfnorm(u)
    return float(np.dot(updated, updated)) - 1.0


def expected_drift(alpha: float, r: int, y: float) -> float:
    """Closed form of norm_drift for unit w and x"""
    return alpha * alpha * r * r * (1.0 - y * y)


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in radians between two nonzero vectors.

    Uses 2*atan2(|a^ - b^|, |a^ + b^|), which stays accurate for tiny angles
    where acos of the cosine loses half its digits.
    """
    a_hat = np.asarray(a, dtype=np.float64) / float(np.linalg.norm(a))
    b_hat = np.asarray(b, dtype=np.float64) / float(np.linalg.norm(b))
    return 2.0 * math.atan2(float(np.linalg.norm(a_hat - b_hat)), float(np.linalg.norm(a_hat + b_hat)))
