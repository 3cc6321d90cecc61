"""
Reference CLP learner

A fixed-capacity store of prototype neurons. Each sample runs one cycle of
inference (thresholded argmax over cosine similarities), modulation (decide
reinforce / punish / allocate), and learning (update exactly one prototype and
its goodness-driven learning rate alpha = 1/g).
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from clp_rules import DegenerateUpdateError, UpdateInputs, update_explicit, update_selfnorm
from config import config
from core import ClpError, CostCounters, DimensionMismatchError, FeatureVector, is_unit
from schemas import CheckpointEnvelope

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 300
DEFAULT_THETA = 0.5
NORM_HEALTH_TOLERANCE = 0.05


class CapacityExhaustedError(ClpError):
    """Raised when a novel sample arrives and every prototype is allocated"""


class RuleMode(str, Enum):
    SELFNORM = "selfnorm"
    EXPLICIT = "explicit"


class ModKind(str, Enum):
    REINFORCE = "reinforce"
    PUNISH = "punish"
    ALLOCATE = "allocate"
    NONE = "none"


_KIND_SIGN = {ModKind.REINFORCE: 1, ModKind.PUNISH: -1, ModKind.ALLOCATE: 1, ModKind.NONE: 0}


@dataclass(frozen=True)
class ModEvent:
    """Third-factor decision for one sample"""

    kind: ModKind
    target: Optional[int]
    r: int

    def __post_init__(self):
        if self.r != _KIND_SIGN[self.kind]:
            raise ValueError(f"{self.kind.value} requires r={_KIND_SIGN[self.kind]}, got {self.r}")
        if (self.kind is ModKind.NONE) != (self.target is None):
            raise ValueError("Only the none event has no target")

    @classmethod
    def reinforce(cls, target: int) -> "ModEvent":
        return cls(ModKind.REINFORCE, target, 1)

    @classmethod
    def punish(cls, target: int) -> "ModEvent":
        return cls(ModKind.PUNISH, target, -1)

    @classmethod
    def allocate(cls, target: int) -> "ModEvent":
        return cls(ModKind.ALLOCATE, target, 1)

    @classmethod
    def none(cls) -> "ModEvent":
        return cls(ModKind.NONE, None, 0)


@dataclass(frozen=True)
class Prototype:
    """Snapshot of one prototype neuron"""

    weights: np.ndarray
    label: Optional[int]
    goodness: int
    alpha: float
    allocated: bool

    def to_payload(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "label": self.label,
            "goodness": self.goodness,
            "allocated": self.allocated,
        }


@dataclass(frozen=True)
class Prediction:
    winner: int
    similarity: float
    label: Optional[int]


@dataclass(frozen=True)
class StepOutcome:
    """What one learn_step saw and did; the prediction precedes the update"""

    predicted_label: Optional[int]
    winner: Optional[int]
    event: ModEvent
    correct: Optional[bool]
    similarity_gap: Optional[float] = None


def _values(x: Union[FeatureVector, np.ndarray]) -> np.ndarray:
    return x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)


class ClpModel:
    """Continually Learning Prototypes, floating-point reference"""

    def __init__(
        self,
        d: int,
        capacity: int = DEFAULT_CAPACITY,
        theta: float = DEFAULT_THETA,
        rule_mode: Union[RuleMode, str] = RuleMode.SELFNORM,
    ):
        if not 0.0 < theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        self.d = d
        self.capacity = capacity
        self.theta = theta
        self.rule_mode = RuleMode(rule_mode)
        self.weights = np.zeros((capacity, d), dtype=np.float64)
        self.labels: List[Optional[int]] = [None] * capacity
        self.goodness = np.ones(capacity, dtype=np.int64)
        self.alpha = np.ones(capacity, dtype=np.float64)
        self.allocated = np.zeros(capacity, dtype=bool)
        self.next_free = 0
        self.counters = CostCounters()
        self.degenerate_updates = 0

    def prototype(self, index: int) -> Prototype:
        return Prototype(
            weights=self.weights[index].copy(),
            label=self.labels[index],
            goodness=int(self.goodness[index]),
            alpha=float(self.alpha[index]),
            allocated=bool(self.allocated[index]),
        )

    def _check(self, x: np.ndarray) -> None:
        if x.shape != (self.d,):
            raise DimensionMismatchError(
                f"Dimension mismatch: model d={self.d}, sample {x.shape}",
            )
        if config.DEBUG and not is_unit(x):
            raise ValueError("CLP expects unit-normalized samples")

    def similarities(self, x: Union[FeatureVector, np.ndarray]) -> np.ndarray:
        """Dot products with every allocated prototype (index order)"""
        values = _values(x)
        self._check(values)
        return self.weights[: self.next_free] @ values

    def predict(self, x: Union[FeatureVector, np.ndarray]) -> Optional[Prediction]:
        """Thresholded argmax; None signals novelty. Ties go to the lowest index."""
        sims = self.similarities(x)
        if sims.size == 0:
            return None
        winner = int(np.argmax(sims))
        if sims[winner] <= self.theta:
            return None
        return Prediction(winner, float(sims[winner]), self.labels[winner])

    def predict_label(self, x: Union[FeatureVector, np.ndarray]) -> Optional[int]:
        """Forced-choice evaluation: argmax over labeled prototypes, no threshold"""
        sims = self.similarities(x)
        best_label, best_sim = None, -np.inf
        for index, sim in enumerate(sims):
            if self.labels[index] is not None and sim > best_sim:
                best_label, best_sim = self.labels[index], sim
        return best_label

    def similarity_gap(self, x: Union[FeatureVector, np.ndarray]) -> Optional[float]:
        """Top-1 minus top-2 similarity, None with fewer than two prototypes"""
        sims = self.similarities(x)
        if sims.size < 2:
            return None
        top = np.sort(sims)[-2:]
        return float(top[1] - top[0])

    def modulate(self, prediction: Optional[Prediction], true_label: Optional[int]) -> ModEvent:
        """Map a prediction and the supervisor's label to a third-factor event"""
        if prediction is None:
            if self.next_free >= self.capacity:
                raise CapacityExhaustedError(
                    f"All {self.capacity} prototypes are allocated",
                    {"capacity": self.capacity},
                )
            return ModEvent.allocate(self.next_free)
        # No label on either side means nothing to judge: reinforce (unsupervised mode)
        if true_label is None or prediction.label is None:
            return ModEvent.reinforce(prediction.winner)
        if prediction.label == true_label:
            return ModEvent.reinforce(prediction.winner)
        return ModEvent.punish(prediction.winner)

    def apply_event(
        self,
        x: Union[FeatureVector, np.ndarray],
        event: ModEvent,
        true_label: Optional[int],
    ) -> None:
        """Update the single prototype the event targets"""
        if event.kind is ModKind.NONE:
            return
        values = _values(x)
        k = event.target

        if event.kind is ModKind.ALLOCATE:
            if k != self.next_free:
                raise ValueError(f"Allocation must target next_free={self.next_free}, got {k}")
            # alpha = 1 on zero weights imprints x exactly, under either rule
            self.weights[k] = update_selfnorm(UpdateInputs(self.weights[k], values, 1.0, 1, 0.0))
            self.labels[k] = true_label
            self.goodness[k] = 1
            self.alpha[k] = 1.0
            self.allocated[k] = True
            self.next_free += 1
            self.counters.allocations += 1
        else:
            inputs = UpdateInputs.build(self.weights[k], values, float(self.alpha[k]), event.r)
            if self.rule_mode is RuleMode.SELFNORM:
                self.weights[k] = update_selfnorm(inputs)
            else:
                try:
                    self.weights[k] = update_explicit(inputs)
                except DegenerateUpdateError:
                    # punishing a prototype equal to x at alpha = 1; the row keeps its weights
                    self.degenerate_updates += 1
                    logger.warning(
                        f"Explicit update of prototype {k} cancels its weights; row left unchanged",
                        extra={"extra_fields": {"prototype": k, "label": self.labels[k], "true_label": true_label}},
                    )
            self.goodness[k] = max(1, int(self.goodness[k]) + event.r)
            self.alpha[k] = 1.0 / float(self.goodness[k])

        self.counters.weight_writes += self.d
        self.counters.rule_evaluations += 1

    def learn_step(
        self,
        x: Union[FeatureVector, np.ndarray],
        true_label: Optional[int] = None,
    ) -> StepOutcome:
        """predict -> modulate -> apply_event for one sample"""
        self.counters.samples += 1
        self.counters.macs += self.next_free * self.d
        gap = self.similarity_gap(x)
        prediction = self.predict(x)
        event = self.modulate(prediction, true_label)
        self.apply_event(x, event, true_label)

        if prediction is None:
            return StepOutcome(None, None, event, None, gap)
        correct = None
        if true_label is not None and prediction.label is not None:
            correct = prediction.label == true_label
        return StepOutcome(prediction.label, prediction.winner, event, correct, gap)

    def norm_deviation(self) -> float:
        """max | ||w|| - 1 | over allocated prototypes"""
        if self.next_free == 0:
            return 0.0
        norms = np.linalg.norm(self.weights[: self.next_free], axis=1)
        return float(np.max(np.abs(norms - 1.0)))

    def prototypes_per_class(self) -> Dict[Optional[int], int]:
        counts: Dict[Optional[int], int] = {}
        for label in self.labels[: self.next_free]:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def to_checkpoint(self) -> CheckpointEnvelope:
        payload = {
            "capacity": self.capacity,
            "d": self.d,
            "theta": self.theta,
            "rule_mode": self.rule_mode.value,
            "prototypes": [self.prototype(k).to_payload() for k in range(self.next_free)],
        }
        return CheckpointEnvelope(method="clp", payload=payload)

    @classmethod
    def from_checkpoint(cls, envelope: CheckpointEnvelope) -> "ClpModel":
        if envelope.method != "clp":
            raise ValueError(f"Checkpoint holds a {envelope.method!r} model, not clp")
        p = envelope.payload
        model = cls(p["d"], p["capacity"], p["theta"], p["rule_mode"])
        for k, proto in enumerate(p["prototypes"]):
            model.weights[k] = np.asarray(proto["weights"], dtype=np.float64)
            model.labels[k] = proto["label"]
            model.goodness[k] = proto["goodness"]
            model.alpha[k] = 1.0 / proto["goodness"]
            model.allocated[k] = True
        model.next_free = len(p["prototypes"])
        return model


def write_checkpoint(envelope: CheckpointEnvelope, path: Union[str, Path]) -> None:
    Path(path).write_text(envelope.model_dump_json(indent=1), encoding="utf-8")
    logger.info(f"Checkpoint written: {path}", extra={"extra_fields": {"method": envelope.method}})


def read_checkpoint(path: Union[str, Path]) -> CheckpointEnvelope:
    data: Dict[str, Any] = json.loads(Path(path).read_text(encoding="utf-8"))
    return CheckpointEnvelope.model_validate(data)
