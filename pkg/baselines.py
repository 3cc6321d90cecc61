"""
Streaming baseline learners

NCM        one running-average prototype per class, nearest mean wins
SLDA       class means plus a shared within-class covariance, updated one
           sample at a time; a frozen variant never touches the covariance
Perceptron multiclass mistake-driven linear head
Finetune   online softmax layer, one SGD step per sample (no forgetting protection)
Replay     finetune step on the current sample plus a per-class buffer

Every learner exposes update/predict, a CostCounters instance and the shared
checkpoint envelope. Replay is the only learner fed raw (unnormalized) features.
"""

import logging
from collections import deque
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import ClpError, CostCounters, DimensionMismatchError, FeatureVector, InvariantViolation
from schemas import CheckpointEnvelope

logger = logging.getLogger(__name__)

DEFAULT_STEP_SIZE = 0.01
DEFAULT_REPLAY_CAPACITY = 20
SHRINKAGE_FACTOR = 1e-4
SHRINKAGE_FLOOR = 1e-4
CONDITION_LIMIT = 1e10


class EmptyModelError(ClpError):
    """Raised when a model is asked to predict before it has seen any class"""


class SingularCovarianceError(ClpError):
    """Raised when the shrunk covariance cannot be inverted reliably"""


def _values(x: Union[FeatureVector, np.ndarray], d: int) -> np.ndarray:
    arr = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if arr.shape != (d,):
        raise DimensionMismatchError(f"Dimension mismatch: model d={d}, sample {arr.shape}")
    return arr


def _argbest(labels: Sequence[int], scores: np.ndarray, lowest: bool = False) -> int:
    """Label with the best score; ties go to the lowest class id"""
    best_label, best_score = None, None
    for label, score in sorted(zip(labels, scores.tolist())):
        better = best_score is None or (score < best_score if lowest else score > best_score)
        if better:
            best_label, best_score = label, score
    return int(best_label)


class NcmModel:
    """Nearest Class Mean"""

    method = "ncm"

    def __init__(self, d: int):
        self.d = d
        self.means: Dict[int, np.ndarray] = {}
        self.counts: Dict[int, int] = {}
        self.counters = CostCounters()

    def update(self, x: Union[FeatureVector, np.ndarray], label: int) -> None:
        values = _values(x, self.d)
        c = self.counts.get(label, 0)
        if c == 0:
            self.means[label] = values.copy()
        else:
            self.means[label] = self.means[label] + (values - self.means[label]) / (c + 1)
        self.counts[label] = c + 1
        self.counters.samples += 1
        self.counters.weight_writes += self.d

    def predict(self, x: Union[FeatureVector, np.ndarray]) -> int:
        """argmin Euclidean distance to a class mean"""
        if not self.means:
            raise EmptyModelError("NCM has not seen any class")
        values = _values(x, self.d)
        labels = list(self.means)
        distances = np.array([float(np.sum((values - self.means[k]) ** 2)) for k in labels])
        self.counters.macs += len(labels) * self.d
        return _argbest(labels, distances, lowest=True)

    def to_checkpoint(self) -> CheckpointEnvelope:
        return CheckpointEnvelope(method=self.method, payload={
            "d": self.d,
            "classes": [
                {"label": k, "count": self.counts[k], "mean": self.means[k].tolist()}
                for k in sorted(self.means)
            ],
        })

    @classmethod
    def from_checkpoint(cls, envelope: CheckpointEnvelope) -> "NcmModel":
        model = cls(envelope.payload["d"])
        for entry in envelope.payload["classes"]:
            model.means[entry["label"]] = np.asarray(entry["mean"], dtype=np.float64)
            model.counts[entry["label"]] = entry["count"]
        return model


class SldaModel:
    """Streaming LDA with a shared, shrunk covariance and a cached precision.

    The scatter matrix is accumulated per class with Welford's recurrence, so
    scatter / total equals the two-pass pooled within-class covariance.
    """

    def __init__(
        self,
        d: int,
        shrinkage: Optional[float] = None,
        frozen: bool = False,
        init_covariance: Optional[np.ndarray] = None,
    ):
        self.d = d
        self.shrinkage = shrinkage
        self.frozen = frozen
        self.means: Dict[int, np.ndarray] = {}
        self.counts: Dict[int, int] = {}
        self.total = 0
        self.scatter = np.zeros((d, d), dtype=np.float64)
        self.init_covariance = (
            np.zeros((d, d), dtype=np.float64) if init_covariance is None
            else np.asarray(init_covariance, dtype=np.float64).copy()
        )
        self.precision: Optional[np.ndarray] = None
        self.cache_dirty = True
        self.counters = CostCounters()

    @property
    def method(self) -> str:
        return "slda-frozen" if self.frozen else "slda"

    @property
    def covariance(self) -> np.ndarray:
        if self.frozen or self.total == 0:
            return self.init_covariance
        return self.scatter / self.total

    def effective_shrinkage(self) -> float:
        """Configured epsilon, else 1e-4 * trace / d (floored for an all-zero covariance)"""
        if self.shrinkage is not None:
            return float(self.shrinkage)
        trace = float(np.trace(self.covariance))
        return SHRINKAGE_FACTOR * trace / self.d if trace > 0 else SHRINKAGE_FLOOR

    def shrunk_covariance(self) -> np.ndarray:
        return self.covariance + self.effective_shrinkage() * np.eye(self.d)

    def update(self, x: Union[FeatureVector, np.ndarray], label: int) -> None:
        values = _values(x, self.d)
        c = self.counts.get(label, 0)
        if c == 0:
            self.means[label] = values.copy()
        else:
            delta = values - self.means[label]
            if not self.frozen:
                self.scatter += (c / (c + 1)) * np.outer(delta, delta)
                self.counters.weight_writes += self.d * self.d
            self.means[label] = self.means[label] + delta / (c + 1)
        self.counts[label] = c + 1
        self.total += 1
        self.counters.samples += 1
        self.counters.weight_writes += self.d
        if not self.frozen:
            self.cache_dirty = True

    def _compute_precision(self) -> np.ndarray:
        shrunk = self.shrunk_covariance()
        condition = float(np.linalg.cond(shrunk))
        if not np.isfinite(condition) or condition > CONDITION_LIMIT:
            raise SingularCovarianceError(
                "Shrunk covariance is numerically singular",
                {"condition": condition, "shrinkage": self.effective_shrinkage()},
            )
        self.counters.macs += self.d ** 3
        return np.linalg.inv(shrunk)

    def refresh(self) -> np.ndarray:
        if self.cache_dirty or self.precision is None:
            self.precision = self._compute_precision()
            self.cache_dirty = False
        return self.precision

    def scores(self, x: Union[FeatureVector, np.ndarray], use_cache: bool = True) -> Tuple[List[int], np.ndarray]:
        values = _values(x, self.d)
        precision = self.refresh() if use_cache else self._compute_precision()
        labels = list(self.means)
        out = np.empty(len(labels))
        for i, k in enumerate(labels):
            weighted = precision @ self.means[k]
            out[i] = float(weighted @ values) - 0.5 * float(self.means[k] @ weighted)
        self.counters.macs += len(labels) * self.d * (self.d + 2)
        return labels, out

    def predict(self, x: Union[FeatureVector, np.ndarray], use_cache: bool = True) -> int:
        if not self.means:
            raise EmptyModelError("SLDA has not seen any class")
        if len(self.means) == 1:
            return next(iter(self.means))
        labels, scores = self.scores(x, use_cache)
        return _argbest(labels, scores)

    def to_checkpoint(self) -> CheckpointEnvelope:
        return CheckpointEnvelope(method=self.method, payload={
            "d": self.d,
            "frozen": self.frozen,
            "shrinkage": self.shrinkage,
            "effective_shrinkage": self.effective_shrinkage(),
            "total": self.total,
            "scatter": self.scatter.tolist(),
            "init_covariance": self.init_covariance.tolist(),
            "classes": [
                {"label": k, "count": self.counts[k], "mean": self.means[k].tolist()}
                for k in sorted(self.means)
            ],
        })

    @classmethod
    def from_checkpoint(cls, envelope: CheckpointEnvelope) -> "SldaModel":
        p = envelope.payload
        model = cls(p["d"], p["shrinkage"], p["frozen"], np.asarray(p["init_covariance"]))
        model.scatter = np.asarray(p["scatter"], dtype=np.float64)
        model.total = p["total"]
        for entry in p["classes"]:
            model.means[entry["label"]] = np.asarray(entry["mean"], dtype=np.float64)
            model.counts[entry["label"]] = entry["count"]
        return model


class LinearHead:
    """Linear classifier over the classes seen so far (rows grow on demand)"""

    def __init__(self, d: int, step_size: float = DEFAULT_STEP_SIZE):
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        self.d = d
        self.step_size = step_size
        self.classes: List[int] = []
        self.weights = np.zeros((0, d), dtype=np.float64)
        self.bias = np.zeros(0, dtype=np.float64)
        self.mistakes = 0
        self.counters = CostCounters()

    def row(self, label: int) -> int:
        if label not in self.classes:
            self.classes.append(label)
            self.weights = np.vstack([self.weights, np.zeros((1, self.d))])
            self.bias = np.append(self.bias, 0.0)
        return self.classes.index(label)

    def logits(self, x: np.ndarray) -> np.ndarray:
        self.counters.macs += len(self.classes) * self.d
        return self.weights @ x + self.bias

    def predict(self, x: Union[FeatureVector, np.ndarray]) -> int:
        if not self.classes:
            raise EmptyModelError("Linear head has not seen any class")
        return _argbest(self.classes, self.logits(_values(x, self.d)))

    def _check_finite(self) -> None:
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise InvariantViolation("Linear head weights are no longer finite")

    def perceptron_step(self, x: Union[FeatureVector, np.ndarray], label: int) -> bool:
        """Mistake-driven update; returns True when a mistake was corrected"""
        values = _values(x, self.d)
        true_row = self.row(label)
        predicted = self.predict(values)
        self.counters.samples += 1
        if predicted == label:
            return False
        self.weights[true_row] += values
        self.weights[self.classes.index(predicted)] -= values
        self.mistakes += 1
        self.counters.weight_writes += 2 * self.d
        self._check_finite()
        return True

    def loss(self, X: np.ndarray, labels: Sequence[int]) -> float:
        """Mean softmax cross-entropy over the seen classes"""
        X = np.atleast_2d(X)
        logits = X @ self.weights.T + self.bias
        logits = logits - logits.max(axis=1, keepdims=True)
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        rows = [self.classes.index(k) for k in labels]
        return float(-np.mean(log_probs[np.arange(len(rows)), rows]))

    def gradient(self, X: np.ndarray, labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """d loss / d (weights, bias)"""
        X = np.atleast_2d(X)
        logits = X @ self.weights.T + self.bias
        logits = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        rows = [self.classes.index(k) for k in labels]
        probs[np.arange(len(rows)), rows] -= 1.0
        probs /= len(rows)
        return probs.T @ X, probs.sum(axis=0)

    def sgd_step(self, X: np.ndarray, labels: Sequence[int]) -> None:
        for label in labels:
            self.row(label)
        grad_w, grad_b = self.gradient(X, labels)
        self.weights -= self.step_size * grad_w
        self.bias -= self.step_size * grad_b
        n = np.atleast_2d(X).shape[0]
        self.counters.macs += 2 * n * len(self.classes) * self.d
        self.counters.weight_writes += len(self.classes) * (self.d + 1)
        self._check_finite()

    def finetune_step(self, x: Union[FeatureVector, np.ndarray], label: int) -> None:
        self.sgd_step(_values(x, self.d)[None, :], [label])
        self.counters.samples += 1

    def checkpoint_payload(self) -> Dict:
        return {
            "d": self.d,
            "step_size": self.step_size,
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    def load_payload(self, payload: Dict) -> None:
        self.classes = list(payload["classes"])
        self.weights = np.asarray(payload["weights"], dtype=np.float64).reshape(len(self.classes), self.d)
        self.bias = np.asarray(payload["bias"], dtype=np.float64)


class ReplayBuffer:
    """Per-class ring buffers, oldest evicted first"""

    def __init__(self, capacity: int = DEFAULT_REPLAY_CAPACITY):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self.slots: Dict[int, Deque[np.ndarray]] = {}

    def add(self, x: np.ndarray, label: int) -> None:
        self.slots.setdefault(label, deque(maxlen=self.capacity)).append(np.array(x, dtype=np.float64))

    def occupancy(self, label: int) -> int:
        return len(self.slots.get(label, ()))

    def __len__(self) -> int:
        return sum(len(s) for s in self.slots.values())

    def samples(self) -> Tuple[List[np.ndarray], List[int]]:
        xs: List[np.ndarray] = []
        labels: List[int] = []
        for label in sorted(self.slots):
            for x in self.slots[label]:
                xs.append(x)
                labels.append(label)
        return xs, labels


class ReplayLearner:
    """Fine-tuning with per-class experience replay"""

    method = "replay"

    def __init__(self, d: int, step_size: float = DEFAULT_STEP_SIZE, capacity: int = DEFAULT_REPLAY_CAPACITY):
        self.head = LinearHead(d, step_size)
        self.buffer = ReplayBuffer(capacity)
        self.d = d

    @property
    def counters(self) -> CostCounters:
        return self.head.counters

    def replay_step(self, x: Union[FeatureVector, np.ndarray], label: int) -> None:
        values = _values(x, self.d)
        stored, stored_labels = self.buffer.samples()
        batch = np.vstack([values] + stored) if stored else values[None, :]
        self.head.sgd_step(batch, [label] + stored_labels)
        self.head.counters.samples += 1
        self.buffer.add(values, label)

    def predict(self, x: Union[FeatureVector, np.ndarray]) -> int:
        return self.head.predict(x)

    def to_checkpoint(self) -> CheckpointEnvelope:
        stored, stored_labels = self.buffer.samples()
        payload = self.head.checkpoint_payload()
        payload["replay_capacity"] = self.buffer.capacity
        payload["buffer"] = [{"label": k, "x": x.tolist()} for x, k in zip(stored, stored_labels)]
        return CheckpointEnvelope(method=self.method, payload=payload)


def ncm_update(m: NcmModel, x, label: int) -> NcmModel:
    m.update(x, label)
    return m


def ncm_predict(m: NcmModel, x) -> int:
    return m.predict(x)


def slda_update(m: SldaModel, x, label: int) -> SldaModel:
    m.update(x, label)
    return m


def slda_predict(m: SldaModel, x) -> int:
    return m.predict(x)


def perceptron_step(m: LinearHead, x, label: int) -> LinearHead:
    m.perceptron_step(x, label)
    return m


def finetune_step(m: LinearHead, x, label: int) -> LinearHead:
    m.finetune_step(x, label)
    return m


def replay_step(m: ReplayLearner, x, label: int) -> ReplayLearner:
    m.replay_step(x, label)
    return m
