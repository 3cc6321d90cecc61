"""
Benchmark harness: data, stream protocol, learner adapters, metrics and costs

A run streams every training frame of the protocol exactly once, in order,
to one learner. After each task the learner is evaluated (forced choice) on
the held-out suffix of every clip scheduled for the classes seen so far.
Wall-clock covers learn calls only; op and spike counters are the primary
cost metric and energy is not modeled.
"""

import csv
import logging
import struct
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from baselines import EmptyModelError, LinearHead, NcmModel, ReplayLearner, SldaModel
from clp_model import ClpModel
from core import ClpError, CostCounters, InvariantViolation, NORM_EPSILON, Rng, ZeroVectorError
from quantize import FixedPointFormat
from schemas import (
    CheckpointEnvelope, CostReport, DataConfig, EvalPoint, LearnerConfig, PredictionRecord,
    ProtocolConfig, RunMetrics,
)
from snn_sim import EventLog, SnnNetwork, SnnParams

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"CLPF"
FEATURE_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sHIIB")
AR_COEFFICIENT = 0.9

METRICS_COLUMNS = [
    "learner", "seed", "task", "seen_classes", "accuracy", "evaluated", "prototypes",
    "samples", "weight_writes", "macs", "spikes", "rule_evaluations", "allocations",
    "wall_clock_per_sample_us",
]
SUMMARY_COLUMNS = [
    "learner", "seeds", "final_accuracy_mean", "final_accuracy_std", "samples_mean",
    "weight_writes_mean", "macs_mean", "spikes_mean", "rule_evaluations_mean",
    "prototypes_mean", "novelty_events_mean", "feature_sparsity_mean",
    "wall_clock_per_sample_us_mean", "weight_writes_per_sample_mean", "macs_per_sample_mean",
    "spikes_per_sample_mean", "quantization_clamped_mean",
]
PREDICTION_COLUMNS = ["seed", "step", "frame_id", "true_label", "predicted_label", "similarity_gap"]


class InsufficientDataError(ClpError):
    """Raised when a source cannot supply the clips or frames a protocol needs"""


class FeatureFileError(ClpError):
    """Raised for malformed feature files"""


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class Clip:
    """Consecutive frames of one object; raw keeps the unnormalized features"""

    label: int
    index: int
    frames: np.ndarray
    raw: np.ndarray

    def frame_id(self, f: int) -> str:
        return f"{self.label}:{self.index}:{f}"

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class ClipSource:
    d: int
    frames_per_clip: int
    clips: Dict[int, List[Clip]] = field(default_factory=dict)

    @property
    def classes(self) -> List[int]:
        return sorted(self.clips)

    def add(self, clip: Clip) -> None:
        self.clips.setdefault(clip.label, []).append(clip)

    def iter_clips(self) -> Iterator[Clip]:
        for label in self.classes:
            yield from self.clips[label]


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale stand-in for video-frame features on the unit sphere"""

    d: int = 64
    classes: int = 10
    modes_per_class: int = 2
    mode_angle_deg: float = 165.0
    mode_spread: float = 0.3
    frame_jitter: float = 0.15
    frames_per_clip: int = 60
    clips_per_class: int = 4
    sparsity: float = 0.0
    seed: int = 0

    @classmethod
    def from_config(cls, data: DataConfig) -> "SyntheticSpec":
        return cls(
            d=data.d, classes=data.classes, modes_per_class=data.modes_per_class,
            mode_angle_deg=data.mode_angle_deg, mode_spread=data.mode_spread,
            frame_jitter=data.frame_jitter, frames_per_clip=data.frames_per_clip,
            clips_per_class=data.clips_per_class, sparsity=data.sparsity, seed=data.seed,
        )


def _class_modes(rng: Rng, spec: SyntheticSpec) -> np.ndarray:
    """First mode random; every extra mode sits mode_angle_deg away from it"""
    first = rng.unit_vectors(1, spec.d)[0]
    modes = [first]
    angle = np.deg2rad(spec.mode_angle_deg)
    for _ in range(spec.modes_per_class - 1):
        u = rng.unit_vectors(1, spec.d)[0]
        perp = u - float(u @ first) * first
        norm = float(np.linalg.norm(perp))
        if norm < NORM_EPSILON:
            raise ValueError("cannot build a second mode in one dimension")
        modes.append(np.cos(angle) * first + np.sin(angle) * perp / norm)
    return np.array(modes)


def gen_synthetic(spec: SyntheticSpec) -> ClipSource:
    """von Mises-Fisher-style clusters with temporally correlated clip frames.

    Clip i of a class is drawn around mode i mod M; its frames follow an AR(1)
    jitter around the clip center. Sparsity zeroes a random subset of
    coordinates of every frame before normalization.
    """
    if spec.modes_per_class > 1 and spec.d < 2:
        raise ValueError("several modes per class need d >= 2")
    source = ClipSource(spec.d, spec.frames_per_clip)
    n, d = spec.frames_per_clip, spec.d
    zeroed = min(int(round(spec.sparsity * d)), d - 1)
    innovation = np.sqrt(1.0 - AR_COEFFICIENT ** 2)

    for label in range(spec.classes):
        rng = Rng.derive(spec.seed, label)
        modes = _class_modes(rng, spec)
        for index in range(spec.clips_per_class):
            center = modes[index % spec.modes_per_class] + spec.mode_spread * rng.normal(d) / np.sqrt(d)
            center /= np.linalg.norm(center)
            noise = spec.frame_jitter * rng.normal(n * d).reshape(n, d) / np.sqrt(d)
            for f in range(1, n):
                noise[f] = AR_COEFFICIENT * noise[f - 1] + innovation * noise[f]
            raw = center + noise
            if zeroed:
                for f in range(n):
                    raw[f, rng.permutation(d)[:zeroed]] = 0.0
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            if np.any(norms < NORM_EPSILON):
                raise ZeroVectorError("Synthetic frame collapsed to zero", {"label": label, "clip": index})
            source.add(Clip(label, index, raw / norms, raw))

    logger.info(
        f"Generated {spec.classes * spec.clips_per_class} synthetic clips",
        extra={"extra_fields": {"d": d, "seed": spec.seed, "sparsity": spec.sparsity}},
    )
    return source


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<i4"), ("x", "<f4", (d,))])


def write_feature_file(path: Union[str, Path], source: ClipSource, normalized: bool = True) -> int:
    """Write every frame, clip by clip; returns the record count"""
    clips = list(source.iter_clips())
    count = sum(len(c) for c in clips)
    records = np.zeros(count, dtype=_record_dtype(source.d))
    row = 0
    for clip in clips:
        records["label"][row:row + len(clip)] = clip.label
        records["x"][row:row + len(clip)] = clip.frames if normalized else clip.raw
        row += len(clip)
    with open(path, "wb") as handle:
        handle.write(FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, source.d, count, int(normalized)))
        handle.write(records.tobytes())
    return count


@dataclass
class FeatureFileContents:
    d: int
    normalized: bool
    labels: np.ndarray
    features: np.ndarray


def read_feature_file(path: Union[str, Path]) -> FeatureFileContents:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FeatureFileError(f"Cannot read feature file {path}: {e}")
    if len(data) < FEATURE_HEADER.size:
        raise FeatureFileError(f"Feature file {path} is shorter than its header")
    magic, version, d, count, normalized = FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"Bad magic {magic!r} in {path}", {"expected": FEATURE_MAGIC.decode()})
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"Unsupported feature file version {version}", {"supported": FEATURE_VERSION})
    dtype = _record_dtype(d)
    body = data[FEATURE_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise FeatureFileError(
            f"Feature file {path} holds {len(body)} record bytes, header promises {count * dtype.itemsize}"
        )
    records = np.frombuffer(body, dtype=dtype, count=count)
    return FeatureFileContents(
        d=d,
        normalized=bool(normalized),
        labels=records["label"].astype(np.int64),
        features=records["x"].astype(np.float64),
    )


def load_clip_source(path: Union[str, Path], frames_per_clip: int) -> ClipSource:
    """Split a feature file into clips: contiguous same-label runs of frames_per_clip"""
    contents = read_feature_file(path)
    if contents.labels.size % frames_per_clip:
        raise FeatureFileError(
            f"{contents.labels.size} records do not split into clips of {frames_per_clip} frames"
        )
    if np.any(contents.labels < 0):
        raise FeatureFileError("Feature file contains negative labels")
    source = ClipSource(contents.d, frames_per_clip)
    for start in range(0, contents.labels.size, frames_per_clip):
        labels = contents.labels[start:start + frames_per_clip]
        if np.any(labels != labels[0]):
            raise FeatureFileError(f"Clip starting at record {start} mixes labels")
        raw = contents.features[start:start + frames_per_clip]
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms < NORM_EPSILON):
            raise FeatureFileError(f"Zero feature vector in clip starting at record {start}")
        label = int(labels[0])
        source.add(Clip(label, len(source.clips.get(label, [])), raw / norms, raw))
    return source


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClipRef:
    label: int
    index: int


@dataclass
class StreamProtocol:
    """Seeded class-incremental schedule; eval points follow every task"""

    mode: str
    shots: int
    seed: int
    class_order: List[int]
    tasks: List[List[ClipRef]]
    eval_frames: int
    unlabeled: FrozenSet[str] = frozenset()

    @property
    def clip_count(self) -> int:
        return sum(len(task) for task in self.tasks)

    def scheduled_clips(self, label: int) -> List[ClipRef]:
        return [ref for task in self.tasks for ref in task if ref.label == label]


def build_protocol(protocol: ProtocolConfig, source: ClipSource, seed: int) -> StreamProtocol:
    """Deterministic schedule for (protocol, source, seed)"""
    if protocol.eval_frames >= source.frames_per_clip:
        raise InsufficientDataError(
            f"eval_frames={protocol.eval_frames} leaves no training frames in a "
            f"{source.frames_per_clip}-frame clip"
        )
    needed = 1 if protocol.mode == "one-shot" else protocol.shots
    for label in source.classes:
        available = len(source.clips[label])
        if available < needed:
            raise InsufficientDataError(
                f"Class {label} has {available} clips, protocol needs {needed}",
                {"label": label, "available": available, "needed": needed},
            )
    if not source.classes:
        raise InsufficientDataError("Source holds no clips")

    order_rng = Rng.derive(seed, 1)
    classes = source.classes
    class_order = [classes[i] for i in order_rng.permutation(len(classes))]

    clip_rng = Rng.derive(seed, 2)
    chosen = {
        label: [int(i) for i in clip_rng.permutation(len(source.clips[label]))[:needed]]
        for label in classes
    }
    if protocol.mode == "one-shot":
        tasks = [[ClipRef(label, chosen[label][0])] for label in class_order]
    else:
        tasks = [[ClipRef(label, chosen[label][shot]) for label in class_order] for shot in range(needed)]

    unlabeled = set()
    if protocol.label_fraction < 1.0:
        mask_rng = Rng.derive(seed, 3)
        train_len = source.frames_per_clip - protocol.eval_frames
        for task in tasks:
            for ref in task:
                draws = mask_rng.uniform(train_len)
                clip = source.clips[ref.label][ref.index]
                unlabeled.update(clip.frame_id(f) for f in np.flatnonzero(draws >= protocol.label_fraction))

    return StreamProtocol(
        mode=protocol.mode, shots=needed, seed=seed, class_order=class_order, tasks=tasks,
        eval_frames=protocol.eval_frames, unlabeled=frozenset(unlabeled),
    )


# ---------------------------------------------------------------------------
# Learner adapters
# ---------------------------------------------------------------------------

class LearnerAdapter:
    """Uniform learn/predict surface over CLP, CLP-SNN and the baselines.

    learn returns the learn-time predicted label and top-2 similarity gap when
    the learner exposes them.
    """

    kind = "base"

    @property
    def counters(self) -> CostCounters:
        raise NotImplementedError

    def learn(self, x: np.ndarray, raw: np.ndarray, label: Optional[int]) -> Tuple[Optional[int], Optional[float]]:
        raise NotImplementedError

    def predict(self, x: np.ndarray, raw: np.ndarray) -> Optional[int]:
        raise NotImplementedError

    def prototype_count(self) -> int:
        return 0

    def prototypes_per_class(self) -> Dict[str, int]:
        return {}

    def norm_deviation(self) -> Optional[float]:
        return None

    def quantization_clamped(self) -> int:
        return 0

    def checkpoint(self) -> CheckpointEnvelope:
        raise NotImplementedError


def _label_counts(counts: Dict[Optional[int], int]) -> Dict[str, int]:
    return {("unlabeled" if k is None else str(k)): v for k, v in counts.items()}


class ClpAdapter(LearnerAdapter):
    kind = "clp"

    def __init__(self, model: ClpModel):
        self.model = model

    @property
    def counters(self) -> CostCounters:
        return self.model.counters

    def learn(self, x, raw, label):
        outcome = self.model.learn_step(x, label)
        return outcome.predicted_label, outcome.similarity_gap

    def predict(self, x, raw):
        return self.model.predict_label(x)

    def prototype_count(self) -> int:
        return self.model.next_free

    def prototypes_per_class(self) -> Dict[str, int]:
        return _label_counts(self.model.prototypes_per_class())

    def norm_deviation(self) -> Optional[float]:
        return self.model.norm_deviation()

    def checkpoint(self) -> CheckpointEnvelope:
        return self.model.to_checkpoint()


class SnnAdapter(LearnerAdapter):
    kind = "clp-snn"

    def __init__(self, net: SnnNetwork):
        self.net = net

    @property
    def counters(self) -> CostCounters:
        return self.net.counters

    def learn(self, x, raw, label):
        activations = np.sort(self.net.activations(x))
        gap = None
        if activations.size >= 2:
            gap = float(activations[-1] - activations[-2]) / self.net.y_max
        result = self.net.run_epoch(x, label)
        return result.predicted_label, gap

    def predict(self, x, raw):
        return self.net.predict_label(x)

    def prototype_count(self) -> int:
        return self.net.next_free

    def prototypes_per_class(self) -> Dict[str, int]:
        return _label_counts(self.net.prototypes_per_class())

    def norm_deviation(self) -> Optional[float]:
        return self.net.norm_deviation()

    def quantization_clamped(self) -> int:
        return self.net.quant_stats.clamped

    def checkpoint(self) -> CheckpointEnvelope:
        return self.net.to_checkpoint()


class BaselineAdapter(LearnerAdapter):
    """Supervised-only baselines; unlabeled frames are skipped"""

    def __init__(self, kind: str, model, uses_raw: bool = False):
        self.kind = kind
        self.model = model
        self.uses_raw = uses_raw

    @property
    def counters(self) -> CostCounters:
        return self.model.counters

    def learn(self, x, raw, label):
        if label is None:
            return None, None
        features = raw if self.uses_raw else x
        if isinstance(self.model, LinearHead):
            if self.kind == "perceptron":
                self.model.perceptron_step(features, label)
            else:
                self.model.finetune_step(features, label)
        elif isinstance(self.model, ReplayLearner):
            self.model.replay_step(features, label)
        else:
            self.model.update(features, label)
        return None, None

    def predict(self, x, raw):
        try:
            return self.model.predict(raw if self.uses_raw else x)
        except EmptyModelError:
            return None

    def prototype_count(self) -> int:
        if isinstance(self.model, (NcmModel, SldaModel)):
            return len(self.model.means)
        return 0

    def checkpoint(self) -> CheckpointEnvelope:
        if isinstance(self.model, LinearHead):
            return CheckpointEnvelope(method=self.kind, payload=self.model.checkpoint_payload())
        return self.model.to_checkpoint()


def snn_params(cfg: LearnerConfig) -> SnnParams:
    return SnnParams(
        capacity=cfg.capacity, theta=cfg.theta, t_epoch=cfg.t_epoch, t_wait=cfg.t_wait,
        latency_bins=cfg.latency_bins, per_timestep_learning=cfg.per_timestep_learning,
        fmt=FixedPointFormat(bits=cfg.quant_bits, scale=cfg.quant_scale, frac_bits=cfg.alpha_frac_bits),
    )


def build_learner(cfg: LearnerConfig, d: int, event_log: Optional[EventLog] = None) -> LearnerAdapter:
    if cfg.kind == "clp":
        return ClpAdapter(ClpModel(d, cfg.capacity, cfg.theta, cfg.rule_mode))
    if cfg.kind == "clp-snn":
        return SnnAdapter(SnnNetwork(d, snn_params(cfg), event_log))
    if cfg.kind == "ncm":
        return BaselineAdapter("ncm", NcmModel(d))
    if cfg.kind in ("slda", "slda-frozen"):
        return BaselineAdapter(cfg.kind, SldaModel(d, cfg.slda_shrinkage, frozen=cfg.kind == "slda-frozen"))
    if cfg.kind in ("perceptron", "finetune"):
        return BaselineAdapter(cfg.kind, LinearHead(d, cfg.step_size))
    if cfg.kind == "replay":
        return BaselineAdapter("replay", ReplayLearner(d, cfg.step_size, cfg.replay_capacity), uses_raw=True)
    raise ValueError(f"Unknown learner kind {cfg.kind!r}")


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

@contextmanager
def _paused(counters: CostCounters):
    """Evaluation work is not charged to the learner"""
    saved = counters.as_dict()
    try:
        yield
    finally:
        for key, value in saved.items():
            setattr(counters, key, value)


def _evaluate(learner: LearnerAdapter, protocol: StreamProtocol, source: ClipSource, seen: Sequence[int]) -> Tuple[float, int]:
    correct = total = 0
    with _paused(learner.counters):
        for label in seen:
            for ref in protocol.scheduled_clips(label):
                clip = source.clips[ref.label][ref.index]
                for f in range(len(clip) - protocol.eval_frames, len(clip)):
                    predicted = learner.predict(clip.frames[f], clip.raw[f])
                    correct += int(predicted is not None and predicted == label)
                    total += 1
    return (correct / total if total else 0.0), total


def run_experiment(
    learner: LearnerAdapter,
    protocol: StreamProtocol,
    source: ClipSource,
    record_predictions: bool = True,
) -> RunMetrics:
    """Stream every training frame once; evaluate seen classes after each task"""
    delivered = set()
    seen: List[int] = []
    eval_points: List[EvalPoint] = []
    predictions: List[PredictionRecord] = []
    wall = 0.0
    zeros = elements = 0
    step = 0

    for task_index, task in enumerate(protocol.tasks):
        for ref in task:
            clip = source.clips[ref.label][ref.index]
            if ref.label not in seen:
                seen.append(ref.label)
            for f in range(len(clip) - protocol.eval_frames):
                frame_id = clip.frame_id(f)
                if frame_id in delivered:
                    raise InvariantViolation(f"Frame {frame_id} delivered twice")
                delivered.add(frame_id)
                label = None if frame_id in protocol.unlabeled else ref.label
                x = clip.frames[f]
                zeros += int(np.count_nonzero(x == 0.0))
                elements += x.size

                started = time.perf_counter()
                predicted, gap = learner.learn(x, clip.raw[f], label)
                wall += time.perf_counter() - started

                if record_predictions:
                    predictions.append(PredictionRecord(
                        seed=protocol.seed, step=step, frame_id=frame_id, true_label=ref.label,
                        predicted_label=predicted, similarity_gap=gap,
                    ))
                step += 1

        accuracy, evaluated = _evaluate(learner, protocol, source, seen)
        eval_points.append(EvalPoint(
            task=task_index, seen_classes=len(seen), accuracy=accuracy, evaluated=evaluated,
            counters=learner.counters.as_dict(), prototypes=learner.prototype_count(),
        ))
        logger.debug(
            f"Task {task_index}: accuracy {accuracy:.3f} over {len(seen)} classes",
            extra={"extra_fields": {"learner": learner.kind, "seed": protocol.seed}},
        )

    counters = learner.counters.as_dict()
    clamped = learner.quantization_clamped()
    if clamped:
        logger.warning(
            f"{clamped} input components were clamped into the fixed-point range",
            extra={"extra_fields": {"learner": learner.kind, "seed": protocol.seed}},
        )
    return RunMetrics(
        learner=learner.kind,
        seed=protocol.seed,
        eval_points=eval_points,
        final_accuracy=eval_points[-1].accuracy if eval_points else 0.0,
        prototype_count=learner.prototype_count(),
        prototypes_per_class=learner.prototypes_per_class(),
        novelty_events=counters.get("allocations", 0),
        unlabeled_frames=len(protocol.unlabeled),
        wall_clock_per_sample_us=1e6 * wall / max(step, 1),
        counters=counters,
        feature_sparsity=zeros / elements if elements else 0.0,
        norm_deviation=learner.norm_deviation(),
        quantization_clamped=clamped,
        costs=count_costs(learner.counters, wall),
        predictions=predictions,
    )


def count_costs(counters: CostCounters, wall_clock_seconds: float = 0.0) -> CostReport:
    """Per-sample op/spike report; energy is not modeled"""
    n = max(counters.samples, 1)
    return CostReport(
        samples=counters.samples,
        weight_writes=counters.weight_writes,
        spikes=counters.spikes,
        macs=counters.macs,
        rule_evaluations=counters.rule_evaluations,
        allocations=counters.allocations,
        weight_writes_per_sample=counters.weight_writes / n,
        macs_per_sample=counters.macs / n,
        spikes_per_sample=counters.spikes / n,
        wall_clock_per_sample_us=1e6 * wall_clock_seconds / n,
    )


def compare_learning_modes(
    d: int,
    params: SnnParams,
    frames: Sequence[np.ndarray],
    labels: Sequence[Optional[int]],
) -> float:
    """Run epoch-mode and per-timestep-mode networks on one stream.

    Returns the rule-evaluation ratio, which must equal t_epoch exactly while
    the learned weights stay identical.

    Raises:
        InvariantViolation: if either property fails
    """
    nets = []
    for per_step in (False, True):
        mode_params = SnnParams(
            capacity=params.capacity, theta=params.theta, t_epoch=params.t_epoch, t_wait=params.t_wait,
            latency_bins=params.latency_bins, per_timestep_learning=per_step, fmt=params.fmt,
        )
        net = SnnNetwork(d, mode_params)
        for x, label in zip(frames, labels):
            net.run_epoch(x, label)
        nets.append(net)
    epoch_net, step_net = nets

    if not np.array_equal(epoch_net.weights, step_net.weights):
        raise InvariantViolation("Per-timestep learning changed the learned weights")
    ratio = step_net.counters.rule_evaluations / max(epoch_net.counters.rule_evaluations, 1)
    if ratio != params.t_epoch:
        raise InvariantViolation(
            f"Rule-evaluation ratio {ratio} differs from t_epoch={params.t_epoch}",
            {"epoch": epoch_net.counters.rule_evaluations, "per_timestep": step_net.counters.rule_evaluations},
        )
    return ratio


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def write_metrics_csv(path: Union[str, Path], runs: Sequence[RunMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for run in runs:
            for point in run.eval_points:
                writer.writerow({
                    "learner": run.learner, "seed": run.seed, "task": point.task,
                    "seen_classes": point.seen_classes, "accuracy": f"{point.accuracy:.6f}",
                    "evaluated": point.evaluated, "prototypes": point.prototypes,
                    **{k: point.counters.get(k, 0) for k in
                       ("samples", "weight_writes", "macs", "spikes", "rule_evaluations", "allocations")},
                    "wall_clock_per_sample_us": f"{run.wall_clock_per_sample_us:.3f}",
                })


def summarize(runs: Sequence[RunMetrics]) -> Dict[str, object]:
    """Mean / population stddev over seeds"""
    def mean(values):
        return float(np.mean(values)) if values else 0.0

    accuracies = [r.final_accuracy for r in runs]
    costed = [r for r in runs if r.costs is not None]
    return {
        "learner": runs[0].learner if runs else "",
        "seeds": " ".join(str(r.seed) for r in runs),
        "final_accuracy_mean": mean(accuracies),
        "final_accuracy_std": float(np.std(accuracies)) if accuracies else 0.0,
        "samples_mean": mean([r.counters.get("samples", 0) for r in runs]),
        "weight_writes_mean": mean([r.synapse_updates for r in runs]),
        "macs_mean": mean([r.counters.get("macs", 0) for r in runs]),
        "spikes_mean": mean([r.spike_count for r in runs]),
        "rule_evaluations_mean": mean([r.counters.get("rule_evaluations", 0) for r in runs]),
        "prototypes_mean": mean([r.prototype_count for r in runs]),
        "novelty_events_mean": mean([r.novelty_events for r in runs]),
        "feature_sparsity_mean": mean([r.feature_sparsity for r in runs]),
        "wall_clock_per_sample_us_mean": mean([r.wall_clock_per_sample_us for r in runs]),
        "weight_writes_per_sample_mean": mean([r.costs.weight_writes_per_sample for r in costed]),
        "macs_per_sample_mean": mean([r.costs.macs_per_sample for r in costed]),
        "spikes_per_sample_mean": mean([r.costs.spikes_per_sample for r in costed]),
        "quantization_clamped_mean": mean([r.quantization_clamped for r in runs]),
    }


def write_summary_csv(path: Union[str, Path], runs: Sequence[RunMetrics]) -> Dict[str, object]:
    row = summarize(runs)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerow(row)
    return row


def read_summary_csv(path: Union[str, Path]) -> Dict[str, str]:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise InsufficientDataError(f"Empty summary file {path}")
    return rows[0]


def _blank(value) -> str:
    return "" if value is None else str(value)


def write_predictions_csv(path: Union[str, Path], runs: Sequence[RunMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PREDICTION_COLUMNS)
        for run in runs:
            for p in run.predictions:
                gap = "" if p.similarity_gap is None else f"{p.similarity_gap:.9f}"
                writer.writerow([p.seed, p.step, p.frame_id, _blank(p.true_label), _blank(p.predicted_label), gap])


def read_predictions_csv(path: Union[str, Path]) -> List[PredictionRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [
            PredictionRecord(
                seed=int(row["seed"]), step=int(row["step"]), frame_id=row["frame_id"],
                true_label=int(row["true_label"]) if row["true_label"] else None,
                predicted_label=int(row["predicted_label"]) if row["predicted_label"] else None,
                similarity_gap=float(row["similarity_gap"]) if row["similarity_gap"] else None,
            )
            for row in csv.DictReader(handle)
        ]


ACCURACY_PLOT = '''"""Accuracy over seen classes versus task, one line per seed"""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

curves = defaultdict(list)
with open("metrics.csv", newline="") as handle:
    for row in csv.DictReader(handle):
        curves[(row["learner"], row["seed"])].append((int(row["task"]), float(row["accuracy"])))

for (learner, seed), points in sorted(curves.items()):
    tasks, accuracy = zip(*sorted(points))
    plt.plot(tasks, accuracy, marker="o", label=f"{learner} seed {seed}")
plt.xlabel("task")
plt.ylabel("accuracy over seen classes")
plt.ylim(0, 1)
plt.legend()
plt.savefig("accuracy.png", dpi=150)
'''

FRONTIER_PLOT = '''"""Final accuracy versus weight writes per sample (op counts stand in for energy)"""
import csv

import matplotlib.pyplot as plt

with open("comparison.csv", newline="") as handle:
    rows = list(csv.DictReader(handle))
for row in rows:
    x = float(row["weight_writes_per_sample"])
    y = float(row["final_accuracy"])
    plt.scatter(x, y)
    plt.annotate(row["run"], (x, y))
plt.xscale("symlog")
plt.xlabel("weight writes per sample")
plt.ylabel("final accuracy")
plt.savefig("frontier.png", dpi=150)
'''


def write_plot_script(path: Union[str, Path], kind: str = "accuracy") -> None:
    script = {"accuracy": ACCURACY_PLOT, "frontier": FRONTIER_PLOT}[kind]
    Path(path).write_text(script, encoding="utf-8")
