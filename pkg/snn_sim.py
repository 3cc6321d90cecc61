"""
Event-driven simulator of the CLP spiking network

Populations:
    Input      graded spikes carrying the INT7 feature codes (one per nonzero code)
    Prototype  one neuron per prototype; fires at a latency that shrinks as its
               activation grows, the first spike inhibits every prototype (WTA)
    Novelty    armed at injection, fires t_wait steps later unless a prototype spiked
    Modulator  relays supervisor feedback and novelty into one third-factor spike
    Supervisor host-side match/mismatch check of the predicted label

One sample (algorithmic step) spans t_epoch SNN timesteps. Pre/post traces are
overwritten at injection and held until the next one; the learning phase runs
once per epoch unless per-timestep learning is enabled.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from clp_model import CapacityExhaustedError, ModEvent
from core import CostCounters, DimensionMismatchError, FeatureVector
from quantize import (
    INT7, FixedPointFormat, QuantizationStats, alpha_for_goodness, fixed_update, quantize_vec,
)
from schemas import CheckpointEnvelope

logger = logging.getLogger(__name__)


class Population(str, Enum):
    INPUT = "input"
    PROTOTYPE = "prototype"
    NOVELTY = "novelty"
    MODULATOR = "modulator"
    SUPERVISOR = "supervisor"


class NoveltyState(str, Enum):
    IDLE = "idle"
    ARMED = "armed"
    FIRED = "fired"


@dataclass(frozen=True)
class SpikeEvent:
    time: int
    population: Population
    neuron: int
    payload: int

    def to_line(self, epoch: int) -> str:
        return f"{epoch}\t{self.time}\t{self.population.value}\t{self.neuron}\t{self.payload}"


@dataclass
class TraceBank:
    """Pre-synaptic x, post-synaptic y, goodness g and fixed-point alpha traces"""

    x_trace: np.ndarray
    y_trace: np.ndarray
    g_trace: np.ndarray
    alpha_trace: np.ndarray

    @classmethod
    def empty(cls, d: int, capacity: int, fmt: FixedPointFormat) -> "TraceBank":
        return cls(
            x_trace=np.zeros(d, dtype=np.int64),
            y_trace=np.zeros(capacity, dtype=np.int64),
            g_trace=np.zeros(capacity, dtype=np.int64),
            # every neuron starts with learning rate one
            alpha_trace=np.full(capacity, fmt.alpha_one, dtype=np.int64),
        )


@dataclass
class SnnParams:
    capacity: int = 300
    theta: float = 0.5
    t_epoch: int = 20
    t_wait: int = 16
    latency_bins: int = 16
    per_timestep_learning: bool = False
    fmt: FixedPointFormat = INT7

    def __post_init__(self):
        if not 1 <= self.t_wait < self.t_epoch:
            raise ValueError("require 1 <= t_wait < t_epoch")
        if not 1 <= self.latency_bins <= self.t_wait:
            raise ValueError("require 1 <= latency_bins <= t_wait")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


@dataclass
class EpochResult:
    winner: Optional[int]
    winner_spike_time: Optional[int]
    novelty_fired: bool
    event: ModEvent
    spike_count: int
    synapse_update_count: int
    predicted_label: Optional[int] = None
    rule_evaluations: int = 0
    input_spikes: int = 0


def latency_encode(y_int: int, theta_int: int, bins: int, y_max: int = INT7.activation_scale) -> Optional[int]:
    """Spike delay for an activation; None when at or below threshold.

    delay = bins - 1 - floor((y - theta - 1) * bins / (y_max - theta)), clamped
    to [0, bins - 1]. Larger activations never spike later.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if y_int <= theta_int:
        return None
    level = (int(y_int) - theta_int - 1) * bins // (y_max - theta_int)
    return min(max(bins - 1 - level, 0), bins - 1)


@dataclass
class EventLog:
    """Line-delimited spike/trace log: epoch, t, population, neuron, payload"""

    lines: List[str] = field(default_factory=list)

    def record(self, epoch: int, events: List[SpikeEvent]) -> None:
        self.lines.extend(e.to_line(epoch) for e in events)

    def record_traces(self, epoch: int, traces: TraceBank, allocated: int) -> None:
        for j in np.flatnonzero(traces.x_trace):
            self.lines.append(f"{epoch}\t0\ttrace_x\t{j}\t{int(traces.x_trace[j])}")
        for i in range(allocated):
            self.lines.append(f"{epoch}\t0\ttrace_y\t{i}\t{int(traces.y_trace[i])}")

    def write(self, path: Union[str, Path]) -> None:
        header = "# epoch\tt\tpopulation\tneuron\tpayload\n"
        Path(path).write_text(header + "\n".join(self.lines) + "\n", encoding="utf-8")


class SnnNetwork:
    """CLP spiking network with INT7 synapses"""

    def __init__(self, d: int, params: Optional[SnnParams] = None, event_log: Optional[EventLog] = None):
        self.d = d
        self.params = params or SnnParams()
        self.fmt = self.params.fmt
        p = self.params.capacity

        self.weights = np.zeros((p, d), dtype=np.int64)
        self.traces = TraceBank.empty(d, p, self.fmt)
        self.labels: List[Optional[int]] = [None] * p
        self.allocated = np.zeros(p, dtype=bool)
        self.next_free = 0

        self.y_max = self.fmt.activation_scale
        self.theta_int = int(np.rint(self.params.theta * self.y_max))

        self.inhibited = np.zeros(p, dtype=bool)
        self.delays = np.full(p, -1, dtype=np.int64)
        self.novelty_state = NoveltyState.IDLE
        self.novelty_deadline = 0
        self.pending_third_factor: Optional[Tuple[int, int]] = None
        self.allocation_label: Optional[int] = None
        self.epoch_clock = 0
        self.epoch_index = 0

        self.winner: Optional[int] = None
        self.winner_time: Optional[int] = None
        self.novelty_fired = False
        self.last_event = ModEvent.none()

        self.counters = CostCounters()
        self.quant_stats = QuantizationStats()
        self.event_log = event_log

    @property
    def bin_quantum(self) -> float:
        """Activation span covered by one latency bin"""
        return (self.y_max - self.theta_int) / self.params.latency_bins

    def inject_sample(self, x_q: np.ndarray) -> List[SpikeEvent]:
        """Overwrite traces with a new pattern and schedule prototype spikes"""
        x_q = np.asarray(x_q, dtype=np.int64)
        if x_q.shape != (self.d,):
            raise DimensionMismatchError(f"Dimension mismatch: network d={self.d}, input {x_q.shape}")
        if self.epoch_clock != 0:
            raise ValueError("inject_sample requires epoch_clock = 0")

        nf = self.next_free
        active = np.flatnonzero(x_q)
        self.traces.x_trace = x_q.copy()
        self.traces.y_trace = np.zeros_like(self.traces.y_trace)
        # event-driven: only nonzero inputs propagate
        self.traces.y_trace[:nf] = self.weights[:nf, active] @ x_q[active]

        self.novelty_state = NoveltyState.ARMED
        self.novelty_deadline = self.params.t_wait
        self.inhibited[:] = False
        self.delays[:] = -1
        for i in range(nf):
            delay = latency_encode(int(self.traces.y_trace[i]), self.theta_int,
                                   self.params.latency_bins, self.y_max)
            if delay is not None:
                self.delays[i] = delay

        self.pending_third_factor = None
        self.allocation_label = None
        self.winner = None
        self.winner_time = None
        self.novelty_fired = False
        self.last_event = ModEvent.none()

        self.counters.macs += len(active) * nf
        events = [SpikeEvent(0, Population.INPUT, int(j), int(x_q[j])) for j in active]
        self.counters.spikes += len(events)
        return events

    def step(self) -> List[SpikeEvent]:
        """Advance one SNN timestep"""
        if self.epoch_clock >= self.params.t_epoch:
            raise ValueError("epoch already complete")
        t = self.epoch_clock
        events: List[SpikeEvent] = []

        if self.winner is None:
            ready = np.flatnonzero((self.delays == t) & ~self.inhibited)
            if ready.size:
                # same-timestep ties: lowest index fires, lateral inhibition silences the rest
                k = int(ready[0])
                events.append(SpikeEvent(t, Population.PROTOTYPE, k, 1))
                self.inhibited[:] = True
                self.winner = k
                self.winner_time = t
                self.novelty_state = NoveltyState.IDLE

        if (self.winner is None and self.novelty_state is NoveltyState.ARMED
                and t >= self.novelty_deadline):
            events.append(SpikeEvent(t, Population.NOVELTY, 0, self.next_free))
            self.novelty_state = NoveltyState.FIRED
            self.novelty_fired = True
            if self.next_free < self.params.capacity:
                self.pending_third_factor = (self.next_free, 1)
                events.append(SpikeEvent(t, Population.MODULATOR, self.next_free, 1))

        self.epoch_clock += 1
        self.counters.spikes += len(events)
        return events

    def supervise(self, predicted: Optional[int], true_label: Optional[int]) -> List[SpikeEvent]:
        """Host-side match/mismatch; sets the pending third factor"""
        t = max(self.epoch_clock - 1, 0)
        if self.winner is not None:
            if true_label is None or predicted is None or predicted == true_label:
                r = 1
                self.last_event = ModEvent.reinforce(self.winner)
            else:
                r = -1
                self.last_event = ModEvent.punish(self.winner)
            self.pending_third_factor = (self.winner, r)
            events = [
                SpikeEvent(t, Population.SUPERVISOR, self.winner, r),
                SpikeEvent(t, Population.MODULATOR, self.winner, r),
            ]
            self.counters.spikes += len(events)
            return events

        if self.novelty_fired:
            if self.next_free >= self.params.capacity:
                raise CapacityExhaustedError(
                    f"All {self.params.capacity} prototype neurons are allocated",
                    {"capacity": self.params.capacity},
                )
            self.pending_third_factor = (self.next_free, 1)
            self.allocation_label = true_label
            self.last_event = ModEvent.allocate(self.next_free)
            return []

        raise ValueError("supervise called before a winner or novelty was resolved")

    def learning_phase(self) -> int:
        """Apply the pending third factor to one row; returns synapses updated"""
        self.counters.rule_evaluations += 1
        if self.pending_third_factor is None:
            return 0
        i, r = self.pending_third_factor
        self.pending_third_factor = None
        tr = self.traces

        if not self.allocated[i]:
            if i != self.next_free:
                raise ValueError(f"Allocation must target next_free={self.next_free}, got {i}")
            # zero row, alpha = 1: imprints x_trace exactly
            self.weights[i] = fixed_update(self.weights[i], tr.x_trace, 0, tr.alpha_trace[i], 1, self.fmt)
            self.labels[i] = self.allocation_label
            self.allocated[i] = True
            tr.g_trace[i] = 1
            self.next_free += 1
            self.counters.allocations += 1
            logger.debug(f"Allocated prototype neuron {i} (label={self.allocation_label})")
        else:
            self.weights[i] = fixed_update(
                self.weights[i], tr.x_trace, int(tr.y_trace[i]), int(tr.alpha_trace[i]), r, self.fmt
            )
            tr.g_trace[i] = max(1, int(tr.g_trace[i]) + r)
        tr.alpha_trace[i] = alpha_for_goodness(int(tr.g_trace[i]), self.fmt)

        self.counters.weight_writes += self.d
        return self.d

    def run_epoch(self, x: Union[FeatureVector, np.ndarray], true_label: Optional[int] = None) -> EpochResult:
        """inject -> t_epoch steps (supervising on resolution) -> learning"""
        x_q = quantize_vec(x, self.fmt, self.quant_stats)
        self.epoch_clock = 0
        evaluations_before = self.counters.rule_evaluations
        spikes_before = self.counters.spikes

        events = self.inject_sample(x_q)
        input_spikes = len(events)
        if self.event_log is not None:
            self.event_log.record_traces(self.epoch_index, self.traces, self.next_free)

        synapses = 0
        predicted: Optional[int] = None
        resolved = False
        for _ in range(self.params.t_epoch):
            step_events = self.step()
            events.extend(step_events)
            if not resolved and (self.winner is not None or self.novelty_fired):
                resolved = True
                predicted = self.labels[self.winner] if self.winner is not None else None
                events.extend(self.supervise(predicted, true_label))
            if self.params.per_timestep_learning:
                synapses += self.learning_phase()
        if not self.params.per_timestep_learning:
            synapses += self.learning_phase()

        if self.event_log is not None:
            self.event_log.record(self.epoch_index, events)
        self.epoch_index += 1
        self.counters.samples += 1

        return EpochResult(
            winner=self.winner,
            winner_spike_time=self.winner_time,
            novelty_fired=self.novelty_fired,
            event=self.last_event,
            spike_count=self.counters.spikes - spikes_before,
            synapse_update_count=synapses,
            predicted_label=predicted,
            rule_evaluations=self.counters.rule_evaluations - evaluations_before,
            input_spikes=input_spikes,
        )

    def activations(self, x: Union[FeatureVector, np.ndarray]) -> np.ndarray:
        """Integer activations of allocated prototypes; does not touch traces"""
        x_q = quantize_vec(x, self.fmt)
        return self.weights[: self.next_free] @ x_q

    def predict_label(self, x: Union[FeatureVector, np.ndarray]) -> Optional[int]:
        """Forced-choice evaluation: argmax activation over labeled prototypes"""
        best_label, best_y = None, None
        for i, y in enumerate(self.activations(x)):
            if self.labels[i] is not None and (best_y is None or y > best_y):
                best_label, best_y = self.labels[i], y
        return best_label

    def norm_deviation(self) -> float:
        """max | ||w||/Q - 1 | over allocated rows"""
        if self.next_free == 0:
            return 0.0
        norms = np.linalg.norm(self.weights[: self.next_free].astype(np.float64), axis=1)
        return float(np.max(np.abs(norms / self.fmt.max_code - 1.0)))

    def prototypes_per_class(self):
        counts = {}
        for label in self.labels[: self.next_free]:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def to_checkpoint(self) -> CheckpointEnvelope:
        nf = self.next_free
        payload = {
            "capacity": self.params.capacity,
            "d": self.d,
            "theta": self.params.theta,
            "theta_int": self.theta_int,
            "t_epoch": self.params.t_epoch,
            "t_wait": self.params.t_wait,
            "latency_bins": self.params.latency_bins,
            "format": self.fmt.to_metadata(),
            "prototypes": [
                {
                    "weights": self.weights[i].tolist(),
                    "label": self.labels[i],
                    "goodness": int(self.traces.g_trace[i]),
                    "allocated": True,
                }
                for i in range(nf)
            ],
        }
        return CheckpointEnvelope(method="clp-snn", payload=payload)
