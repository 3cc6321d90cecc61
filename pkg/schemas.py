"""
Pydantic schemas for the CLP engine

This module defines the experiment configuration sections, the checkpoint
envelope shared by every learner, and their validation rules.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

LEARNER_KINDS = (
    "clp", "clp-snn", "ncm", "slda", "slda-frozen", "perceptron", "finetune", "replay",
)

LearnerKind = Literal[
    "clp", "clp-snn", "ncm", "slda", "slda-frozen", "perceptron", "finetune", "replay",
]

CHECKPOINT_FORMAT = "clp-checkpoint"
CHECKPOINT_VERSION = 1


class LearnerConfig(BaseModel):
    """Learner kind and its hyperparameters"""
    kind: LearnerKind = Field(..., description="Learner to run")
    theta: float = Field(0.5, description="Similarity threshold for novelty detection")
    capacity: int = Field(300, description="Number of prototype neurons P")
    rule_mode: Literal["selfnorm", "explicit"] = Field("selfnorm", description="CLP weight update rule")
    t_epoch: int = Field(20, description="SNN timesteps per sample")
    t_wait: int = Field(16, description="Novelty detector window in timesteps")
    latency_bins: int = Field(16, description="Number of spike-latency levels")
    per_timestep_learning: bool = Field(False, description="Run the learning phase every timestep")
    quant_bits: int = Field(7, description="Signed weight/activation bit width")
    quant_scale: float = Field(1.0, description="Real value of the maximum code")
    alpha_frac_bits: int = Field(12, description="Fractional bits of the fixed-point learning rate")
    slda_shrinkage: Optional[float] = Field(None, description="Absolute SLDA shrinkage; default 1e-4*trace/d")
    step_size: float = Field(0.01, description="Fine-tune / replay SGD step size")
    replay_capacity: int = Field(20, description="Replay samples stored per class")

    @field_validator("theta")
    def validate_theta(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        return v

    @field_validator("capacity", "replay_capacity")
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("capacity values must be >= 1")
        return v

    @field_validator("quant_bits")
    def validate_bits(cls, v):
        if v != 7:
            raise ValueError("only the INT7 format is supported")
        return v

    @field_validator("step_size")
    def validate_step_size(cls, v):
        if v <= 0:
            raise ValueError("step_size must be positive")
        return v

    @model_validator(mode="after")
    def validate_timing(self):
        if not 1 <= self.t_wait < self.t_epoch:
            raise ValueError("require 1 <= t_wait < t_epoch")
        if not 1 <= self.latency_bins <= self.t_wait:
            raise ValueError("require 1 <= latency_bins <= t_wait")
        return self


class DataConfig(BaseModel):
    """Where the stream comes from: a synthetic generator or a feature file"""
    source: Literal["synthetic", "file"] = Field("synthetic", description="Data source kind")
    path: Optional[str] = Field(None, description="Feature file path when source = file")
    d: int = Field(64, description="Feature dimension")
    classes: int = Field(10, description="Number of classes")
    modes_per_class: int = Field(2, description="Clusters per class")
    mode_angle_deg: float = Field(165.0, description="Angle between a class's extra modes and its first mode")
    mode_spread: float = Field(0.3, description="Clip-center spread around its mode")
    frame_jitter: float = Field(0.15, description="Frame-level jitter around the clip center")
    frames_per_clip: int = Field(60, description="Frames per clip")
    clips_per_class: int = Field(4, description="Clips generated per class")
    sparsity: float = Field(0.0, description="Fraction of coordinates zeroed before normalization")
    seed: int = Field(0, description="Generator seed")

    @field_validator("sparsity")
    def validate_sparsity(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        return v

    @field_validator("d", "classes", "modes_per_class", "frames_per_clip", "clips_per_class")
    def validate_counts(cls, v):
        if v < 1:
            raise ValueError("counts must be >= 1")
        return v

    @model_validator(mode="after")
    def validate_path(self):
        if self.source == "file" and not (self.path and self.path.strip()):
            raise ValueError("data.path is required when data.source = file")
        return self


class ProtocolConfig(BaseModel):
    """Stream schedule and evaluation settings"""
    mode: Literal["one-shot", "multi-shot"] = Field("one-shot", description="Protocol mode")
    shots: int = Field(1, description="Shots for multi-shot mode")
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], description="Class-order seeds")
    eval_frames: int = Field(10, description="Held-out suffix frames per clip")
    label_fraction: float = Field(1.0, description="Fraction of training frames delivered with labels")

    @field_validator("seeds", mode="before")
    def split_seeds(cls, v):
        if isinstance(v, str):
            v = [int(s) for s in v.replace(" ", "").split(",") if s]
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @field_validator("shots", "eval_frames")
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("shots and eval_frames must be >= 1")
        return v

    @field_validator("label_fraction")
    def validate_fraction(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("label_fraction must lie in [0, 1]")
        return v


class OutputConfig(BaseModel):
    """Run artifacts"""
    directory: str = Field("runs/latest", description="Output directory")
    checkpoint: bool = Field(False, description="Write final model checkpoints")
    event_log: bool = Field(False, description="Write SNN event logs (clp-snn only)")
    workers: Optional[int] = Field(None, description="Threads used to fan out seeds")


class ExperimentConfig(BaseModel):
    """A complete, reproducible experiment description"""
    learner: LearnerConfig
    data: DataConfig = Field(default_factory=DataConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


class CheckpointEnvelope(BaseModel):
    """Version-tagged checkpoint shared by CLP and the baselines"""
    format: str = Field(CHECKPOINT_FORMAT, description="Envelope tag")
    version: int = Field(CHECKPOINT_VERSION, description="Envelope version")
    method: str = Field(..., description="Learner kind that wrote the payload")
    payload: Dict[str, Any] = Field(..., description="Method-specific state")

    @field_validator("format")
    def validate_format(cls, v):
        if v != CHECKPOINT_FORMAT:
            raise ValueError(f"not a checkpoint envelope: {v!r}")
        return v

    @field_validator("version")
    def validate_version(cls, v):
        if v != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {v}")
        return v


class EvalPoint(BaseModel):
    """Accuracy over seen classes after one task, with counter snapshots"""
    task: int = Field(..., description="Zero-based task index")
    seen_classes: int = Field(..., description="Classes presented so far")
    accuracy: float = Field(..., description="Forced-choice accuracy over held-out frames of seen classes")
    evaluated: int = Field(..., description="Held-out frames evaluated")
    counters: Dict[str, int] = Field(default_factory=dict, description="Cost counters at this point")
    prototypes: int = Field(0, description="Allocated prototypes (or stored class means)")

    @field_validator("accuracy")
    def validate_accuracy(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        return v


class PredictionRecord(BaseModel):
    """Learn-time prediction for one delivered frame"""
    seed: int
    step: int
    frame_id: str
    true_label: Optional[int] = None
    predicted_label: Optional[int] = None
    similarity_gap: Optional[float] = None


class CostReport(BaseModel):
    """Operation counts standing in for energy, plus informational wall-clock"""
    samples: int
    weight_writes: int
    spikes: int
    macs: int
    rule_evaluations: int
    allocations: int
    weight_writes_per_sample: float
    macs_per_sample: float
    spikes_per_sample: float
    wall_clock_per_sample_us: float
    energy_modeled: bool = Field(False, description="Always false: op and spike counts stand in for energy")


class RunMetrics(BaseModel):
    """Everything one (learner, seed) run measured"""
    learner: str
    seed: int
    eval_points: List[EvalPoint] = Field(default_factory=list)
    final_accuracy: float = 0.0
    prototype_count: int = 0
    prototypes_per_class: Dict[str, int] = Field(default_factory=dict)
    novelty_events: int = 0
    unlabeled_frames: int = 0
    wall_clock_per_sample_us: float = 0.0
    counters: Dict[str, int] = Field(default_factory=dict)
    feature_sparsity: float = 0.0
    norm_deviation: Optional[float] = None
    quantization_clamped: int = Field(0, description="Input components clamped into the fixed-point range")
    costs: Optional[CostReport] = None
    predictions: List[PredictionRecord] = Field(default_factory=list)

    @property
    def synapse_updates(self) -> int:
        return self.counters.get("weight_writes", 0)

    @property
    def spike_count(self) -> int:
        return self.counters.get("spikes", 0)
