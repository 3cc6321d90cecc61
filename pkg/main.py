#!/usr/bin/env python3
"""
CLP engine - command-line entry point

Commands:
    run       execute an experiment config once per seed and write its artifacts
    compare   merge two or more finished runs into one accuracy/cost table
    selftest  run the fast invariant suite
    gen-data  write a synthetic feature file

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 invariant failure.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from clp_model import write_checkpoint
from clp_rules import ALPHA_WARN, large_alpha_count
from config import ConfigError, config, load_experiment_config
from core import ClpError
from harness import (
    FEATURE_VERSION, SyntheticSpec, build_learner, build_protocol, gen_synthetic, load_clip_source,
    read_predictions_csv, read_summary_csv, run_experiment, write_feature_file, write_metrics_csv,
    write_plot_script, write_predictions_csv, write_summary_csv,
)
from logging_config import setup_logging
from quantize import FixedPointFormat
from schemas import CHECKPOINT_VERSION, ExperimentConfig, RunMetrics
from selftest import run_selftest
from snn_sim import EventLog

logger = logging.getLogger("clp")

EVENT_LOG_VERSION = 1


class UsageError(ConfigError):
    """Raised for malformed command lines"""


class MissingRunError(ClpError):
    """Raised when compare is pointed at a directory without a finished run"""


class ClpArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_source(cfg: ExperimentConfig):
    if cfg.data.source == "file":
        return load_clip_source(cfg.data.path, cfg.data.frames_per_clip)
    return gen_synthetic(SyntheticSpec.from_config(cfg.data))


def run_metadata(cfg: ExperimentConfig) -> Dict:
    """Everything needed to reproduce the run's metrics"""
    fmt = FixedPointFormat(
        bits=cfg.learner.quant_bits, scale=cfg.learner.quant_scale, frac_bits=cfg.learner.alpha_frac_bits,
    )
    return {
        "config": cfg.model_dump(),
        "seeds": cfg.protocol.seeds,
        "formats": {
            "feature_file": FEATURE_VERSION,
            "checkpoint": CHECKPOINT_VERSION,
            "event_log": EVENT_LOG_VERSION,
            "quantization": fmt.to_metadata(),
        },
        "slda_shrinkage": (
            cfg.learner.slda_shrinkage if cfg.learner.slda_shrinkage is not None else "1e-4 * trace / d"
        ),
        "energy_modeled": False,
        "created": config.get_timestamp(),
    }


def cmd_run(cfg: ExperimentConfig) -> int:
    """Run every seed, then write metrics, summary, predictions, config echo and plot script"""
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    source = load_source(cfg)

    def run_seed(seed: int) -> RunMetrics:
        event_log = EventLog() if cfg.output.event_log and cfg.learner.kind == "clp-snn" else None
        learner = build_learner(cfg.learner, source.d, event_log)
        protocol = build_protocol(cfg.protocol, source, seed)
        metrics = run_experiment(learner, protocol, source)
        if cfg.output.checkpoint:
            write_checkpoint(learner.checkpoint(), out / f"checkpoint_seed{seed}.json")
        if event_log is not None:
            event_log.write(out / f"events_seed{seed}.log")
        logger.info(
            f"Seed {seed} finished: final accuracy {metrics.final_accuracy:.3f}",
            extra={"extra_fields": {"learner": cfg.learner.kind, "seed": seed}},
        )
        return metrics

    large_alpha_before = large_alpha_count()
    workers = cfg.output.workers or config.WORKERS
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        runs = list(pool.map(run_seed, cfg.protocol.seeds))
    large_alpha = large_alpha_count() - large_alpha_before
    if large_alpha:
        logger.info(
            f"{large_alpha} prototype updates used a learning rate above {ALPHA_WARN}",
            extra={"extra_fields": {"learner": cfg.learner.kind}},
        )

    write_metrics_csv(out / "metrics.csv", runs)
    summary = write_summary_csv(out / "summary.csv", runs)
    write_predictions_csv(out / "predictions.csv", runs)
    (out / "config.json").write_text(json.dumps(run_metadata(cfg), indent=2), encoding="utf-8")
    write_plot_script(out / "plot_accuracy.py", "accuracy")

    print(f"{cfg.learner.kind}\tfinal_accuracy={summary['final_accuracy_mean']:.4f}"
          f"\tstd={summary['final_accuracy_std']:.4f}\tseeds={summary['seeds']}")
    return 0


def _require_run(directory: Path) -> None:
    for name in ("summary.csv", "config.json", "predictions.csv"):
        if not (directory / name).is_file():
            raise MissingRunError(f"{directory} is not a finished run (missing {name})", {"run": str(directory)})


def label_agreement(base_dir: Path, other_dir: Path, gap_threshold: float) -> Dict[str, Optional[float]]:
    """Learn-time label agreement on shared frames, and disagreements above the gap threshold"""
    base = {(p.seed, p.frame_id): p for p in read_predictions_csv(base_dir / "predictions.csv")}
    compared = agreed = violations = 0
    for p in read_predictions_csv(other_dir / "predictions.csv"):
        q = base.get((p.seed, p.frame_id))
        if q is None or (p.predicted_label is None and q.predicted_label is None):
            continue
        compared += 1
        if p.predicted_label == q.predicted_label:
            agreed += 1
        elif (p.similarity_gap is not None and q.similarity_gap is not None
              and p.similarity_gap > gap_threshold and q.similarity_gap > gap_threshold):
            violations += 1
    return {
        "agreement": agreed / compared if compared else None,
        "gap_violations": violations if compared else None,
    }


def cmd_compare(run_dirs: Sequence[str], output: str) -> int:
    """Merged table of final accuracy vs update ops vs wall-clock, best first"""
    if len(run_dirs) < 2:
        raise UsageError("compare needs at least two runs")
    dirs = [Path(d) for d in run_dirs]
    for d in dirs:
        _require_run(d)

    base_cfg = json.loads((dirs[0] / "config.json").read_text(encoding="utf-8"))["config"]["learner"]
    gap_threshold = (1.0 - base_cfg["theta"]) / base_cfg["latency_bins"]
    base_summary = read_summary_csv(dirs[0] / "summary.csv")

    rows: List[Dict] = []
    for d in dirs:
        summary = read_summary_csv(d / "summary.csv")
        samples = max(float(summary["samples_mean"]), 1.0)
        writes = float(summary["weight_writes_mean"]) / samples
        base_writes = float(base_summary["weight_writes_mean"]) / max(float(base_summary["samples_mean"]), 1.0)
        agreement = label_agreement(dirs[0], d, gap_threshold)
        rows.append({
            "run": d.name or str(d),
            "learner": summary["learner"],
            "final_accuracy": float(summary["final_accuracy_mean"]),
            "final_accuracy_std": float(summary["final_accuracy_std"]),
            "weight_writes_per_sample": writes,
            "macs_per_sample": float(summary["macs_mean"]) / samples,
            "spikes_per_sample": float(summary["spikes_mean"]) / samples,
            "wall_clock_per_sample_us": float(summary["wall_clock_per_sample_us_mean"]),
            "accuracy_delta": float(summary["final_accuracy_mean"]) - float(base_summary["final_accuracy_mean"]),
            "weight_writes_delta": writes - base_writes,
            "agreement": agreement["agreement"],
            "gap_violations": agreement["gap_violations"],
            "quantization_clamped": float(summary["quantization_clamped_mean"]),
        })
    rows.sort(key=lambda r: (-r["final_accuracy"], r["weight_writes_per_sample"]))

    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    write_plot_script(out / "plot_frontier.py", "frontier")

    print("run\tlearner\taccuracy\tdelta\twrites/sample\tagreement\tgap_violations")
    for row in rows:
        agreement = "-" if row["agreement"] is None else f"{row['agreement']:.4f}"
        print(f"{row['run']}\t{row['learner']}\t{row['final_accuracy']:.4f}\t{row['accuracy_delta']:+.4f}"
              f"\t{row['weight_writes_per_sample']:.1f}\t{agreement}\t{row['gap_violations']}")
    return 0


def cmd_selftest(drift_constant: float = 1.0) -> int:
    results = run_selftest(drift_constant)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\t{r.detail}\t({r.seconds:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"Self-test failures: {', '.join(failed)}")
        return 3
    return 0


def cmd_gen_data(cfg: ExperimentConfig, output: str, raw: bool = False) -> int:
    source = gen_synthetic(SyntheticSpec.from_config(cfg.data))
    count = write_feature_file(output, source, normalized=not raw)
    print(f"wrote {count} records (d={source.d}) to {output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = ClpArgumentParser(prog="clp", description="Continually Learning Prototypes engine")
    parser.add_argument("--log-level", default=None, help="Override CLP_LOG_LEVEL")
    parser.add_argument("--log-format", choices=("text", "json"), default=None, help="Override CLP_LOG_FORMAT")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ClpArgumentParser)

    run = commands.add_parser("run", help="Run an experiment")
    run.add_argument("--config", required=True, help="INI experiment file")
    run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="Override a config value")
    run.add_argument("--output", default=None, help="Output directory (overrides output.directory)")

    compare = commands.add_parser("compare", help="Compare finished runs")
    compare.add_argument("runs", nargs="+", help="Run directories; the first is the reference")
    compare.add_argument("--output", default="runs/compare", help="Where to write comparison.csv")

    selftest = commands.add_parser("selftest", help="Run the invariant suite")
    selftest.add_argument("--drift-constant", type=float, default=1.0, help=argparse.SUPPRESS)

    gen = commands.add_parser("gen-data", help="Write a synthetic feature file")
    gen.add_argument("--output", required=True, help="Feature file to write")
    gen.add_argument("--config", default=None, help="INI file whose [data] section describes the generator")
    gen.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    gen.add_argument("--raw", action="store_true", help="Store unnormalized features")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e.message}", file=sys.stderr)
        return e.exit_code

    setup_logging(args.log_level, args.log_format)
    try:
        if args.command == "run":
            overrides = list(args.set)
            if args.output:
                overrides.append(f"output.directory={args.output}")
            return cmd_run(load_experiment_config(args.config, overrides))
        if args.command == "compare":
            return cmd_compare(args.runs, args.output)
        if args.command == "selftest":
            return cmd_selftest(args.drift_constant)
        overrides = list(args.set)
        if not any(o.startswith("learner.kind=") for o in overrides):
            overrides.append("learner.kind=clp")
        return cmd_gen_data(load_experiment_config(args.config, overrides), args.output, args.raw)
    except ClpError as e:
        logger.error(f"{type(e).__name__}: {e.message}", extra={"extra_fields": e.details})
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
