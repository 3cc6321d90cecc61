#!/usr/bin/env python3
"""
Tests for the benchmark harness: synthetic data, feature files, protocol,
stream runner, cost accounting and artifacts

Run tests with:
    python -m pytest tests/test_harness.py -v
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from core import CostCounters, InvariantViolation, Rng
from harness import (
    FEATURE_HEADER, FeatureFileError, InsufficientDataError, LearnerAdapter, SyntheticSpec, build_learner,
    build_protocol, compare_learning_modes, count_costs, gen_synthetic, load_clip_source, read_feature_file,
    read_predictions_csv, read_summary_csv, run_experiment, summarize, write_feature_file, write_metrics_csv,
    write_predictions_csv, write_summary_csv,
)
from schemas import LearnerConfig, ProtocolConfig, RunMetrics
from snn_sim import SnnParams


def small_source(**overrides):
    params = dict(d=32, classes=3, modes_per_class=1, frames_per_clip=30, clips_per_class=2, seed=4)
    params.update(overrides)
    return gen_synthetic(SyntheticSpec(**params))


class OracleLearner(LearnerAdapter):
    """Knows the label of every frame of a source"""

    kind = "oracle"

    def __init__(self, source):
        self.table = {
            clip.frames[f].tobytes(): clip.label for clip in source.iter_clips() for f in range(len(clip))
        }
        self._counters = CostCounters()

    @property
    def counters(self):
        return self._counters

    def learn(self, x, raw, label):
        self._counters.samples += 1
        return self.table[x.tobytes()], None

    def predict(self, x, raw):
        return self.table[x.tobytes()]


class SilentLearner(OracleLearner):
    kind = "silent"

    def predict(self, x, raw):
        return None


class GuessingLearner(LearnerAdapter):
    """Answers with a uniformly drawn label among the classes seen so far"""

    kind = "guess"

    def __init__(self, seed):
        self.rng = Rng(seed)
        self.seen = []
        self._counters = CostCounters()

    @property
    def counters(self):
        return self._counters

    def learn(self, x, raw, label):
        self._counters.samples += 1
        if label is not None and label not in self.seen:
            self.seen.append(label)
        return None, None

    def predict(self, x, raw):
        return self.seen[int(self.rng.integers(len(self.seen))[0])]


class TestSyntheticData(unittest.TestCase):

    def test_01_frames_are_unit_and_deterministic(self):
        a, b = small_source(), small_source()
        for clip_a, clip_b in zip(a.iter_clips(), b.iter_clips()):
            self.assertEqual(clip_a.frames.shape, (30, 32))
            np.testing.assert_allclose(np.linalg.norm(clip_a.frames, axis=1), 1.0, atol=1e-12)
            np.testing.assert_array_equal(clip_a.frames, clip_b.frames)

    def test_02_seed_changes_data(self):
        a, b = small_source(), small_source(seed=5)
        self.assertFalse(np.array_equal(a.clips[0][0].frames, b.clips[0][0].frames))

    def test_03_frames_of_a_clip_stay_close(self):
        source = small_source()
        clip = source.clips[1][0]
        similarities = clip.frames @ clip.frames.mean(axis=0)
        self.assertGreater(float(similarities.min()), 0.8)

    def test_04_bimodal_modes_are_far_apart(self):
        source = small_source(modes_per_class=2, clips_per_class=2, d=64)
        first, second = source.clips[0][0].frames.mean(axis=0), source.clips[0][1].frames.mean(axis=0)
        cosine = float(first @ second) / (np.linalg.norm(first) * np.linalg.norm(second))
        self.assertLess(cosine, 0.0)

    def test_05_sparsity_zeroes_coordinates(self):
        source = small_source(sparsity=0.5)
        for clip in source.iter_clips():
            self.assertTrue(np.all(np.count_nonzero(clip.frames == 0.0, axis=1) == 16))

    def test_06_one_dimension_cannot_be_bimodal(self):
        with self.assertRaises(ValueError):
            gen_synthetic(SyntheticSpec(d=1, modes_per_class=2))


class TestFeatureFile(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "features.bin"

    def tearDown(self):
        self.tmp.cleanup()

    def test_01_round_trip(self):
        source = small_source()
        count = write_feature_file(self.path, source)
        self.assertEqual(count, 3 * 2 * 30)
        contents = read_feature_file(self.path)
        self.assertEqual(contents.d, 32)
        self.assertTrue(contents.normalized)
        self.assertEqual(contents.labels.tolist()[:30], [0] * 30)

        loaded = load_clip_source(self.path, frames_per_clip=30)
        self.assertEqual(loaded.classes, [0, 1, 2])
        for original, restored in zip(source.iter_clips(), loaded.iter_clips()):
            np.testing.assert_allclose(restored.frames, original.frames, atol=1e-6)

    def test_02_raw_features_are_normalized_on_load(self):
        source = small_source()
        write_feature_file(self.path, source, normalized=False)
        self.assertFalse(read_feature_file(self.path).normalized)
        loaded = load_clip_source(self.path, frames_per_clip=30)
        np.testing.assert_allclose(np.linalg.norm(loaded.clips[2][1].frames, axis=1), 1.0, atol=1e-9)

    def test_03_bad_magic(self):
        self.path.write_bytes(FEATURE_HEADER.pack(b"NOPE", 1, 4, 0, 1))
        with self.assertRaises(FeatureFileError):
            read_feature_file(self.path)

    def test_04_bad_version(self):
        self.path.write_bytes(FEATURE_HEADER.pack(b"CLPF", 2, 4, 0, 1))
        with self.assertRaises(FeatureFileError):
            read_feature_file(self.path)

    def test_05_truncated_body(self):
        write_feature_file(self.path, small_source())
        self.path.write_bytes(self.path.read_bytes()[:-3])
        with self.assertRaises(FeatureFileError):
            read_feature_file(self.path)

    def test_06_clip_length_must_divide(self):
        write_feature_file(self.path, small_source())
        with self.assertRaises(FeatureFileError):
            load_clip_source(self.path, frames_per_clip=7)


class TestProtocol(unittest.TestCase):

    def test_01_same_seed_same_schedule(self):
        source = small_source(classes=6)
        cfg = ProtocolConfig(mode="one-shot")
        a, b = build_protocol(cfg, source, 3), build_protocol(cfg, source, 3)
        self.assertEqual(a.class_order, b.class_order)
        self.assertEqual(a.tasks, b.tasks)
        self.assertEqual(sorted(a.class_order), list(range(6)))

    def test_02_seeds_change_class_order(self):
        source = small_source(classes=8)
        orders = {tuple(build_protocol(ProtocolConfig(), source, seed).class_order) for seed in range(5)}
        self.assertGreater(len(orders), 1)

    def test_03_one_shot_one_class_per_task(self):
        protocol = build_protocol(ProtocolConfig(mode="one-shot"), small_source(), 0)
        self.assertEqual(len(protocol.tasks), 3)
        self.assertTrue(all(len(task) == 1 for task in protocol.tasks))
        self.assertEqual([task[0].label for task in protocol.tasks], protocol.class_order)

    def test_04_multi_shot_clip_count(self):
        source = gen_synthetic(SyntheticSpec(d=4, classes=40, modes_per_class=1, frames_per_clip=4, clips_per_class=25))
        protocol = build_protocol(ProtocolConfig(mode="multi-shot", shots=25, eval_frames=2), source, 0)
        self.assertEqual(protocol.clip_count, 1000)
        self.assertEqual(len(protocol.tasks), 25)
        for task in protocol.tasks:
            self.assertEqual(sorted(ref.label for ref in task), list(range(40)))
        refs = [ref for task in protocol.tasks for ref in task]
        self.assertEqual(len(set(refs)), 1000, "No clip is scheduled twice")

    def test_05_insufficient_clips(self):
        with self.assertRaises(InsufficientDataError):
            build_protocol(ProtocolConfig(mode="multi-shot", shots=3), small_source(), 0)

    def test_06_eval_suffix_must_leave_training_frames(self):
        with self.assertRaises(InsufficientDataError):
            build_protocol(ProtocolConfig(eval_frames=30), small_source(), 0)

    def test_07_label_fraction(self):
        source = small_source()
        full = build_protocol(ProtocolConfig(), source, 0)
        self.assertEqual(len(full.unlabeled), 0)
        half = build_protocol(ProtocolConfig(label_fraction=0.5), source, 0)
        self.assertTrue(18 <= len(half.unlabeled) <= 42, f"{len(half.unlabeled)} of 60 training frames unlabeled")
        none = build_protocol(ProtocolConfig(label_fraction=0.0), source, 0)
        self.assertEqual(len(none.unlabeled), 60)


class TestRunExperiment(unittest.TestCase):

    def setUp(self):
        self.source = small_source()
        self.protocol = build_protocol(ProtocolConfig(mode="one-shot"), self.source, 1)

    def test_01_every_training_frame_once(self):
        metrics = run_experiment(OracleLearner(self.source), self.protocol, self.source)
        frame_ids = [p.frame_id for p in metrics.predictions]
        self.assertEqual(len(frame_ids), 3 * 20)
        self.assertEqual(len(set(frame_ids)), len(frame_ids))
        self.assertEqual([p.step for p in metrics.predictions], list(range(60)))

    def test_02_perfect_learner(self):
        metrics = run_experiment(OracleLearner(self.source), self.protocol, self.source)
        self.assertEqual([p.accuracy for p in metrics.eval_points], [1.0, 1.0, 1.0])
        self.assertEqual([p.seen_classes for p in metrics.eval_points], [1, 2, 3])
        self.assertEqual([p.evaluated for p in metrics.eval_points], [10, 20, 30])

    def test_03_missing_answers_count_as_errors(self):
        metrics = run_experiment(SilentLearner(self.source), self.protocol, self.source)
        self.assertEqual(metrics.final_accuracy, 0.0)

    def test_04_clp_run(self):
        learner = build_learner(LearnerConfig(kind="clp", capacity=50), 32)
        metrics = run_experiment(learner, self.protocol, self.source)
        self.assertGreaterEqual(metrics.final_accuracy, 0.9)
        self.assertGreaterEqual(metrics.prototype_count, 3)
        self.assertEqual(metrics.novelty_events, metrics.counters["allocations"])
        self.assertIsNotNone(metrics.norm_deviation)

    def test_05_evaluation_is_not_charged(self):
        learner = build_learner(LearnerConfig(kind="ncm"), 32)
        metrics = run_experiment(learner, self.protocol, self.source)
        self.assertEqual(metrics.counters["macs"], 0, "NCM updates cost no MACs; only prediction does")
        self.assertEqual(metrics.counters["samples"], 60)

    def test_06_snn_run_records_gaps(self):
        source = small_source(d=64)
        protocol = build_protocol(ProtocolConfig(mode="one-shot"), source, 2)
        learner = build_learner(LearnerConfig(kind="clp-snn", capacity=50), 64)
        metrics = run_experiment(learner, protocol, source)
        self.assertGreaterEqual(metrics.final_accuracy, 0.9)
        self.assertGreater(metrics.counters["spikes"], 0)
        self.assertTrue(any(p.similarity_gap is not None for p in metrics.predictions))

    def test_07_unlabeled_frames(self):
        protocol = build_protocol(ProtocolConfig(label_fraction=0.5), self.source, 1)
        clp = run_experiment(build_learner(LearnerConfig(kind="clp", capacity=50), 32), protocol, self.source)
        ncm = run_experiment(build_learner(LearnerConfig(kind="ncm"), 32), protocol, self.source)
        self.assertEqual(clp.unlabeled_frames, len(protocol.unlabeled))
        self.assertEqual(clp.counters["samples"], 60)
        self.assertEqual(ncm.counters["samples"], 60 - len(protocol.unlabeled), "Baselines skip unlabeled frames")

    def test_08_every_learner_kind_runs(self):
        for kind in ("slda", "slda-frozen", "perceptron", "finetune", "replay"):
            metrics = run_experiment(build_learner(LearnerConfig(kind=kind), 32), self.protocol, self.source)
            self.assertEqual(len(metrics.eval_points), 3, kind)
            self.assertTrue(0.0 <= metrics.final_accuracy <= 1.0, kind)

    def test_09_clamped_inputs_are_reported(self):
        learner = build_learner(LearnerConfig(kind="clp-snn", capacity=60, quant_scale=0.25), 32)
        with self.assertLogs(level="WARNING") as logs:
            metrics = run_experiment(learner, self.protocol, self.source)
        self.assertGreater(metrics.quantization_clamped, 0)
        self.assertEqual(metrics.quantization_clamped, learner.net.quant_stats.clamped)
        self.assertEqual(
            [r.name for r in logs.records if r.name in ("quantize", "harness")], ["quantize", "harness"],
        )
        self.assertGreater(summarize([metrics])["quantization_clamped_mean"], 0.0)

    def test_10_guessing_matches_chance(self):
        source = small_source(classes=10)
        protocol = build_protocol(ProtocolConfig(mode="one-shot"), source, 0)
        metrics = run_experiment(GuessingLearner(5), protocol, source)
        final = metrics.eval_points[-1]
        self.assertEqual(final.evaluated, 100)
        sigma = np.sqrt(0.1 * 0.9 / final.evaluated)
        self.assertLessEqual(abs(final.accuracy - 0.1), 3 * sigma)

    def test_11_one_shot_curves_do_not_rise(self):
        source = gen_synthetic(SyntheticSpec())
        protocol = build_protocol(ProtocolConfig(mode="one-shot"), source, 0)
        for kind in ("clp", "clp-snn", "ncm", "slda"):
            learner = build_learner(LearnerConfig(kind=kind), 64)
            metrics = run_experiment(learner, protocol, source, record_predictions=False)
            curve = [p.accuracy for p in metrics.eval_points]
            self.assertEqual(len(curve), 10)
            rises = [later - earlier for earlier, later in zip(curve, curve[1:])]
            self.assertLessEqual(max(rises), 0.05 + 1e-9, f"{kind}: {curve}")


class TestCosts(unittest.TestCase):

    def test_01_d_writes_per_sample(self):
        source = small_source()
        protocol = build_protocol(ProtocolConfig(), source, 0)
        for kind in ("clp", "ncm"):
            learner = build_learner(LearnerConfig(kind=kind, capacity=50), 32)
            run_experiment(learner, protocol, source)
            report = count_costs(learner.counters)
            self.assertEqual(report.weight_writes_per_sample, 32.0, kind)
            self.assertFalse(report.energy_modeled)

    def test_02_empty_counters(self):
        report = count_costs(CostCounters(), 0.0)
        self.assertEqual(report.samples, 0)
        self.assertEqual(report.weight_writes_per_sample, 0.0)

    def test_03_learning_mode_ratio(self):
        source = small_source()
        frames = [clip.frames[f] for clip in source.iter_clips() for f in range(5)]
        labels = [clip.label for clip in source.iter_clips() for _ in range(5)]
        ratio = compare_learning_modes(32, SnnParams(capacity=30), frames, labels)
        self.assertEqual(ratio, 20)

    def test_04_learning_mode_ratio_needs_samples(self):
        with self.assertRaises(InvariantViolation):
            compare_learning_modes(32, SnnParams(capacity=4), [], [])

    def test_05_run_carries_cost_report(self):
        source = small_source()
        protocol = build_protocol(ProtocolConfig(), source, 0)
        metrics = run_experiment(build_learner(LearnerConfig(kind="clp", capacity=50), 32), protocol, source)
        self.assertEqual(metrics.costs.weight_writes_per_sample, 32.0)
        self.assertEqual(metrics.costs.samples, metrics.counters["samples"])
        self.assertEqual(metrics.quantization_clamped, 0)
        row = summarize([metrics])
        self.assertEqual(row["weight_writes_per_sample_mean"], 32.0)
        self.assertEqual(row["weight_writes_mean"], metrics.counters["weight_writes"])
        self.assertEqual(row["quantization_clamped_mean"], 0.0)


class TestBenchmark(unittest.TestCase):
    """Bimodal classes: one mean per class sits between two far-apart clusters"""

    def test_accuracy_ordering_on_bimodal_classes(self):
        source = gen_synthetic(SyntheticSpec(
            d=64, classes=10, modes_per_class=2, mode_angle_deg=165.0, frames_per_clip=30, clips_per_class=4, seed=1,
        ))
        kinds = ("clp", "clp-snn", "ncm", "slda-frozen", "finetune")
        accuracy = dict.fromkeys(kinds, 0.0)
        for seed in (0, 1, 2):
            protocol = build_protocol(ProtocolConfig(mode="multi-shot", shots=4), source, seed)
            for kind in kinds:
                learner = build_learner(LearnerConfig(kind=kind, capacity=300), 64)
                metrics = run_experiment(learner, protocol, source, record_predictions=False)
                accuracy[kind] += metrics.final_accuracy / 3
        self.assertGreaterEqual(accuracy["clp"], accuracy["ncm"] + 0.10, accuracy)
        self.assertLessEqual(accuracy["finetune"], accuracy["clp"] - 0.20, accuracy)
        self.assertAlmostEqual(accuracy["slda-frozen"], accuracy["ncm"], delta=0.03)
        self.assertAlmostEqual(accuracy["clp-snn"], accuracy["clp"], delta=0.05, msg=str(accuracy))


class TestForgetting(unittest.TestCase):
    """Two classes, then two other classes; recall of the first pair afterwards"""

    def test_finetune_forgets_while_prototypes_and_means_remember(self):
        rng = Rng(30)
        centers = rng.unit_vectors(4, 64)

        def sample(k):
            x = centers[k] + 0.2 * rng.normal(64) / 8.0
            return x / np.linalg.norm(x)

        first = [(sample(k), k) for _ in range(40) for k in (0, 1)]
        second = [(sample(k), k) for _ in range(150) for k in (2, 3)]
        held_out = [(sample(k), k) for k in (0, 1) for _ in range(25)]
        learners = {kind: build_learner(LearnerConfig(kind=kind), 64) for kind in ("finetune", "ncm", "clp")}

        def recall(learner):
            return float(np.mean([learner.predict(x, x) == k for x, k in held_out]))

        for learner in learners.values():
            for x, k in first:
                learner.learn(x, x, k)
        self.assertGreaterEqual(recall(learners["finetune"]), 0.9)
        for learner in learners.values():
            for x, k in second:
                learner.learn(x, x, k)
        self.assertLess(recall(learners["finetune"]), 0.3)
        self.assertGreater(recall(learners["ncm"]), 0.8)
        self.assertGreater(recall(learners["clp"]), 0.8)


class TestArtifacts(unittest.TestCase):

    def test_01_metrics_and_predictions(self):
        source = small_source()
        protocol = build_protocol(ProtocolConfig(), source, 0)
        metrics = run_experiment(build_learner(LearnerConfig(kind="clp", capacity=50), 32), protocol, source)
        with tempfile.TemporaryDirectory() as tmp:
            metrics_path = Path(tmp) / "metrics.csv"
            write_metrics_csv(metrics_path, [metrics])
            lines = metrics_path.read_text(encoding="utf-8").splitlines()
            self.assertTrue(lines[0].startswith("learner,seed,task,seen_classes,accuracy"))
            self.assertEqual(len(lines), 1 + len(metrics.eval_points))

            predictions_path = Path(tmp) / "predictions.csv"
            write_predictions_csv(predictions_path, [metrics])
            restored = read_predictions_csv(predictions_path)
        self.assertEqual(len(restored), len(metrics.predictions))
        for before, after in zip(metrics.predictions, restored):
            self.assertEqual(
                (before.frame_id, before.true_label, before.predicted_label),
                (after.frame_id, after.true_label, after.predicted_label),
            )
            if before.similarity_gap is None:
                self.assertIsNone(after.similarity_gap)
            else:
                self.assertAlmostEqual(before.similarity_gap, after.similarity_gap, places=8)

    def test_02_summary_uses_population_std(self):
        runs = [
            RunMetrics(learner="clp", seed=0, final_accuracy=0.5, counters={"samples": 10}),
            RunMetrics(learner="clp", seed=1, final_accuracy=1.0, counters={"samples": 30}),
        ]
        row = summarize(runs)
        self.assertAlmostEqual(row["final_accuracy_mean"], 0.75)
        self.assertAlmostEqual(row["final_accuracy_std"], 0.25)
        self.assertEqual(row["seeds"], "0 1")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "summary.csv"
            write_summary_csv(path, runs)
            restored = read_summary_csv(path)
        self.assertEqual(restored["learner"], "clp")
        self.assertAlmostEqual(float(restored["samples_mean"]), 20.0)


if __name__ == "__main__":
    unittest.main()
