"""Acceptance suite: one test per release criterion, tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion. The heavyweight end-to-end checks (ablation direction,
pipeline determinism) train real models and take a couple of minutes on
a desktop CPU.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from lkalert import canlog, dataset, decoder, metrics, trainer, windowing
from lkalert.harness import pipeline, synthetic
from lkalert.metrics import ConfusionCounts
from lkalert.text import Vocabulary
from test_metrics import oracle_bleu4, oracle_lcs, random_text

FIXTURES = Path(__file__).parent / "fixtures"


def ok(name: str) -> None:
    print(f"\nACCEPTANCE PASS: {name}")


class TestTableInversionConsistency:
    def test_all_reference_rows_invert_within_tolerance(self):
        for model, row in metrics.REFERENCE_ROWS.items():
            started = time.perf_counter()
            matrices = metrics.invert_report(row, 456, 544)
            elapsed = time.perf_counter() - started
            assert elapsed < 1.0, f"{model}: inversion took {elapsed:.2f}s"
            assert matrices, model
            best = min(matrices, key=lambda m: metrics.inversion_deviation(m, row))
            accuracy, precision, recall, _ = metrics.classify_metrics(best)
            assert abs(accuracy - row.accuracy) <= 0.15, model
            assert abs(precision - row.precision) <= 0.25, model
            assert abs(recall - row.recall) <= 0.25, model
        ok("table inversion reproduces all six reported rows "
           "(accuracy +-0.15, precision/recall +-0.25, < 1 s per row)")

    def test_strongest_row_best_fit_matrix(self):
        row = metrics.REFERENCE_ROWS["Qwen2.5-VL-7B-final"]
        matrices = metrics.invert_report(row, 456, 544)
        expected = ConfusionCounts(tp=213, fp=60, tn=484, fn=243)
        assert expected in matrices
        best = min(matrices, key=lambda m: metrics.inversion_deviation(m, row))
        assert best == expected
        _, _, _, f1 = metrics.classify_metrics(expected)
        assert abs(f1 - 58.63) <= 0.6
        ok("7B-final best-fit matrix is (tp=213, fp=60, fn=243, tn=484); "
           "recomputed F1 within +-0.6 of 58.63")


class TestConfusionShareConsistency:
    def test_tp_and_fn_shares(self):
        row = metrics.REFERENCE_ROWS["Qwen2.5-VL-7B-final"]
        matrices = metrics.invert_report(row, 456, 544)
        best = min(matrices, key=lambda m: metrics.inversion_deviation(m, row))
        tp_share = 100.0 * best.tp / best.total
        fn_share = 100.0 * best.fn / best.total
        assert abs(tp_share - 21.4) <= 0.2
        assert abs(fn_share - 24.2) <= 0.2
        ok("inverted 7B matrix confusion shares match reported 21.4% TP / 24.2% FN "
           "within +-0.2 points")


class TestMetricOracles:
    def test_rouge_l_equals_bruteforce_lcs_on_1000_pairs(self):
        started = time.perf_counter()
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            cand, ref = random_text(rng), random_text(rng)
            ref_tokens = metrics.tokenize(ref)
            # The oracle is the full-matrix LCS count; scale it to recall
            # with the same bracketing the metric uses so equality is exact.
            expected = (
                100.0 * (oracle_lcs(metrics.tokenize(cand), ref_tokens) / len(ref_tokens))
                if ref_tokens else 0.0
            )
            assert metrics.rouge_l(cand, ref) == expected
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0
        ok(f"ROUGE-L equals brute-force LCS recall on 1000 random pairs ({elapsed:.1f}s)")

    def test_bleu4_matches_independent_oracle_on_200_pairs(self):
        started = time.perf_counter()
        rng = np.random.default_rng(777)
        for _ in range(200):
            cand, ref = random_text(rng), random_text(rng)
            assert metrics.bleu4(cand, ref) == pytest.approx(oracle_bleu4(cand, ref), abs=1e-6)
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0
        ok(f"BLEU-4 matches the independent smoothed-sentence oracle within 1e-6 "
           f"on 200 random pairs ({elapsed:.1f}s)")

    def test_identity_and_disjoint_extremes(self):
        text = "the lane line is badly faded ahead"
        assert metrics.bleu4(text, text) == pytest.approx(100.0)
        assert metrics.rouge_l(text, text) == 100.0
        assert metrics.rouge_n(text, text, 1) == 100.0
        assert metrics.bleu4("wet road rain car", "sharp curve left ahead") == 0.0
        assert metrics.rouge_l("wet road", "sharp curve") == 0.0
        ok("identity inputs score 100, disjoint inputs score 0")


class TestLoraCorrectness:
    @pytest.fixture()
    def setup(self):
        vocab = Vocabulary.build(
            ["yes the laneline ahead is badly faded", "no",
             "yes there is a sharp curve to the left ahead"]
        )
        params = decoder.init_decoder(vocab_size=len(vocab), d_model=32, layer_count=2,
                                      head_count=4, max_target_len=24, seed=3)
        adapters = decoder.init_adapters(params, rank=4, alpha=8.0, seed=5)
        rng = np.random.default_rng(17)
        memories = rng.normal(0.0, 0.3, size=(2, 9, 32))
        ids = trainer.pad_targets([
            trainer.encode_target(vocab, "yes the laneline ahead is badly faded", 24),
            trainer.encode_target(vocab, "no", 24),
        ])
        return vocab, params, adapters, memories, ids

    def test_grad_check_below_1e4(self, setup):
        _, params, adapters, memories, ids = setup
        fresh = trainer.grad_check(params, adapters, memories, ids, n_entries=24, seed=0)
        assert fresh <= 1e-4
        rng = np.random.default_rng(6)
        for adapter in adapters.values():
            adapter.A[:] = rng.normal(0, 0.2, adapter.A.shape)
            adapter.B[:] = rng.normal(0, 0.2, adapter.B.shape)
        randomized = trainer.grad_check(params, adapters, memories, ids, n_entries=24, seed=0)
        assert randomized <= 1e-4
        ok(f"gradient check max relative error {max(fresh, randomized):.2e} <= 1e-4 (float64)")

    def test_zero_init_equals_base_model_exactly(self, setup):
        vocab, params, adapters, memories, ids = setup
        with_fresh = decoder.forward(params, adapters, memories, ids)
        base = decoder.forward(params, {}, memories, ids)
        assert np.array_equal(with_fresh, base)
        a = decoder.generate(params, adapters, memories[0], vocab, max_len=12)
        b = decoder.generate(params, {}, memories[0], vocab, max_len=12)
        assert a.token_ids == b.token_ids
        ok("B=0 initialization makes step-0 outputs equal the base model exactly")

    def test_merge_equivalence_on_100_random_inputs(self, setup):
        vocab, params, adapters, memories, _ = setup
        rng = np.random.default_rng(11)
        for adapter in adapters.values():
            adapter.A[:] = rng.normal(0, 0.2, adapter.A.shape)
            adapter.B[:] = rng.normal(0, 0.2, adapter.B.shape)
        merged = decoder.merge_adapters(params, adapters)
        for _ in range(100):
            memory = rng.normal(0, 0.4, size=(7, params.d_model))
            adapter_path = decoder.generate(params, adapters, memory, vocab, max_len=12)
            merged_path = decoder.generate(merged, {}, memory, vocab, max_len=12)
            assert adapter_path.token_ids == merged_path.token_ids
        ok("merged-weight generation token-identical to adapter-path generation "
           "on 100 random inputs")

    def test_merged_latency_within_ten_percent_of_base(self, setup):
        vocab, params, adapters, _, _ = setup
        rng = np.random.default_rng(23)
        for adapter in adapters.values():
            adapter.A[:] = rng.normal(0, 0.2, adapter.A.shape)
            adapter.B[:] = rng.normal(0, 0.2, adapter.B.shape)
        merged = decoder.merge_adapters(params, adapters)
        memories = [rng.normal(0, 0.4, size=(24, params.d_model)) for _ in range(20)]

        def median_latency(run_params):
            laps = []
            for memory in memories:
                started = time.perf_counter()
                decoder.generate(run_params, {}, memory, vocab, max_len=16)
                laps.append(time.perf_counter() - started)
            return float(np.median(laps))

        # Warm up, then interleave repetitions so drift hits both sides equally.
        median_latency(params), median_latency(merged)
        base_runs, merged_runs = [], []
        for _ in range(5):
            base_runs.append(median_latency(params))
            merged_runs.append(median_latency(merged))
        base, after = float(np.median(base_runs)), float(np.median(merged_runs))
        ratio = after / base
        assert 0.9 <= ratio <= 1.1, f"median latency ratio {ratio:.3f}"
        ok(f"merged-vs-base median generation latency ratio {ratio:.3f} within +-10%")


class TestObjectiveSanity:
    def test_untrained_loss_and_overfit(self):
        started = time.perf_counter()
        vocab = Vocabulary.build(
            ["yes the laneline ahead is badly faded", "no",
             "yes there is a sharp curve to the left ahead",
             "speed=27.0;steer_deg=0.5;torque=0.10;lka=1;offset_m=0.05"]
        )
        params = decoder.init_decoder(vocab_size=len(vocab), max_target_len=24, seed=3)
        adapters = decoder.init_adapters(params, seed=5)
        rng = np.random.default_rng(17)
        memories = rng.normal(0.0, 0.3, size=(4, 12, params.d_model))
        ids = trainer.pad_targets([
            trainer.encode_target(vocab, "yes the laneline ahead is badly faded", 24),
            trainer.encode_target(vocab, "no", 24),
            trainer.encode_target(vocab, "yes there is a sharp curve to the left ahead", 24),
            trainer.encode_target(vocab, "no", 24),
        ])
        untrained = trainer.loss(params, adapters, memories, ids)
        assert untrained == pytest.approx(np.log(len(vocab)), abs=0.05)

        target_text = "yes the laneline ahead is badly faded"
        items = [(memories[0], trainer.encode_target(vocab, target_text, 24))]
        cfg = trainer.TrainConfig(max_steps=500, batch_size=1, seed=0)
        trained_adapters, log = trainer.train(params, items, cfg)
        assert log[-1].mean_nll < 0.05
        out = decoder.generate(params, trained_adapters, memories[0], vocab, max_len=24)
        assert out.text == target_text
        elapsed = time.perf_counter() - started
        assert elapsed < 120.0
        ok(f"untrained loss ln(V)+-0.05 ({untrained:.3f} vs {np.log(len(vocab)):.3f}); "
           f"one-sample overfit to {log[-1].mean_nll:.4f} nats/token with exact "
           f"greedy reproduction in {elapsed:.0f}s (< 2 min)")


class TestWindowingGroundTruth:
    def test_fixture_events_and_grids(self):
        series = canlog.parse_log((FIXTURES / "drive01.csv").read_bytes(), "drive01")
        cfg = windowing.WindowConfig()
        events = windowing.detect_events(series, cfg)

        assert [(e.timestamp, e.kind.value) for e in events] == [
            (30.0, "Disengagement"),
            (60.0, "DeviationExceeded"),
            (119.0, "Disengagement"),
        ]
        assert events[1].peak_offset == 0.61

        window = windowing.extract_window(series, events[0], cfg)
        assert window.frame_times == tuple(26.5 + 0.5 * i for i in range(13))
        assert window.frame_times[cfg.event_frame_index - 1] == 30.0
        assert window.frame_times[-1] - window.frame_times[0] == pytest.approx(6.0, abs=1e-9)
        assert len(window.frame_times) == 13

        deviation = windowing.extract_window(series, events[1], cfg)
        assert deviation.frame_times == tuple(56.5 + 0.5 * i for i in range(13))

        with pytest.raises(windowing.InsufficientContext):
            windowing.extract_window(series, events[2], cfg)
        ok("fixture events and 13-frame/6.0s window grids match hand-computed "
           "ground truth exactly")

    def test_random_series_invariants(self):
        rng = np.random.default_rng(31337)
        cfg = windowing.WindowConfig()
        checked = 0
        for _ in range(100):
            n = int(rng.integers(60, 500))
            dt = float(rng.choice([0.05, 0.1, 0.25]))
            records = tuple(
                canlog.TelemetryRecord(
                    round(i * dt, 4), 15.0, 0.0, 0.0,
                    bool(rng.random() > 0.25), float(rng.normal(0.0, 0.3)),
                )
                for i in range(n)
            )
            series = canlog.TelemetrySeries(records=records, source_id="r")
            events = windowing.detect_events(series, cfg)
            normals = windowing.sample_normal_windows(series, events, cfg, count=2, seed=5)
            for window in normals:
                windowing.validate_window(window, cfg)
                for event in events:
                    span = cfg.pre_seconds + cfg.post_seconds
                    assert not (window.start - span < event.timestamp < window.end + span)
            for event in events:
                try:
                    window = windowing.extract_window(series, event, cfg)
                except windowing.InsufficientContext:
                    continue
                windowing.validate_window(window, cfg)
                checked += 1
        assert checked > 50
        ok(f"EventWindow invariants hold over random series ({checked} windows checked)")


ABLATION_SEED = 11
ABLATION_STEPS = 2500


@pytest.fixture(scope="module")
def ablation_runs(tmp_path_factory):
    """Train guided and unguided variants once; several criteria read them."""
    root = tmp_path_factory.mktemp("ablation")
    data = root / "data"
    synthetic.generate_dataset(data, count=200, seed=ABLATION_SEED)
    results = {}
    started = time.perf_counter()
    for mode, guided in (("guided", True), ("unguided", False)):
        cfg = trainer.TrainConfig(
            max_steps=ABLATION_STEPS, seed=ABLATION_SEED, guided=guided,
            learning_rate=1e-3, batch_size=16, lora_rank=8, lora_alpha=16.0,
            eval_every=250,
        )
        results[mode] = pipeline.train_pipeline(data, root / mode, cfg)
    return results, time.perf_counter() - started


def val_accuracies(result) -> list[float]:
    curve = [e.val_metrics["accuracy"] for e in result.log if e.val_metrics]
    return curve + [result.final_report.accuracy]


class TestAblationDirection:
    def test_guided_beats_unguided(self, ablation_runs):
        results, elapsed = ablation_runs
        guided_curve = val_accuracies(results["guided"])
        unguided_curve = val_accuracies(results["unguided"])
        guided_final = results["guided"].final_report.accuracy
        unguided_final = results["unguided"].final_report.accuracy

        # Guided reaches >= 90% within the step budget; unguided never
        # leaves the <= 75% band; the final-model gap is >= 10 points.
        assert max(guided_curve) >= 90.0, f"guided peak {max(guided_curve):.1f}"
        assert max(unguided_curve) <= 75.0, f"unguided peak {max(unguided_curve):.1f}"
        assert guided_final - unguided_final >= 10.0
        assert elapsed < 900.0
        ok(f"ablation direction on 200-sample synthetic data (seed {ABLATION_SEED}, "
           f"{ABLATION_STEPS} steps <= 3000, rain >= 0.7): guided reaches "
           f"{max(guided_curve):.1f}% >= 90, unguided stays <= "
           f"{max(unguided_curve):.1f}% <= 75, final gap "
           f"{guided_final - unguided_final:.1f} >= 10 points ({elapsed:.0f}s)")


class TestPipelineDeterminism:
    def test_byte_identical_reports(self, tmp_path):
        def one_run(base: Path) -> tuple[str, bytes, dict]:
            data = base / "data"
            synthetic.generate_dataset(data, count=48, seed=13)
            cfg = trainer.TrainConfig(max_steps=150, seed=13, guided=True)
            pipeline.train_pipeline(data, base / "run", cfg)
            report = pipeline.evaluate_checkpoint(base / "run" / "checkpoint.npz", data)
            report_bytes = json.dumps(report.metrics_dict(), sort_keys=True).encode()
            dataset_bytes = (data / "dataset.jsonl").read_bytes()
            with np.load(base / "run" / "checkpoint.npz", allow_pickle=False) as archive:
                tensors = {name: archive[name].copy() for name in archive.files if name != "meta"}
            return dataset_bytes.hex(), report_bytes, tensors

        first_data, first_report, first_tensors = one_run(tmp_path / "a")
        second_data, second_report, second_tensors = one_run(tmp_path / "b")
        assert first_data == second_data
        assert first_report == second_report
        assert set(first_tensors) == set(second_tensors)
        for name in first_tensors:
            assert np.array_equal(first_tensors[name], second_tensors[name]), name
        ok("gen-synthetic -> train -> evaluate repeated with fixed seeds: dataset bytes, "
           "checkpoint tensors, and EvalReport metric bytes all identical")
