import math
from dataclasses import dataclass

import numpy as np
import pytest

from lkalert import metrics
from lkalert.metrics import ConfusionCounts, ReportedRow
from lkalert.text import tokenize

# ---------------------------------------------------------------------------
# Independent oracles, coded separately from the implementations they check.


def oracle_bleu4(candidate: str, reference: str) -> float:
    """Reference smoothed sentence BLEU: explicit dict counting, no shared code."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if len(cand) == 0:
        return 0.0
    product = 1.0
    for n in (1, 2, 3, 4):
        cand_counts: dict = {}
        for i in range(len(cand) - n + 1):
            gram = tuple(cand[i : i + n])
            cand_counts[gram] = cand_counts.get(gram, 0) + 1
        ref_counts: dict = {}
        for i in range(len(ref) - n + 1):
            gram = tuple(ref[i : i + n])
            ref_counts[gram] = ref_counts.get(gram, 0) + 1
        overlap = 0
        for gram, count in cand_counts.items():
            overlap += min(count, ref_counts.get(gram, 0))
        total = sum(cand_counts.values())
        if n == 1:
            if overlap == 0:
                return 0.0
            p = overlap / total
        else:
            p = (overlap + 1) / (total + 1)
        product *= p
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * bp * product**0.25


def oracle_lcs(a: list[str], b: list[str]) -> int:
    """Full-matrix LCS dynamic program."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


WORDS = ["the", "lane", "line", "is", "faded", "ahead", "curve", "sharp", "road", "wet",
         "left", "right", "car", "badly", "occluded", "rain", "low", "contrast"]


def random_text(rng, max_len=12):
    n = int(rng.integers(0, max_len + 1))
    return " ".join(rng.choice(WORDS) for _ in range(n))


class TestClassifyMetrics:
    def test_inverted_reference_row(self):
        counts = ConfusionCounts(tp=213, fp=60, tn=484, fn=243)
        accuracy, precision, recall, f1 = metrics.classify_metrics(counts)
        assert round(accuracy, 2) == 69.70
        assert round(precision, 2) == 78.02
        assert round(recall, 2) == 46.71
        assert round(f1, 2) == 58.44

    def test_zero_conventions(self):
        counts = ConfusionCounts(tp=0, fp=0, tn=10, fn=0)
        assert metrics.classify_metrics(counts) == (100.0, 0.0, 0.0, 0.0)

    def test_perfect(self):
        counts = ConfusionCounts(tp=456, fp=0, tn=544, fn=0)
        assert metrics.classify_metrics(counts) == (100.0, 100.0, 100.0, 100.0)

    def test_scale_consistency(self):
        counts = ConfusionCounts(tp=21, fp=6, tn=48, fn=25)
        scaled = ConfusionCounts(tp=63, fp=18, tn=144, fn=75)
        assert metrics.classify_metrics(counts) == pytest.approx(metrics.classify_metrics(scaled))

    def test_invariants_of_report_formulas(self):
        counts = ConfusionCounts(tp=10, fp=5, tn=20, fn=15)
        accuracy, _, _, f1 = metrics.classify_metrics(counts)
        assert accuracy == pytest.approx(100 * 30 / 50, abs=1e-9)
        assert f1 == pytest.approx(100 * 20 / (20 + 5 + 15), abs=1e-9)


class TestBleu4:
    def test_identity(self):
        text = "the lane line is faded ahead"
        assert metrics.bleu4(text, text) == pytest.approx(100.0)

    def test_disjoint(self):
        assert metrics.bleu4("wet road rain", "sharp curve left") == 0.0

    def test_empty_candidate(self):
        assert metrics.bleu4("", "the lane") == 0.0

    def test_known_pair_against_hand_derivation(self):
        got = metrics.bleu4("the lane line is faded ahead", "the lane line is badly faded ahead")
        expected = 100.0 * math.exp(1 - 7 / 6) * (1.0 * (5 / 6) * (3 / 5) * (1 / 2)) ** 0.25
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(oracle_bleu4(
            "the lane line is faded ahead", "the lane line is badly faded ahead"), abs=1e-9)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            cand, ref = random_text(rng), random_text(rng)
            assert metrics.bleu4(cand, ref) == pytest.approx(oracle_bleu4(cand, ref), abs=1e-6)

    def test_case_and_punctuation_normalized(self):
        assert metrics.bleu4("The lane, line is faded ahead!", "the lane line is faded ahead") == \
            pytest.approx(100.0)


class TestRouge:
    def test_identity(self):
        text = "the car leaves the lane"
        assert metrics.rouge_n(text, text, 1) == 100.0
        assert metrics.rouge_n(text, text, 2) == 100.0
        assert metrics.rouge_l(text, text) == 100.0

    def test_disjoint(self):
        assert metrics.rouge_n("wet road", "sharp curve", 1) == 0.0
        assert metrics.rouge_l("wet road", "sharp curve") == 0.0

    def test_hand_counted_rouge1(self):
        # candidate {the, car, departs, lane} vs reference multiset:
        # the x1 (clipped), car x1, lane x1 -> 3 of 5 reference unigrams.
        assert metrics.rouge_n("the car departs lane", "the car leaves the lane", 1) == \
            pytest.approx(60.0)

    def test_hand_counted_rouge_l(self):
        assert metrics.rouge_l("the car departs lane", "the car leaves the lane") == \
            pytest.approx(60.0)

    def test_empty_candidate(self):
        assert metrics.rouge_l("", "the lane") == 0.0

    def test_no_reference_ngrams(self):
        assert metrics.rouge_n("the lane", "x", 2) == 0.0

    def test_rouge_l_matches_bruteforce_on_random_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            cand, ref = random_text(rng), random_text(rng)
            got = metrics.rouge_l(cand, ref)
            ref_tokens = tokenize(ref)
            expected = (
                100.0 * oracle_lcs(tokenize(cand), ref_tokens) / len(ref_tokens)
                if ref_tokens else 0.0
            )
            assert got == pytest.approx(expected, abs=1e-12)

    def test_fmeasure_mode(self):
        got = metrics.rouge_l("the car", "the car leaves the lane", mode="fmeasure")
        precision, recall = 2 / 2, 2 / 5
        assert got == pytest.approx(100 * 2 * precision * recall / (precision + recall))

    def test_range(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            cand, ref = random_text(rng), random_text(rng)
            for value in (
                metrics.bleu4(cand, ref),
                metrics.rouge_n(cand, ref, 1),
                metrics.rouge_n(cand, ref, 2),
                metrics.rouge_l(cand, ref),
            ):
                assert 0.0 <= value <= 100.0


@dataclass
class FakeOutput:
    alert: str
    explanation: str


class TestEvaluate:
    def make_samples(self, n_yes, n_no):
        from lkalert.dataset import AlertSample

        samples = []
        for i in range(n_yes + n_no):
            label = "Yes" if i < n_yes else "No"
            samples.append(
                AlertSample(
                    sample_id=f"s:w{i:04d}:f00", source_id="s", frame_time=float(i),
                    image_ref="x", binary_mask_ref="x", instance_mask_ref="x",
                    can_text="", label=label,
                    explanation="the laneline ahead is badly faded" if label == "Yes" else "",
                    split="val",
                )
            )
        return samples

    def test_always_no_on_reference_split(self):
        samples = self.make_samples(456, 544)
        report = metrics.evaluate(lambda s: FakeOutput("No", ""), samples)
        assert report.accuracy == pytest.approx(54.4)
        assert report.recall == 0.0
        assert report.f1 == 0.0
        assert report.counts.tn == 544 and report.counts.fn == 456

    def test_reference_replay_is_perfect(self):
        samples = self.make_samples(8, 8)
        report = metrics.evaluate(lambda s: FakeOutput(s.label, s.explanation), samples)
        assert report.accuracy == 100.0
        assert report.bleu4 == pytest.approx(100.0)
        assert report.rougeL == pytest.approx(100.0)

    def test_malformed_coerced_to_no(self):
        samples = self.make_samples(3, 3)
        report = metrics.evaluate(lambda s: FakeOutput("Malformed", ""), samples)
        assert report.counts.malformed_as_no == 6
        assert report.counts.fn == 3 and report.counts.tn == 3

    def test_sps_accounting(self):
        samples = self.make_samples(2, 2)
        report = metrics.evaluate(lambda s: FakeOutput("No", ""), samples)
        assert report.n_samples == 4
        assert report.sps == pytest.approx(report.n_samples / report.wall_seconds)

    def test_sps_formula_reference_point(self):
        # 1000 evaluated samples over 507.6 s of wall clock -> 1.97 samples/s.
        assert round(1000 / 507.6, 2) == 1.97

    def test_report_round_trip(self):
        samples = self.make_samples(2, 2)
        report = metrics.evaluate(lambda s: FakeOutput("No", ""), samples)
        assert metrics.EvalReport.from_dict(report.to_dict()) == report

    def test_render_table_row(self):
        samples = self.make_samples(2, 2)
        report = metrics.evaluate(lambda s: FakeOutput("No", ""), samples)
        rendered = metrics.render_table_row("toy", report)
        assert "Accuracy" in rendered and "toy" in rendered


class TestInvertReport:
    def test_best_fit_for_reference_row(self):
        row = metrics.REFERENCE_ROWS["Qwen2.5-VL-7B-final"]
        matrices = metrics.invert_report(row, 456, 544)
        assert ConfusionCounts(tp=213, fp=60, tn=484, fn=243) in matrices
        assert all(metrics.inversion_deviation(m, row) <= 0.25 for m in matrices)

    def test_self_consistent_row_round_trips(self):
        counts = ConfusionCounts(tp=91, fp=107, tn=437, fn=365)
        accuracy, precision, recall, f1 = metrics.classify_metrics(counts)
        row = ReportedRow(round(accuracy, 2), round(precision, 2), round(recall, 2), round(f1, 2))
        matrices = metrics.invert_report(row, 456, 544)
        assert matrices == [counts]

    def test_impossible_row_falls_back_to_best_fit(self):
        row = ReportedRow(accuracy=50.0, precision=100.0, recall=100.0, f1=100.0)
        matrices = metrics.invert_report(row, 456, 544)
        assert matrices
        assert metrics.inversion_deviation(matrices[0], row) > 1.0

    def test_rejects_empty_split(self):
        with pytest.raises(metrics.MetricsError):
            metrics.invert_report(ReportedRow(50, 50, 50, 50), 0, 10)
