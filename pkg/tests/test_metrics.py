import mpmath
import numpy as np
import pytest

from story2midi import metrics
from story2midi.emotion import QUADRANTS, QuadrantLabel
from story2midi.metrics import (DegenerateVariance, EmptyCorpus, EmptyScore,
                                KK_MAJOR, KK_MINOR, detect_key,
                                pitch_class_profile, quadrant_metrics,
                                standardized_mse, valence_arousal_report,
                                welch_t_test)
from story2midi.midi import NoteEvent, Score, TempoEvent, transpose

from conftest import random_score


def welch_p_oracle(a, b) -> float:
    """Two-sided p by quadrature of the t density at high precision."""
    a = [mpmath.mpf(x) for x in a]
    b = [mpmath.mpf(x) for x in b]
    na, nb = len(a), len(b)
    mean = lambda xs: sum(xs) / len(xs)
    var = lambda xs: sum((x - mean(xs)) ** 2 for x in xs) / (len(xs) - 1)
    sa, sb = var(a) / na, var(b) / nb
    t = (mean(a) - mean(b)) / mpmath.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (na - 1) + sb ** 2 / (nb - 1))

    def pdf(x):
        return (mpmath.gamma((df + 1) / 2)
                / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
                * (1 + x * x / df) ** (-(df + 1) / 2))

    return float(2 * mpmath.quad(pdf, [abs(t), mpmath.inf]))


def key_oracle(score: Score):
    """Correlation over 24 keys with np.corrcoef and rolled templates."""
    profile = pitch_class_profile(score)
    best = None
    for tonic in range(12):
        for mode, template in (("major", KK_MAJOR), ("minor", KK_MINOR)):
            r = np.corrcoef(profile, np.roll(template, tonic))[0, 1]
            if best is None or r > best[2]:
                best = (tonic, mode, r)
    return best


def scale_score(pitches, duration=480, velocity=64) -> Score:
    return Score(480, tuple(
        NoteEvent(i * duration, p, duration, velocity)
        for i, p in enumerate(pitches)))


C_MAJOR = scale_score([60, 62, 64, 65, 67, 69, 71])
# A-minor material with tonic emphasis: long durations on A, the arpeggio
# A C E repeated, plus G# for the harmonic-minor color
A_MINOR = Score(480, tuple(
    NoteEvent(i * 480, p, d, 64) for i, (p, d) in enumerate(
        [(69, 1920), (72, 480), (76, 480), (69, 1920), (72, 480),
         (76, 480), (68, 240), (69, 1920)])))


class TestKeyDetection:
    def test_c_major_scale(self):
        estimate = detect_key(C_MAJOR)
        assert (estimate.tonic, estimate.mode) == (0, "major")
        assert estimate.name == "C major"
        oracle = key_oracle(C_MAJOR)
        assert (oracle[0], oracle[1]) == (0, "major")
        assert estimate.correlation == pytest.approx(oracle[2], abs=1e-9)

    def test_a_minor_fixture(self):
        estimate = detect_key(A_MINOR)
        assert (estimate.tonic, estimate.mode) == (9, "minor")
        oracle = key_oracle(A_MINOR)
        assert (oracle[0], oracle[1]) == (9, "minor")

    def test_transposed_scale(self):
        estimate = detect_key(transpose(C_MAJOR, 2))
        assert (estimate.tonic, estimate.mode) == (2, "major")

    def test_transposition_covariance_exact(self, rng):
        for _ in range(20):
            score = random_score(rng, n_notes=15, pitch_range=(36, 96))
            base = detect_key(score)
            if base.degenerate:
                continue
            for semitones in range(12):
                shifted = detect_key(transpose(score, semitones))
                assert shifted.tonic == (base.tonic + semitones) % 12
                assert shifted.mode == base.mode
                assert shifted.correlation == base.correlation  # bit-exact

    def test_matches_corrcoef_oracle(self, rng):
        for _ in range(30):
            score = random_score(rng, n_notes=12)
            estimate = detect_key(score)
            if estimate.degenerate:
                continue
            tonic, mode, r = key_oracle(score)
            assert (estimate.tonic, estimate.mode) == (tonic, mode)
            assert estimate.correlation == pytest.approx(r, abs=1e-9)

    def test_single_pitch_class_degenerate(self):
        score = Score(480, (NoteEvent(0, 60, 480, 64),
                            NoteEvent(480, 72, 480, 64)))
        estimate = detect_key(score)
        assert estimate.degenerate
        assert estimate.tonic == 0
        assert estimate.correlation == 0.0

    def test_empty_score_rejected(self):
        with pytest.raises(EmptyScore):
            detect_key(Score(480))

    def test_profile_duration_weighted(self):
        score = Score(480, (NoteEvent(0, 60, 960, 64),
                            NoteEvent(0, 62, 480, 127)))
        profile = pitch_class_profile(score)
        assert profile[0] == 960 and profile[2] == 480


class TestQuadrantMetrics:
    def test_single_quarter_note(self):
        score = Score(480, (NoteEvent(0, 60, 480, 80),))
        m = quadrant_metrics([score, score])
        assert m.mean_note_length_s == pytest.approx(0.5)
        assert m.mean_velocity == 80.0
        assert m.n_files == 2
        assert m.note_density_nps == pytest.approx(2 / 1.0)

    def test_all_major_corpus(self):
        m = quadrant_metrics([C_MAJOR, transpose(C_MAJOR, 5)])
        assert m.major_key_ratio == 1.0

    def test_manual_oracle(self, rng):
        corpus = [random_score(rng, n_notes=6) for _ in range(4)]
        m = quadrant_metrics(corpus)
        from story2midi.midi import note_seconds, score_seconds
        lengths = [note_seconds(s, n) for s in corpus for n in s.notes]
        velocities = [n.velocity for s in corpus for n in s.notes]
        majors = sum(detect_key(s).mode == "major" for s in corpus)
        assert m.mean_note_length_s == pytest.approx(np.mean(lengths))
        assert m.mean_velocity == pytest.approx(np.mean(velocities))
        assert m.major_key_ratio == majors / 4
        assert m.note_density_nps == pytest.approx(
            24 / sum(score_seconds(s) for s in corpus))

    def test_empty_rejected(self):
        with pytest.raises(EmptyCorpus):
            quadrant_metrics([])


class TestWelch:
    def test_known_pair_against_oracle(self):
        a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
        result = welch_t_test(a, b)
        assert result.p_value == pytest.approx(welch_p_oracle(a, b),
                                               abs=1e-6)

    def test_identical_groups(self):
        result = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.t_statistic == 0.0
        assert result.p_value == 1.0

    def test_swap_symmetry(self, rng):
        a = rng.normal(0, 1, 12)
        b = rng.normal(0.5, 2, 9)
        fwd, rev = welch_t_test(a, b), welch_t_test(b, a)
        assert fwd.t_statistic == pytest.approx(-rev.t_statistic)
        assert fwd.p_value == pytest.approx(rev.p_value)
        assert fwd.degrees_of_freedom == pytest.approx(
            rev.degrees_of_freedom)

    def test_random_pairs_against_oracle(self, rng):
        for _ in range(50):
            a = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2),
                           int(rng.integers(3, 30)))
            b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2),
                           int(rng.integers(3, 30)))
            result = welch_t_test(a, b)
            assert result.p_value == pytest.approx(welch_p_oracle(a, b),
                                                   abs=1e-6)

    def test_degenerate_cases(self):
        with pytest.raises(DegenerateVariance):
            welch_t_test([1.0], [1.0, 2.0])
        with pytest.raises(DegenerateVariance):
            welch_t_test([1.0, 1.0], [2.0, 2.0])
        result = welch_t_test([3.0, 3.0], [3.0, 3.0])
        assert result.p_value == 1.0


class TestStandardizedMse:
    def make(self, **overrides):
        base = dict(major_key_ratio=0.5, mean_note_length_s=0.6,
                    mean_velocity=64.0, note_density_nps=2.0, n_files=4)
        return metrics.QuadrantMetrics(**{**base, **overrides})

    def reference(self):
        return {
            QuadrantLabel.Q1: self.make(major_key_ratio=0.8,
                                        mean_note_length_s=0.3,
                                        mean_velocity=90.0),
            QuadrantLabel.Q2: self.make(major_key_ratio=0.2,
                                        mean_note_length_s=0.35,
                                        mean_velocity=85.0),
            QuadrantLabel.Q3: self.make(major_key_ratio=0.3,
                                        mean_note_length_s=0.9,
                                        mean_velocity=50.0),
            QuadrantLabel.Q4: self.make(major_key_ratio=0.7,
                                        mean_note_length_s=0.8,
                                        mean_velocity=55.0),
        }

    def test_zero_for_identical(self):
        reference = self.reference()
        mse, contributions = standardized_mse(reference, reference)
        assert mse == 0.0
        assert all(v == 0.0 for field in contributions.values()
                   for v in field.values())

    def test_matches_hand_computation(self):
        reference = self.reference()
        generated = dict(reference)
        generated[QuadrantLabel.Q1] = self.make(
            major_key_ratio=0.6, mean_note_length_s=0.3, mean_velocity=90.0)
        mse, _ = standardized_mse(generated, reference)
        ratios = np.array([0.8, 0.2, 0.3, 0.7])
        expected = ((0.6 - 0.8) ** 2 / ratios.var()) / 12
        assert mse == pytest.approx(expected)

    def test_density_excluded(self):
        reference = self.reference()
        generated = {q: self.make(
            major_key_ratio=reference[q].major_key_ratio,
            mean_note_length_s=reference[q].mean_note_length_s,
            mean_velocity=reference[q].mean_velocity,
            note_density_nps=99.0) for q in QUADRANTS}
        mse, _ = standardized_mse(generated, reference)
        assert mse == 0.0


def constructed_effect_corpus(rng, n_per_quadrant=10):
    """Short notes in the high-arousal quadrants, long in the low ones."""
    corpora = {}
    for q in QUADRANTS:
        short = q.high_arousal
        scores = []
        for _ in range(n_per_quadrant):
            lo, hi = (60, 240) if short else (960, 1920)
            scores.append(Score(480, tuple(
                NoteEvent(j * 480, int(rng.integers(50, 80)),
                          int(rng.integers(lo, hi)),
                          int(rng.integers(60, 100))) for j in range(6))))
        corpora[q] = scores
    return corpora


class TestReport:
    def test_constructed_arousal_effect(self, rng):
        generated = constructed_effect_corpus(rng)
        report = valence_arousal_report(generated)
        test = report["tests"]["arousal_note_length"]
        assert test["p"] < 0.01
        assert test["group_a_mean"] < test["group_b_mean"]

    def test_reference_section(self, rng):
        generated = constructed_effect_corpus(rng, 4)
        reference = {q: quadrant_metrics(scores)
                     for q, scores in generated.items()}
        report = valence_arousal_report(generated, reference)
        assert report["standardized_mse"] == 0.0
        assert "reference" in report

    def test_missing_quadrant_rejected(self, rng):
        generated = constructed_effect_corpus(rng, 2)
        del generated[QuadrantLabel.Q2]
        with pytest.raises(EmptyCorpus):
            valence_arousal_report(generated)

    def test_format_report_renders(self, rng):
        generated = constructed_effect_corpus(rng, 3)
        text = metrics.format_report(valence_arousal_report(generated))
        assert "arousal_note_length" in text
        assert "Q1" in text and "Q4" in text
