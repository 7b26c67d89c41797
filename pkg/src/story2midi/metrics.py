"""Objective valence/arousal metrics over MIDI corpora, plus the t-tests.

Valence proxy: major key ratio via Krumhansl-Kessler correlation key
finding. Arousal proxies: mean note length in seconds and mean velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .emotion import QUADRANTS, QuadrantLabel
from .midi import Score, note_seconds, score_seconds

# Krumhansl-Kessler tonal hierarchy profiles (probe-tone ratings),
# indexed by pitch class relative to the tonic.
KK_MAJOR = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                     2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
KK_MINOR = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                     2.54, 4.75, 3.98, 2.69, 3.34, 3.17])

PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F",
                     "F#", "G", "G#", "A", "A#", "B")


class EmptyScore(Exception):
    pass


class EmptyCorpus(Exception):
    pass


class DegenerateVariance(Exception):
    pass


@dataclass(frozen=True)
class KeyEstimate:
    tonic: int  # pitch class 0-11
    mode: str  # "major" | "minor"
    correlation: float
    degenerate: bool = False

    @property
    def name(self) -> str:
        return f"{PITCH_CLASS_NAMES[self.tonic]} {self.mode}"


def pitch_class_profile(score: Score) -> np.ndarray:
    """12-bin profile weighted by note duration in ticks."""
    profile = np.zeros(12)
    for note in score.notes:
        profile[note.pitch % 12] += note.duration_ticks
    return profile


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom)


def detect_key(score: Score) -> KeyEstimate:
    """Correlate the duration-weighted profile against all 24 key templates.

    The profile is rotated (not the template), so transposing a score
    shifts the winning tonic bit-exactly.
    """
    if not score.notes:
        raise EmptyScore("cannot detect key of an empty score")
    profile = pitch_class_profile(score)
    if np.count_nonzero(profile) < 2 or np.ptp(profile) == 0:
        # single pitch class (or a flat profile): correlation is
        # undefined/uninformative, report the peak class as tonic
        tonic = int(np.argmax(profile))
        return KeyEstimate(tonic, "major", 0.0, degenerate=True)
    best = None
    for tonic in range(12):
        rotated = np.roll(profile, -tonic)
        for mode, template in (("major", KK_MAJOR), ("minor", KK_MINOR)):
            r = _pearson(rotated, template)
            if best is None or r > best.correlation:
                best = KeyEstimate(tonic, mode, r)
    return best


@dataclass(frozen=True)
class QuadrantMetrics:
    major_key_ratio: float
    mean_note_length_s: float
    mean_velocity: float
    note_density_nps: float
    n_files: int

    def as_dict(self) -> dict:
        return dict(vars(self))

    # metrics entering the checkpoint-selection MSE (density excluded)
    MSE_FIELDS = ("major_key_ratio", "mean_note_length_s", "mean_velocity")


def quadrant_metrics(files: list[Score]) -> QuadrantMetrics:
    files = list(files)
    if not files:
        raise EmptyCorpus("no files")
    major = 0
    lengths: list[float] = []
    velocities: list[float] = []
    total_notes = 0
    total_seconds = 0.0
    for score in files:
        if score.notes and detect_key(score).mode == "major":
            major += 1
        for note in score.notes:
            lengths.append(note_seconds(score, note))
            velocities.append(note.velocity)
        total_notes += len(score.notes)
        total_seconds += score_seconds(score)
    return QuadrantMetrics(
        major_key_ratio=major / len(files),
        mean_note_length_s=float(np.mean(lengths)) if lengths else 0.0,
        mean_velocity=float(np.mean(velocities)) if velocities else 0.0,
        note_density_nps=(total_notes / total_seconds
                          if total_seconds > 0 else 0.0),
        n_files=len(files))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    group_sizes: tuple[int, int]


def welch_t_test(a, b) -> TTestResult:
    """Welch's unequal-variance t with a two-sided p-value.

    p comes from the regularized incomplete beta function evaluated with
    Welch-Satterthwaite degrees of freedom.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateVariance("each group needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va + vb == 0:
        if a.mean() == b.mean():
            return TTestResult(0.0, float(a.size + b.size - 2), 1.0,
                               (a.size, b.size))
        raise DegenerateVariance("zero variance with unequal means")
    se_a, se_b = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(se_a + se_b)
    df = (se_a + se_b) ** 2 / (
        se_a ** 2 / (a.size - 1) + se_b ** 2 / (b.size - 1))
    if t == 0.0:
        p = 1.0
    else:
        p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(float(t), float(df), min(1.0, p), (a.size, b.size))


def standardized_mse(generated: dict[QuadrantLabel, QuadrantMetrics],
                     reference: dict[QuadrantLabel, QuadrantMetrics]
                     ) -> tuple[float, dict]:
    """Per-metric-standardized MSE between quadrant-mean metric tables.

    Each metric's squared error is divided by that metric's variance
    across the reference quadrants, so seconds, velocity units, and
    ratios contribute on a common scale.
    """
    contributions: dict[str, dict[str, float]] = {}
    total = 0.0
    count = 0
    for field in QuadrantMetrics.MSE_FIELDS:
        ref_values = np.array([getattr(reference[q], field)
                               for q in QUADRANTS])
        scale = float(ref_values.var())
        if scale == 0.0:
            scale = 1.0
        contributions[field] = {}
        for q in QUADRANTS:
            err = (getattr(generated[q], field)
                   - getattr(reference[q], field)) ** 2 / scale
            contributions[field][q.value] = err
            total += err
            count += 1
    return total / count, contributions


def valence_arousal_report(generated: dict[QuadrantLabel, list[Score]],
                           reference: dict[QuadrantLabel, QuadrantMetrics]
                           | None = None) -> dict:
    """Per-quadrant metrics plus the valence and arousal t-tests.

    Valence: per-file major-key indicator, (Q1 u Q4) vs (Q2 u Q3).
    Arousal: per-file mean note length and mean velocity,
    (Q1 u Q2) vs (Q3 u Q4). All tests operate on per-file values.
    """
    missing = [q.value for q in QUADRANTS if not generated.get(q)]
    if missing:
        raise EmptyCorpus(f"missing quadrants: {missing}")

    per_quadrant = {q: quadrant_metrics(generated[q]) for q in QUADRANTS}

    def per_file(quadrants, fn):
        return [fn(score) for q in quadrants for score in generated[q]]

    major_flag = lambda s: 1.0 if detect_key(s).mode == "major" else 0.0
    mean_len = lambda s: float(np.mean(
        [note_seconds(s, n) for n in s.notes])) if s.notes else 0.0
    mean_vel = lambda s: float(np.mean(
        [n.velocity for n in s.notes])) if s.notes else 0.0

    pos_v = (QuadrantLabel.Q1, QuadrantLabel.Q4)
    neg_v = (QuadrantLabel.Q2, QuadrantLabel.Q3)
    high_a = (QuadrantLabel.Q1, QuadrantLabel.Q2)
    low_a = (QuadrantLabel.Q3, QuadrantLabel.Q4)

    report = {
        "quadrants": {q.value: per_quadrant[q].as_dict() for q in QUADRANTS},
        "tests": {
            "valence_major_key": _test_dict(
                per_file(pos_v, major_flag), per_file(neg_v, major_flag)),
            "arousal_note_length": _test_dict(
                per_file(high_a, mean_len), per_file(low_a, mean_len)),
            "arousal_velocity": _test_dict(
                per_file(high_a, mean_vel), per_file(low_a, mean_vel)),
        },
    }
    if reference is not None:
        report["reference"] = {q.value: reference[q].as_dict()
                               for q in QUADRANTS}
        mse, contributions = standardized_mse(per_quadrant, reference)
        report["standardized_mse"] = mse
        report["mse_contributions"] = contributions
    return report


def _test_dict(a, b) -> dict:
    means = {"group_a_mean": float(np.mean(a)),
             "group_b_mean": float(np.mean(b))}
    try:
        result = welch_t_test(a, b)
    except DegenerateVariance as exc:
        return {**means, "error": str(exc)}
    return {**means, "t": result.t_statistic, "df": result.degrees_of_freedom,
            "p": result.p_value,
            "group_sizes": list(result.group_sizes)}


def format_report(report: dict) -> str:
    """Human-readable table for the valence/arousal report."""
    lines = ["quadrant  n_files  major_ratio  note_len_s  velocity  density"]
    for q in QUADRANTS:
        m = report["quadrants"][q.value]
        lines.append(
            f"{q.value:<9}{m['n_files']:>7}  {m['major_key_ratio']:>11.3f}"
            f"  {m['mean_note_length_s']:>10.3f}  {m['mean_velocity']:>8.2f}"
            f"  {m['note_density_nps']:>7.2f}")
    lines.append("")
    for name, test in report["tests"].items():
        if "error" in test:
            lines.append(f"{name}: {test['error']}")
        else:
            lines.append(
                f"{name}: t={test['t']:.3f} df={test['df']:.1f} "
                f"p={test['p']:.4g} "
                f"(means {test['group_a_mean']:.3f} vs "
                f"{test['group_b_mean']:.3f})")
    if "standardized_mse" in report:
        lines.append(f"standardized MSE vs reference: "
                     f"{report['standardized_mse']:.4f}")
    return "\n".join(lines)
