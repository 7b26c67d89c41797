"""Valence-arousal quadrants, VAD lexicon handling, and dataset building.

Texts carry a categorical emotion label; the lexicon turns each label into
a (valence, arousal) point which lands in one of Russell's four quadrants.
Texts are then paired with MIDI clips annotated with the same quadrant.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class QuadrantLabel(Enum):
    Q1 = "Q1"  # high valence, high arousal
    Q2 = "Q2"  # low valence, high arousal
    Q3 = "Q3"  # low valence, low arousal
    Q4 = "Q4"  # high valence, low arousal

    @property
    def high_valence(self) -> bool:
        return self in (QuadrantLabel.Q1, QuadrantLabel.Q4)

    @property
    def high_arousal(self) -> bool:
        return self in (QuadrantLabel.Q1, QuadrantLabel.Q2)

    @property
    def opposite(self) -> "QuadrantLabel":
        return {QuadrantLabel.Q1: QuadrantLabel.Q3,
                QuadrantLabel.Q2: QuadrantLabel.Q4,
                QuadrantLabel.Q3: QuadrantLabel.Q1,
                QuadrantLabel.Q4: QuadrantLabel.Q2}[self]


QUADRANTS = tuple(QuadrantLabel)


@dataclass(frozen=True)
class VADEntry:
    term: str
    valence: float
    arousal: float
    dominance: float

    def __post_init__(self):
        for name in ("valence", "arousal", "dominance"):
            score = getattr(self, name)
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{name} {score} outside [0, 1]")


@dataclass(frozen=True)
class TextSample:
    id: str
    body: str
    category: str
    quadrant: QuadrantLabel


@dataclass(frozen=True)
class PairedExample:
    text: TextSample
    midi_path: str
    quadrant: QuadrantLabel


class EmptyLexicon(Exception):
    pass


class OutOfRange(Exception):
    pass


class MissingTerm(Exception):
    pass


class EmptyQuadrant(Exception):
    pass


class InsufficientSamples(Exception):
    pass


@dataclass
class LexiconReport:
    entries: int = 0
    malformed: int = 0
    duplicates: int = 0


def load_vad_lexicon(lines, report: LexiconReport | None = None
                     ) -> dict[str, VADEntry]:
    """Read a tab-separated term/valence/arousal/dominance stream.

    Terms are lowercased; on duplicates the last row wins. Malformed rows
    are skipped and counted in the report.
    """
    report = report if report is not None else LexiconReport()
    lexicon: dict[str, VADEntry] = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        try:
            term = parts[0].strip().lower()
            entry = VADEntry(term, float(parts[1]), float(parts[2]),
                             float(parts[3]))
        except (IndexError, ValueError):
            report.malformed += 1
            continue
        if term in lexicon:
            report.duplicates += 1
        lexicon[term] = entry
    if not lexicon:
        raise EmptyLexicon("no usable rows in lexicon stream")
    report.entries = len(lexicon)
    return lexicon


def quadrant_of(valence: float, arousal: float,
                valence_threshold: float = 0.5,
                arousal_threshold: float = 0.5) -> QuadrantLabel:
    """Midpoint split of the unit square; >= threshold counts as high."""
    if not (0.0 <= valence <= 1.0 and 0.0 <= arousal <= 1.0):
        raise OutOfRange(f"(valence, arousal) = ({valence}, {arousal}) "
                         "outside the unit square")
    high_v = valence >= valence_threshold
    high_a = arousal >= arousal_threshold
    if high_v and high_a:
        return QuadrantLabel.Q1
    if high_a:
        return QuadrantLabel.Q2
    if not high_v:
        return QuadrantLabel.Q3
    return QuadrantLabel.Q4


def map_categories(categories, lexicon: dict[str, VADEntry],
                   valence_threshold: float = 0.5,
                   arousal_threshold: float = 0.5):
    """Map each emotion category to a quadrant via the lexicon.

    Returns (mapping, missing): categories without a lexicon entry are
    collected in `missing` rather than silently dropped.
    """
    mapping: dict[str, QuadrantLabel] = {}
    missing: list[str] = []
    for category in categories:
        entry = lexicon.get(category.strip().lower())
        if entry is None:
            missing.append(category)
            continue
        mapping[category] = quadrant_of(entry.valence, entry.arousal,
                                        valence_threshold, arousal_threshold)
    return mapping, missing


def pair_examples(texts, clips, seed: int) -> list[PairedExample]:
    """Pair each text with a uniformly random same-quadrant clip.

    `clips` is a list of (midi_path, QuadrantLabel). Deterministic for a
    given seed; texts keep their input order.
    """
    by_quadrant: dict[QuadrantLabel, list[str]] = {q: [] for q in QUADRANTS}
    for path, quadrant in clips:
        by_quadrant[quadrant].append(str(path))
    rng = random.Random(seed)
    paired = []
    for text in texts:
        pool = by_quadrant[text.quadrant]
        if not pool:
            raise EmptyQuadrant(f"no clips for quadrant {text.quadrant.value}")
        paired.append(PairedExample(text=text, midi_path=rng.choice(pool),
                                    quadrant=text.quadrant))
    return paired


def balanced_subset(texts, per_quadrant: int, seed: int) -> list[TextSample]:
    """Uniform sample without replacement of per_quadrant texts per quadrant."""
    by_quadrant: dict[QuadrantLabel, list[TextSample]] = {
        q: [] for q in QUADRANTS}
    for text in texts:
        by_quadrant[text.quadrant].append(text)
    rng = random.Random(seed)
    subset: list[TextSample] = []
    for quadrant in QUADRANTS:
        pool = by_quadrant[quadrant]
        if len(pool) < per_quadrant:
            raise InsufficientSamples(
                f"quadrant {quadrant.value} has {len(pool)} texts, "
                f"need {per_quadrant}")
        subset.extend(rng.sample(pool, per_quadrant))
    return subset


def load_goemotions(lines, categories: list[str],
                    category_quadrants: dict[str, QuadrantLabel]
                    ) -> list[TextSample]:
    """Parse GoEmotions-style TSV rows: text, comma-separated label ids, id.

    Multi-label rows take the first label; rows whose first label is
    missing from the quadrant map (e.g. neutral) are skipped.
    """
    samples = []
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            continue
        body, label_ids, sample_id = parts[0], parts[1], parts[2]
        try:
            first = int(label_ids.split(",")[0])
            category = categories[first]
        except (ValueError, IndexError):
            continue
        quadrant = category_quadrants.get(category)
        if quadrant is None:
            continue
        samples.append(TextSample(id=sample_id, body=body,
                                  category=category, quadrant=quadrant))
    return samples


def write_manifest(path, examples, split: str = "train") -> None:
    """Append dataset records, one JSON object per line."""
    with open(path, "a", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "id": ex.text.id,
                "body": ex.text.body,
                "category": ex.text.category,
                "quadrant": ex.quadrant.value,
                "midi_path": ex.midi_path,
                "split": split,
            }) + "\n")


def read_manifest(path) -> list[dict]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records
