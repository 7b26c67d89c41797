import numpy as np
import pytest

from story2midi import midi, remi
from story2midi.emotion import QUADRANTS, QuadrantLabel, TextSample

# marker words that make quadrants lexically separable in synthetic texts
QUADRANT_MARKERS = {
    QuadrantLabel.Q1: ["joyful", "excited", "thrilled", "sunshine"],
    QuadrantLabel.Q2: ["furious", "terrified", "storm", "panic"],
    QuadrantLabel.Q3: ["gloomy", "weary", "drizzle", "sorrow"],
    QuadrantLabel.Q4: ["serene", "gentle", "meadow", "content"],
}

FILLER = ("the a and of to in it was on that day after before while "
          "story people music time house river").split()


def random_score(rng: np.random.Generator, n_notes: int = 20,
                 n_tempi: int = 1, ticks_per_quarter: int = 480,
                 pitch_range=(21, 108)) -> midi.Score:
    notes = []
    onset = 0
    for _ in range(n_notes):
        onset += int(rng.integers(0, ticks_per_quarter))
        notes.append(midi.NoteEvent(
            onset_ticks=onset,
            pitch=int(rng.integers(pitch_range[0], pitch_range[1] + 1)),
            duration_ticks=int(rng.integers(30, 4 * ticks_per_quarter)),
            velocity=int(rng.integers(1, 128))))
    tempi = [midi.TempoEvent(0, int(rng.integers(200_000, 1_200_000)))]
    end = max(n.end_ticks for n in notes) if notes else 1
    for _ in range(n_tempi - 1):
        tempi.append(midi.TempoEvent(int(rng.integers(1, end + 1)),
                                     int(rng.integers(200_000, 1_200_000))))
    return midi.Score(ticks_per_quarter, tuple(notes), tuple(tempi))


def synthetic_texts(rng: np.random.Generator, n: int) -> list[TextSample]:
    """Texts whose quadrant is recoverable from marker words alone."""
    texts = []
    for i in range(n):
        quadrant = QUADRANTS[i % 4]
        markers = QUADRANT_MARKERS[quadrant]
        words = [str(rng.choice(FILLER)) for _ in range(6)]
        for _ in range(3):
            words.insert(int(rng.integers(0, len(words) + 1)),
                         str(rng.choice(markers)))
        texts.append(TextSample(id=f"t{i:04d}", body=" ".join(words),
                                category="synthetic", quadrant=quadrant))
    return texts


# -- independent oracles (deliberately avoid the library code paths) ----

def quantizer_oracle(score: midi.Score,
                     config: remi.TokenizerConfig) -> midi.Score:
    """Note-by-note REMI quantization without going through tokens."""
    bar_ticks_in = score.ticks_per_quarter * 4
    ticks_per_pos_out = config.ticks_per_quarter * 4 // config.positions_per_bar
    max_bin = max(config.duration_bins)
    bin_width = 126 / config.velocity_bins
    notes = []
    for note in score.notes:
        pitch = min(config.pitch_high, max(config.pitch_low, note.pitch))
        pos = round(note.onset_ticks * config.positions_per_bar / bar_ticks_in)
        units = max(1, round(note.duration_ticks * config.positions_per_bar
                             / bar_ticks_in))
        vel_bin = min(int((note.velocity - 1) / bin_width),
                      config.velocity_bins - 1)
        velocity = round(1 + (vel_bin + 0.5) * bin_width)
        chunks = []
        while units > max_bin:
            chunks.append(max_bin)
            units -= max_bin
        chunks.append(min(config.duration_bins, key=lambda b: abs(b - units)))
        cursor = pos
        for chunk in chunks:
            notes.append(midi.NoteEvent(cursor * ticks_per_pos_out, pitch,
                                        chunk * ticks_per_pos_out, velocity))
            cursor += chunk
    return midi.Score(config.ticks_per_quarter, tuple(notes),
                      (midi.TempoEvent(0, 500_000),))


def tempo_integration_oracle(score: midi.Score, start_tick: int,
                             end_tick: int) -> float:
    """Brute-force tick-by-tick integration of the tempo map."""
    tempo_at = {}
    current = 500_000
    events = {t.tick: t.microseconds_per_quarter for t in score.tempi}
    seconds = 0.0
    for tick in range(start_tick, end_tick):
        if tick in events:
            current = events[tick]
        elif tick == start_tick:
            # find the tempo in force at start_tick
            applicable = [t for t in score.tempi if t.tick <= tick]
            if applicable:
                current = applicable[-1].microseconds_per_quarter
        seconds += current / (1e6 * score.ticks_per_quarter)
    return seconds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tok_config():
    return remi.TokenizerConfig()


@pytest.fixture
def vocab(tok_config):
    return remi.Vocabulary(tok_config)


@pytest.fixture
def float64_engine():
    from story2midi.nn import autograd
    autograd.set_dtype(np.float64)
    yield
    autograd.set_dtype(np.float32)
