"""REMI tokenization: Score <-> Bar/Position/Pitch/Velocity/Duration tokens.

The grammar is strict: Bos, then bars, each holding (Position, Pitch,
Velocity, Duration) note groups, then Eos. A fixed vocabulary maps tokens
to stable integer ids; Pad is always id 0.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from enum import Enum


class TokenKind(Enum):
    PAD = "Pad"
    BOS = "Bos"
    EOS = "Eos"
    BAR = "Bar"
    POSITION = "Position"
    PITCH = "Pitch"
    VELOCITY = "Velocity"
    DURATION = "Duration"


SPECIALS = (TokenKind.PAD, TokenKind.BOS, TokenKind.EOS)


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: int = 0

    def __post_init__(self):
        if self.kind in SPECIALS or self.kind is TokenKind.BAR:
            if self.value != 0:
                raise ValueError(f"{self.kind.value} tokens carry value 0")


def _default_duration_bins() -> tuple[int, ...]:
    return tuple(range(1, 33)) + tuple(range(36, 65, 4))


@dataclass(frozen=True)
class TokenizerConfig:
    """REMI grid parameters. 4/4 meter is assumed throughout."""

    positions_per_bar: int = 32
    velocity_bins: int = 32
    duration_bins: tuple[int, ...] = field(default_factory=_default_duration_bins)
    pitch_low: int = 21
    pitch_high: int = 108
    ticks_per_quarter: int = 480  # grid resolution used by detokenize

    def __post_init__(self):
        if self.positions_per_bar < 1:
            raise ValueError("positions_per_bar must be positive")
        bins = tuple(self.duration_bins)
        if not bins or any(b < 1 for b in bins) or list(bins) != sorted(set(bins)):
            raise ValueError("duration_bins must be sorted, unique, all >= 1")
        if (self.ticks_per_quarter * 4) % self.positions_per_bar:
            raise ValueError("positions_per_bar must divide the bar tick grid")
        object.__setattr__(self, "duration_bins", bins)

    @property
    def ticks_per_position(self) -> int:
        return self.ticks_per_quarter * 4 // self.positions_per_bar

    @property
    def pitch_count(self) -> int:
        return self.pitch_high - self.pitch_low + 1

    def velocity_bin(self, velocity: int) -> int:
        bin_width = 126 / self.velocity_bins
        index = int((velocity - 1) / bin_width)
        return min(index, self.velocity_bins - 1)

    def velocity_center(self, bin_index: int) -> int:
        bin_width = 126 / self.velocity_bins
        return round(1 + (bin_index + 0.5) * bin_width)

    def snap_duration(self, units: int) -> int:
        return min(self.duration_bins, key=lambda b: abs(b - units))


class Vocabulary:
    """Bijective token <-> id map derived from a TokenizerConfig."""

    def __init__(self, config: TokenizerConfig):
        self.config = config
        tokens: list[Token] = [Token(k) for k in SPECIALS]
        tokens.append(Token(TokenKind.BAR))
        tokens += [Token(TokenKind.POSITION, v)
                   for v in range(config.positions_per_bar)]
        tokens += [Token(TokenKind.PITCH, p)
                   for p in range(config.pitch_low, config.pitch_high + 1)]
        tokens += [Token(TokenKind.VELOCITY, b)
                   for b in range(config.velocity_bins)]
        # Duration tokens carry the duration in position units, so the
        # config's bins are recoverable from a serialized vocabulary.
        tokens += [Token(TokenKind.DURATION, units)
                   for units in config.duration_bins]
        self.tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: Token) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token {token} not in vocabulary") from None

    def decode(self, token_id: int) -> Token:
        return self.tokens[token_id]

    def id_of(self, kind: TokenKind, value: int = 0) -> int:
        return self.encode(Token(kind, value))

    def kind_of(self, token_id: int) -> TokenKind:
        return self.tokens[token_id].kind

    def serialize(self) -> str:
        lines = [f"{t.kind.value}\t{t.value}\t{i}"
                 for i, t in enumerate(self.tokens)]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return self._ids[Token(TokenKind.BOS)]

    @property
    def eos_id(self) -> int:
        return self._ids[Token(TokenKind.EOS)]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    vocabulary: Vocabulary

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if any(not 0 <= i < len(self.vocabulary) for i in self.ids):
            raise ValueError("token id outside vocabulary")

    def __len__(self) -> int:
        return len(self.ids)

    def tokens(self) -> list[Token]:
        return [self.vocabulary.decode(i) for i in self.ids]


class GrammarViolation(Exception):
    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class EmptyCorpus(Exception):
    pass


class PitchClampWarning(UserWarning):
    pass


def _quantized_notes(score, config: TokenizerConfig):
    """Quantize notes onto the REMI grid.

    Yields (position_index, pitch, velocity_bin, duration_units) with
    absolute position indices; long notes are split into tied chunks at
    the maximum duration bin.
    """
    scale = config.positions_per_bar / (score.ticks_per_quarter * 4)
    max_bin = config.duration_bins[-1]
    out = []
    clamped = 0
    for note in score.notes:
        pitch = note.pitch
        if pitch < config.pitch_low or pitch > config.pitch_high:
            pitch = min(config.pitch_high, max(config.pitch_low, pitch))
            clamped += 1
        position = round(note.onset_ticks * scale)
        units = max(1, round(note.duration_ticks * scale))
        while units > max_bin:
            out.append((position, pitch, config.velocity_bin(note.velocity),
                        max_bin))
            position += max_bin
            units -= max_bin
        out.append((position, pitch, config.velocity_bin(note.velocity),
                    config.snap_duration(units)))
    if clamped:
        warnings.warn(f"{clamped} pitch(es) clamped to "
                      f"[{config.pitch_low}, {config.pitch_high}]",
                      PitchClampWarning)
    out.sort()
    return out


def tokenize(score, config: TokenizerConfig | None = None,
             vocabulary: Vocabulary | None = None) -> TokenSequence:
    """Quantize a Score onto the REMI grid and emit a token sequence."""
    config = config or TokenizerConfig()
    vocab = vocabulary or Vocabulary(config)
    ids = [vocab.bos_id]
    current_bar = -1
    for position, pitch, vel_bin, dur_units in _quantized_notes(score, config):
        bar = position // config.positions_per_bar
        while current_bar < bar:
            ids.append(vocab.id_of(TokenKind.BAR))
            current_bar += 1
        ids.append(vocab.id_of(TokenKind.POSITION,
                               position % config.positions_per_bar))
        ids.append(vocab.id_of(TokenKind.PITCH, pitch))
        ids.append(vocab.id_of(TokenKind.VELOCITY, vel_bin))
        ids.append(vocab.id_of(TokenKind.DURATION, dur_units))
    ids.append(vocab.eos_id)
    return TokenSequence(tuple(ids), vocab)


def detokenize(tokens: TokenSequence, config: TokenizerConfig | None = None):
    """Rebuild a quantized Score from tokens. Tempo is fixed at 120 BPM."""
    from . import midi as _midi

    config = config or tokens.vocabulary.config
    violations = validate(tokens)
    if violations:
        index, message = violations[0]
        raise GrammarViolation(index, message)

    tpp = config.ticks_per_position
    notes = []
    bar = -1
    position = 0
    pending: tuple[int, int] | None = None  # (pitch, velocity) awaiting duration
    for token in tokens.tokens():
        if token.kind is TokenKind.BAR:
            bar += 1
        elif token.kind is TokenKind.POSITION:
            position = bar * config.positions_per_bar + token.value
        elif token.kind is TokenKind.PITCH:
            pending = (token.value, 0)
        elif token.kind is TokenKind.VELOCITY:
            pending = (pending[0], config.velocity_center(token.value))
        elif token.kind is TokenKind.DURATION:
            pitch, velocity = pending
            duration = token.value
            notes.append(_midi.NoteEvent(
                onset_ticks=position * tpp, pitch=pitch,
                duration_ticks=duration * tpp, velocity=velocity))
    return _midi.Score(ticks_per_quarter=config.ticks_per_quarter,
                       notes=tuple(notes),
                       tempi=(_midi.TempoEvent(0, _midi.DEFAULT_TEMPO),))


# Finite-state acceptor: what kind may follow each state.
_FOLLOW = {
    "start": {TokenKind.BOS},
    TokenKind.BOS: {TokenKind.BAR, TokenKind.EOS},
    TokenKind.BAR: {TokenKind.POSITION, TokenKind.BAR, TokenKind.EOS},
    TokenKind.POSITION: {TokenKind.PITCH},
    TokenKind.PITCH: {TokenKind.VELOCITY},
    TokenKind.VELOCITY: {TokenKind.DURATION},
    TokenKind.DURATION: {TokenKind.POSITION, TokenKind.BAR, TokenKind.EOS},
    TokenKind.EOS: set(),
}

# Bos may also close immediately ([Bos, Eos] is the empty score); the table
# above already allows it.


def allowed_kinds(state) -> set[TokenKind]:
    """Kinds the grammar permits after the given state ('start' or a kind)."""
    return _FOLLOW[state]


def validate(tokens: TokenSequence) -> list[tuple[int, str]]:
    """Return (index, message) for every grammar violation; [] iff valid."""
    violations: list[tuple[int, str]] = []
    state = "start"
    last_position = -1
    seen_eos = False
    toks = tokens.tokens()
    for i, token in enumerate(toks):
        if seen_eos:
            violations.append((i, "token after Eos"))
            continue
        allowed = _FOLLOW[state]
        if token.kind not in allowed:
            names = sorted(k.value for k in allowed)
            violations.append(
                (i, f"{token.kind.value} not allowed here (expected one of "
                    f"{names})"))
            # keep scanning from the offending token's kind where sensible
            if token.kind in _FOLLOW:
                state = token.kind
            continue
        if token.kind is TokenKind.BAR:
            last_position = -1
        elif token.kind is TokenKind.POSITION:
            if token.value < last_position:
                violations.append(
                    (i, f"Position {token.value} decreases within bar "
                        f"(previous {last_position})"))
            last_position = token.value
        elif token.kind is TokenKind.EOS:
            seen_eos = True
        state = token.kind
    if not toks:
        violations.append((0, "empty sequence"))
    elif not seen_eos:
        violations.append((len(toks), "missing Eos"))
    return violations


def token_kind_frequencies(corpus) -> dict[TokenKind, float]:
    """Mean over sequences of each kind's per-sequence relative frequency."""
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("no sequences")
    totals = {kind: 0.0 for kind in TokenKind}
    for seq in corpus:
        if len(seq) == 0:
            raise EmptyCorpus("empty sequence in corpus")
        counts = {kind: 0 for kind in TokenKind}
        for token_id in seq.ids:
            counts[seq.vocabulary.kind_of(token_id)] += 1
        for kind in TokenKind:
            totals[kind] += counts[kind] / len(seq)
    return {kind: totals[kind] / len(corpus) for kind in TokenKind}


def frequency_distance(a: dict[TokenKind, float],
                       b: dict[TokenKind, float]) -> float:
    """L1 distance between two kind-frequency maps."""
    return sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in TokenKind)


def load_vocabulary(text: str) -> Vocabulary:
    """Inverse of Vocabulary.serialize; verifies ids are contiguous."""
    entries = []
    for line in text.strip().splitlines():
        kind, value, token_id = line.split("\t")
        entries.append((TokenKind(kind), int(value), int(token_id)))
    # Reconstruct the config dimensions from the entries.
    positions = [v for k, v, _ in entries if k is TokenKind.POSITION]
    pitches = [v for k, v, _ in entries if k is TokenKind.PITCH]
    velocities = [v for k, v, _ in entries if k is TokenKind.VELOCITY]
    durations = [v for k, v, _ in entries if k is TokenKind.DURATION]
    config = TokenizerConfig(
        positions_per_bar=len(positions),
        velocity_bins=len(velocities),
        duration_bins=tuple(sorted(durations)),
        pitch_low=min(pitches), pitch_high=max(pitches))
    vocab = Vocabulary(config)
    for kind, value, token_id in entries:
        if vocab.encode(Token(kind, value)) != token_id:
            raise ValueError("vocabulary file does not match derived layout")
    return vocab
