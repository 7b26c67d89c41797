"""Standard MIDI File parsing/writing and a tempo-aware note representation.

Supports SMF formats 0 and 1. All tracks are merged into a single voice;
only note on/off and set-tempo events are interpreted, everything else is
skipped. This is enough for solo-piano corpora.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace

DEFAULT_TEMPO = 500000  # microseconds per quarter note (120 BPM)


class MidiError(Exception):
    """Base class for MIDI parsing errors."""


class MalformedFile(MidiError):
    pass


class UnsupportedFormat(MidiError):
    pass


class DanglingNoteOnWarning(UserWarning):
    """Note-on with no matching note-off; truncated at end of track."""


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset_ticks: int
    pitch: int
    duration_ticks: int
    velocity: int

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside [0, 127]")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")
        if self.onset_ticks < 0:
            raise ValueError("onset_ticks must be non-negative")
        if self.duration_ticks < 1:
            raise ValueError("duration_ticks must be >= 1")

    @property
    def end_ticks(self) -> int:
        return self.onset_ticks + self.duration_ticks


@dataclass(frozen=True, order=True)
class TempoEvent:
    tick: int
    microseconds_per_quarter: int

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be non-negative")
        if self.microseconds_per_quarter <= 0:
            raise ValueError("microseconds_per_quarter must be positive")


@dataclass(frozen=True)
class Score:
    """Notes plus a tempo map, everything in ticks.

    Notes are kept sorted by (onset, pitch, duration, velocity); the tempo
    map is sorted by tick and always has an entry at tick 0.
    """

    ticks_per_quarter: int = 480
    notes: tuple[NoteEvent, ...] = ()
    tempi: tuple[TempoEvent, ...] = field(
        default=(TempoEvent(0, DEFAULT_TEMPO),))

    def __post_init__(self):
        if self.ticks_per_quarter <= 0:
            raise ValueError("ticks_per_quarter must be positive")
        notes = tuple(sorted(self.notes))
        tempi = {t.tick: t for t in self.tempi}  # last event at a tick wins
        if 0 not in tempi:
            tempi[0] = TempoEvent(0, DEFAULT_TEMPO)
        tempi = tuple(sorted(tempi.values()))
        object.__setattr__(self, "notes", notes)
        object.__setattr__(self, "tempi", tempi)

    @property
    def end_ticks(self) -> int:
        return max((n.end_ticks for n in self.notes), default=0)


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MalformedFile("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MalformedFile("variable-length quantity longer than 4 bytes")


def _write_varlen(value: int) -> bytes:
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def _parse_track(data: bytes, track_index: int):
    """One pass over a track chunk body.

    Returns (notes, tempo_events). Note on/off pairing is per (channel,
    pitch); a second note-on before the off closes the first note at the
    new onset (last-on-wins).
    """
    notes: list[NoteEvent] = []
    tempi: list[TempoEvent] = []
    active: dict[tuple[int, int], tuple[int, int]] = {}  # (ch, pitch) -> (onset, vel)
    pos = 0
    tick = 0
    running_status = None

    def close(key, end_tick):
        onset, vel = active.pop(key)
        notes.append(NoteEvent(onset, key[1], max(1, end_tick - onset), vel))

    while pos < len(data):
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= len(data):
            raise MalformedFile("truncated event")
        status = data[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running_status = status
        else:
            if running_status is None:
                raise MalformedFile("data byte with no running status")
            status = running_status

        kind = status & 0xF0
        channel = status & 0x0F
        if status == 0xFF:  # meta event
            if pos >= len(data):
                raise MalformedFile("truncated meta event")
            meta_type = data[pos]
            length, pos = _read_varlen(data, pos + 1)
            if pos + length > len(data):
                raise MalformedFile("meta event runs past track end")
            payload = data[pos:pos + length]
            pos += length
            if meta_type == 0x51:
                if length != 3:
                    raise MalformedFile("set-tempo meta must be 3 bytes")
                usq = int.from_bytes(payload, "big")
                if usq <= 0:
                    raise MalformedFile("non-positive tempo")
                tempi.append(TempoEvent(tick, usq))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex, skip
            length, pos = _read_varlen(data, pos)
            if pos + length > len(data):
                raise MalformedFile("sysex runs past track end")
            pos += length
        elif kind in (0x80, 0x90):
            if pos + 2 > len(data):
                raise MalformedFile("truncated note event")
            pitch, velocity = data[pos], data[pos + 1]
            pos += 2
            if pitch > 127 or velocity > 127:
                raise MalformedFile("note data byte out of range")
            key = (channel, pitch)
            if kind == 0x90 and velocity > 0:
                if key in active:
                    close(key, tick)
                active[key] = (tick, velocity)
            else:  # note-off, or note-on with velocity 0
                if key in active:
                    close(key, tick)
        elif kind in (0xA0, 0xB0, 0xE0):
            pos += 2
        elif kind in (0xC0, 0xD0):
            pos += 1
        else:
            raise MalformedFile(f"unexpected status byte 0x{status:02x}")
        if pos > len(data):
            raise MalformedFile("event runs past track end")

    if active:
        warnings.warn(
            f"track {track_index}: {len(active)} dangling note-on(s) "
            "truncated at track end", DanglingNoteOnWarning)
        for key in list(active):
            close(key, max(tick, active[key][0] + 1))
    return notes, tempi


def parse_midi(data: bytes) -> Score:
    """Parse SMF bytes into a Score. Raises MalformedFile/UnsupportedFormat."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedFile("missing MThd header")
    header_len, fmt, ntrks, division = struct.unpack(">IHHH", data[4:14])
    if header_len < 6:
        raise MalformedFile(f"bad header length {header_len}")
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF format {fmt} not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division not supported")
    if division == 0:
        raise MalformedFile("zero ticks per quarter")

    pos = 8 + header_len
    notes: list[NoteEvent] = []
    tempi: list[TempoEvent] = []
    for track_index in range(ntrks):
        if pos + 8 > len(data):
            raise MalformedFile(f"expected {ntrks} tracks, found {track_index}")
        if data[pos:pos + 4] != b"MTrk":
            raise MalformedFile("missing MTrk chunk")
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) < length:
            raise MalformedFile("track chunk runs past end of file")
        pos += 8 + length
        track_notes, track_tempi = _parse_track(body, track_index)
        notes.extend(track_notes)
        tempi.extend(track_tempi)

    return Score(ticks_per_quarter=division, notes=tuple(notes),
                 tempi=tuple(tempi))


def write_midi(score: Score) -> bytes:
    """Serialize a Score as a format-0 SMF; parse_midi inverts it exactly.

    Overlapping notes of the same pitch are spread across MIDI channels so
    the on/off pairing survives the round trip.
    """
    events: list[tuple[int, int, bytes]] = []  # (tick, sort_rank, payload)
    for tempo in score.tempi:
        events.append((tempo.tick, 0, bytes(
            [0xFF, 0x51, 0x03]) + tempo.microseconds_per_quarter.to_bytes(3, "big")))

    # Per pitch, track which channels are busy until which tick.
    busy: dict[int, list[tuple[int, int]]] = {}
    for note in score.notes:
        ends = [e for e in busy.get(note.pitch, []) if e[0] > note.onset_ticks]
        used = {ch for _, ch in ends}
        channel = next((c for c in range(16) if c not in used), 0)
        ends.append((note.end_ticks, channel))
        busy[note.pitch] = ends
        # rank 1: note-offs sort before note-ons at the same tick
        events.append((note.end_ticks, 1,
                       bytes([0x80 | channel, note.pitch, 0])))
        events.append((note.onset_ticks, 2,
                       bytes([0x90 | channel, note.pitch, note.velocity])))

    events.sort(key=lambda e: (e[0], e[1]))
    body = bytearray()
    last_tick = 0
    for tick, _, payload in events:
        body += _write_varlen(tick - last_tick)
        body += payload
        last_tick = tick
    body += b"\x00\xff\x2f\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, score.ticks_per_quarter)
    track = b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
    return header + track


def tick_to_seconds(score: Score, tick: int) -> float:
    """Wall-clock time of a tick under the score's tempo map."""
    seconds = 0.0
    tempi = score.tempi
    for i, tempo in enumerate(tempi):
        seg_start = tempo.tick
        seg_end = tempi[i + 1].tick if i + 1 < len(tempi) else tick
        if tick <= seg_start:
            break
        span = min(tick, seg_end) - seg_start
        seconds += span * tempo.microseconds_per_quarter / (
            1e6 * score.ticks_per_quarter)
    return seconds


def note_seconds(score: Score, note: NoteEvent) -> float:
    """Duration of a note in seconds, integrated over the tempo map."""
    return tick_to_seconds(score, note.end_ticks) - tick_to_seconds(
        score, note.onset_ticks)


def score_seconds(score: Score) -> float:
    """Total duration of the score in seconds (to the last note-off)."""
    return tick_to_seconds(score, score.end_ticks)


def transpose(score: Score, semitones: int) -> Score:
    """Shift every pitch, clamping to [0, 127]."""
    notes = tuple(
        replace(n, pitch=min(127, max(0, n.pitch + semitones)))
        for n in score.notes)
    return replace(score, notes=notes)
