export class MidiDecodeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MidiDecodeError";
  }
}

export interface NoteSpan {
  startSeconds: number;
  durationSeconds: number;
  pitch: number; // MIDI note number
  velocity: number; // 1..127
}

export interface ParsedClip {
  notes: NoteSpan[];
  totalSeconds: number;
}

interface RawNote {
  onTick: number;
  offTick: number;
  pitch: number;
  velocity: number;
}

class Reader {
  pos = 0;
  constructor(private readonly bytes: Uint8Array) {}

  get remaining(): number {
    return this.bytes.length - this.pos;
  }

  u8(): number {
    if (this.pos >= this.bytes.length) {
      throw new MidiDecodeError("unexpected end of file");
    }
    return this.bytes[this.pos++]!;
  }

  peek(): number {
    if (this.pos >= this.bytes.length) {
      throw new MidiDecodeError("unexpected end of file");
    }
    return this.bytes[this.pos]!;
  }

  u16(): number {
    return (this.u8() << 8) | this.u8();
  }

  u32(): number {
    return this.u16() * 0x10000 + this.u16();
  }

  varlen(): number {
    let value = 0;
    for (let i = 0; i < 4; i++) {
      const byte = this.u8();
      value = (value << 7) | (byte & 0x7f);
      if ((byte & 0x80) === 0) return value;
    }
    throw new MidiDecodeError("variable-length quantity too long");
  }

  skip(n: number): void {
    if (n < 0 || this.pos + n > this.bytes.length) {
      throw new MidiDecodeError("chunk length out of range");
    }
    this.pos += n;
  }

  ascii(n: number): string {
    let out = "";
    for (let i = 0; i < n; i++) out += String.fromCharCode(this.u8());
    return out;
  }
}

function readTrack(
  reader: Reader,
  notes: RawNote[],
  tempi: Map<number, number>,
): void {
  if (reader.ascii(4) !== "MTrk") throw new MidiDecodeError("missing MTrk");
  const length = reader.u32();
  const end = reader.pos + length;
  let tick = 0;
  let runningStatus = -1;
  // channel+pitch -> index of the open note in `notes`
  const open = new Map<number, number>();

  while (reader.pos < end) {
    tick += reader.varlen();
    let status = reader.peek();
    if (status >= 0x80) {
      reader.u8();
      runningStatus = status;
    } else {
      if (runningStatus < 0) {
        throw new MidiDecodeError("data byte without running status");
      }
      status = runningStatus;
    }

    if (status === 0xff) {
      const metaType = reader.u8();
      const metaLength = reader.varlen();
      if (metaType === 0x51) {
        if (metaLength !== 3) throw new MidiDecodeError("bad tempo meta");
        const usPerQuarter =
          (reader.u8() << 16) | (reader.u8() << 8) | reader.u8();
        tempi.set(tick, usPerQuarter);
      } else {
        reader.skip(metaLength);
      }
      runningStatus = -1;
      continue;
    }
    if (status === 0xf0 || status === 0xf7) {
      reader.skip(reader.varlen());
      runningStatus = -1;
      continue;
    }

    const kind = status & 0xf0;
    const channel = status & 0x0f;
    const data1 = reader.u8();
    if (kind === 0xc0 || kind === 0xd0) continue; // one data byte
    const data2 = reader.u8();

    const key = channel * 128 + data1;
    if (kind === 0x90 && data2 > 0) {
      open.set(key, notes.length);
      notes.push({ onTick: tick, offTick: -1, pitch: data1, velocity: data2 });
    } else if (kind === 0x80 || (kind === 0x90 && data2 === 0)) {
      const index = open.get(key);
      if (index !== undefined) {
        notes[index]!.offTick = tick;
        open.delete(key);
      }
    }
    // other channel messages (aftertouch, CC, pitch bend) are ignored
  }
  if (reader.pos !== end) throw new MidiDecodeError("track overran its length");
  // close any dangling notes at end of track
  for (const index of open.values()) notes[index]!.offTick = tick;
}

/** Convert ticks to seconds under a piecewise-constant tempo map. */
function tickToSeconds(
  tick: number,
  segments: Array<[number, number]>, // [startTick, usPerQuarter], ascending
  ticksPerQuarter: number,
): number {
  let seconds = 0;
  for (let i = 0; i < segments.length; i++) {
    const [startTick, usPerQuarter] = segments[i]!;
    if (tick <= startTick) break;
    const nextTick = i + 1 < segments.length ? segments[i + 1]![0] : Infinity;
    const span = Math.min(tick, nextTick) - startTick;
    seconds += (span * usPerQuarter) / (ticksPerQuarter * 1e6);
  }
  return seconds;
}

/** Parse standard MIDI bytes into note spans with wall-clock timing. */
export function parseClip(bytes: Uint8Array): ParsedClip {
  const reader = new Reader(bytes);
  if (reader.ascii(4) !== "MThd") throw new MidiDecodeError("missing MThd");
  if (reader.u32() !== 6) throw new MidiDecodeError("bad header length");
  const format = reader.u16();
  if (format !== 0 && format !== 1) {
    throw new MidiDecodeError(`unsupported format ${format}`);
  }
  const nTracks = reader.u16();
  const division = reader.u16();
  if (division & 0x8000) {
    throw new MidiDecodeError("SMPTE division is not supported");
  }
  if (division === 0) throw new MidiDecodeError("zero ticks per quarter");

  const raw: RawNote[] = [];
  const tempi = new Map<number, number>();
  for (let i = 0; i < nTracks; i++) readTrack(reader, raw, tempi);

  if (!tempi.has(0)) tempi.set(0, 500_000); // default 120 BPM
  const segments = [...tempi.entries()].sort((a, b) => a[0] - b[0]);

  const notes = raw
    .map((note) => {
      const start = tickToSeconds(note.onTick, segments, division);
      const endSec = tickToSeconds(note.offTick, segments, division);
      return {
        startSeconds: start,
        durationSeconds: Math.max(endSec - start, 0),
        pitch: note.pitch,
        velocity: note.velocity,
      };
    })
    .sort((a, b) => a.startSeconds - b.startSeconds || a.pitch - b.pitch);

  const totalSeconds = notes.reduce(
    (acc, n) => Math.max(acc, n.startSeconds + n.durationSeconds),
    0,
  );
  return { notes, totalSeconds };
}

export function pitchToHz(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}
