import { describe, expect, it } from "vitest";
import { MidiDecodeError, parseClip, pitchToHz } from "./midi.js";
import { midiFixture } from "./testing.js";

describe("parseClip", () => {
  it("single quarter note at 120 BPM lasts 0.5 s", () => {
    const clip = parseClip(
      midiFixture([{ deltaOn: 0, pitch: 60, durationTicks: 480 }]),
    );
    expect(clip.notes).toHaveLength(1);
    expect(clip.notes[0]!.pitch).toBe(60);
    expect(clip.notes[0]!.startSeconds).toBeCloseTo(0, 9);
    expect(clip.notes[0]!.durationSeconds).toBeCloseTo(0.5, 9);
    expect(clip.totalSeconds).toBeCloseTo(0.5, 9);
  });

  it("sequential notes accumulate delta times", () => {
    const clip = parseClip(
      midiFixture([
        { deltaOn: 0, pitch: 60, durationTicks: 240 },
        { deltaOn: 240, pitch: 64, durationTicks: 480 },
      ]),
    );
    expect(clip.notes).toHaveLength(2);
    // second note starts 240 (gap) + 240 (first duration) ticks in = 0.5 s
    expect(clip.notes[1]!.startSeconds).toBeCloseTo(0.5, 9);
    expect(clip.notes[1]!.durationSeconds).toBeCloseTo(0.5, 9);
  });

  it("honors a mid-file tempo change", () => {
    // one quarter at 120 BPM, tempo halves to 60 BPM, one more quarter
    const events = [
      0, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // 500000 us per quarter
      0, 0x90, 60, 80,
      0x83, 0x60, 0x80, 60, 0, // 480 ticks later: note off
      0, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, // 1000000 us per quarter
      0, 0x90, 62, 80,
      0x83, 0x60, 0x80, 62, 0,
      0, 0xff, 0x2f, 0x00,
    ];
    const bytes = new Uint8Array([
      0x4d, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
      0x4d, 0x54, 0x72, 0x6b, 0, 0, 0, events.length, ...events,
    ]);
    const clip = parseClip(bytes);
    expect(clip.notes[0]!.durationSeconds).toBeCloseTo(0.5, 9);
    expect(clip.notes[1]!.startSeconds).toBeCloseTo(0.5, 9);
    expect(clip.notes[1]!.durationSeconds).toBeCloseTo(1.0, 9);
    expect(clip.totalSeconds).toBeCloseTo(1.5, 9);
  });

  it("a 400-note file parses without error", () => {
    const notes = Array.from({ length: 400 }, (_, i) => ({
      deltaOn: i === 0 ? 0 : 120,
      pitch: 40 + (i % 48),
      durationTicks: 240,
    }));
    const clip = parseClip(midiFixture(notes));
    expect(clip.notes).toHaveLength(400);
    expect(clip.totalSeconds).toBeGreaterThan(0);
  });

  it("rejects non-MIDI bytes", () => {
    expect(() => parseClip(new Uint8Array([1, 2, 3, 4]))).toThrow(
      MidiDecodeError,
    );
    expect(() => parseClip(new Uint8Array(0))).toThrow(MidiDecodeError);
  });

  it("rejects truncated files", () => {
    const bytes = midiFixture([{ deltaOn: 0, pitch: 60, durationTicks: 480 }]);
    expect(() => parseClip(bytes.slice(0, bytes.length - 6))).toThrow(
      MidiDecodeError,
    );
  });

  it("rejects SMPTE division and format 2", () => {
    const bytes = midiFixture([{ deltaOn: 0, pitch: 60, durationTicks: 480 }]);
    const smpte = bytes.slice();
    smpte[12] = 0xe8; // negative division high byte
    expect(() => parseClip(smpte)).toThrow(MidiDecodeError);
    const format2 = bytes.slice();
    format2[9] = 2;
    expect(() => parseClip(format2)).toThrow(MidiDecodeError);
  });
});

describe("pitchToHz", () => {
  it("maps A4 to 440 and octaves to doubling", () => {
    expect(pitchToHz(69)).toBeCloseTo(440, 9);
    expect(pitchToHz(81)).toBeCloseTo(880, 9);
    expect(pitchToHz(60)).toBeCloseTo(261.6256, 3);
  });
});
