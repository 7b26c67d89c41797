// In-memory stand-ins for the study server and the Web Audio API, plus a
// tiny MIDI writer, so tests can run a whole participant session offline.

import type { Quadrant } from "./api.js";
import type {
  AudioContextLike,
  GainNodeLike,
  OscillatorLike,
} from "./player.js";

export interface FakeTrial {
  trial_id: string;
  text: string;
  text_quadrant: Quadrant;
  clip_a: string; // clip file name
  clip_b: string;
  clip_a_quadrant: Quadrant;
  clip_b_quadrant: Quadrant;
}

/** Mirrors the server's HTTP contract over in-memory state. */
export class FakeServer {
  readonly log: unknown[] = [];
  readonly servedPayloads: string[] = []; // raw JSON bodies sent to clients
  private readonly answered = new Set<string>();

  constructor(
    private readonly trials: FakeTrial[],
    private readonly clips: Map<string, Uint8Array>,
  ) {}

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const { pathname, searchParams } = new URL(url, "http://study.test");
    if (pathname === "/api/trial/next") {
      const participant = searchParams.get("participant") ?? "";
      const trial = this.trials.find(
        (t) => !this.answered.has(`${participant}:${t.trial_id}`),
      );
      if (!trial) return jsonResponse(404, { detail: "no trials remaining" });
      const view = {
        trial_id: trial.trial_id,
        text: trial.text,
        clip_a_url: `/clips/${trial.clip_a}`,
        clip_b_url: `/clips/${trial.clip_b}`,
      };
      this.servedPayloads.push(JSON.stringify(view));
      return jsonResponse(200, view);
    }
    if (pathname === "/api/response" && init?.method === "POST") {
      const body = JSON.parse(String(init.body));
      for (const field of [
        "trial_id",
        "participant_id",
        "perceived_quadrant",
        "chosen_clip",
      ]) {
        if (typeof body[field] !== "string") {
          return jsonResponse(400, { detail: `missing or bad ${field}` });
        }
      }
      const trial = this.trials.find((t) => t.trial_id === body.trial_id);
      if (!trial) return jsonResponse(404, { detail: "unknown trial" });
      const key = `${body.participant_id}:${body.trial_id}`;
      if (this.answered.has(key)) {
        return jsonResponse(409, { detail: "response already recorded" });
      }
      this.answered.add(key);
      this.log.push(body);
      return jsonResponse(200, { status: "recorded" });
    }
    if (pathname.startsWith("/clips/")) {
      const bytes = this.clips.get(pathname.slice("/clips/".length));
      if (!bytes) return jsonResponse(404, { detail: "unknown clip" });
      return new Response(bytes.slice().buffer as ArrayBuffer, {
        status: 200,
        headers: { "content-type": "audio/midi" },
      });
    }
    return jsonResponse(404, { detail: "not found" });
  };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

interface ScheduledNote {
  frequency: number;
  startAt: number;
  stopAt: number;
}

class FakeOscillator implements OscillatorLike {
  type = "sine";
  private hz = 0;
  startAt = -1;
  stopAt = -1;
  frequency = {
    setValueAtTime: (value: number) => {
      this.hz = value;
    },
  };
  constructor(private readonly sink: ScheduledNote[]) {}
  connect(): void {}
  start(when: number): void {
    this.startAt = when;
  }
  stop(when: number): void {
    if (this.stopAt < 0) {
      this.sink.push({ frequency: this.hz, startAt: this.startAt, stopAt: when });
    }
    this.stopAt = when;
  }
}

class FakeGain implements GainNodeLike {
  gain = {
    setValueAtTime: () => {},
    linearRampToValueAtTime: () => {},
  };
  connect(): void {}
  disconnect(): void {}
}

/** Manually-advanced clock plus a record of every scheduled note. */
export class FakeAudioContext implements AudioContextLike {
  currentTime = 0;
  destination = {};
  readonly scheduled: ScheduledNote[] = [];

  createOscillator(): OscillatorLike {
    return new FakeOscillator(this.scheduled);
  }

  createGain(): GainNodeLike {
    return new FakeGain();
  }

  advance(seconds: number): void {
    this.currentTime += seconds;
  }
}

function varLen(value: number): number[] {
  const bytes = [value & 0x7f];
  value >>= 7;
  while (value > 0) {
    bytes.unshift((value & 0x7f) | 0x80);
    value >>= 7;
  }
  return bytes;
}

export interface FixtureNote {
  deltaOn: number; // ticks after the previous event
  pitch: number;
  durationTicks: number;
  velocity?: number;
}

/** Format-0 file at 480 ticks per quarter, 120 BPM, sequential notes. */
export function midiFixture(notes: FixtureNote[]): Uint8Array {
  const events: number[] = [
    0, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // tempo 500000 us per quarter
  ];
  for (const note of notes) {
    events.push(...varLen(note.deltaOn), 0x90, note.pitch,
      note.velocity ?? 80);
    events.push(...varLen(note.durationTicks), 0x80, note.pitch, 0);
  }
  events.push(0, 0xff, 0x2f, 0x00); // end of track
  const header = [
    0x4d, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
  ];
  const trackHeader = [
    0x4d, 0x54, 0x72, 0x6b,
    (events.length >>> 24) & 0xff, (events.length >>> 16) & 0xff,
    (events.length >>> 8) & 0xff, events.length & 0xff,
  ];
  return new Uint8Array([...header, ...trackHeader, ...events]);
}
