import { ParsedClip, pitchToHz } from "./midi.js";

// Just enough of the Web Audio API to schedule notes; tests inject a fake.
export interface GainNodeLike {
  gain: {
    setValueAtTime(value: number, time: number): void;
    linearRampToValueAtTime(value: number, time: number): void;
  };
  connect(target: unknown): void;
  disconnect(): void;
}

export interface OscillatorLike {
  type: string;
  frequency: { setValueAtTime(value: number, time: number): void };
  connect(target: GainNodeLike): void;
  start(when: number): void;
  stop(when: number): void;
}

export interface AudioContextLike {
  currentTime: number;
  destination: unknown;
  createOscillator(): OscillatorLike;
  createGain(): GainNodeLike;
}

const ATTACK = 0.01;
const RELEASE = 0.05;

/**
 * Plays one parsed clip through a minimal triangle-wave synthesizer.
 * Supports play, pause (resume from position), and stop (reset).
 */
export class ClipPlayer {
  private offset = 0; // seconds into the clip when paused/stopped
  private startedAt: number | null = null; // context time of last play()
  private active: Array<{ osc: OscillatorLike; gain: GainNodeLike }> = [];

  constructor(
    private readonly context: AudioContextLike,
    private readonly clip: ParsedClip,
  ) {}

  get playing(): boolean {
    return this.startedAt !== null;
  }

  /** Seconds into the clip, clamped to its length. */
  get positionSeconds(): number {
    const position =
      this.startedAt === null
        ? this.offset
        : this.offset + (this.context.currentTime - this.startedAt);
    return Math.min(position, this.clip.totalSeconds);
  }

  get finished(): boolean {
    return this.positionSeconds >= this.clip.totalSeconds;
  }

  play(): void {
    if (this.playing) return;
    if (this.offset >= this.clip.totalSeconds) this.offset = 0;
    const now = this.context.currentTime;
    this.startedAt = now;
    for (const note of this.clip.notes) {
      const start = note.startSeconds - this.offset;
      const end = start + note.durationSeconds;
      if (end <= 0) continue; // already behind the playhead
      const osc = this.context.createOscillator();
      const gain = this.context.createGain();
      osc.type = "triangle";
      osc.frequency.setValueAtTime(pitchToHz(note.pitch), now);
      const level = (note.velocity / 127) * 0.3;
      const onAt = now + Math.max(start, 0);
      gain.gain.setValueAtTime(0, onAt);
      gain.gain.linearRampToValueAtTime(level, onAt + ATTACK);
      gain.gain.setValueAtTime(level, Math.max(now + end - RELEASE, onAt));
      gain.gain.linearRampToValueAtTime(0, now + end);
      osc.connect(gain);
      gain.connect(this.context.destination);
      osc.start(onAt);
      osc.stop(now + end);
      this.active.push({ osc, gain });
    }
  }

  pause(): void {
    if (!this.playing) return;
    this.offset = this.positionSeconds;
    this.silence();
  }

  stop(): void {
    this.silence();
    this.offset = 0;
  }

  private silence(): void {
    this.startedAt = null;
    const now = this.context.currentTime;
    for (const { osc, gain } of this.active) {
      try {
        osc.stop(now);
      } catch {
        // already stopped
      }
      gain.disconnect();
    }
    this.active = [];
  }
}

/** At most one clip audible at a time: starting one pauses the other. */
export class PlaybackController {
  private players = new Map<string, ClipPlayer>();

  constructor(private readonly context: AudioContextLike) {}

  register(id: string, clip: ParsedClip): ClipPlayer {
    const player = new ClipPlayer(this.context, clip);
    this.players.set(id, player);
    return player;
  }

  play(id: string): ClipPlayer {
    const player = this.players.get(id);
    if (!player) throw new Error(`unknown clip ${id}`);
    for (const [otherId, other] of this.players) {
      if (otherId !== id) other.pause();
    }
    player.play();
    return player;
  }

  stopAll(): void {
    for (const player of this.players.values()) player.stop();
  }
}
