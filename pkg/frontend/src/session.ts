import type { Quadrant, ResponsePayload, TrialView } from "./api.js";

export type Phase =
  | "read_text"
  | "pick_quadrant"
  | "audition"
  | "choose_clip"
  | "done";

const PHASE_ORDER: Phase[] = [
  "read_text",
  "pick_quadrant",
  "audition",
  "choose_clip",
  "done",
];

export class PhaseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PhaseError";
  }
}

/**
 * State machine for one trial. Phases move forward only; the clip choice
 * is unreachable until the participant has placed the text in a quadrant
 * and played both clips at least once.
 */
export class TrialSession {
  private _phase: Phase = "read_text";
  private _perceived: Quadrant | null = null;
  private _played = { A: false, B: false };
  private _chosen: "A" | "B" | null = null;
  private _submitted = false;

  constructor(readonly trial: TrialView) {}

  get phase(): Phase {
    return this._phase;
  }

  get perceived(): Quadrant | null {
    return this._perceived;
  }

  get chosen(): "A" | "B" | null {
    return this._chosen;
  }

  get submitted(): boolean {
    return this._submitted;
  }

  hasPlayed(clip: "A" | "B"): boolean {
    return this._played[clip];
  }

  get bothClipsPlayed(): boolean {
    return this._played.A && this._played.B;
  }

  private advance(from: Phase, to: Phase): void {
    if (this._phase !== from) {
      throw new PhaseError(`cannot move to ${to} from ${this._phase}`);
    }
    if (PHASE_ORDER.indexOf(to) !== PHASE_ORDER.indexOf(from) + 1) {
      throw new PhaseError(`${from} -> ${to} is not a forward step`);
    }
    this._phase = to;
  }

  finishReading(): void {
    this.advance("read_text", "pick_quadrant");
  }

  pickQuadrant(quadrant: Quadrant): void {
    this.advance("pick_quadrant", "audition");
    this._perceived = quadrant;
  }

  markPlayed(clip: "A" | "B"): void {
    if (this._phase !== "audition") {
      throw new PhaseError(`clips play during audition, not ${this._phase}`);
    }
    this._played[clip] = true;
  }

  beginChoice(): void {
    if (!this.bothClipsPlayed) {
      throw new PhaseError("both clips must be played before choosing");
    }
    this.advance("audition", "choose_clip");
  }

  chooseClip(clip: "A" | "B"): void {
    this.advance("choose_clip", "done");
    this._chosen = clip;
  }

  /**
   * The exact server schema for this trial's response. Callable once:
   * a second call means a duplicate submission and is refused client-side.
   */
  buildPayload(participantId: string): ResponsePayload {
    if (this._phase !== "done" || this._perceived === null ||
        this._chosen === null) {
      throw new PhaseError("trial is not complete");
    }
    if (this._submitted) {
      throw new PhaseError("response already submitted for this trial");
    }
    this._submitted = true;
    return {
      trial_id: this.trial.trial_id,
      participant_id: participantId,
      perceived_quadrant: this._perceived,
      chosen_clip: this._chosen,
    };
  }
}
