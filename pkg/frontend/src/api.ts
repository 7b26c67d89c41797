import { z } from "zod";

export type Quadrant = "Q1" | "Q2" | "Q3" | "Q4";
export const QUADRANTS: Quadrant[] = ["Q1", "Q2", "Q3", "Q4"];

// Strict: a trial view carrying any extra field (a quadrant label in
// particular) is a contract violation, not something to silently accept.
export const TrialViewSchema = z
  .object({
    trial_id: z.string().min(1),
    text: z.string(),
    clip_a_url: z.string().min(1),
    clip_b_url: z.string().min(1),
  })
  .strict();

export type TrialView = z.infer<typeof TrialViewSchema>;

export interface ResponsePayload {
  trial_id: string;
  participant_id: string;
  perceived_quadrant: Quadrant;
  chosen_clip: "A" | "B";
}

export const ReportSchema = z
  .object({
    n_responses: z.number().int().nonnegative(),
    valence_accuracy: z.number(),
    arousal_accuracy: z.number(),
    joint_accuracy: z.number(),
    chance_levels: z.tuple([z.number(), z.number(), z.number()]),
  })
  .passthrough();

export type Report = z.infer<typeof ReportSchema>;

export type SubmitOutcome = "recorded" | "duplicate";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the study server's HTTP+JSON contract. */
export class StudyClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
  ) {}

  /** Next unanswered trial for the participant, or null when exhausted. */
  async nextTrial(participantId: string): Promise<TrialView | null> {
    const url = `${this.baseUrl}/api/trial/next?participant=${encodeURIComponent(participantId)}`;
    const res = await this.fetchFn(url);
    if (res.status === 404) return null;
    if (!res.ok) throw new ApiError(`trial fetch failed`, res.status);
    return TrialViewSchema.parse(await res.json());
  }

  async submitResponse(payload: ResponsePayload): Promise<SubmitOutcome> {
    const res = await this.fetchFn(`${this.baseUrl}/api/response`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (res.status === 409) return "duplicate";
    if (!res.ok) throw new ApiError(`submit failed`, res.status);
    return "recorded";
  }

  async fetchClip(clipUrl: string): Promise<Uint8Array> {
    const res = await this.fetchFn(`${this.baseUrl}${clipUrl}`);
    if (!res.ok) throw new ApiError(`clip fetch failed`, res.status);
    return new Uint8Array(await res.arrayBuffer());
  }

  async report(): Promise<Report> {
    const res = await this.fetchFn(`${this.baseUrl}/api/report`);
    if (!res.ok) throw new ApiError(`report fetch failed`, res.status);
    return ReportSchema.parse(await res.json());
  }
}
