import { Quadrant, StudyClient, TrialView } from "./api.js";
import { MidiDecodeError, parseClip } from "./midi.js";
import { AudioContextLike, PlaybackController } from "./player.js";
import { TrialSession } from "./session.js";

// AV-plane layout: valence on the horizontal axis, arousal on the vertical.
const QUADRANT_GRID: Array<{ quadrant: Quadrant; label: string }> = [
  { quadrant: "Q2", label: "tense / angry" },
  { quadrant: "Q1", label: "happy / excited" },
  { quadrant: "Q3", label: "sad / gloomy" },
  { quadrant: "Q4", label: "calm / relaxed" },
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const node = el("button", "study-button", label);
  node.addEventListener("click", onClick);
  return node;
}

async function withRetry<T>(root: HTMLElement, action: () => Promise<T>):
    Promise<T> {
  // network failures get a retry prompt; in-progress selections live in the
  // TrialSession and are untouched by retries
  for (;;) {
    try {
      return await action();
    } catch (error) {
      await new Promise<void>((resolve) => {
        const note = el("div", "error", `Request failed: ${error}`);
        note.appendChild(button("Retry", () => {
          note.remove();
          resolve();
        }));
        root.appendChild(note);
      });
    }
  }
}

function renderReadText(root: HTMLElement, session: TrialSession,
    onDone: () => void): void {
  root.replaceChildren(
    el("p", "trial-text", session.trial.text),
    button("Continue", () => {
      session.finishReading();
      onDone();
    }),
  );
}

function renderQuadrantPicker(root: HTMLElement, session: TrialSession,
    onDone: () => void): void {
  const prompt = el("p", "prompt",
    "Which emotional quadrant best fits this text?");
  const grid = el("div", "quadrant-grid");
  grid.appendChild(el("div", "axis-label arousal-high", "high arousal"));
  for (const { quadrant, label } of QUADRANT_GRID) {
    const cell = button(label, () => {
      session.pickQuadrant(quadrant);
      onDone();
    });
    cell.classList.add("quadrant-cell");
    grid.appendChild(cell);
  }
  grid.appendChild(el("div", "axis-label arousal-low", "low arousal"));
  const axes = el("div", "axis-row");
  axes.appendChild(el("span", "axis-label", "low valence"));
  axes.appendChild(el("span", "axis-label", "high valence"));
  root.replaceChildren(prompt, grid, axes);
}

async function renderAudition(root: HTMLElement, session: TrialSession,
    client: StudyClient, controller: PlaybackController,
    onChoose: (clip: "A" | "B") => void, onSkip: () => void): Promise<void> {
  const trial = session.trial;
  root.replaceChildren(el("p", "prompt",
    "Play both clips, then choose the one that best evokes the same emotion."));
  let decodeFailed = false;
  for (const clip of ["A", "B"] as const) {
    const url = clip === "A" ? trial.clip_a_url : trial.clip_b_url;
    try {
      const bytes = await withRetry(root, () => client.fetchClip(url));
      controller.register(clip, parseClip(bytes));
    } catch (error) {
      if (!(error instanceof MidiDecodeError)) throw error;
      decodeFailed = true;
      root.appendChild(el("div", "error", `Clip ${clip} failed to decode.`));
    }
  }
  if (decodeFailed) {
    console.warn("skip event", { trial_id: trial.trial_id, reason: "decode" });
    root.appendChild(button("Skip this trial", onSkip));
    return;
  }

  const chooseButtons: HTMLButtonElement[] = [];
  const refreshGate = () => {
    for (const node of chooseButtons) node.disabled = !session.bothClipsPlayed;
  };
  const controls = el("div", "clip-controls");
  for (const clip of ["A", "B"] as const) {
    controls.appendChild(button(`Play clip ${clip}`, () => {
      controller.play(clip);
      session.markPlayed(clip);
      refreshGate();
    }));
    controls.appendChild(button("Pause", () => controller.stopAll()));
  }
  root.appendChild(controls);

  const choiceRow = el("div", "choice-row");
  for (const clip of ["A", "B"] as const) {
    const choose = button(`Choose clip ${clip}`, () => {
      controller.stopAll();
      session.beginChoice();
      session.chooseClip(clip);
      onChoose(clip);
    });
    choose.disabled = true;
    chooseButtons.push(choose);
    choiceRow.appendChild(choose);
  }
  root.appendChild(choiceRow);
}

export interface StudyUiOptions {
  root: HTMLElement;
  client: StudyClient;
  audioContext: AudioContextLike;
  participantId: string;
}

/** Run trials until the server reports none remain. */
export async function runStudy(options: StudyUiOptions): Promise<void> {
  const { root, client, audioContext, participantId } = options;
  const skipped = new Set<string>();
  for (;;) {
    const trial: TrialView | null = await withRetry(root, () =>
      client.nextTrial(participantId));
    if (trial === null || skipped.has(trial.trial_id)) {
      // the server replays unanswered trials, so a skipped one coming back
      // means everything answerable has been answered
      root.replaceChildren(el("p", "prompt", "All done. Thank you!"));
      return;
    }
    const submitted = await runTrial(root, client, audioContext, trial,
      participantId);
    if (!submitted) skipped.add(trial.trial_id);
  }
}

async function runTrial(root: HTMLElement, client: StudyClient,
    audioContext: AudioContextLike, trial: TrialView,
    participantId: string): Promise<boolean> {
  const session = new TrialSession(trial);
  const controller = new PlaybackController(audioContext);
  return new Promise((resolve, reject) => {
    renderReadText(root, session, () => {
      renderQuadrantPicker(root, session, () => {
        renderAudition(root, session, client, controller, () => {
          const payload = session.buildPayload(participantId);
          withRetry(root, () => client.submitResponse(payload))
            .then((outcome) => {
              if (outcome === "duplicate") {
                root.replaceChildren(
                  el("p", "error", "This response was already recorded."));
              }
              resolve(true);
            }, reject);
        }, () => resolve(false)).catch(reject);
      });
    });
  });
}
