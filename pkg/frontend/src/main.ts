import { StudyClient } from "./api.js";
import type { AudioContextLike } from "./player.js";
import { runStudy } from "./ui.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  let participantId = "";
  while (!participantId) {
    participantId = (window.prompt("Participant id:") ?? "").trim();
  }

  const client = new StudyClient("", (url, init) => fetch(url, init));
  // the real AudioContext satisfies the subset we use; the interface only
  // narrows connect() targets for testability
  const audioContext = new AudioContext() as unknown as AudioContextLike;
  await runStudy({ root, client, audioContext, participantId });
}

window.addEventListener("DOMContentLoaded", () => {
  boot().catch((error) => {
    console.error(error);
    const root = document.getElementById("app");
    if (root) root.textContent = `Fatal error: ${error}`;
  });
});
