"""Two-phase listening study: trial construction, HTTP API, and scoring.

Each trial shows a text plus two clips: one generated for the text's own
quadrant and a distractor generated for the diagonally opposite quadrant.
Participants first place the text in a quadrant, then pick the clip that
best matches. Responses are scored along the valence and arousal axes
against the participant's own perception.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .emotion import QuadrantLabel


class InsufficientClips(Exception):
    pass


class EmptyResponses(Exception):
    pass


@dataclass(frozen=True)
class Trial:
    trial_id: str
    text_body: str
    text_quadrant: QuadrantLabel
    clip_a: str  # file path; generation quadrant below, never sent to clients
    clip_b: str
    clip_a_quadrant: QuadrantLabel
    clip_b_quadrant: QuadrantLabel

    def view(self) -> dict:
        """Participant-facing payload: no quadrant labels anywhere."""
        return {"trial_id": self.trial_id,
                "text": self.text_body,
                "clip_a_url": f"/clips/{Path(self.clip_a).name}",
                "clip_b_url": f"/clips/{Path(self.clip_b).name}"}


@dataclass(frozen=True)
class StudyResponse:
    trial_id: str
    participant_id: str
    perceived_quadrant: QuadrantLabel
    chosen_clip: str  # "A" | "B"
    timestamp: float

    def to_record(self) -> dict:
        return {"trial_id": self.trial_id,
                "participant_id": self.participant_id,
                "perceived_quadrant": self.perceived_quadrant.value,
                "chosen_clip": self.chosen_clip,
                "timestamp": self.timestamp}

    @classmethod
    def from_record(cls, record: dict) -> "StudyResponse":
        return cls(trial_id=record["trial_id"],
                   participant_id=record["participant_id"],
                   perceived_quadrant=QuadrantLabel(
                       record["perceived_quadrant"]),
                   chosen_clip=record["chosen_clip"],
                   timestamp=record["timestamp"])


@dataclass(frozen=True)
class StudyReport:
    valence_accuracy: float
    arousal_accuracy: float
    joint_accuracy: float
    n_responses: int
    # same accuracies scored against the text's true quadrant instead of
    # the participant's phase-1 perception
    ground_truth_valence: float = 0.0
    ground_truth_arousal: float = 0.0
    ground_truth_joint: float = 0.0
    chance_levels: tuple[float, float, float] = (0.5, 0.5, 0.25)

    def as_dict(self) -> dict:
        d = dict(vars(self))
        d["chance_levels"] = list(self.chance_levels)
        return d


def build_trials(texts, generated_manifest, seed: int) -> list[Trial]:
    """One trial per text: own-quadrant clip + diagonal distractor.

    generated_manifest is a list of (path, QuadrantLabel). A/B order is
    randomized by the seed; clips are drawn round-robin per quadrant.
    """
    by_quadrant: dict[QuadrantLabel, list[str]] = {
        q: [] for q in QuadrantLabel}
    for path, quadrant in generated_manifest:
        by_quadrant[quadrant].append(str(path))
    rng = random.Random(seed)
    cursors = {q: 0 for q in QuadrantLabel}

    def next_clip(quadrant: QuadrantLabel) -> str:
        pool = by_quadrant[quadrant]
        if not pool:
            raise InsufficientClips(f"no clips for {quadrant.value}")
        clip = pool[cursors[quadrant] % len(pool)]
        cursors[quadrant] += 1
        return clip

    trials = []
    for i, text in enumerate(texts):
        target = next_clip(text.quadrant)
        distractor = next_clip(text.quadrant.opposite)
        if rng.random() < 0.5:
            a, b = target, distractor
            qa, qb = text.quadrant, text.quadrant.opposite
        else:
            a, b = distractor, target
            qa, qb = text.quadrant.opposite, text.quadrant
        trials.append(Trial(trial_id=f"trial_{i:04d}", text_body=text.body,
                            text_quadrant=text.quadrant,
                            clip_a=a, clip_b=b,
                            clip_a_quadrant=qa, clip_b_quadrant=qb))
    return trials


def _axis_match(perceived: QuadrantLabel, clip: QuadrantLabel
                ) -> tuple[bool, bool]:
    return (perceived.high_valence == clip.high_valence,
            perceived.high_arousal == clip.high_arousal)


def score_responses(responses, trials) -> StudyReport:
    """Valence/arousal/joint accuracy over a response set."""
    responses = list(responses)
    if not responses:
        raise EmptyResponses("no responses to score")
    by_id = {t.trial_id: t for t in trials}
    v = a = j = gv = ga = gj = 0
    for response in responses:
        trial = by_id[response.trial_id]
        clip_quadrant = (trial.clip_a_quadrant if response.chosen_clip == "A"
                         else trial.clip_b_quadrant)
        val, aro = _axis_match(response.perceived_quadrant, clip_quadrant)
        v += val
        a += aro
        j += val and aro
        val, aro = _axis_match(trial.text_quadrant, clip_quadrant)
        gv += val
        ga += aro
        gj += val and aro
    n = len(responses)
    return StudyReport(valence_accuracy=v / n, arousal_accuracy=a / n,
                       joint_accuracy=j / n, n_responses=n,
                       ground_truth_valence=gv / n,
                       ground_truth_arousal=ga / n,
                       ground_truth_joint=gj / n)


class StudyStore:
    """Trial set plus an append-only durable response log."""

    def __init__(self, trials: list[Trial], log_path):
        self.trials = list(trials)
        self.by_id = {t.trial_id: t for t in self.trials}
        self.log_path = Path(log_path)
        self.responses: dict[tuple[str, str], StudyResponse] = {}
        self._lock = threading.Lock()
        if self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    response = StudyResponse.from_record(json.loads(line))
                    key = (response.participant_id, response.trial_id)
                    self.responses[key] = response

    def next_trial(self, participant_id: str) -> Trial | None:
        with self._lock:
            answered = {trial_id for pid, trial_id in self.responses
                        if pid == participant_id}
        for trial in self.trials:
            if trial.trial_id not in answered:
                return trial
        return None

    def submit(self, response: StudyResponse) -> None:
        """Raises KeyError for unknown trials, ValueError for duplicates.

        The record hits the log before it is acknowledged in memory.
        """
        if response.trial_id not in self.by_id:
            raise KeyError(response.trial_id)
        key = (response.participant_id, response.trial_id)
        with self._lock:
            if key in self.responses:
                raise ValueError("duplicate response")
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(response.to_record()) + "\n")
                fh.flush()
            self.responses[key] = response

    def report(self) -> StudyReport:
        with self._lock:
            responses = list(self.responses.values())
        return score_responses(responses, self.trials)


def create_app(store: StudyStore, clips_dir):
    """FastAPI app serving the study API and MIDI clip bytes."""
    from fastapi import FastAPI, HTTPException, Request, Response

    app = FastAPI(title="listening study")
    clips_dir = Path(clips_dir)

    @app.get("/api/trial/next")
    def next_trial(participant: str):
        trial = store.next_trial(participant)
        if trial is None:
            raise HTTPException(status_code=404,
                                detail="no trials remaining")
        return trial.view()

    # module-wide string annotations would not resolve the locally
    # imported Request, so annotate the handler directly
    async def submit_response(request):
        try:
            body = await request.json()
        except ValueError:
            raise HTTPException(status_code=400, detail="invalid JSON body")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="expected an object")
        for field in ("trial_id", "participant_id", "perceived_quadrant",
                      "chosen_clip"):
            if not isinstance(body.get(field), str):
                raise HTTPException(status_code=400,
                                    detail=f"missing or bad {field}")
        try:
            quadrant = QuadrantLabel(body["perceived_quadrant"])
        except ValueError:
            raise HTTPException(status_code=400,
                                detail="bad perceived_quadrant")
        if body["chosen_clip"] not in ("A", "B"):
            raise HTTPException(status_code=400, detail="bad chosen_clip")
        response = StudyResponse(trial_id=body["trial_id"],
                                 participant_id=body["participant_id"],
                                 perceived_quadrant=quadrant,
                                 chosen_clip=body["chosen_clip"],
                                 timestamp=time.time())
        try:
            store.submit(response)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown trial")
        except ValueError:
            raise HTTPException(status_code=409,
                                detail="response already recorded")
        return {"status": "recorded"}

    submit_response.__annotations__["request"] = Request
    app.post("/api/response")(submit_response)

    @app.get("/api/report")
    def report():
        try:
            return store.report().as_dict()
        except EmptyResponses:
            raise HTTPException(status_code=404, detail="no responses yet")

    @app.get("/clips/{filename}")
    def clip(filename: str):
        path = clips_dir / Path(filename).name  # no traversal
        if not path.is_file():
            raise HTTPException(status_code=404, detail="unknown clip")
        return Response(content=path.read_bytes(),
                        media_type="audio/midi")

    return app
