import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from story2midi import study
from story2midi.emotion import QUADRANTS, QuadrantLabel
from story2midi.midi import NoteEvent, Score, write_midi
from story2midi.study import (InsufficientClips, StudyResponse, StudyStore,
                              Trial, build_trials, create_app,
                              score_responses)

from conftest import synthetic_texts


def neutral_manifest(per_quadrant=3):
    # opaque filenames: clip paths must not leak their quadrant
    return [(f"clips/c{qi * 10 + i}.mid", q)
            for qi, q in enumerate(QUADRANTS) for i in range(per_quadrant)]


def make_trials(rng, n_texts=12):
    texts = synthetic_texts(rng, n_texts)
    return texts, build_trials(texts, neutral_manifest(), seed=5)


def trial_fixture(clip_a_quadrant, clip_b_quadrant, index=0,
                  text_quadrant=None) -> Trial:
    return Trial(trial_id=f"trial_{index:04d}", text_body="text",
                 text_quadrant=text_quadrant or clip_a_quadrant,
                 clip_a=f"a{index}.mid", clip_b=f"b{index}.mid",
                 clip_a_quadrant=clip_a_quadrant,
                 clip_b_quadrant=clip_b_quadrant)


def response(trial: Trial, perceived: QuadrantLabel,
             chosen: str) -> StudyResponse:
    return StudyResponse(trial_id=trial.trial_id, participant_id="p1",
                         perceived_quadrant=perceived, chosen_clip=chosen,
                         timestamp=time.time())


class TestBuildTrials:
    def test_distractor_is_diagonal(self, rng):
        texts, trials = make_trials(rng)
        assert len(trials) == len(texts)
        for text, trial in zip(texts, trials):
            assert trial.text_quadrant == text.quadrant
            quadrants = {trial.clip_a_quadrant, trial.clip_b_quadrant}
            assert quadrants == {text.quadrant, text.quadrant.opposite}

    def test_ab_order_randomized_but_deterministic(self, rng):
        texts, trials = make_trials(rng, 40)
        a_is_target = [t.clip_a_quadrant == t.text_quadrant for t in trials]
        assert any(a_is_target) and not all(a_is_target)
        again = build_trials(texts, neutral_manifest(), seed=5)
        assert again == trials

    def test_missing_quadrant(self, rng):
        texts = synthetic_texts(rng, 4)
        with pytest.raises(InsufficientClips):
            build_trials(texts, [("a.mid", QuadrantLabel.Q1)], seed=0)

    def test_view_hides_quadrants(self, rng):
        _, trials = make_trials(rng)
        for trial in trials:
            view = trial.view()
            assert set(view) == {"trial_id", "text", "clip_a_url",
                                 "clip_b_url"}
            blob = json.dumps(view)
            for q in QUADRANTS:
                assert q.value not in blob


class TestScoring:
    def test_table_parity(self):
        """A response set with exact per-axis rates lands on the published
        accuracy triple (0.53, 0.70, 0.40) with chance (0.5, 0.5, 0.25)."""
        # All 100 responses: perceived Q1, clip A chosen. Clip A's quadrant
        # controls which axes match: Q1 both, Q4 valence only, Q2 arousal
        # only, Q3 neither. 40 + 13 = 53 valence, 40 + 30 = 70 arousal.
        composition = [(QuadrantLabel.Q1, 40), (QuadrantLabel.Q4, 13),
                       (QuadrantLabel.Q2, 30), (QuadrantLabel.Q3, 17)]
        trials, responses = [], []
        index = 0
        for clip_quadrant, count in composition:
            for _ in range(count):
                trial = trial_fixture(clip_quadrant, clip_quadrant.opposite,
                                      index, text_quadrant=QuadrantLabel.Q1)
                trials.append(trial)
                responses.append(response(trial, QuadrantLabel.Q1, "A"))
                index += 1
        report = score_responses(responses, trials)
        assert report.valence_accuracy == pytest.approx(0.53)
        assert report.arousal_accuracy == pytest.approx(0.70)
        assert report.joint_accuracy == pytest.approx(0.40)
        assert report.chance_levels == (0.5, 0.5, 0.25)
        assert report.n_responses == 100

    def test_joint_bounded_by_axes(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 20))
            trials, responses = [], []
            for i in range(n):
                qa, qb = rng.choice(QUADRANTS, size=2)
                trial = trial_fixture(qa, qb, i,
                                      text_quadrant=rng.choice(QUADRANTS))
                trials.append(trial)
                responses.append(response(
                    trial, rng.choice(QUADRANTS),
                    "A" if rng.random() < 0.5 else "B"))
            report = score_responses(responses, trials)
            assert report.joint_accuracy <= min(report.valence_accuracy,
                                                report.arousal_accuracy)
            assert report.ground_truth_joint <= min(
                report.ground_truth_valence, report.ground_truth_arousal)

    def test_ground_truth_uses_text_quadrant(self):
        trial = trial_fixture(QuadrantLabel.Q1, QuadrantLabel.Q3,
                              text_quadrant=QuadrantLabel.Q3)
        report = score_responses([response(trial, QuadrantLabel.Q1, "A")],
                                 [trial])
        assert report.joint_accuracy == 1.0  # matches perception
        assert report.ground_truth_joint == 0.0  # not the text's quadrant

    def test_empty_rejected(self):
        with pytest.raises(study.EmptyResponses):
            score_responses([], [])


class TestStudyStore:
    def test_log_durability(self, tmp_path, rng):
        _, trials = make_trials(rng)
        log = tmp_path / "responses.jsonl"
        store = StudyStore(trials, log)
        store.submit(response(trials[0], QuadrantLabel.Q2, "B"))
        store.submit(response(trials[1], QuadrantLabel.Q1, "A"))
        # a fresh store replays the log
        replayed = StudyStore(trials, log)
        assert len(replayed.responses) == 2
        assert replayed.report() == store.report()

    def test_duplicate_rejected_not_logged_twice(self, tmp_path, rng):
        _, trials = make_trials(rng)
        log = tmp_path / "responses.jsonl"
        store = StudyStore(trials, log)
        store.submit(response(trials[0], QuadrantLabel.Q2, "B"))
        with pytest.raises(ValueError):
            store.submit(response(trials[0], QuadrantLabel.Q3, "A"))
        assert len(log.read_text().splitlines()) == 1

    def test_unknown_trial(self, tmp_path, rng):
        _, trials = make_trials(rng)
        store = StudyStore(trials, tmp_path / "log.jsonl")
        bogus = trial_fixture(QuadrantLabel.Q1, QuadrantLabel.Q3, 999)
        with pytest.raises(KeyError):
            store.submit(response(bogus, QuadrantLabel.Q1, "A"))

    def test_next_trial_advances_per_participant(self, tmp_path, rng):
        _, trials = make_trials(rng)
        store = StudyStore(trials, tmp_path / "log.jsonl")
        assert store.next_trial("p1") == trials[0]
        store.submit(response(trials[0], QuadrantLabel.Q1, "A"))
        assert store.next_trial("p1") == trials[1]
        assert store.next_trial("p2") == trials[0]

    def test_exhaustion(self, tmp_path, rng):
        _, trials = make_trials(rng, 2)
        store = StudyStore(trials[:1], tmp_path / "log.jsonl")
        store.submit(response(trials[0], QuadrantLabel.Q1, "A"))
        assert store.next_trial("p1") is None


@pytest.fixture
def api(tmp_path, rng):
    texts = synthetic_texts(rng, 8)
    clips_dir = tmp_path / "clips"
    clips_dir.mkdir()
    manifest = []
    for qi, q in enumerate(QUADRANTS):
        for i in range(2):
            path = clips_dir / f"c{qi * 10 + i}.mid"
            path.write_bytes(write_midi(
                Score(480, (NoteEvent(0, 60, 480, 64),))))
            manifest.append((str(path), q))
    trials = build_trials(texts, manifest, seed=1)
    store = StudyStore(trials, tmp_path / "responses.jsonl")
    app = create_app(store, clips_dir)
    return TestClient(app), trials, tmp_path


class TestApi:
    def test_full_session(self, api):
        client, trials, tmp_path = api
        seen = 0
        while True:
            got = client.get("/api/trial/next", params={"participant": "p9"})
            if got.status_code == 404:
                break
            payload = got.json()
            assert set(payload) == {"trial_id", "text", "clip_a_url",
                                    "clip_b_url"}
            for q in QUADRANTS:
                assert q.value not in json.dumps(payload)
            clip = client.get(payload["clip_a_url"])
            assert clip.status_code == 200
            assert clip.headers["content-type"].startswith("audio/midi")
            posted = client.post("/api/response", json={
                "trial_id": payload["trial_id"], "participant_id": "p9",
                "perceived_quadrant": "Q1", "chosen_clip": "A"})
            assert posted.status_code == 200
            seen += 1
        assert seen == len(trials)
        report = client.get("/api/report").json()
        assert report["n_responses"] == len(trials)
        assert report["chance_levels"] == [0.5, 0.5, 0.25]
        log = (tmp_path / "responses.jsonl").read_text().splitlines()
        assert len(log) == len(trials)

    def test_duplicate_is_409(self, api):
        client, trials, _ = api
        body = {"trial_id": trials[0].trial_id, "participant_id": "p1",
                "perceived_quadrant": "Q2", "chosen_clip": "B"}
        assert client.post("/api/response", json=body).status_code == 200
        assert client.post("/api/response", json=body).status_code == 409

    def test_unknown_trial_is_404(self, api):
        client, _, _ = api
        body = {"trial_id": "trial_9999", "participant_id": "p1",
                "perceived_quadrant": "Q2", "chosen_clip": "B"}
        assert client.post("/api/response", json=body).status_code == 404

    def test_bad_fields_are_400(self, api):
        client, trials, _ = api
        base = {"trial_id": trials[0].trial_id, "participant_id": "p1"}
        bad_quadrant = {**base, "perceived_quadrant": "Q9",
                        "chosen_clip": "A"}
        assert client.post("/api/response",
                           json=bad_quadrant).status_code == 400
        bad_clip = {**base, "perceived_quadrant": "Q1", "chosen_clip": "C"}
        assert client.post("/api/response", json=bad_clip).status_code == 400

    def test_report_empty_is_404(self, api):
        client, _, _ = api
        assert client.get("/api/report").status_code == 404

    def test_clip_traversal_blocked(self, api):
        client, _, _ = api
        assert client.get("/clips/%2e%2e%2fsecrets").status_code == 404
