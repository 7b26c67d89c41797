"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Every subcommand honors --seed and supports --dry-run (validate inputs,
no side effects).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import emotion, metrics, remi, sampling, study, training
from . import model as M
from .emotion import QUADRANTS, QuadrantLabel
from .midi import parse_midi, write_midi
from .nn.checkpoint import load_checkpoint
from .textvocab import TextVocab

USAGE_ERROR, DATA_ERROR, RUNTIME_ERROR = 1, 2, 3


class CliDataError(Exception):
    pass


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliDataError(f"{what} not found: {path}")
    return path


def _read_clip_manifest(path) -> list[tuple[str, QuadrantLabel]]:
    clips = []
    for line in _require(path, "clip manifest").read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        clips.append((record["path"], QuadrantLabel(record["quadrant"])))
    return clips


def _tokenize_dir(midi_dir, config: remi.TokenizerConfig):
    paths = sorted(Path(midi_dir).glob("**/*.mid"))
    if not paths:
        raise CliDataError(f"no .mid files under {midi_dir}")
    return paths, [remi.tokenize(parse_midi(p.read_bytes()), config)
                   for p in paths]


def _load_decoder(path, vocab: remi.Vocabulary) -> M.MusicDecoder:
    params, config, _, frozen = load_checkpoint(
        path, expected_vocab_hash=vocab.content_hash())
    decoder = M.MusicDecoder(M.DecoderConfig(**config),
                             np.random.default_rng(0))
    decoder.load_state_dict(params)
    for name, p in decoder.named_parameters():
        if name in frozen:
            p.freeze()
    return decoder


def _load_encoder(path, text_vocab: TextVocab) -> M.TextEncoder:
    import hashlib
    expected = hashlib.sha256(text_vocab.serialize().encode()).hexdigest()
    params, config, _, _ = load_checkpoint(path, expected_vocab_hash=expected)
    encoder = M.TextEncoder(M.EncoderConfig(**config),
                            np.random.default_rng(0))
    encoder.load_state_dict(params)
    return encoder


def _texts_from_manifest(path, split: str | None = None):
    texts = []
    for record in emotion.read_manifest(_require(path, "dataset manifest")):
        if split and record.get("split") != split:
            continue
        texts.append(emotion.TextSample(
            id=record["id"], body=record["body"],
            category=record["category"],
            quadrant=QuadrantLabel(record["quadrant"])))
    if not texts:
        raise CliDataError(f"no texts in {path}"
                           + (f" for split {split}" if split else ""))
    return texts


# -- subcommand handlers ---------------------------------------------

def cmd_tokenize(args):
    score = parse_midi(_require(args.infile, "input MIDI").read_bytes())
    tokens = remi.tokenize(score, remi.TokenizerConfig())
    if args.dry_run:
        return
    Path(args.outfile).write_text(
        " ".join(str(i) for i in tokens.ids) + "\n")


def cmd_detokenize(args):
    vocab = remi.Vocabulary(remi.TokenizerConfig())
    ids = [int(t) for t in
           _require(args.infile, "token file").read_text().split()]
    score = remi.detokenize(remi.TokenSequence(tuple(ids), vocab))
    if args.dry_run:
        return
    Path(args.outfile).write_bytes(write_midi(score))


def cmd_validate_tokens(args):
    vocab = remi.Vocabulary(remi.TokenizerConfig())
    ids = [int(t) for t in
           _require(args.infile, "token file").read_text().split()]
    violations = remi.validate(remi.TokenSequence(tuple(ids), vocab))
    for index, message in violations:
        print(f"token {index}: {message}")
    if violations:
        raise CliDataError(f"{len(violations)} grammar violation(s)")
    print("valid")


def cmd_map_emotions(args):
    with open(_require(args.lexicon, "VAD lexicon")) as fh:
        report = emotion.LexiconReport()
        lexicon = emotion.load_vad_lexicon(fh, report)
    categories = _require(args.categories,
                          "category list").read_text().split()
    mapping, missing = emotion.map_categories(categories, lexicon)
    result = {"mapping": {c: q.value for c, q in mapping.items()},
              "missing": missing,
              "lexicon": vars(report)}
    counts = {q.value: 0 for q in QUADRANTS}
    for q in mapping.values():
        counts[q.value] += 1
    result["distribution"] = counts
    print(json.dumps(result, indent=2))
    if args.dry_run:
        return
    if args.outfile:
        Path(args.outfile).write_text(json.dumps(result, indent=2))


def cmd_build_dataset(args):
    with open(_require(args.lexicon, "VAD lexicon")) as fh:
        lexicon = emotion.load_vad_lexicon(fh)
    categories = _require(args.categories,
                          "category list").read_text().split()
    mapping, _ = emotion.map_categories(categories, lexicon)
    with open(_require(args.texts, "GoEmotions TSV")) as fh:
        texts = emotion.load_goemotions(fh, categories, mapping)
    if not texts:
        raise CliDataError("no mappable texts")
    clips = _read_clip_manifest(args.clips)
    if args.per_quadrant:
        texts = emotion.balanced_subset(texts, args.per_quadrant, args.seed)
    paired = emotion.pair_examples(texts, clips, args.seed)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(paired))
    n_test = max(1, int(len(paired) * args.test_fraction))
    test_index = set(order[:n_test].tolist())
    if args.dry_run:
        print(f"would write {len(paired)} records to {args.outfile}")
        return
    out = Path(args.outfile)
    out.unlink(missing_ok=True)
    train = [p for i, p in enumerate(paired) if i not in test_index]
    test = [p for i, p in enumerate(paired) if i in test_index]
    emotion.write_manifest(out, train, split="train")
    emotion.write_manifest(out, test, split="test")
    print(f"wrote {len(train)} train + {len(test)} test records")


def _decoder_from_args(args, vocab):
    config = M.DecoderConfig(token_vocab_size=len(vocab), dim=args.dim,
                             heads=4, layers=3,
                             max_seq_len=args.max_seq_len,
                             condition_dim=args.condition_dim)
    return M.MusicDecoder(config, np.random.default_rng(args.seed))


def cmd_pretrain(args):
    config = remi.TokenizerConfig()
    vocab = remi.Vocabulary(config)
    _, corpus = _tokenize_dir(args.midi_dir, config)
    decoder = _decoder_from_args(args, vocab)
    cfg = training.StageConfig(
        stage="pretrain", learning_rate=args.learning_rate,
        batch_size=args.batch_size, epochs=args.epochs,
        warmup_steps=args.warmup_steps, seed=args.seed,
        checkpoint_every_epochs=args.checkpoint_every,
        max_seq_len=args.max_seq_len)
    if args.dry_run:
        print(f"would pretrain on {len(corpus)} sequences")
        return
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocabulary.txt").write_text(vocab.serialize())
    log = training.pretrain_decoder(decoder, corpus, cfg, out,
                                    vocab.content_hash())
    log.write(out / "pretrain_log.jsonl")
    print(f"final train loss {log.final_train_loss:.4f}")


def cmd_select_pretrain_ckpt(args):
    config = remi.TokenizerConfig()
    vocab = remi.Vocabulary(config)
    _, corpus = _tokenize_dir(args.midi_dir, config)
    checkpoints = sorted(Path(args.checkpoint_dir).glob("*.ckpt"))
    if not checkpoints:
        raise CliDataError(f"no checkpoints in {args.checkpoint_dir}")
    sampling_cfg = sampling.SamplingConfig(
        seed=args.seed, max_tokens=args.max_tokens,
        grammar_constrained=False)

    def generate_fn(checkpoint, n):
        decoder = _load_decoder(checkpoint, vocab)
        return [sampling.generate(decoder, vocab, M.ZERO_CONDITION,
                                  sampling_cfg, sample_index=i)
                for i in range(n)]

    if args.dry_run:
        print(f"would evaluate {len(checkpoints)} checkpoints")
        return
    chosen, report = training.select_pretrain_checkpoint(
        checkpoints, corpus, args.samples, generate_fn)
    print(json.dumps({"chosen": str(chosen), "report": report}, indent=2))


def cmd_train_encoder(args):
    texts = _texts_from_manifest(args.manifest, split="train")
    text_vocab = TextVocab.build([t.body for t in texts],
                                 max_size=args.text_vocab_size)
    config = M.EncoderConfig(vocab_size=len(text_vocab), dim=args.dim,
                             layers=args.layers, heads=4,
                             max_text_len=args.max_text_len,
                             projection_dim=args.projection_dim)
    encoder = M.TextEncoder(config, np.random.default_rng(args.seed))
    cfg = training.StageConfig(
        stage="contrastive", learning_rate=args.learning_rate,
        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    if args.dry_run:
        print(f"would train on {len(texts)} texts")
        return
    import hashlib
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "textvocab.txt").write_text(text_vocab.serialize())
    vocab_hash = hashlib.sha256(text_vocab.serialize().encode()).hexdigest()
    log = training.train_contrastive_encoder(
        encoder, text_vocab, texts, cfg, out, vocab_hash,
        temperature=args.temperature)
    log.write(out / "contrastive_log.jsonl")
    if args.export_embeddings:
        training.export_embeddings(encoder, text_vocab, texts,
                                   args.export_embeddings)
    print(f"final train loss {log.final_train_loss:.4f}")


def cmd_finetune(args):
    config = remi.TokenizerConfig()
    vocab = remi.Vocabulary(config)
    text_vocab = TextVocab.deserialize(
        _require(args.text_vocab, "text vocabulary").read_text())
    encoder = _load_encoder(args.encoder_ckpt, text_vocab)
    decoder = _load_decoder(args.decoder_ckpt, vocab)
    records = [r for r in emotion.read_manifest(
        _require(args.manifest, "dataset manifest"))
        if r.get("split") == "train"]
    if not records:
        raise CliDataError("no train records in manifest")
    paired = [emotion.PairedExample(
        text=emotion.TextSample(r["id"], r["body"], r["category"],
                                QuadrantLabel(r["quadrant"])),
        midi_path=r["midi_path"],
        quadrant=QuadrantLabel(r["quadrant"])) for r in records]
    tokenized = {}
    for pair in paired:
        if pair.midi_path not in tokenized:
            path = _require(pair.midi_path, "clip")
            tokenized[pair.midi_path] = remi.tokenize(
                parse_midi(path.read_bytes()), config)
    cfg = training.StageConfig(
        stage="finetune", learning_rate=args.learning_rate,
        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        checkpoint_every_epochs=args.checkpoint_every,
        max_seq_len=args.max_seq_len)
    if args.dry_run:
        print(f"would finetune on {len(paired)} pairs")
        return
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = training.finetune(encoder, decoder, text_vocab, paired, tokenized,
                            cfg, out, vocab.content_hash())
    log.write(out / "finetune_log.jsonl")
    print(f"final train loss {log.final_train_loss:.4f}")


def cmd_select_finetune_ckpt(args):
    config = remi.TokenizerConfig()
    vocab = remi.Vocabulary(config)
    text_vocab = TextVocab.deserialize(
        _require(args.text_vocab, "text vocabulary").read_text())
    encoder = _load_encoder(args.encoder_ckpt, text_vocab)
    reference = _load_reference_metrics(args.reference)
    texts = _texts_from_manifest(args.manifest, split="test")
    by_quadrant = {q: [t for t in texts if t.quadrant == q]
                   for q in QUADRANTS}
    checkpoints = sorted(Path(args.checkpoint_dir).glob("*.ckpt"))
    if not checkpoints:
        raise CliDataError(f"no checkpoints in {args.checkpoint_dir}")
    sampling_cfg = sampling.SamplingConfig(seed=args.seed,
                                           max_tokens=args.max_tokens)

    def generate_fn(checkpoint, quadrant, n):
        decoder = _load_decoder(checkpoint, vocab)
        texts_q = by_quadrant[quadrant]
        if not texts_q:
            raise CliDataError(f"no test texts for {quadrant.value}")
        scores = []
        for i in range(n):
            ids = text_vocab.encode(texts_q[i % len(texts_q)].body,
                                    encoder.config.max_text_len)
            condition = encoder.encode([ids])
            tokens = sampling.generate(decoder, vocab, condition,
                                       sampling_cfg, sample_index=i)
            scores.append(remi.detokenize(tokens, config))
        return scores

    if args.dry_run:
        print(f"would evaluate {len(checkpoints)} checkpoints")
        return
    chosen, report = training.select_finetune_checkpoint(
        checkpoints, reference, args.samples, generate_fn)
    print(json.dumps({"chosen": str(chosen), "report": report}, indent=2))


def cmd_generate(args):
    config = remi.TokenizerConfig()
    vocab = remi.Vocabulary(config)
    text_vocab = TextVocab.deserialize(
        _require(args.text_vocab, "text vocabulary").read_text())
    encoder = _load_encoder(args.encoder_ckpt, text_vocab)
    decoder = _load_decoder(args.decoder_ckpt, vocab)
    texts = _texts_from_manifest(args.manifest, split=args.split)
    by_quadrant = {q: [t for t in texts if t.quadrant == q]
                   for q in QUADRANTS}
    cfg = sampling.SamplingConfig(
        temperature=args.temperature, top_p=args.top_p,
        max_tokens=args.max_tokens, seed=args.seed,
        grammar_constrained=not args.unconstrained)

    def embed(body: str):
        ids = text_vocab.encode(body, encoder.config.max_text_len)
        return encoder.encode([ids])

    if args.dry_run:
        print(f"would generate {args.n} samples per quadrant")
        return
    sampling.generate_per_quadrant(decoder, vocab, by_quadrant, embed,
                                   args.n, cfg, out_dir=args.out_dir)
    print(f"wrote {4 * args.n} files under {args.out_dir}")


def _load_reference_metrics(path) -> dict:
    data = json.loads(_require(path, "reference metrics").read_text())
    return {QuadrantLabel(q): metrics.QuadrantMetrics(**values)
            for q, values in data.items()}


def cmd_evaluate(args):
    generated = {}
    for q in QUADRANTS:
        files = sorted((Path(args.generated) / q.value).glob("*.mid"))
        generated[q] = [parse_midi(p.read_bytes()) for p in files]
    reference = (_load_reference_metrics(args.reference)
                 if args.reference else None)
    if args.reference_clips:
        by_quadrant = {q: [] for q in QUADRANTS}
        for path, quadrant in _read_clip_manifest(args.reference_clips):
            by_quadrant[quadrant].append(
                parse_midi(Path(path).read_bytes()))
        reference = {q: metrics.quadrant_metrics(scores)
                     for q, scores in by_quadrant.items()}
    report = metrics.valence_arousal_report(generated, reference)
    print(metrics.format_report(report))
    if args.dry_run:
        return
    if args.outfile:
        Path(args.outfile).write_text(json.dumps(report, indent=2))


def _trial_to_record(trial: study.Trial) -> dict:
    return {"trial_id": trial.trial_id, "text_body": trial.text_body,
            "text_quadrant": trial.text_quadrant.value,
            "clip_a": trial.clip_a, "clip_b": trial.clip_b,
            "clip_a_quadrant": trial.clip_a_quadrant.value,
            "clip_b_quadrant": trial.clip_b_quadrant.value}


def _trials_from_file(path) -> list[study.Trial]:
    trials = []
    for line in _require(path, "trials file").read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        trials.append(study.Trial(
            trial_id=r["trial_id"], text_body=r["text_body"],
            text_quadrant=QuadrantLabel(r["text_quadrant"]),
            clip_a=r["clip_a"], clip_b=r["clip_b"],
            clip_a_quadrant=QuadrantLabel(r["clip_a_quadrant"]),
            clip_b_quadrant=QuadrantLabel(r["clip_b_quadrant"])))
    return trials


def cmd_build_trials(args):
    texts = _texts_from_manifest(args.manifest, split=args.split)
    clips = []
    for line in _require(args.generated_manifest,
                         "generated manifest").read_text().splitlines():
        if line.strip():
            r = json.loads(line)
            clips.append((r["path"], QuadrantLabel(r["quadrant"])))
    trials = study.build_trials(texts, clips, args.seed)
    if args.dry_run:
        print(f"would write {len(trials)} trials")
        return
    with open(args.outfile, "w") as fh:
        for trial in trials:
            fh.write(json.dumps(_trial_to_record(trial)) + "\n")
    print(f"wrote {len(trials)} trials")


def cmd_serve_study(args):
    import uvicorn
    trials = _trials_from_file(args.trials)
    store = study.StudyStore(trials, args.log)
    app = study.create_app(store, args.clips_dir)
    if args.dry_run:
        print(f"would serve {len(trials)} trials on port {args.port}")
        return
    uvicorn.run(app, host=args.host, port=args.port)


def cmd_score_study(args):
    trials = _trials_from_file(args.trials)
    store = study.StudyStore(trials, args.log)
    report = store.report()
    print(json.dumps(report.as_dict(), indent=2))


# -- argument wiring ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="story2midi",
        description="emotion-conditioned symbolic music pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, configure):
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dry-run", action="store_true")
        configure(p)
        p.set_defaults(handler=fn)
        return p

    add("tokenize", cmd_tokenize, lambda p: (
        p.add_argument("--in", dest="infile", required=True),
        p.add_argument("--out", dest="outfile", required=True)))
    add("detokenize", cmd_detokenize, lambda p: (
        p.add_argument("--in", dest="infile", required=True),
        p.add_argument("--out", dest="outfile", required=True)))
    add("validate-tokens", cmd_validate_tokens, lambda p: (
        p.add_argument("--in", dest="infile", required=True),))
    add("map-emotions", cmd_map_emotions, lambda p: (
        p.add_argument("--lexicon", required=True),
        p.add_argument("--categories", required=True),
        p.add_argument("--out", dest="outfile")))
    add("build-dataset", cmd_build_dataset, lambda p: (
        p.add_argument("--lexicon", required=True),
        p.add_argument("--categories", required=True),
        p.add_argument("--texts", required=True),
        p.add_argument("--clips", required=True),
        p.add_argument("--out", dest="outfile", required=True),
        p.add_argument("--per-quadrant", type=int, default=0),
        p.add_argument("--test-fraction", type=float, default=0.1)))

    def model_flags(p):
        p.add_argument("--dim", type=int, default=64)
        p.add_argument("--condition-dim", type=int, default=32)
        p.add_argument("--max-seq-len", type=int, default=256)

    add("pretrain", cmd_pretrain, lambda p: (
        p.add_argument("--midi-dir", required=True),
        p.add_argument("--out-dir", required=True),
        model_flags(p),
        p.add_argument("--learning-rate", type=float, default=1e-4),
        p.add_argument("--batch-size", type=int, default=8),
        p.add_argument("--epochs", type=int, default=20),
        p.add_argument("--warmup-steps", type=int, default=0),
        p.add_argument("--checkpoint-every", type=int, default=0)))
    add("select-pretrain-ckpt", cmd_select_pretrain_ckpt, lambda p: (
        p.add_argument("--midi-dir", required=True),
        p.add_argument("--checkpoint-dir", required=True),
        p.add_argument("--samples", type=int, default=20),
        p.add_argument("--max-tokens", type=int, default=64)))
    add("train-encoder", cmd_train_encoder, lambda p: (
        p.add_argument("--manifest", required=True),
        p.add_argument("--out-dir", required=True),
        p.add_argument("--dim", type=int, default=64),
        p.add_argument("--layers", type=int, default=2),
        p.add_argument("--projection-dim", type=int, default=32),
        p.add_argument("--max-text-len", type=int, default=32),
        p.add_argument("--text-vocab-size", type=int, default=8000),
        p.add_argument("--temperature", type=float, default=0.07),
        p.add_argument("--learning-rate", type=float, default=1e-3),
        p.add_argument("--batch-size", type=int, default=16),
        p.add_argument("--epochs", type=int, default=20),
        p.add_argument("--export-embeddings")))
    add("finetune", cmd_finetune, lambda p: (
        p.add_argument("--manifest", required=True),
        p.add_argument("--encoder-ckpt", required=True),
        p.add_argument("--decoder-ckpt", required=True),
        p.add_argument("--text-vocab", required=True),
        p.add_argument("--out-dir", required=True),
        p.add_argument("--learning-rate", type=float, default=1e-4),
        p.add_argument("--batch-size", type=int, default=8),
        p.add_argument("--epochs", type=int, default=20),
        p.add_argument("--max-seq-len", type=int, default=256),
        p.add_argument("--checkpoint-every", type=int, default=20)))
    add("select-finetune-ckpt", cmd_select_finetune_ckpt, lambda p: (
        p.add_argument("--manifest", required=True),
        p.add_argument("--encoder-ckpt", required=True),
        p.add_argument("--text-vocab", required=True),
        p.add_argument("--checkpoint-dir", required=True),
        p.add_argument("--reference", required=True),
        p.add_argument("--samples", type=int, default=8),
        p.add_argument("--max-tokens", type=int, default=64)))
    add("generate", cmd_generate, lambda p: (
        p.add_argument("--manifest", required=True),
        p.add_argument("--encoder-ckpt", required=True),
        p.add_argument("--decoder-ckpt", required=True),
        p.add_argument("--text-vocab", required=True),
        p.add_argument("--out-dir", required=True),
        p.add_argument("--split", default="test"),
        p.add_argument("--n", type=int, default=4),
        p.add_argument("--temperature", type=float, default=1.0),
        p.add_argument("--top-p", type=float, default=0.9),
        p.add_argument("--max-tokens", type=int, default=128),
        p.add_argument("--unconstrained", action="store_true")))
    add("evaluate", cmd_evaluate, lambda p: (
        p.add_argument("--generated", required=True),
        p.add_argument("--reference"),
        p.add_argument("--reference-clips"),
        p.add_argument("--out", dest="outfile")))
    add("build-trials", cmd_build_trials, lambda p: (
        p.add_argument("--manifest", required=True),
        p.add_argument("--generated-manifest", required=True),
        p.add_argument("--out", dest="outfile", required=True),
        p.add_argument("--split", default="test")))
    add("serve-study", cmd_serve_study, lambda p: (
        p.add_argument("--trials", required=True),
        p.add_argument("--clips-dir", required=True),
        p.add_argument("--log", required=True),
        p.add_argument("--host", default="127.0.0.1"),
        p.add_argument("--port", type=int, default=8000)))
    add("score-study", cmd_score_study, lambda p: (
        p.add_argument("--trials", required=True),
        p.add_argument("--log", required=True)))
    return parser


DATA_ERRORS = (
    CliDataError, emotion.EmptyLexicon, emotion.OutOfRange,
    emotion.EmptyQuadrant, emotion.InsufficientSamples,
    remi.GrammarViolation, remi.EmptyCorpus,
    training.EmptyCorpus, training.VocabMismatch,
    metrics.EmptyCorpus, metrics.EmptyScore, metrics.DegenerateVariance,
    study.InsufficientClips, study.EmptyResponses,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else 0
    try:
        args.handler(args)
    except DATA_ERRORS as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # noqa: BLE001 - uniform runtime error rendering
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
