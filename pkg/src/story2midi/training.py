"""Training stages and checkpoint-selection procedures.

Three stages: decoder pretraining under zero conditioning, contrastive
encoder training on quadrant labels, and paired fine-tuning with the
encoder frozen and only the final decoder layer trainable. Two selection
procedures follow: token-distribution match for pretraining, standardized
metric MSE against reference quadrant metrics for fine-tuning.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as eval_metrics
from . import model as M
from .emotion import QUADRANTS, QuadrantLabel
from .nn.optim import Adam
from .remi import (TokenKind, TokenSequence, Vocabulary, frequency_distance,
                   token_kind_frequencies)


class EmptyCorpus(Exception):
    pass


class VocabMismatch(Exception):
    pass


class GenerationFailure(Exception):
    pass


@dataclass(frozen=True)
class StageConfig:
    stage: str  # pretrain | contrastive | finetune
    learning_rate: float
    batch_size: int
    epochs: int
    warmup_steps: int = 0
    checkpoint_every_epochs: int = 0  # 0 = no intermediate checkpoints
    seed: int = 0
    max_seq_len: int = 512
    validation_fraction: float = 0.1

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs) <= 0:
            raise ValueError("learning_rate, batch_size, epochs must be positive")


def paper_preset(stage: str, **overrides) -> StageConfig:
    """The stage hyperparameters used at full scale."""
    presets = {
        "pretrain": dict(learning_rate=1e-4, batch_size=64, epochs=300,
                         warmup_steps=1000),
        "contrastive": dict(learning_rate=1e-5, batch_size=16, epochs=500),
        "finetune": dict(learning_rate=1e-5, batch_size=16, epochs=300,
                         checkpoint_every_epochs=20),
    }
    if stage not in presets:
        raise ValueError(f"unknown stage {stage}")
    return StageConfig(stage=stage, **{**presets[stage], **overrides})


@dataclass
class RunLog:
    stage: str
    epochs: list[dict] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float | None,
               seconds: float, checkpoint_path: str | None = None,
               **extra):
        self.epochs.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "seconds": seconds,
                            "checkpoint_path": checkpoint_path, **extra})

    def write(self, path):
        with open(path, "w") as fh:
            for record in self.epochs:
                fh.write(json.dumps({"stage": self.stage, **record}) + "\n")

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1]["train_loss"]


def window_sequences(corpus: list[TokenSequence], max_len: int
                     ) -> list[tuple[int, np.ndarray]]:
    """Split long sequences into max_len windows with 50% overlap.

    Returns (piece_index, ids) pairs so validation can split by piece.
    """
    windows = []
    stride = max(1, max_len // 2)
    for piece, seq in enumerate(corpus):
        ids = np.asarray(seq.ids, dtype=np.int64)
        if len(ids) <= max_len:
            windows.append((piece, ids))
            continue
        for start in range(0, len(ids) - max_len + stride, stride):
            window = ids[start:start + max_len]
            if len(window) >= 2:
                windows.append((piece, window))
    return windows


def _split_by_piece(windows, fraction: float, rng: np.random.Generator):
    pieces = sorted({piece for piece, _ in windows})
    n_val = max(1, int(len(pieces) * fraction)) if len(pieces) > 1 else 0
    val_pieces = set(rng.permutation(pieces)[:n_val].tolist())
    train = [w for p, w in windows if p not in val_pieces]
    val = [w for p, w in windows if p in val_pieces]
    if not train:
        train, val = val, []
    return train, val


def _pad_batch(windows, pad_id: int = 0) -> np.ndarray:
    width = max(len(w) for w in windows)
    batch = np.full((len(windows), width), pad_id, dtype=np.int64)
    for i, w in enumerate(windows):
        batch[i, :len(w)] = w
    return batch


def _lm_epoch(decoder, windows, conditions, batch_size, optimizer=None,
              rng=None):
    """One pass; trains when an optimizer is given, else just evaluates."""
    order = (rng.permutation(len(windows)) if rng is not None
             else np.arange(len(windows)))
    losses = []
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        batch = _pad_batch([windows[i] for i in index])
        if conditions is None:
            condition = M.ZERO_CONDITION
        else:
            condition = M.Tensor(conditions[index])
        loss = M.causal_lm_loss(decoder, batch, condition)
        losses.append(loss.item())
        if optimizer is not None:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    return float(np.mean(losses)) if losses else float("nan")


def _checkpoint_path(out_dir, stage: str, epoch: int) -> Path:
    directory = Path(out_dir) / stage
    directory.mkdir(parents=True, exist_ok=True)
    return directory / f"epoch_{epoch:03d}.ckpt"


def _save(module, path, config: dict, vocab_hash: str):
    from .nn.checkpoint import save_checkpoint
    frozen = {name for name, p in module.named_parameters() if p.frozen}
    save_checkpoint(path, module.state_dict(), config, vocab_hash, frozen)


def pretrain_decoder(decoder, corpus: list[TokenSequence], cfg: StageConfig,
                     out_dir, vocab_hash: str) -> RunLog:
    """Causal LM training under zero conditioning, checkpointed per schedule."""
    if not corpus:
        raise EmptyCorpus("no token sequences to pretrain on")
    rng = np.random.default_rng(cfg.seed)
    windows = window_sequences(corpus, min(cfg.max_seq_len,
                                           decoder.config.max_seq_len))
    train, val = _split_by_piece(windows, cfg.validation_fraction, rng)
    M.set_freeze_policy(M.PRETRAIN_ALL, decoder=decoder)
    optimizer = Adam(decoder.named_parameters(), cfg.learning_rate,
                     warmup_steps=cfg.warmup_steps)
    log = RunLog("pretrain")
    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        train_loss = _lm_epoch(decoder, train, None, cfg.batch_size,
                               optimizer, rng)
        val_loss = (_lm_epoch(decoder, val, None, cfg.batch_size)
                    if val else None)
        path = None
        if (cfg.checkpoint_every_epochs
                and epoch % cfg.checkpoint_every_epochs == 0) \
                or epoch == cfg.epochs:
            path = _checkpoint_path(out_dir, "pretrain", epoch)
            _save(decoder, path, decoder.config.to_dict(), vocab_hash)
        log.append(epoch, train_loss, val_loss,
                   time.monotonic() - started,
                   str(path) if path else None)
    return log


def select_pretrain_checkpoint(checkpoints: list, reference_corpus,
                               samples_per_checkpoint: int,
                               generate_fn) -> tuple:
    """Pick the checkpoint whose unconditioned samples best match the
    reference token-kind distribution (minimum L1 distance, earliest wins
    ties).

    generate_fn(checkpoint, n) must return n TokenSequences.
    """
    if not checkpoints:
        raise EmptyCorpus("no checkpoints to select from")
    reference = token_kind_frequencies(reference_corpus)
    report = []
    best = None
    for checkpoint in checkpoints:
        try:
            samples = generate_fn(checkpoint, samples_per_checkpoint)
            distance = frequency_distance(
                token_kind_frequencies(samples), reference)
        except Exception as exc:
            raise GenerationFailure(f"checkpoint {checkpoint}: {exc}") from exc
        report.append({"checkpoint": str(checkpoint), "l1_distance": distance})
        if best is None or distance < best[1]:
            best = (checkpoint, distance)
    return best[0], report


def encode_texts(text_vocab, texts, max_len: int) -> np.ndarray:
    return np.array([text_vocab.encode(t.body, max_len) for t in texts],
                    dtype=np.int64)


def train_contrastive_encoder(encoder, text_vocab, texts, cfg: StageConfig,
                              out_dir=None, vocab_hash: str | None = None,
                              temperature: float = 0.07,
                              encoder_unfrozen_layers: int | None = None
                              ) -> RunLog:
    """Supervised contrastive training on in-batch quadrant positives."""
    if cfg.batch_size < 2:
        raise ValueError("contrastive batches need at least 2 examples")
    if not texts:
        raise EmptyCorpus("no texts")
    rng = np.random.default_rng(cfg.seed)
    k = (encoder_unfrozen_layers if encoder_unfrozen_layers is not None
         else encoder.config.layers)  # toy preset trains all layers
    M.set_freeze_policy(M.ENCODER_LAST_K, encoder=encoder, k=k)
    token_ids = encode_texts(text_vocab, texts, encoder.config.max_text_len)
    labels = np.array([t.quadrant.value for t in texts])
    n_val = max(2, int(len(texts) * cfg.validation_fraction))
    order = rng.permutation(len(texts))
    val_index, train_index = order[:n_val], order[n_val:]
    optimizer = Adam(encoder.named_parameters(), cfg.learning_rate,
                     warmup_steps=cfg.warmup_steps)
    log = RunLog("contrastive")
    skipped = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        losses = []
        shuffled = train_index[rng.permutation(len(train_index))]
        for start in range(0, len(shuffled), cfg.batch_size):
            index = shuffled[start:start + cfg.batch_size]
            if len(index) < 2:
                continue
            embeddings = encoder(token_ids[index])
            try:
                loss = M.supcon_loss(embeddings, labels[index], temperature)
            except M.NoPositives:
                skipped += 1
                continue
            losses.append(loss.item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        val_embeddings = encoder(token_ids[val_index])
        try:
            val_loss = M.supcon_loss(val_embeddings, labels[val_index],
                                     temperature).item()
        except M.NoPositives:
            val_loss = None
        path = None
        if out_dir is not None and (
                (cfg.checkpoint_every_epochs
                 and epoch % cfg.checkpoint_every_epochs == 0)
                or epoch == cfg.epochs):
            path = _checkpoint_path(out_dir, "contrastive", epoch)
            _save(encoder, path, encoder.config.to_dict(),
                  vocab_hash or "0" * 64)
        log.append(epoch, float(np.mean(losses)) if losses else float("nan"),
                   val_loss, time.monotonic() - started,
                   str(path) if path else None,
                   skipped_batches=skipped)
    return log


def export_embeddings(encoder, text_vocab, texts, path) -> None:
    """One line per text: id, quadrant, embedding values (for t-SNE etc.)."""
    token_ids = encode_texts(text_vocab, texts, encoder.config.max_text_len)
    embeddings = encoder.encode(token_ids)
    with open(path, "w") as fh:
        for text, vector in zip(texts, embeddings):
            values = "\t".join(f"{v:.6f}" for v in vector)
            fh.write(f"{text.id}\t{text.quadrant.value}\t{values}\n")


def finetune(encoder, decoder, text_vocab, paired, tokenized: dict,
             cfg: StageConfig, out_dir, vocab_hash: str) -> RunLog:
    """Conditioned causal LM training; encoder fully frozen, only the
    final decoder layer trainable.

    `tokenized` maps midi_path -> TokenSequence (pre-tokenized clips).
    """
    if not paired:
        raise EmptyCorpus("no paired examples")
    missing = [p.midi_path for p in paired if p.midi_path not in tokenized]
    if missing:
        raise VocabMismatch(f"clips not tokenized: {missing[:3]}")
    first = tokenized[paired[0].midi_path]
    if len(first.vocabulary) != decoder.config.token_vocab_size:
        raise VocabMismatch(
            f"decoder vocab size {decoder.config.token_vocab_size} != "
            f"tokenizer vocab size {len(first.vocabulary)}")

    rng = np.random.default_rng(cfg.seed)
    M.set_freeze_policy(M.FINETUNE_LAST_DECODER_LAYER, decoder=decoder,
                        encoder=encoder)
    # encoder is frozen: embed every text once up front
    text_ids = encode_texts(text_vocab, [p.text for p in paired],
                            encoder.config.max_text_len)
    conditions = encoder.encode(text_ids)
    max_len = min(cfg.max_seq_len, decoder.config.max_seq_len)
    windows = []
    window_conditions = []
    for i, pair in enumerate(paired):
        for _, ids in window_sequences([tokenized[pair.midi_path]], max_len):
            windows.append(ids)
            window_conditions.append(conditions[i])
    window_conditions = np.array(window_conditions, dtype=np.float32)

    optimizer = Adam(decoder.named_parameters(), cfg.learning_rate,
                     warmup_steps=cfg.warmup_steps)
    log = RunLog("finetune")
    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        train_loss = _lm_epoch(decoder, windows, window_conditions,
                               cfg.batch_size, optimizer, rng)
        path = None
        if (cfg.checkpoint_every_epochs
                and epoch % cfg.checkpoint_every_epochs == 0) \
                or epoch == cfg.epochs:
            path = _checkpoint_path(out_dir, "finetune", epoch)
            _save(decoder, path, decoder.config.to_dict(), vocab_hash)
        log.append(epoch, train_loss, None, time.monotonic() - started,
                   str(path) if path else None)
    return log


def select_finetune_checkpoint(checkpoints: list,
                               reference: dict[QuadrantLabel,
                                               "eval_metrics.QuadrantMetrics"],
                               n_per_quadrant: int,
                               generate_fn) -> tuple:
    """Pick the checkpoint minimizing standardized metric MSE vs reference.

    generate_fn(checkpoint, quadrant, n) must return n Scores. Ties go to
    the earliest checkpoint in the input order.
    """
    if not checkpoints:
        raise EmptyCorpus("no checkpoints to select from")
    report = []
    best = None
    for checkpoint in checkpoints:
        generated = {}
        try:
            for q in QUADRANTS:
                scores = generate_fn(checkpoint, q, n_per_quadrant)
                generated[q] = eval_metrics.quadrant_metrics(scores)
        except Exception as exc:
            raise GenerationFailure(f"checkpoint {checkpoint}: {exc}") from exc
        mse, contributions = eval_metrics.standardized_mse(generated,
                                                           reference)
        report.append({"checkpoint": str(checkpoint), "mse": mse,
                       "contributions": contributions})
        if best is None or mse < best[1]:
            best = (checkpoint, mse)
    return best[0], report
