"""Autoregressive decoding: nucleus sampling with optional grammar masking.

Grammar-constrained generation masks every token whose kind the REMI
acceptor forbids in the current state (including backward position jumps
within a bar), so the output always validates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import remi
from .emotion import QUADRANTS, QuadrantLabel
from .midi import write_midi
from .model import ZERO_CONDITION, MusicDecoder
from .remi import TokenKind, TokenSequence, Vocabulary


class DegenerateDistribution(Exception):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    top_p: float = 0.9
    max_tokens: int = 512
    grammar_constrained: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0 (0 = greedy)")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 2:
            raise ValueError("max_tokens must be at least 2")

    def content_hash(self) -> str:
        blob = json.dumps(vars(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def top_p_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Keep the smallest prefix of the sorted distribution with mass >= top_p."""
    if top_p >= 1.0:
        return probs
    order = np.argsort(probs)[::-1]
    sorted_probs = probs[order]
    cumulative = np.cumsum(sorted_probs)
    cutoff = int(np.searchsorted(cumulative, top_p) + 1)
    filtered = np.zeros_like(probs)
    kept = order[:cutoff]
    filtered[kept] = probs[kept]
    return filtered / filtered.sum()


def _grammar_mask(vocab: Vocabulary, state, min_position: int) -> np.ndarray:
    """Boolean mask, True = forbidden under the acceptor in this state."""
    allowed = remi.allowed_kinds(state)
    mask = np.ones(len(vocab), dtype=bool)
    for token_id, token in enumerate(vocab.tokens):
        if token.kind not in allowed:
            continue
        if token.kind is TokenKind.POSITION and token.value < min_position:
            continue
        mask[token_id] = False
    return mask


def _rng_for_sample(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(index,)))


def generate(decoder: MusicDecoder, vocab: Vocabulary,
             condition=ZERO_CONDITION, cfg: SamplingConfig | None = None,
             sample_index: int = 0) -> TokenSequence:
    """Sample one token sequence, starting at Bos, stopping at Eos."""
    cfg = cfg or SamplingConfig()
    rng = _rng_for_sample(cfg.seed, sample_index)
    ids = [vocab.bos_id]
    state = TokenKind.BOS
    min_position = 0

    while True:
        eos_allowed = TokenKind.EOS in remi.allowed_kinds(state)
        if cfg.grammar_constrained:
            # leave room to finish a note group before the budget runs out
            if eos_allowed and len(ids) >= cfg.max_tokens - 5:
                ids.append(vocab.eos_id)
                break
        elif len(ids) >= cfg.max_tokens:
            break

        logits = decoder.logits(np.array([ids]))[0, -1].astype(np.float64)
        if cfg.grammar_constrained:
            mask = _grammar_mask(vocab, state, min_position)
            if mask.all():
                # unreachable with the standard grammar; bail out cleanly
                if not eos_allowed:
                    raise DegenerateDistribution(
                        "all candidates masked, Eos not allowed")
                ids.append(vocab.eos_id)
                break
            logits[mask] = -np.inf
        else:
            logits[vocab.pad_id] = -np.inf  # never sample padding

        if cfg.temperature == 0.0:
            token_id = int(np.argmax(logits))
        else:
            scaled = logits / cfg.temperature
            scaled -= scaled[np.isfinite(scaled)].max()
            probs = np.exp(scaled)
            probs[~np.isfinite(probs)] = 0.0
            total = probs.sum()
            if total <= 0:
                raise DegenerateDistribution("no probability mass left")
            probs = top_p_filter(probs / total, cfg.top_p)
            token_id = int(rng.choice(len(probs), p=probs))

        ids.append(token_id)
        token = vocab.decode(token_id)
        if token.kind is TokenKind.EOS:
            break
        if token.kind is TokenKind.BAR:
            min_position = 0
        elif token.kind is TokenKind.POSITION:
            min_position = token.value
        state = token.kind

    return TokenSequence(tuple(ids), vocab)


def generate_per_quadrant(decoder: MusicDecoder, vocab: Vocabulary,
                          texts_by_quadrant: dict[QuadrantLabel, list],
                          embed_text, n: int, cfg: SamplingConfig,
                          out_dir=None):
    """n samples per quadrant, conditioned on round-robin quadrant texts.

    embed_text maps a text body to a condition vector. Returns
    {quadrant: [(text, TokenSequence, Score), ...]}; when out_dir is set,
    MIDI files and a manifest are written under generated/Q*/ layout.
    """
    for q in QUADRANTS:
        if not texts_by_quadrant.get(q):
            raise ValueError(f"no texts for quadrant {q.value}")
    results: dict[QuadrantLabel, list] = {}
    manifest = []
    sample_index = 0
    for q in QUADRANTS:
        texts = texts_by_quadrant[q]
        rows = []
        for i in range(n):
            text = texts[i % len(texts)]
            condition = embed_text(text.body)
            tokens = generate(decoder, vocab, condition, cfg,
                              sample_index=sample_index)
            score = remi.detokenize(tokens, vocab.config)
            rows.append((text, tokens, score))
            if out_dir is not None:
                quadrant_dir = Path(out_dir) / q.value
                quadrant_dir.mkdir(parents=True, exist_ok=True)
                path = quadrant_dir / f"sample_{i:03d}.mid"
                path.write_bytes(write_midi(score))
                manifest.append({"text_id": text.id, "quadrant": q.value,
                                 "seed": cfg.seed,
                                 "sample_index": sample_index,
                                 "config_hash": cfg.content_hash(),
                                 "path": str(path)})
            sample_index += 1
        results[q] = rows
    if out_dir is not None and manifest:
        with open(Path(out_dir) / "manifest.jsonl", "w") as fh:
            for record in manifest:
                fh.write(json.dumps(record) + "\n")
    return results


def generate_from_quadrant_label(decoder: MusicDecoder, vocab: Vocabulary,
                                 conditioner, quadrant: QuadrantLabel,
                                 cfg: SamplingConfig,
                                 sample_index: int = 0) -> TokenSequence:
    """Ablation path: condition on a learned per-quadrant embedding."""
    index = QUADRANTS.index(quadrant)
    condition = conditioner(np.array([index]))
    return generate(decoder, vocab, condition, cfg,
                    sample_index=sample_index)
