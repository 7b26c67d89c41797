"""The Story2MIDI network: contrastive text encoder + conditioned decoder.

The encoder maps word ids to an L2-normalized sentence embedding; the
decoder is a 3-layer, 4-head transformer over REMI tokens that attends to
a single conditioning vector through cross-attention. Passing
ZERO_CONDITION (or an all-zeros embedding) reproduces the unconditioned
pretraining regime exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn.autograd import (Tensor, cross_entropy, log_softmax, masked_fill,
                          matmul)
from .nn.layers import (Embedding, LayerNorm, Linear, Module,
                        TransformerBlock, causal_mask)


class TooLong(Exception):
    pass


class TooShort(Exception):
    pass


class NoPositives(Exception):
    pass


class UnknownPolicy(Exception):
    pass


class _ZeroCondition:
    """Sentinel: condition on a zero vector (decoder pretraining)."""

    def __repr__(self):
        return "ZERO_CONDITION"


ZERO_CONDITION = _ZeroCondition()


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 128
    layers: int = 2
    heads: int = 4
    max_text_len: int = 64
    projection_dim: int = 128

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass(frozen=True)
class DecoderConfig:
    token_vocab_size: int
    dim: int = 256
    layers: int = 3
    heads: int = 4
    max_seq_len: int = 1024
    condition_dim: int = 128

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    def to_dict(self) -> dict:
        return dict(vars(self))


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm_sq = (x * x).sum(axis=-1, keepdims=True)
    return x * (norm_sq + eps) ** -0.5


class TextEncoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.token_emb = Embedding(rng, config.vocab_size, config.dim)
        self.pos_emb = Embedding(rng, config.max_text_len, config.dim)
        self.blocks = [TransformerBlock(rng, config.dim, config.heads)
                       for _ in range(config.layers)]
        self.final_ln = LayerNorm(config.dim)
        self.projection = Linear(rng, config.dim, config.projection_dim)

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        """(B, T) pad-padded word ids -> (B, projection_dim), L2-normalized.

        Mean pooling runs over non-pad positions; pad keys are masked out
        of attention.
        """
        token_ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        batch, length = token_ids.shape
        if length > self.config.max_text_len:
            raise TooLong(f"{length} > max_text_len "
                          f"{self.config.max_text_len}")
        pad = token_ids == 0
        # all-pad rows would collapse; treat position 0 as real
        pad[:, 0] = False
        x = self.token_emb(token_ids) + self.pos_emb(np.arange(length))
        key_mask = pad[:, None, None, :]  # (B, 1 head, 1 query, T keys)
        for block in self.blocks:
            x = block(x, self_mask=key_mask)
        x = self.final_ln(x)
        keep = (~pad).astype(np.float32)[:, :, None]
        pooled = (x * Tensor(keep)).sum(axis=1) * Tensor(
            1.0 / keep.sum(axis=1))
        return l2_normalize(self.projection(pooled))

    def encode(self, token_ids) -> np.ndarray:
        return self(np.asarray(token_ids)).data


class MusicDecoder(Module):
    def __init__(self, config: DecoderConfig, rng: np.random.Generator):
        self.config = config
        self.token_emb = Embedding(rng, config.token_vocab_size, config.dim)
        self.pos_emb = Embedding(rng, config.max_seq_len, config.dim)
        self.condition_proj = Linear(rng, config.condition_dim, config.dim)
        self.blocks = [TransformerBlock(rng, config.dim, config.heads,
                                        cross_attention=True)
                       for _ in range(config.layers)]
        self.final_ln = LayerNorm(config.dim)
        self.head = Linear(rng, config.dim, config.token_vocab_size)

    def _memory(self, condition, batch: int) -> Tensor:
        if condition is ZERO_CONDITION or condition is None:
            vec = Tensor(np.zeros((batch, self.config.condition_dim),
                                  dtype=np.float32))
        elif isinstance(condition, Tensor):
            vec = condition if condition.ndim == 2 else condition.reshape(
                1, -1)
        else:
            vec = Tensor(np.atleast_2d(np.asarray(
                condition, dtype=np.float32)))
        if vec.shape[0] == 1 and batch > 1:
            ones = Tensor(np.ones((batch, 1), dtype=np.float32))
            vec = matmul(ones, vec)  # repeat rows, keeping gradient flow
        return self.condition_proj(vec).reshape(batch, 1, -1)

    def __call__(self, token_ids: np.ndarray, condition=ZERO_CONDITION
                 ) -> Tensor:
        """(B, T) token ids -> (B, T, V) next-token logits."""
        token_ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        batch, length = token_ids.shape
        if length > self.config.max_seq_len:
            raise TooLong(f"{length} > max_seq_len {self.config.max_seq_len}")
        memory = self._memory(condition, batch)
        x = self.token_emb(token_ids) + self.pos_emb(np.arange(length))
        mask = causal_mask(length)
        for block in self.blocks:
            x = block(x, memory=memory, self_mask=mask)
        return self.head(self.final_ln(x))

    def logits(self, token_ids, condition=ZERO_CONDITION) -> np.ndarray:
        return self(token_ids, condition).data


class QuadrantConditioner(Module):
    """Ablation conditioning: one learned vector per quadrant label."""

    def __init__(self, condition_dim: int, rng: np.random.Generator):
        self.table = Embedding(rng, 4, condition_dim)

    def __call__(self, quadrant_indices: np.ndarray) -> Tensor:
        return l2_normalize(self.table(
            np.asarray(quadrant_indices, dtype=np.int64)))


def supcon_loss(embeddings: Tensor, labels, temperature: float = 0.07,
                denominator_includes_anchor: bool = False) -> Tensor:
    """Supervised contrastive loss over a batch of normalized embeddings.

    Anchors whose label appears nowhere else in the batch are skipped; if
    every anchor is isolated, NoPositives is raised. By default the
    denominator excludes the anchor's own similarity (the standard SupCon
    form); the switch enables the literal include-anchor variant.
    """
    labels = np.asarray([getattr(l, "value", l) for l in labels])
    n = embeddings.shape[0]
    if n < 2 or labels.shape[0] != n:
        raise ValueError("need at least 2 embeddings with matching labels")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    pos_mask = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    counts = pos_mask.sum(axis=1)
    if not counts.any():
        raise NoPositives("every anchor is isolated in this batch")

    sims = matmul(embeddings, embeddings.transpose()) * (1.0 / temperature)
    if not denominator_includes_anchor:
        sims = masked_fill(sims, np.eye(n, dtype=bool), -1e30)
    log_probs = log_softmax(sims, axis=-1)
    anchor_weight = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    weights = pos_mask.astype(np.float32) * anchor_weight[:, None]
    total = (log_probs * Tensor(weights)).sum()
    return -(total * (1.0 / float((counts > 0).sum())))


def causal_lm_loss(decoder: MusicDecoder, token_ids: np.ndarray,
                   condition=ZERO_CONDITION, pad_id: int = 0) -> Tensor:
    """Mean next-token cross-entropy over non-pad targets."""
    token_ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
    if token_ids.shape[1] < 2:
        raise TooShort("need at least 2 tokens for next-token prediction")
    logits = decoder(token_ids[:, :-1], condition)
    return cross_entropy(logits, token_ids[:, 1:], ignore_index=pad_id)


PRETRAIN_ALL = "pretrain_all_trainable"
FINETUNE_LAST_DECODER_LAYER = "finetune_last_decoder_layer"
ENCODER_LAST_K = "encoder_last_k_layers"


def set_freeze_policy(policy: str, decoder: MusicDecoder | None = None,
                      encoder: TextEncoder | None = None,
                      k: int | None = None) -> list[str]:
    """Apply a named freezing policy; returns trainable parameter names."""
    if policy == PRETRAIN_ALL:
        if decoder is None:
            raise UnknownPolicy("pretrain policy needs a decoder")
        for _, p in decoder.named_parameters():
            p.unfreeze()
    elif policy == FINETUNE_LAST_DECODER_LAYER:
        if decoder is None:
            raise UnknownPolicy("finetune policy needs a decoder")
        last = decoder.config.layers - 1
        trainable_prefix = f"blocks.{last}."
        for name, p in decoder.named_parameters():
            if name.startswith(trainable_prefix):
                p.unfreeze()
            else:
                p.freeze()
        if encoder is not None:
            for _, p in encoder.named_parameters():
                p.freeze()
    elif policy == ENCODER_LAST_K:
        if encoder is None or k is None:
            raise UnknownPolicy("encoder policy needs an encoder and k")
        first_trainable = max(0, encoder.config.layers - k)
        for name, p in encoder.named_parameters():
            block_prefixes = tuple(
                f"blocks.{i}." for i in range(first_trainable,
                                              encoder.config.layers))
            trainable = (name.startswith(block_prefixes)
                         or name.startswith(("projection.", "final_ln.")))
            p.unfreeze() if trainable else p.freeze()
    else:
        raise UnknownPolicy(policy)

    trainable = []
    for module in (decoder, encoder):
        if module is not None:
            trainable += [name for name, p in module.named_parameters()
                          if not p.frozen]
    return trainable
