"""Toy causal decoder standing in for the language model.

The decoder reads ``[augmented video tokens ; question embeddings]`` as a
prefix and is trained with teacher-forced next-token cross-entropy on the
answer tokens only.

Vocabulary layout (64 ids)::

    0 PAD, 1 END, 2 Q_BEGIN, 3 Q_END, 4 Q_MARKER, 5..31 filler words,
    32..63 needle markers 0..31
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .memaug import AttentionParams, LayerNormParams, MLPParams, _Init, attention, sinusoidal_encoding
from .tensor import Param, Tensor

PAD, END, Q_BEGIN, Q_END, Q_MARKER = 0, 1, 2, 3, 4
MARKER_BASE = 32
NUM_MARKERS = 32
VOCAB_SIZE = 64


def marker_token(marker_id: int) -> int:
    return MARKER_BASE + marker_id


@dataclass(frozen=True)
class DecoderConfig:
    vocab: int = VOCAB_SIZE
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_mult: int = 4
    embed_std: float = 0.1
    pos_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")


@dataclass
class DecoderBlock:
    ln_attn: LayerNormParams
    attn: AttentionParams
    ln_mlp: LayerNormParams
    mlp: MLPParams

    def params(self) -> list[Param]:
        return self.ln_attn.params() + self.attn.params() + self.ln_mlp.params() + self.mlp.params()


class ToyDecoder:
    def __init__(self, config: DecoderConfig, embed: Param, blocks: list[DecoderBlock],
                 ln_final: LayerNormParams, head_w: Param, head_b: Param):
        self.config = config
        self.embed = embed
        self.blocks = blocks
        self.ln_final = ln_final
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def init(cls, config: DecoderConfig, seed: int = 0, dtype=np.float64) -> "ToyDecoder":
        ini = _Init(seed, dtype, zero_output=False)
        d = config.d_model
        embed = Param(ini.rng.normal(0.0, config.embed_std, (config.vocab, d)), "embed", dtype)
        blocks = [
            DecoderBlock(ini.layer_norm(d, f"dec.{i}.ln_attn"), ini.attention(d, f"dec.{i}.attn"),
                         ini.layer_norm(d, f"dec.{i}.ln_mlp"), ini.mlp(d, config.mlp_mult, f"dec.{i}.mlp"))
            for i in range(config.num_layers)
        ]
        head_w = Param(ini.rng.normal(0.0, 0.02, (d, config.vocab)), "head.w", dtype)
        head_b = Param(np.zeros(config.vocab), "head.b", dtype)
        return cls(config, embed, blocks, ini.layer_norm(d, "dec.ln_final"), head_w, head_b)

    def params(self, include_embed: bool = True) -> list[Param]:
        out = [self.embed] if include_embed else []
        for blk in self.blocks:
            out.extend(blk.params())
        return out + self.ln_final.params() + [self.head_w, self.head_b]


@dataclass
class TrainBatch:
    prefix: Tensor                 # [B, P, d]
    answer_ids: np.ndarray         # [B, A]

    def __post_init__(self):
        self.answer_ids = np.atleast_2d(np.asarray(self.answer_ids, dtype=np.int64))
        if self.answer_ids.shape[1] == 0:
            raise ContractError("answer_ids must be nonempty")

    @property
    def prefix_len(self) -> int:
        return self.prefix.shape[1]

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-sequence targets and the loss mask selecting answer positions."""
        b, a = self.answer_ids.shape
        length = self.prefix_len + a - 1
        targets = np.full((b, length), PAD, dtype=np.int64)
        mask = np.zeros((b, length))
        targets[:, self.prefix_len - 1:] = self.answer_ids
        mask[:, self.prefix_len - 1:] = 1.0
        return targets, mask

    @property
    def loss_mask(self) -> np.ndarray:
        return self.targets()[1]


def causal_mask(n: int, dtype=np.float64) -> np.ndarray:
    m = np.triu(np.full((n, n), -np.inf, dtype=dtype), k=1)
    return m


def decoder_logits(dec: ToyDecoder, prefix: Tensor, input_ids: np.ndarray) -> Tensor:
    """Logits ``[B, P + len(input_ids), vocab]`` for the prefix followed by token inputs."""
    if prefix.ndim == 2:
        prefix = T.reshape(prefix, (1,) + prefix.shape)
    b = prefix.shape[0]
    ids = np.asarray(input_ids, dtype=np.int64).reshape(b, -1)
    x = prefix
    if ids.shape[1]:
        x = T.concat([prefix, T.gather_rows(dec.embed, ids)], axis=1)
    n = x.shape[1]
    cfg = dec.config
    x = T.add(x, sinusoidal_encoding(np.arange(n), cfg.d_model, cfg.pos_base).astype(x.dtype))
    mask = causal_mask(n, x.dtype)
    for blk in dec.blocks:
        x = T.add(x, _self_attend(blk, x, cfg.num_heads, mask))
        x = T.add(x, blk.mlp(blk.ln_mlp(x)))
    x = dec.ln_final(x)
    return T.linear(x, dec.head_w, dec.head_b)


def _self_attend(blk: DecoderBlock, x: Tensor, heads: int, mask: np.ndarray) -> Tensor:
    h = blk.ln_attn(x)
    return attention(h, h, h, blk.attn, heads, mask)


def decoder_loss(dec: ToyDecoder, prefix: Tensor, answer_ids) -> Tensor:
    """Mean next-token cross-entropy over answer positions (teacher forcing)."""
    if prefix.ndim == 2:
        prefix = T.reshape(prefix, (1,) + prefix.shape)
    batch = TrainBatch(prefix, answer_ids)
    return batch_loss(dec, batch)


def batch_loss(dec: ToyDecoder, batch: TrainBatch) -> Tensor:
    logits = decoder_logits(dec, batch.prefix, batch.answer_ids[:, :-1])
    targets, mask = batch.targets()
    return T.cross_entropy(logits, targets, mask)


def generate(dec: ToyDecoder, prefix: Tensor, max_len: int) -> list[int]:
    """Greedy decoding; stops after ``max_len`` tokens or after emitting END."""
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    out: list[int] = []
    with T.no_grad():
        for _ in range(max_len):
            logits = decoder_logits(dec, prefix, np.asarray([out], dtype=np.int64))
            tok = int(np.argmax(logits.data[0, -1]))
            out.append(tok)
            if tok == END:
                break
    return out
