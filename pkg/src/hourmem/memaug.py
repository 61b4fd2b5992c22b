"""MemAug: transformer blocks in which decayed video and question tokens
cross-attend into the memory repository, then self-attend and pass an MLP.

Per block, with pre-norm residuals::

    S <- S + CrossAttn(LN_q(S), LN_mem(memory))
    S <- S + SelfAttn(LN_sq(S), LN_skv(S))
    S <- S + MLP(LN_mlp(S))

Parameter count per block, for width ``d`` and MLP expansion ``m``::

    (8 + 2m) d^2 + (m + 11) d

(two attention modules of four bias-free d x d projections, an MLP with
biases, and five layer norms with gain and bias: queries and memory for the
cross-attention, queries and keys/values for the self-attention, and one
before the MLP).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encode import FeatureSequence, QuestionSequence
from .errors import ConfigError, ContractError, DimensionError
from .memory import MemoryRepository
from .tensor import Param, Tensor


@dataclass(frozen=True)
class MemAugConfig:
    num_blocks: int = 4
    num_heads: int = 4
    d_model: int = 64
    mlp_mult: int = 4
    pos_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")


def sinusoidal_encoding(positions, d: int, base: float = 10000.0) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(d // 2 + d % 2)
    angles = pos / base ** (2 * i / d)
    pe = np.empty(pos.shape[:-1] + (d,))
    pe[..., 0::2] = np.sin(angles)
    pe[..., 1::2] = np.cos(angles[..., : d // 2])
    return pe


@dataclass
class AttentionParams:
    wq: Param
    wk: Param
    wv: Param
    wo: Param

    def params(self) -> list[Param]:
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class LayerNormParams:
    gain: Param
    bias: Param

    def params(self) -> list[Param]:
        return [self.gain, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


@dataclass
class MLPParams:
    w1: Param
    b1: Param
    w2: Param
    b2: Param

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(T.gelu(T.linear(x, self.w1, self.b1)), self.w2, self.b2)


class _Init:
    def __init__(self, seed: int, dtype, zero_output: bool):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.zero_output = zero_output

    def uniform(self, shape, name: str) -> Param:
        bound = 1.0 / math.sqrt(shape[0])
        return Param(self.rng.uniform(-bound, bound, shape), name, self.dtype)

    def output(self, shape, name: str) -> Param:
        if self.zero_output:
            return Param(np.zeros(shape), name, self.dtype)
        return self.uniform(shape, name)

    def const(self, shape, value: float, name: str) -> Param:
        return Param(np.full(shape, value), name, self.dtype)

    def attention(self, d: int, prefix: str) -> AttentionParams:
        return AttentionParams(self.uniform((d, d), f"{prefix}.wq"), self.uniform((d, d), f"{prefix}.wk"),
                               self.uniform((d, d), f"{prefix}.wv"), self.output((d, d), f"{prefix}.wo"))

    def layer_norm(self, d: int, prefix: str) -> LayerNormParams:
        return LayerNormParams(self.const((d,), 1.0, f"{prefix}.gain"), self.const((d,), 0.0, f"{prefix}.bias"))

    def mlp(self, d: int, mult: int, prefix: str) -> MLPParams:
        h = d * mult
        bias = self.output((d,), f"{prefix}.b2") if not self.zero_output else self.const((d,), 0.0, f"{prefix}.b2")
        return MLPParams(self.uniform((d, h), f"{prefix}.w1"), self.const((h,), 0.0, f"{prefix}.b1"),
                         self.output((h, d), f"{prefix}.w2"), bias)


def attention(queries: Tensor, keys: Tensor, values: Tensor, params: AttentionParams, heads: int,
              mask: np.ndarray | None = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention with output projection.

    Inputs are ``[..., n, d]`` (a leading batch axis is optional).  ``mask`` is
    additive and broadcasts against ``[batch, heads, n_q, n_k]``.
    """
    d = queries.shape[-1]
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    squeeze = queries.ndim == 2
    if squeeze:
        queries, keys, values = (T.reshape(x, (1,) + x.shape) for x in (queries, keys, values))
    b, nq, _ = queries.shape
    nk = keys.shape[1]
    dh = d // heads

    def split(x, n):
        return T.transpose(T.reshape(x, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(T.mul(T.matmul(queries, params.wq), 1.0 / math.sqrt(dh)), nq)
    k = split(T.matmul(keys, params.wk), nk)
    v = split(T.matmul(values, params.wv), nk)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
    if mask is not None:
        scores = T.add(scores, mask)
    weights = T.softmax(scores, axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (b, nq, d))
    out = T.matmul(ctx, params.wo)
    if squeeze:
        out = T.reshape(out, (nq, d))
    return (out, weights) if return_weights else out


@dataclass
class MemAugBlock:
    ln_query: LayerNormParams
    ln_memory: LayerNormParams
    cross: AttentionParams
    ln_self: LayerNormParams
    ln_self_kv: LayerNormParams
    self_attn: AttentionParams
    ln_mlp: LayerNormParams
    mlp: MLPParams

    def params(self) -> list[Param]:
        out = []
        for part in (self.ln_query, self.ln_memory, self.cross, self.ln_self, self.ln_self_kv,
                     self.self_attn, self.ln_mlp, self.mlp):
            out.extend(part.params())
        return out


class MemAugStack:
    def __init__(self, config: MemAugConfig, blocks: list[MemAugBlock]):
        self.config = config
        self.blocks = blocks

    @classmethod
    def init(cls, config: MemAugConfig, seed: int = 0, dtype=np.float64, zero_output: bool = True) -> "MemAugStack":
        ini = _Init(seed, dtype, zero_output)
        d, m = config.d_model, config.mlp_mult
        blocks = []
        for i in range(config.num_blocks):
            p = f"memaug.{i}"
            blocks.append(MemAugBlock(
                ini.layer_norm(d, f"{p}.ln_query"), ini.layer_norm(d, f"{p}.ln_memory"),
                ini.attention(d, f"{p}.cross"), ini.layer_norm(d, f"{p}.ln_self"), ini.layer_norm(d, f"{p}.ln_self_kv"),
                ini.attention(d, f"{p}.self"), ini.layer_norm(d, f"{p}.ln_mlp"),
                ini.mlp(d, m, f"{p}.mlp"),
            ))
        return cls(config, blocks)

    def params(self) -> list[Param]:
        return [p for blk in self.blocks for p in blk.params()]

    def output_projections(self) -> list[Param]:
        return [p for blk in self.blocks for p in (blk.cross.wo, blk.self_attn.wo, blk.mlp.w2, blk.mlp.b2)]

    def apply(self, video: Tensor, video_times, question: Tensor | None, memory: Tensor,
              collect_weights: list | None = None):
        """Batched forward on ``video [B,V,d]``, ``question [B,Nq,d]``, ``memory [B,M,d]``."""
        cfg = self.config
        d = cfg.d_model
        for name, x in (("video", video), ("memory", memory)) + ((("question", question),) if question is not None else ()):
            if x.ndim != 3 or x.shape[-1] != d:
                raise DimensionError(f"{name} tokens {x.shape} must be [batch, n, {d}]")
        v_len = video.shape[1]
        if v_len == 0:
            raise ContractError("MemAug needs at least one decayed video token")
        if memory.shape[1] == 0:
            raise ContractError("memory repository is empty")
        dtype = video.dtype
        s = T.add(video, sinusoidal_encoding(video_times, d, cfg.pos_base).astype(dtype))
        if question is not None:
            q_pe = sinusoidal_encoding(np.arange(question.shape[1]), d, cfg.pos_base).astype(dtype)
            s = T.concat([s, T.add(question, q_pe)], axis=1)
        heads = cfg.num_heads
        for blk in self.blocks:
            mem = blk.ln_memory(memory)
            out = attention(blk.ln_query(s), mem, mem, blk.cross, heads, return_weights=collect_weights is not None)
            if collect_weights is not None:
                out, w = out
                collect_weights.append(("cross", w.data))
            s = T.add(s, out)
            kv = blk.ln_self_kv(s)
            out = attention(blk.ln_self(s), kv, kv, blk.self_attn, heads, return_weights=collect_weights is not None)
            if collect_weights is not None:
                out, w = out
                collect_weights.append(("self", w.data))
            s = T.add(s, out)
            s = T.add(s, blk.mlp(blk.ln_mlp(s)))
        return s[:, :v_len], s[:, v_len:]


def param_count(stack: MemAugStack) -> int:
    return int(sum(p.data.size for p in stack.params()))


def block_param_formula(d: int, mlp_mult: int) -> int:
    return (8 + 2 * mlp_mult) * d * d + (mlp_mult + 11) * d


def flatten_decayed(decayed: FeatureSequence) -> tuple[Tensor, np.ndarray]:
    f, s, d = decayed.tokens.shape
    return T.reshape(decayed.tokens, (f * s, d)), np.repeat(decayed.timestamps, s)


def memaug_forward(decayed: FeatureSequence, q: QuestionSequence | None, repo: MemoryRepository,
                   stack: MemAugStack, include_question: bool = True):
    """Return ``(aug_video [V, d], question_outputs [N_q, d])``.

    Only the video slice is meant for the decoder; question outputs are for inspection.
    """
    if decayed.tokens.shape[0] * decayed.tokens.shape[1] == 0:
        raise ContractError("MemAug needs at least one decayed video token")
    d = stack.config.d_model
    for name, width in (("decayed", decayed.d_model), ("memory", repo.d_model)):
        if width != d:
            raise DimensionError(f"{name} width {width} != MemAug width {d}")
    video, times = flatten_decayed(decayed)
    question = None
    if include_question and q is not None:
        if q.embeddings.shape[-1] != d:
            raise DimensionError(f"question width {q.embeddings.shape[-1]} != MemAug width {d}")
        question = T.reshape(q.embeddings, (1,) + q.embeddings.shape)
    v_out, q_out = stack.apply(T.reshape(video, (1,) + video.shape), times, question,
                               T.reshape(repo.tokens, (1,) + repo.tokens.shape))
    return T.reshape(v_out, v_out.shape[1:]), T.reshape(q_out, q_out.shape[1:])
