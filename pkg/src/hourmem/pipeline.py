"""End-to-end model (projector -> forgetting -> memory -> MemAug -> decoder)
and the synthetic needle-retrieval task used to train and probe it.

A needle sample is one simulated video with a single planted marker frame.
The question is the fixed token sequence ``Q_BEGIN Q_MARKER Q_END`` and the
answer is ``marker_token(m) END``.  When ``enforce_discard`` is set, the
needle frame is placed so that temporal forgetting always drops it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .decoder import (END, Q_BEGIN, Q_END, Q_MARKER, DecoderConfig, ToyDecoder, TrainBatch, batch_loss,
                      decoder_logits, generate, marker_token)
from .encode import FeatureSequence, Projector, QuestionSequence, avg_pool_grid, needle_pattern, project
from .errors import ConfigError
from .forget import ForgetConfig, SelectionPlan, as_ratio, plan_forgetting
from .memaug import MemAugConfig, MemAugStack
from .memory import build_memory
from .optim import Adam, train_step
from .tensor import Tensor

QUESTION_IDS = (Q_BEGIN, Q_MARKER, Q_END)


@dataclass(frozen=True)
class NeedleConfig:
    frames: int = 128
    raw_dim: int = 40
    raw_grid: tuple[int, int] = (4, 4)
    pooled_grid: tuple[int, int] = (2, 2)
    d_model: int = 32
    memaug_blocks: int = 1
    heads: int = 1
    decoder_layers: int = 2
    mlp_mult: int = 2
    temporal_strategy: str = "uniform"
    temporal_ratio: Fraction = Fraction(1, 4)
    spatial_strategy: str = "random"
    spatial_ratio: Fraction = Fraction(1, 4)
    min_frames: int = 32
    max_frames: int = 512
    memory_scale: str = "full"
    num_markers: int = 32
    amplitude: float = 5.0
    beacon: float = 1.0
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    eval_probes: int = 256
    seed: int = 0
    enforce_discard: bool = True
    question_hint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "temporal_ratio", as_ratio(self.temporal_ratio))
        object.__setattr__(self, "spatial_ratio", as_ratio(self.spatial_ratio))
        object.__setattr__(self, "raw_grid", tuple(self.raw_grid))
        object.__setattr__(self, "pooled_grid", tuple(self.pooled_grid))
        if self.num_markers > self.raw_dim or self.num_markers > 32:
            raise ConfigError("num_markers must be <= min(raw_dim, 32)")
        if self.enforce_discard and self.temporal_ratio == 1 and self.frames <= self.max_frames:
            raise ConfigError("temporal_ratio 1 keeps every frame, so the needle cannot be discarded")

    def forget_config(self, seed: int = 0) -> ForgetConfig:
        return ForgetConfig(self.spatial_strategy, self.spatial_ratio, self.temporal_strategy, self.temporal_ratio,
                            self.min_frames, self.max_frames, 8, seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["temporal_ratio"] = float(self.temporal_ratio)
        out["spatial_ratio"] = float(self.spatial_ratio)
        return out


class HourModel:
    """Frozen projector plus trainable MemAug stack and decoder (shared embeddings)."""

    def __init__(self, cfg: NeedleConfig, dtype=np.float32):
        ss = np.random.SeedSequence(cfg.seed)
        s_proj, s_mem, s_dec = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        self.cfg = cfg
        self.projector = Projector.init(cfg.raw_dim, cfg.d_model, seed=s_proj, dtype=dtype)
        self.memaug = MemAugStack.init(MemAugConfig(cfg.memaug_blocks, cfg.heads, cfg.d_model, cfg.mlp_mult),
                                       seed=s_mem, dtype=dtype)
        self.decoder = ToyDecoder.init(DecoderConfig(d_model=cfg.d_model, num_layers=cfg.decoder_layers,
                                                     num_heads=cfg.heads, mlp_mult=cfg.mlp_mult),
                                       seed=s_dec, dtype=dtype)
        self.dtype = dtype

    def trainable(self) -> list:
        return self.memaug.params() + self.decoder.params()

    def encode_raw(self, raw: np.ndarray) -> FeatureSequence:
        with T.no_grad():
            pooled = avg_pool_grid(Tensor(raw.astype(self.dtype, copy=False)), self.cfg.raw_grid, self.cfg.pooled_grid)
            tokens = project(pooled, self.projector)
        return FeatureSequence(tokens, np.arange(raw.shape[0]))

    def question(self) -> QuestionSequence:
        ids = np.asarray(QUESTION_IDS)
        return QuestionSequence(ids, Tensor(self.decoder.embed.data[ids]))

    def hint_question(self) -> QuestionSequence:
        """A question embedding aligned with the projected needle beacon (marker coordinate left out)."""
        c = self.cfg
        beacon = needle_pattern(0, c.raw_dim, c.amplitude, c.beacon)
        beacon[0] -= c.amplitude
        with T.no_grad():
            emb = project(Tensor(beacon.reshape(1, 1, -1).astype(self.dtype)), self.projector).data[0]
        return QuestionSequence(np.asarray([Q_MARKER]), Tensor(emb))


@dataclass
class NeedleSample:
    video: np.ndarray          # [V, d] decayed tokens, frame-major
    times: np.ndarray          # [V] original timestamps
    memory: np.ndarray         # [M, d]
    marker: int
    needle_frame: int
    needle_kept: bool
    plan: SelectionPlan = field(repr=False)


def _tokens_per_frame(c: NeedleConfig) -> int:
    return c.pooled_grid[0] * c.pooled_grid[1]


def make_sample(model: HourModel, rng: np.random.Generator) -> NeedleSample:
    c = model.cfg
    video_seed = int(rng.integers(2 ** 63))
    marker = int(rng.integers(c.num_markers))
    base = np.random.default_rng(video_seed).standard_normal(
        (c.frames, c.raw_grid[0] * c.raw_grid[1], c.raw_dim), dtype=np.float32)
    pattern = needle_pattern(marker, c.raw_dim, c.amplitude, c.beacon).astype(np.float32)
    forget_cfg = c.forget_config(seed=video_seed % (2 ** 31))
    question = model.hint_question() if c.question_hint else model.question()

    content_free = c.temporal_strategy in ("uniform", "random")
    candidates = np.arange(c.frames)
    if content_free and c.enforce_discard:
        shape_only = FeatureSequence(Tensor(np.zeros((c.frames, _tokens_per_frame(c), 1))), np.arange(c.frames))
        kept = plan_forgetting(shape_only, question, forget_cfg).kept_frames
        candidates = np.setdiff1d(candidates, kept)
    order = rng.permutation(candidates)
    attempts = 1 if content_free or not c.enforce_discard else min(16, len(order))
    for frame in order[:attempts]:
        raw = base.copy()
        raw[frame] += pattern
        seq = model.encode_raw(raw)
        plan = plan_forgetting(seq, question, forget_cfg)
        kept = bool(np.isin(frame, plan.kept_frames))
        if kept and c.enforce_discard:
            continue
        repo = build_memory(seq, plan, c.memory_scale)
        decayed = seq.tokens.data[plan.kept_frames][:, plan.spatial_mask]
        f, s, d = decayed.shape
        return NeedleSample(decayed.reshape(f * s, d), np.repeat(plan.kept_frames, s), repo.tokens.data,
                            marker, int(frame), kept, plan)
    raise ConfigError(f"{c.temporal_strategy} forgetting keeps the needle in every tried position")


def stack_batch(samples: list[NeedleSample], dtype=np.float32):
    video = Tensor(np.stack([s.video for s in samples]).astype(dtype))
    times = np.stack([s.times for s in samples])
    memory = Tensor(np.stack([s.memory for s in samples]).astype(dtype))
    answers = np.array([[marker_token(s.marker), END] for s in samples], dtype=np.int64)
    return video, times, memory, answers


def forward_prefix(model: HourModel, video: Tensor, times: np.ndarray, memory: Tensor,
                   include_question: bool = True) -> Tensor:
    b = video.shape[0]
    ids = np.broadcast_to(np.asarray(QUESTION_IDS), (b, len(QUESTION_IDS)))
    question = T.gather_rows(model.decoder.embed, ids)
    aug, _ = model.memaug.apply(video, times, question if include_question else None, memory)
    return T.concat([aug, question], axis=1)


def needle_loss(model: HourModel, batch) -> Tensor:
    video, times, memory, answers = batch
    prefix = forward_prefix(model, video, times, memory)
    return batch_loss(model.decoder, TrainBatch(prefix, answers))


def predict_markers(model: HourModel, samples: list[NeedleSample]) -> np.ndarray:
    video, times, memory, _ = stack_batch(samples, model.dtype)
    with T.no_grad():
        prefix = forward_prefix(model, video, times, memory)
        logits = decoder_logits(model.decoder, prefix, np.zeros((video.shape[0], 0), dtype=np.int64))
    return np.argmax(logits.data[:, -1], axis=-1)


@dataclass
class NeedleResult:
    accuracy: float
    final_loss: float
    losses: list[float]
    needle_kept_rate: float
    memory_tokens: int
    decoder_visual_tokens: int
    generate_agrees: bool = True


def train_and_eval(cfg: NeedleConfig, log_every: int = 0, logger=None) -> NeedleResult:
    model = HourModel(cfg)
    train_ss, eval_ss = np.random.SeedSequence([cfg.seed, 1]).spawn(2)
    train_rng, eval_rng = np.random.default_rng(train_ss), np.random.default_rng(eval_ss)
    params = model.trainable()
    opt = Adam(params, lr=cfg.lr)
    losses = []
    for step in range(cfg.steps):
        batch = stack_batch([make_sample(model, train_rng) for _ in range(cfg.batch_size)], model.dtype)
        losses.append(train_step(params, batch, opt, lambda b: needle_loss(model, b)))
        if logger is not None and log_every and (step + 1) % log_every == 0:
            logger({"step": step + 1, "loss": float(np.mean(losses[-log_every:]))})
    correct, kept, n = 0, 0, 0
    probe, agrees = None, True
    while n < cfg.eval_probes:
        chunk = [make_sample(model, eval_rng) for _ in range(min(32, cfg.eval_probes - n))]
        pred = predict_markers(model, chunk)
        if probe is None:
            agrees = generate_agrees(model, chunk[:4], pred[:4])
        correct += int(np.sum(pred == np.array([marker_token(s.marker) for s in chunk])))
        kept += sum(s.needle_kept for s in chunk)
        n += len(chunk)
        probe = chunk[0]
    tail = losses[-50:] if losses else [float("nan")]
    return NeedleResult(correct / n, float(np.mean(tail)), losses, kept / n,
                        int(probe.memory.shape[0]), int(probe.video.shape[0]), agrees)


def generate_agrees(model: HourModel, samples: list[NeedleSample], predicted: np.ndarray) -> bool:
    """Greedy generation emits the same first token as the batched argmax."""
    video, times, memory, _ = stack_batch(samples, model.dtype)
    with T.no_grad():
        prefix = forward_prefix(model, video, times, memory)
        for i, want in enumerate(predicted):
            if generate(model.decoder, Tensor(prefix.data[i]), 1)[0] != int(want):
                return False
    return True
