"""Forgetting: non-learned spatial and temporal token discarding.

Temporal selection runs first so the retained-frame clamp acts on frames;
one spatial mask is then shared by every retained frame.  Ties in any scored
selection go to the lower frame index.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .encode import FeatureSequence, QuestionSequence
from .errors import ConfigError, SelectionError

SPATIAL_STRATEGIES = ("random", "uniform")
TEMPORAL_STRATEGIES = ("random", "uniform", "keyframe", "question_guided")


def as_ratio(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x).limit_denominator(1 << 20)


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class ForgetConfig:
    spatial_strategy: str = "random"
    spatial_ratio: Fraction = Fraction(1, 4)
    temporal_strategy: str = "uniform"
    temporal_ratio: Fraction = Fraction(1, 4)
    min_frames: int = 32
    max_frames: int = 512
    k_neighbors: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "spatial_ratio", as_ratio(self.spatial_ratio))
        object.__setattr__(self, "temporal_ratio", as_ratio(self.temporal_ratio))
        if self.spatial_strategy not in SPATIAL_STRATEGIES:
            raise ConfigError(f"unknown spatial strategy {self.spatial_strategy!r}")
        if self.temporal_strategy not in TEMPORAL_STRATEGIES:
            raise ConfigError(f"unknown temporal strategy {self.temporal_strategy!r}")
        for name in ("spatial_ratio", "temporal_ratio"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {r}")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("need 1 <= min_frames <= max_frames")
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")


@dataclass
class SelectionPlan:
    kept_frames: np.ndarray
    kept_spatial: list[np.ndarray]
    source_frames: int
    tokens_per_frame: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kept_frames = np.asarray(self.kept_frames, dtype=np.int64)
        self.kept_spatial = [np.asarray(s, dtype=np.int64) for s in self.kept_spatial]

    @property
    def spatial_mask(self) -> np.ndarray:
        return self.kept_spatial[0] if self.kept_spatial else np.zeros(0, dtype=np.int64)

    @property
    def num_tokens(self) -> int:
        return int(sum(len(s) for s in self.kept_spatial))

    def validate(self) -> None:
        f = self.kept_frames
        if f.size and (np.any(np.diff(f) <= 0) or f[0] < 0 or f[-1] >= self.source_frames):
            raise SelectionError("kept_frames must be strictly increasing and inside the source")
        if len(self.kept_spatial) != len(f):
            raise SelectionError("one spatial index list per kept frame required")
        for s in {id(s): s for s in self.kept_spatial}.values():
            if s.size and (np.any(np.diff(s) <= 0) or s[0] < 0 or s[-1] >= self.tokens_per_frame):
                raise SelectionError("spatial indices must be strictly increasing and < tokens_per_frame")

    def to_record(self, video_id: str = "") -> str:
        """One JSON line for replay."""
        return json.dumps({
            "video_id": video_id,
            "temporal_strategy": self.provenance.get("temporal_strategy"),
            "spatial_strategy": self.provenance.get("spatial_strategy"),
            "seed": self.provenance.get("seed"),
            "source_frames": self.source_frames,
            "tokens_per_frame": self.tokens_per_frame,
            "kept_frames": self.kept_frames.tolist(),
            "kept_spatial": [s.tolist() for s in self.kept_spatial],
            "warnings": self.provenance.get("warnings", 0),
        }, sort_keys=True)

    @classmethod
    def from_record(cls, line: str) -> "SelectionPlan":
        rec = json.loads(line)
        prov = {k: rec.get(k) for k in ("video_id", "temporal_strategy", "spatial_strategy", "seed", "warnings")}
        plan = cls(rec["kept_frames"], rec["kept_spatial"], rec["source_frames"], rec["tokens_per_frame"], prov)
        plan.validate()
        return plan


def clamp_frame_budget(total_frames: int, ratio=Fraction(1, 4), min_f: int = 32, max_f: int = 512) -> int:
    if total_frames < 1:
        raise SelectionError("total_frames must be >= 1")
    if total_frames <= min_f:
        return total_frames
    n = round_half_up(total_frames * as_ratio(ratio))
    return max(min_f, min(n, max_f))


def _grid_side(tokens_per_frame: int) -> int:
    g = math.isqrt(tokens_per_frame)
    if g * g != tokens_per_frame:
        raise ConfigError(f"tokens_per_frame={tokens_per_frame} is not a square grid")
    return g


def spatial_stride(ratio) -> int:
    r = as_ratio(ratio)
    # ceil(1/sqrt(r)) computed exactly: smallest s with s*s*r >= 1
    s = max(1, math.isqrt(math.ceil(1 / r)))
    while s * s * r < 1:
        s += 1
    return s


def spatial_select(tokens_per_frame: int, ratio=Fraction(1, 4), strategy: str = "uniform", seed: int = 0) -> np.ndarray:
    """Token indices kept within every frame of a ``g x g`` grid."""
    g = _grid_side(tokens_per_frame)
    s = spatial_stride(ratio)
    lines = np.arange(0, g, s)
    if strategy == "uniform":
        return (lines[:, None] * g + lines[None, :]).reshape(-1)
    if strategy == "random":
        rng = np.random.default_rng([seed, 1])
        return np.sort(rng.choice(tokens_per_frame, size=len(lines) ** 2, replace=False))
    raise ConfigError(f"unknown spatial strategy {strategy!r}")


def _check_retained(frames: int, retained: int) -> None:
    if not 1 <= retained <= frames:
        raise SelectionError(f"cannot retain {retained} of {frames} frames")


def temporal_select_uniform(frames: int, retained: int) -> np.ndarray:
    _check_retained(frames, retained)
    i = np.arange(retained, dtype=np.int64)
    return (i * frames) // retained


def temporal_select_random(frames: int, retained: int, seed: int = 0) -> np.ndarray:
    _check_retained(frames, retained)
    rng = np.random.default_rng([seed, 0])
    return np.sort(rng.choice(frames, size=retained, replace=False))


def frame_embeddings(seq: FeatureSequence) -> np.ndarray:
    return seq.tokens.data.mean(axis=1)


def _cosine(a: np.ndarray, b: np.ndarray, warnings: Counter | None) -> np.ndarray:
    """Row-wise cosine; zero-norm pairs score 0 and bump ``warnings['zero_norm']``."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    zero = denom == 0
    if warnings is not None and zero.any():
        warnings["zero_norm"] += int(np.count_nonzero(zero))
    dots = (a * b).sum(axis=-1)
    return np.where(zero, 0.0, dots / np.where(zero, 1.0, denom))


def temporal_neighbors(frame: int, frames: int, k: int) -> np.ndarray:
    """The ``min(k, frames - 1)`` nearest other frames; equal distance prefers the earlier one."""
    others = np.array([j for j in range(frames) if j != frame], dtype=np.int64)
    order = np.lexsort((others, np.abs(others - frame)))
    return np.sort(others[order[:k]])


def keyframe_scores(emb: np.ndarray, k: int = 8, warnings: Counter | None = None) -> np.ndarray:
    """Mean cosine similarity of each frame to its ``k`` nearest temporal neighbours."""
    frames = emb.shape[0]
    scores = np.empty(frames)
    for f in range(frames):
        nb = temporal_neighbors(f, frames, k)
        scores[f] = _cosine(np.broadcast_to(emb[f], (len(nb), emb.shape[1])), emb[nb], warnings).mean()
    return scores


def _pick(scores: np.ndarray, retained: int, highest: bool) -> np.ndarray:
    idx = np.arange(len(scores))
    key = -scores if highest else scores
    order = np.lexsort((idx, key))
    return np.sort(order[:retained])


def temporal_select_keyframe(seq: FeatureSequence, retained: int, k: int = 8,
                             warnings: Counter | None = None) -> np.ndarray:
    """Keep the frames least similar to their temporal neighbourhood."""
    frames = seq.num_frames
    _check_retained(frames, retained)
    if frames < 2:
        raise SelectionError("keyframe selection needs at least two frames")
    return _pick(keyframe_scores(frame_embeddings(seq), k, warnings), retained, highest=False)


def question_scores(seq: FeatureSequence, q: QuestionSequence, warnings: Counter | None = None) -> np.ndarray:
    v = frame_embeddings(seq)
    qbar = q.embeddings.data.mean(axis=0)
    return _cosine(v, np.broadcast_to(qbar, v.shape), warnings)


def temporal_select_question(seq: FeatureSequence, q: QuestionSequence, retained: int,
                             warnings: Counter | None = None) -> np.ndarray:
    """Keep the frames whose mean token is most cosine-similar to the mean question token."""
    _check_retained(seq.num_frames, retained)
    if q.num_tokens < 1:
        raise SelectionError("question-guided selection needs a question")
    return _pick(question_scores(seq, q, warnings), retained, highest=True)


def plan_forgetting(seq: FeatureSequence, q: QuestionSequence | None, cfg: ForgetConfig) -> SelectionPlan:
    frames, tpf = seq.num_frames, seq.tokens_per_frame
    retained = clamp_frame_budget(frames, cfg.temporal_ratio, cfg.min_frames, cfg.max_frames)
    warnings: Counter = Counter()
    strategy = cfg.temporal_strategy
    if strategy == "uniform":
        kept = temporal_select_uniform(frames, retained)
    elif strategy == "random":
        kept = temporal_select_random(frames, retained, cfg.rng_seed)
    elif strategy == "keyframe":
        kept = (np.arange(frames) if retained == frames
                else temporal_select_keyframe(seq, retained, cfg.k_neighbors, warnings))
    else:
        if q is None:
            raise SelectionError("question-guided selection needs a question")
        kept = temporal_select_question(seq, q, retained, warnings)
    spatial = spatial_select(tpf, cfg.spatial_ratio, cfg.spatial_strategy, cfg.rng_seed)
    plan = SelectionPlan(
        kept, [spatial] * len(kept), frames, tpf,
        {"temporal_strategy": strategy, "spatial_strategy": cfg.spatial_strategy,
         "seed": cfg.rng_seed, "warnings": sum(warnings.values())},
    )
    plan.validate()
    return plan


def select_tokens(seq: FeatureSequence, plan: SelectionPlan) -> FeatureSequence:
    """Exact row copies of ``seq`` at ``kept_frames x spatial_mask``."""
    x = T.take(seq.tokens, plan.kept_frames, axis=0)
    x = T.take(x, plan.spatial_mask, axis=1)
    return FeatureSequence(x, seq.timestamps[plan.kept_frames])


def apply_forgetting(seq: FeatureSequence, q: QuestionSequence | None, cfg: ForgetConfig):
    """Return ``(plan, decayed)`` where ``decayed`` keeps the original timestamps."""
    plan = plan_forgetting(seq, q, cfg)
    return plan, select_tokens(seq, plan)
