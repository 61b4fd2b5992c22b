"""Synthetic 1-FPS video features, grid pooling and the two-layer GELU projector.

Raw frames stand in for vision-encoder patch features: i.i.d. standard
normal entries per patch.  A planted needle adds the same pattern to every
patch of its frame::

    needle(m) = amplitude * (onehot(m) + beacon * b)

where ``b`` is the indicator of the coordinates past the first 32 (or of all
coordinates when ``raw_dim <= 32``).  The frame mean is decoded by ``argmax``
over the marker coordinates (:func:`marker_probe`), and the shared beacon
makes needle frames detectable along a single linear direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, VocabularyError
from .tensor import Param, Tensor

MARKER_DIMS = 32


@dataclass(frozen=True)
class FrameStream:
    """Description of one simulated video sampled at one frame per second."""

    num_frames: int
    raw_dim: int = 32
    grid: tuple[int, int] = (16, 16)
    seed: int = 0
    planted: tuple[tuple[int, int], ...] = ()
    amplitude: float = 3.0
    beacon: float = 1.0

    def __post_init__(self):
        if self.num_frames < 1:
            raise ConfigError(f"num_frames must be >= 1, got {self.num_frames}")
        for frame, marker in self.planted:
            if not 0 <= frame < self.num_frames:
                raise ConfigError(f"planted frame {frame} outside [0, {self.num_frames})")
            if not 0 <= marker < min(self.raw_dim, MARKER_DIMS):
                raise ConfigError(f"marker id {marker} outside [0, {min(self.raw_dim, MARKER_DIMS)})")


@dataclass
class FeatureSequence:
    """Per-frame token grids ``tokens[frame, token, d_model]`` with their timestamps."""

    tokens: Tensor
    timestamps: np.ndarray
    tokens_per_frame: int = field(init=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.tokens.ndim != 3:
            raise DimensionError(f"tokens must be frames x tokens x d, got {self.tokens.shape}")
        if len(self.timestamps) != self.tokens.shape[0]:
            raise DimensionError("one timestamp per frame required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ContractError("timestamps must be strictly increasing")
        self.tokens_per_frame = self.tokens.shape[1]

    @property
    def num_frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_model(self) -> int:
        return self.tokens.shape[2]


@dataclass
class QuestionSequence:
    token_ids: np.ndarray
    embeddings: Tensor

    @property
    def num_tokens(self) -> int:
        return len(self.token_ids)


def needle_pattern(marker_id: int, raw_dim: int, amplitude: float = 3.0, beacon: float = 1.0) -> np.ndarray:
    """Beacon on the coordinates past the marker range (all coordinates if there are none)."""
    pattern = np.zeros(raw_dim)
    if raw_dim > MARKER_DIMS:
        pattern[MARKER_DIMS:] = amplitude * beacon
    else:
        pattern[:] = amplitude * beacon
    pattern[marker_id] += amplitude
    return pattern


def marker_probe(raw_dim: int) -> np.ndarray:
    """Linear probe ``[raw_dim, markers]`` mapping a raw (or pooled) feature to marker scores."""
    return np.eye(raw_dim)[:, :min(raw_dim, MARKER_DIMS)]


def decode_marker(features: np.ndarray) -> int:
    """Marker id of a frame from its raw/pooled tokens ``[tokens, raw_dim]``."""
    return int(np.argmax(np.asarray(features).mean(axis=0) @ marker_probe(features.shape[-1])))


def synth_frames(stream: FrameStream) -> Tensor:
    """Raw features ``[frames, g_h*g_w, raw_dim]``; deterministic per seed."""
    rng = np.random.default_rng(stream.seed)
    gh, gw = stream.grid
    raw = rng.standard_normal((stream.num_frames, gh * gw, stream.raw_dim))
    for frame, marker in stream.planted:
        raw[frame] += needle_pattern(marker, stream.raw_dim, stream.amplitude, stream.beacon)
    return Tensor(raw)


def avg_pool_grid(raw: Tensor, grid: tuple[int, int], target: tuple[int, int] = (8, 8)) -> Tensor:
    """Average-pool each frame's ``grid`` of patches down to ``target`` cells.

    Windows must tile the grid exactly.
    """
    gh, gw = grid
    th, tw = target
    frames, n, dim = raw.shape
    if n != gh * gw:
        raise DimensionError(f"frame has {n} patches, grid {grid} needs {gh * gw}")
    if gh < th or gw < tw or gh % th or gw % tw:
        raise ConfigError(f"grid {grid} must be divisible by pooling target {target}")
    wh, ww = gh // th, gw // tw
    x = T.reshape(raw, (frames, th, wh, tw, ww, dim))
    x = T.mean(x, axis=(2, 4))
    return T.reshape(x, (frames, th * tw, dim))


@dataclass
class Projector:
    """Two-layer MLP ``linear -> GELU -> linear`` into the model width."""

    w1: Param
    b1: Param
    w2: Param
    b2: Param

    @classmethod
    def init(cls, raw_dim: int = 32, d_model: int = 64, hidden: int | None = None, seed: int = 0,
             dtype=np.float64) -> "Projector":
        hidden = d_model if hidden is None else hidden
        rng = np.random.default_rng(seed)
        return cls(
            Param(rng.standard_normal((raw_dim, hidden)) / math.sqrt(raw_dim), "proj.w1", dtype),
            Param(np.zeros(hidden), "proj.b1", dtype),
            Param(rng.standard_normal((hidden, d_model)) / math.sqrt(hidden), "proj.w2", dtype),
            Param(np.zeros(d_model), "proj.b2", dtype),
        )

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def raw_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def d_model(self) -> int:
        return self.w2.shape[1]


def project(pooled: Tensor, mlp: Projector) -> Tensor:
    if pooled.shape[-1] != mlp.raw_dim:
        raise DimensionError(f"pooled width {pooled.shape[-1]} != projector input {mlp.raw_dim}")
    h = T.gelu(T.linear(pooled, mlp.w1, mlp.b1))
    return T.linear(h, mlp.w2, mlp.b2)


def encode_video(stream: FrameStream, mlp: Projector, target: tuple[int, int] = (8, 8)) -> FeatureSequence:
    raw = synth_frames(stream)
    pooled = avg_pool_grid(raw, stream.grid, target)
    tokens = project(pooled, mlp)
    return FeatureSequence(tokens, np.arange(stream.num_frames))


def embed_question(token_ids, table: Tensor) -> QuestionSequence:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("a question needs at least one token id")
    vocab = table.shape[0]
    bad = ids[(ids < 0) | (ids >= vocab)]
    if bad.size:
        raise VocabularyError(f"token id {int(bad[0])} outside vocabulary of size {vocab}")
    return QuestionSequence(ids, T.gather_rows(table, ids))
