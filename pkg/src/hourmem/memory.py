"""Full-context memory repository serving cross-attention keys and values.

Binary dump layout (all little-endian)::

    magic   4 bytes  b"HMEM"
    version uint32   1
    M       uint32   number of tokens
    d       uint32   token width
    rows    M*d float32, row-major, frame-major token order
    index   M uint32, original frame index of each row
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import tensor as T
from .encode import FeatureSequence
from .errors import ConfigError, IntegrityError
from .forget import SelectionPlan, round_half_up, temporal_select_uniform
from .tensor import Tensor

SCALES = {"full": Fraction(1), "half": Fraction(1, 2), "quarter": Fraction(1, 4), "decayed_only": None}
_MAGIC = b"HMEM"


@dataclass(frozen=True)
class MemoryRepository:
    tokens: Tensor
    frame_index_of: np.ndarray
    scale: str
    source_frames: int
    tokens_per_frame: int
    built_from: str = ""

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_model(self) -> int:
        return self.tokens.shape[1]

    def checksum(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.tokens.data).tobytes())
        h.update(np.ascontiguousarray(self.frame_index_of).tobytes())
        return h.hexdigest()


def memory_frames(source_frames: int, scale: str, plan: SelectionPlan | None = None) -> np.ndarray:
    """Frames represented in a repository of the given scale."""
    if scale not in SCALES:
        raise ConfigError(f"unknown memory scale {scale!r}; expected one of {sorted(SCALES)}")
    if scale == "decayed_only":
        if plan is None:
            raise IntegrityError("decayed_only memory needs a selection plan")
        return plan.kept_frames
    n = max(1, round_half_up(source_frames * SCALES[scale]))
    return temporal_select_uniform(source_frames, n)


def _check_plan(seq: FeatureSequence, plan: SelectionPlan) -> None:
    if plan.source_frames != seq.num_frames or plan.tokens_per_frame != seq.tokens_per_frame:
        raise IntegrityError(
            f"plan built for {plan.source_frames}x{plan.tokens_per_frame} tokens, "
            f"sequence is {seq.num_frames}x{seq.tokens_per_frame}")
    try:
        plan.validate()
    except ValueError as exc:
        raise IntegrityError(str(exc)) from exc


def build_memory(seq: FeatureSequence, plan: SelectionPlan, scale: str = "full", video_id: str = "") -> MemoryRepository:
    _check_plan(seq, plan)
    frames = memory_frames(seq.num_frames, scale, plan)
    x = T.take(seq.tokens, frames, axis=0)
    if scale == "decayed_only":
        spatial = plan.spatial_mask
        x = T.take(x, spatial, axis=1)
    else:
        spatial = np.arange(seq.tokens_per_frame)
    flat = T.reshape(x, (len(frames) * len(spatial), seq.d_model))
    flat.data.flags.writeable = False
    index = np.repeat(frames, len(spatial))
    index.flags.writeable = False
    return MemoryRepository(flat, index, scale, seq.num_frames, seq.tokens_per_frame, video_id)


def memory_stats(repo: MemoryRepository) -> dict:
    full = repo.source_frames * repo.tokens_per_frame
    return {
        "M": repo.size,
        "frames_covered": int(len(np.unique(repo.frame_index_of))),
        "fraction_of_full": repo.size / full,
    }


def save_memory(repo: MemoryRepository, path) -> None:
    rows = np.ascontiguousarray(repo.tokens.data, dtype="<f4")
    index = np.ascontiguousarray(repo.frame_index_of, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<III", 1, repo.size, repo.d_model))
        fh.write(rows.tobytes())
        fh.write(index.tobytes())


def load_memory(path, scale: str = "full", source_frames: int | None = None,
                tokens_per_frame: int | None = None) -> MemoryRepository:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise IntegrityError(f"{path}: not a memory dump")
    version, m, d = struct.unpack("<III", blob[4:16])
    if version != 1:
        raise IntegrityError(f"{path}: unsupported version {version}")
    rows_end = 16 + 4 * m * d
    rows = np.frombuffer(blob[16:rows_end], dtype="<f4").reshape(m, d).astype(np.float32)
    index = np.frombuffer(blob[rows_end:rows_end + 4 * m], dtype="<u4").astype(np.int64)
    if source_frames is None:
        source_frames = int(index.max()) + 1 if m else 0
    if tokens_per_frame is None:
        tokens_per_frame = int(np.bincount(index).max()) if m else 0
    return MemoryRepository(Tensor(rows), index, scale, source_frames, tokens_per_frame)
