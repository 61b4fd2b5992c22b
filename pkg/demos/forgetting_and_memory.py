"""
Forgetting a video and remembering it anyway
============================================

Encode a synthetic 1-FPS clip, drop most of its tokens, and keep the full
sequence around as a memory repository the MemAug stack can read from.
"""

import numpy as np

from hourmem import (ForgetConfig, FrameStream, MemAugConfig, MemAugStack, Projector, apply_forgetting,
                     build_memory, encode_video, memaug_forward, memory_stats, param_count)
from hourmem.encode import QuestionSequence
from hourmem.tensor import Tensor

# 128 s of video, one frame per second, a 16x16 patch grid per frame.
# Frame 37 carries marker 5.
stream = FrameStream(128, raw_dim=32, grid=(16, 16), seed=0, planted=((37, 5),))
seq = encode_video(stream, Projector.init(32, 64, seed=0))
print("encoded tokens:", seq.tokens.shape)          # (frames, 64 tokens per frame, d_model)

# Keep every 4th frame and a 4x4 sub-grid of each kept frame.
plan, decayed = apply_forgetting(seq, None, ForgetConfig("uniform", "1/4", "uniform", "1/4"))
kept = decayed.tokens.shape[0] * decayed.tokens.shape[1]
print(f"kept {kept} of {128 * 64} tokens ({kept / (128 * 64):.2%})")
print("first kept frames:", plan.kept_frames[:6], "... frame 37 kept?", 37 in plan.kept_frames)

# The memory repository holds what was forgotten, at several scales.
for scale in ("full", "half", "quarter", "decayed_only"):
    print(f"{scale:>12}", memory_stats(build_memory(seq, plan, scale)))

# A freshly built stack has zero output projections, so it passes its input
# through untouched (plus positional encodings).  Training makes it read memory.
stack = MemAugStack.init(MemAugConfig(num_blocks=4, num_heads=4, d_model=64), seed=1)
print("MemAug parameters:", param_count(stack))
q = QuestionSequence(np.arange(3), Tensor(np.random.default_rng(2).standard_normal((3, 64))))
aug, _ = memaug_forward(decayed, q, build_memory(seq, plan), stack)
print("augmented video tokens:", aug.shape)
