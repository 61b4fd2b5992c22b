"""Memory-augmented long-video modelling at desk scale.

numpy autodiff kernel, 1-FPS feature synthesis and projection, token
forgetting, a full-context memory repository, the MemAug cross-attention
stack, a toy decoder, experiment drivers and data-prep utilities.
"""

from .encode import FeatureSequence, FrameStream, Projector, QuestionSequence, embed_question, encode_video
from .forget import ForgetConfig, SelectionPlan, apply_forgetting, clamp_frame_budget, spatial_select
from .memaug import MemAugConfig, MemAugStack, memaug_forward, param_count
from .memory import MemoryRepository, build_memory, memory_stats
from .tensor import Param, Tensor, grad_check, no_grad

__version__ = "0.1.0"
