"""Desk-scale LLM-to-T5 feature alignment with a gated cross-modal refiner.

numpy float64 throughout, with a small reverse-mode autodiff engine in
:mod:`ldgen.tensor`. Subpackages are imported lazily by the CLI; the common
entry points are re-exported here.
"""

from .adapter import AdapterConfig, AdapterParams, adapter_forward, adapter_forward_batch, \
    adapter_init
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import *  # noqa: F401,F403
from .features import FeatureSequence, ScaleCalibration, Space, calibrate_scale_coefficient, \
    load_feature_batch, masked_rms, save_feature_batch, scale_features
from .gradcheck import grad_check
from .harness import NoiseSchedule, ToyDiTConfig, make_noise_schedule, q_sample, toy_dit_forward, \
    toy_dit_init
from .losses import AlignmentLossConfig, LossBreakdown, combined_alignment_loss, \
    cosine_alignment_loss, mse_alignment_loss
from .optim import OptimizerState, adam_step
from .refiner import RefinerConfig, RefinerParams, refiner_forward, refiner_init
from .teacher import SyntheticTeacher, least_squares_oracle, synth_conditioned_latents, \
    synth_teacher_pairs
from .tensor import Tensor, backward

__version__ = "0.1.0"
