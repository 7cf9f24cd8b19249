"""First-frame conditioned video diffusion at desk scale."""

from .diffusion import (
    GuidanceConfig,
    MixedNoiseSpec,
    NoiseSchedule,
    add_noise,
    cfg_predict,
    ddim_sample,
    epsilon_loss,
    make_schedule,
    sample_mixed_noise,
)
from .frame_init import FrameInitParams, frame_init_mix, gaussian_low_pass, make_static_video
from .signals import ConditionSignal
from .unet import UNetConfig, VideoUNet

__version__ = "0.1.0"
