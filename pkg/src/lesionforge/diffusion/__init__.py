"""Conditional pixel-space DDPM: schedule, denoiser, training, guided sampling, inpainting."""

from .sampling import (
    EmptyMaskWarning,
    SynthParams,
    cfg_epsilon,
    inference_timesteps,
    inpaint,
    reverse_process,
    reverse_step,
    sample,
)
from .schedule import NoiseSchedule, make_schedule, q_sample, to_image_space, to_model_space
from .training import PAPER_FINETUNE, TrainParams, degrade, make_batch, train, train_step
from .unet import Token, UNet, build_denoiser

__all__ = [
    "EmptyMaskWarning", "NoiseSchedule", "PAPER_FINETUNE", "SynthParams", "Token", "TrainParams",
    "UNet", "build_denoiser", "cfg_epsilon", "degrade", "inference_timesteps", "inpaint",
    "make_batch", "make_schedule", "q_sample", "reverse_process", "reverse_step", "sample",
    "to_image_space", "to_model_space", "train", "train_step",
]
