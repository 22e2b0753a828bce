try:
    import importlib.metadata
    __version__ = importlib.metadata.version("ssm2mel")
except ImportError:
    __version__ = "unknown"

from .numerics import Tape, Tensor, backward, grad_check, grad_check_many
from .ssm_core import (
    ContinuousSSM,
    DiscreteSSM,
    SelectiveParams,
    conv_kernel,
    parallel_scan,
    recurrence,
    selective_scan,
    zoh_discretize,
)
from .config import ModelConfig, RunConfig, Settings, SyntheticSpec, TrainConfig
from .model import init_parameters, loss, model_forward, pearson_r, predict
from .data import Recording, read_tensor, split_dataset, synth_generate, write_tensor
from .train import adam_step, evaluate, lr_at_epoch, train_loop

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "grad_check_many",
    "ContinuousSSM",
    "DiscreteSSM",
    "SelectiveParams",
    "conv_kernel",
    "parallel_scan",
    "recurrence",
    "selective_scan",
    "zoh_discretize",
    "ModelConfig",
    "RunConfig",
    "Settings",
    "SyntheticSpec",
    "TrainConfig",
    "init_parameters",
    "loss",
    "model_forward",
    "pearson_r",
    "predict",
    "Recording",
    "read_tensor",
    "split_dataset",
    "synth_generate",
    "write_tensor",
    "adam_step",
    "evaluate",
    "lr_at_epoch",
    "train_loop",
]
