"""
Full SSM2Mel assembly, training loss and Pearson metric.

Pipeline: input projection -> scaled positional encoding -> ESM ->
[S4-UNet -> external attention] -> backbone over (pre-features, ESM output)
-> linear read-out. Disabled modules are identity maps and own no parameters.
"""

import logging
from typing import Mapping

import numpy as np

from .backbone import backbone_forward, init_backbone
from .config import ModelConfig
from .data import inference_segments
from .errors import ShapeError, UnknownSubjectError
from .layers import (
    NO_DROPOUT,
    Dropout,
    esm_forward,
    external_attention,
    external_memory,
    init_esm,
    init_external_memory,
    init_positional,
    positional_encode,
    positional_encoding,
)
from .numerics import (
    Tensor,
    abs_,
    as_tensor,
    concat,
    conv1d,
    mean,
    multiply,
    sqrt,
    subtract,
    sum_,
)
from .params import ParameterMap, ParamInit, ParamView, count_parameters, linear
from .s4unet import init_unet, unet_forward

logger = logging.getLogger(__name__)


def init_parameters(config: ModelConfig, seed: int = 0) -> ParameterMap:
    """Deterministic parameter map, keys in lexicographic order."""
    init = ParamInit(seed)
    d = config.d_model
    if config.input_projection == "conv":
        conv = init.child("input.conv")
        bound = 1.0 / np.sqrt(config.n_channels * config.input_conv_kernel)
        conv.uniform("weight", (d, config.n_channels, config.input_conv_kernel), bound)
        conv.uniform("bias", (d,), bound)
    else:
        init.linear("input.proj", config.n_channels, d)
    init_positional(init.child("pos"))
    if config.use_esm:
        init_esm(init.child("esm"), config.n_subjects, d)
    if config.use_s4unet:
        init_unet(init.child("unet"), config.unet, d, config.state_size)
    if config.use_external_attention:
        init_external_memory(init.child("ext"), config.ext_slots, d)
    init_backbone(init.child("backbone"), config.backbone, d, config.state_size)
    init.linear("output", d, config.n_mel)
    params = init.tensors()
    logger.debug(f"Initialized {len(params)} tensors ({count_parameters(params)} values), seed {seed}")
    return params


def _input_projection(p: ParamView, eeg: Tensor, config: ModelConfig) -> Tensor:
    if config.input_projection == "conv":
        half = config.input_conv_kernel // 2
        return conv1d(eeg, p["input.conv.weight"], p["input.conv.bias"], padding=(half, half))
    return linear(p.child("input.proj"), eeg)


def model_forward(
    eeg: Tensor,
    subject_id: int,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """
    Map an EEG segment to mel frames.

    Args:
        eeg: [T x C] EEG at the model sample rate
        subject_id: Index into the subject embedding table
        params: Parameter map from `init_parameters` (or a checkpoint)
        config: Architecture the parameters were built for

    Returns:
        [T x M] predicted mel spectrogram
    """
    eeg = as_tensor(eeg)
    if eeg.ndim != 2 or eeg.shape[0] < 1 or eeg.shape[1] != config.n_channels:
        raise ShapeError("model_forward", eeg.shape, ("T", config.n_channels),
                         detail="expected [T x n_channels] with T >= 1")
    if not 0 <= int(subject_id) < config.n_subjects:
        raise UnknownSubjectError(int(subject_id), config.n_subjects)
    p = ParamView(params)
    x = _input_projection(p, eeg, config)
    P0 = positional_encode(x, positional_encoding(p.child("pos"), config.max_len, config.d_model))
    esm_raw = esm_forward(p.child("esm"), P0, subject_id, config.n_heads, dropout) if config.use_esm else P0
    pre = esm_raw
    if config.use_s4unet:
        pre = unet_forward(p.child("unet"), pre, config.unet)
    if config.use_external_attention:
        pre = external_attention(pre, external_memory(p.child("ext")), config.ext_softmax_axis)
    z = backbone_forward(p.child("backbone"), pre, esm_raw, config.backbone.n_blocks, config.n_heads, dropout)
    return linear(p.child("output"), z)


def predict(eeg, subject_id: int, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    """Segment-and-concatenate inference over a whole recording."""
    eeg = as_tensor(eeg)
    outputs = [
        model_forward(eeg.data[start:start + length], subject_id, params, config)
        for start, length in inference_segments(eeg.shape[0], config.segment_length)
    ]
    return outputs[0] if len(outputs) == 1 else concat(outputs, axis=0)


def pearson_r(pred: Tensor, target: Tensor) -> Tensor:
    """
    Per-band Pearson correlation over time, averaged over bands.

    Bands where either side is constant contribute 0.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError("pearson_r", pred.shape, target.shape)
    if pred.shape[0] < 2:
        raise ShapeError("pearson_r", pred.shape, detail="need at least 2 time steps")
    constant = (np.ptp(pred.data, axis=0) == 0) | (np.ptp(target.data, axis=0) == 0)
    mask = constant.astype(np.float64)
    pc = subtract(pred, mean(pred, axis=0, keepdims=True))
    tc = subtract(target, mean(target, axis=0, keepdims=True))
    cov = sum_(multiply(pc, tc), axis=0)
    energy = multiply(sum_(multiply(pc, pc), axis=0), sum_(multiply(tc, tc), axis=0))
    r = multiply(cov / sqrt(energy + mask), 1.0 - mask)
    return mean(r)


def loss(pred: Tensor, target: Tensor, alpha: float) -> Tensor:
    """L = -R + alpha * mean|pred - target|"""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("loss", pred.shape, target.shape)
    return -pearson_r(pred, target) + alpha * mean(abs_(subtract(pred, target)))
