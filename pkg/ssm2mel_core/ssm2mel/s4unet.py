"""
S4-UNet pre-extractor.

Encoder levels halve the time axis and double the width with stride-2
convolutions; a stack of S4 blocks runs at the bottleneck; the decoder mirrors
the encoder with transposed convolutions and additive skips. Input is
right-padded with zeros to a multiple of 2^depth and trimmed on output.
"""

import logging
from typing import Optional

import numpy as np

from .config import UNetConfig
from .errors import ShapeError
from .numerics import Tensor, as_tensor, conv1d, conv_transpose1d, flip, gelu, pad, slice_
from .params import ParamInit, ParamView, linear
from .layers import norm
from .ssm_core import DiscreteSSM, apply_ssm, init_s4, s4_forward

logger = logging.getLogger(__name__)

SAMPLING_KERNEL = 4
SAMPLING_STRIDE = 2


def level_widths(cfg: UNetConfig):
    return [cfg.base_width * 2 ** i for i in range(cfg.depth + 1)]


def lookahead_bound(cfg: UNetConfig) -> int:
    """Samples of future input that can reach an output frame."""
    return 2 ** cfg.depth * SAMPLING_KERNEL


def init_s4_block(init: ParamInit, width: int, state_size: int, bidirectional: bool = False) -> None:
    init.layer_norm("ln", width)
    init_s4(init.child("s4"), width, state_size)
    if bidirectional:
        init_s4(init.child("s4_bwd"), width, state_size)
    init.linear("proj", width, width)


def s4_block_forward(
    p: ParamView,
    x: Tensor,
    mode: str = "scan",
    bidirectional: bool = False,
    disc: Optional[DiscreteSSM] = None,
) -> Tensor:
    """
    x + linear(GELU(S4(LN(x)))).

    `disc` replaces the learned forward SSM with fixed discrete parameters.
    """
    z = norm(p.child("ln"), x)
    s = s4_forward(p.child("s4"), z, mode) if disc is None else apply_ssm(disc, z, mode)
    if bidirectional:
        s = s + flip(s4_forward(p.child("s4_bwd"), flip(z, axis=0), mode), axis=0)
    return x + linear(p.child("proj"), gelu(s))


def init_sampling(init: ParamInit, width: int) -> None:
    init.uniform("down.weight", (2 * width, width, SAMPLING_KERNEL), 1.0 / np.sqrt(width * SAMPLING_KERNEL))
    init.constant("down.bias", (2 * width,), 0.0)
    init.uniform("up.weight", (2 * width, width, SAMPLING_KERNEL), 1.0 / np.sqrt(2 * width * SAMPLING_KERNEL))
    init.constant("up.bias", (width,), 0.0)


def downsample(p: ParamView, x: Tensor) -> Tensor:
    """[T x w] -> [T/2 x 2w]: stride-2 conv (kernel 4, pad 1 each side), GELU."""
    x = as_tensor(x)
    if x.shape[0] % 2:
        raise ShapeError("downsample", x.shape, detail="time length must be even")
    return gelu(conv1d(x, p["weight"], p["bias"], stride=SAMPLING_STRIDE, padding=(1, 1)))


def upsample(p: ParamView, x: Tensor, skip: Tensor) -> Tensor:
    """[T x 2w] -> [2T x w]: transposed conv, add skip, GELU."""
    x, skip = as_tensor(x), as_tensor(skip)
    up = conv_transpose1d(x, p["weight"], p["bias"], stride=SAMPLING_STRIDE, padding=1)
    if up.shape != skip.shape:
        raise ShapeError("upsample", up.shape, skip.shape)
    return gelu(up + skip)


def init_unet(init: ParamInit, cfg: UNetConfig, d_model: int, state_size: int) -> None:
    widths = level_widths(cfg)
    if cfg.base_width != d_model:
        init.linear("in_proj", d_model, cfg.base_width)
        init.linear("out_proj", cfg.base_width, d_model)
    for level in range(cfg.depth):
        init_sampling(init.child(f"level.{level}"), widths[level])
    for block in range(cfg.n_s4_blocks):
        init_s4_block(init.child(f"blocks.{block}"), widths[-1], state_size, cfg.bidirectional)


def unet_forward(p: ParamView, x: Tensor, cfg: UNetConfig) -> Tensor:
    x = as_tensor(x)
    T = x.shape[0]
    h = linear(p.child("in_proj"), x) if "in_proj.weight" in p else x
    pad_len = (-T) % (2 ** cfg.depth)
    if pad_len:
        h = pad(h, ((0, pad_len), (0, 0)))
    skips = []
    for level in range(cfg.depth):
        skips.append(h)
        h = downsample(p.child(f"level.{level}.down"), h)
    for block in range(cfg.n_s4_blocks):
        h = s4_block_forward(p.child(f"blocks.{block}"), h, cfg.s4_mode, cfg.bidirectional)
    for level in reversed(range(cfg.depth)):
        h = upsample(p.child(f"level.{level}.up"), h, skips[level])
    if pad_len:
        h = slice_(h, slice(0, T))
    if "out_proj.weight" in p:
        h = linear(p.child("out_proj"), h)
    return h
