"""
Macaron MHSA/Mamba backbone.

Each block is a Conformer-style macaron: half-FFN, mixer, convolution module,
half-FFN, final LayerNorm, all pre-norm residual. The mixer is either multi-head
self-attention or a Mamba block; its parameters live under `mhsa.*` or
`mamba.*` so switching the schedule only changes that subtree.
"""

import numpy as np

from .config import BackboneConfig
from .errors import ShapeError
from .numerics import Tensor, as_tensor, conv1d, multiply, sigmoid, silu, slice_
from .params import ParamInit, ParamView, linear
from .layers import NO_DROPOUT, Dropout, ffn, init_attention, init_ffn, multi_head_attention, norm
from .ssm_core import init_selective, selective_params, selective_scan


# ---------------------------------------------------------------------------
# Mamba block
# ---------------------------------------------------------------------------

def init_mamba(init: ParamInit, d_model: int, expand: int, state_size: int, conv_kernel: int) -> None:
    inner = expand * d_model
    init.linear("in_proj", d_model, inner, bias=False)
    init.linear("gate_proj", d_model, inner, bias=False)
    bound = 1.0 / np.sqrt(conv_kernel)
    init.uniform("conv.weight", (inner, 1, conv_kernel), bound)
    init.uniform("conv.bias", (inner,), bound)
    init_selective(init.child("ssm"), inner, state_size)
    init.linear("out_proj", inner, d_model, bias=False)


def mamba_block_forward(p: ParamView, x: Tensor, scan_method: str = "scan") -> Tensor:
    """
    u = SiLU(causal_conv(in_proj(x)))
    g = SiLU(gate_proj(x))
    y = out_proj(selective_scan(u) * g)
    """
    x = as_tensor(x)
    projected = linear(p.child("in_proj"), x)
    weight = p["conv.weight"]
    inner, _, K = weight.shape
    u = silu(conv1d(projected, weight, p["conv.bias"], padding=(K - 1, 0), groups=inner))
    gate = silu(linear(p.child("gate_proj"), x))
    scanned = selective_scan(selective_params(p.child("ssm")), u, scan_method)
    return linear(p.child("out_proj"), multiply(scanned, gate))


# ---------------------------------------------------------------------------
# convolution module
# ---------------------------------------------------------------------------

def init_conv_module(init: ParamInit, d_model: int, kernel: int) -> None:
    init.linear("pointwise_in", d_model, 2 * d_model)
    bound = 1.0 / np.sqrt(kernel)
    init.uniform("depthwise.weight", (d_model, 1, kernel), bound)
    init.uniform("depthwise.bias", (d_model,), bound)
    init.layer_norm("ln", d_model)
    init.linear("pointwise_out", d_model, d_model)


def conv_module(p: ParamView, x: Tensor, dropout: Dropout = NO_DROPOUT) -> Tensor:
    """pointwise(d -> 2d) -> GLU -> depthwise conv (same padding) -> LN -> SiLU -> pointwise"""
    x = as_tensor(x)
    d = x.shape[1]
    doubled = linear(p.child("pointwise_in"), x)
    glu = multiply(slice_(doubled, (slice(None), slice(0, d))),
                   sigmoid(slice_(doubled, (slice(None), slice(d, 2 * d)))))
    weight = p["depthwise.weight"]
    half = weight.shape[2] // 2
    mixed = conv1d(glu, weight, p["depthwise.bias"], padding=(half, half), groups=d)
    out = silu(norm(p.child("ln"), mixed))
    return linear(p.child("pointwise_out"), dropout(out))


# ---------------------------------------------------------------------------
# macaron block and backbone
# ---------------------------------------------------------------------------

def init_macaron(init: ParamInit, mixer: str, d_model: int, cfg: BackboneConfig, state_size: int) -> None:
    init.layer_norm("ln_ffn1", d_model)
    init_ffn(init.child("ffn1"), d_model)
    init.layer_norm("ln_mixer", d_model)
    if mixer == "mhsa":
        init_attention(init.child("mhsa"), d_model)
    else:
        init_mamba(init.child("mamba"), d_model, cfg.mamba_expand, state_size, cfg.mamba_conv_kernel)
    init.layer_norm("ln_conv", d_model)
    init_conv_module(init.child("conv"), d_model, cfg.conv_kernel)
    init.layer_norm("ln_ffn2", d_model)
    init_ffn(init.child("ffn2"), d_model)
    init.layer_norm("ln_out", d_model)


def mixer_kind(p: ParamView) -> str:
    return "mhsa" if "mhsa.q_proj.weight" in p else "mamba"


def macaron_block_forward(
    p: ParamView,
    x: Tensor,
    n_heads: int,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """
    x <- x + 1/2 FFN(LN x); x <- x + Mixer(LN x); x <- x + Conv(LN x);
    x <- x + 1/2 FFN(LN x); return LN x
    """
    x = as_tensor(x)
    x = x + 0.5 * ffn(p.child("ffn1"), norm(p.child("ln_ffn1"), x), dropout)
    z = norm(p.child("ln_mixer"), x)
    if mixer_kind(p) == "mhsa":
        mixed = multi_head_attention(p.child("mhsa"), z, z, z, n_heads, dropout)
    else:
        mixed = mamba_block_forward(p.child("mamba"), z)
    x = x + dropout(mixed)
    x = x + conv_module(p.child("conv"), norm(p.child("ln_conv"), x), dropout)
    x = x + 0.5 * ffn(p.child("ffn2"), norm(p.child("ln_ffn2"), x), dropout)
    return norm(p.child("ln_out"), x)


def init_backbone(init: ParamInit, cfg: BackboneConfig, d_model: int, state_size: int) -> None:
    for index, mixer in enumerate(cfg.mixers()):
        init_macaron(init.child(f"blocks.{index}"), mixer, d_model, cfg, state_size)


def backbone_forward(
    p: ParamView,
    pre_features: Tensor,
    esm_raw: Tensor,
    n_blocks: int,
    n_heads: int,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """Residual fusion z = pre_features + esm_raw, then the block sequence."""
    pre_features, esm_raw = as_tensor(pre_features), as_tensor(esm_raw)
    if pre_features.shape != esm_raw.shape:
        raise ShapeError("backbone_forward", pre_features.shape, esm_raw.shape)
    z = pre_features + esm_raw
    for index in range(n_blocks):
        z = macaron_block_forward(p.child(f"blocks.{index}"), z, n_heads, dropout)
    return z
