"""
Attention-family building blocks.

Layers are plain functions over a `ParamView`; each has a matching `init_*`
that registers its parameters. Sequences are [T x d].
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import InvalidValueError, ShapeError, UnknownSubjectError
from .numerics import (
    Tensor,
    as_tensor,
    gelu,
    layer_norm,
    matmul,
    multiply,
    reshape,
    slice_,
    softmax,
    sum_,
    transpose,
)
from .params import ParamInit, ParamView, linear

FFN_EXPANSION = 4


@dataclass
class Dropout:
    """Inverted dropout driven by an explicit generator; rate 0 or no rng is identity."""
    rate: float = 0.0
    rng: Optional[np.random.Generator] = None

    def __call__(self, x: Tensor) -> Tensor:
        if self.rate <= 0.0 or self.rng is None:
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return multiply(x, keep)


NO_DROPOUT = Dropout()


def norm(p: ParamView, x: Tensor) -> Tensor:
    return layer_norm(x, p["weight"], p["bias"])


# ---------------------------------------------------------------------------
# feed-forward
# ---------------------------------------------------------------------------

def init_ffn(init: ParamInit, d_model: int) -> None:
    init.linear("in", d_model, FFN_EXPANSION * d_model)
    init.linear("out", FFN_EXPANSION * d_model, d_model)


def ffn(p: ParamView, x: Tensor, dropout: Dropout = NO_DROPOUT) -> Tensor:
    """linear(d -> 4d) -> GELU -> linear(4d -> d)"""
    hidden = dropout(gelu(linear(p.child("in"), x)))
    return linear(p.child("out"), hidden)


# ---------------------------------------------------------------------------
# multi-head attention
# ---------------------------------------------------------------------------

def init_attention(init: ParamInit, d_model: int) -> None:
    for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
        init.linear(name, d_model, d_model)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    T, d = x.shape
    return transpose(reshape(x, (T, n_heads, d // n_heads)), (1, 0, 2))


def multi_head_attention(
    p: ParamView,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    dropout: Dropout = NO_DROPOUT,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """
    Scaled dot-product attention per head, no mask.

    Args:
        p: Parameters with q_proj, k_proj, v_proj and out_proj
        q: Queries [T_q x d]
        k: Keys [T_k x d]
        v: Values [T_k x d]
        n_heads: Head count; must divide d

    Returns:
        [T_q x d], plus the weights [heads x T_q x T_k] when `return_weights`
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if k.ndim != 2 or k.shape[0] == 0:
        raise ShapeError("multi_head_attention", q.shape, k.shape, detail="empty key sequence")
    if k.shape != v.shape or q.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeError("multi_head_attention", q.shape, k.shape, v.shape)
    T_q, d = q.shape
    if d % n_heads:
        raise ShapeError("multi_head_attention", q.shape, detail=f"{n_heads} heads do not divide width")
    d_head = d // n_heads
    Q = _split_heads(linear(p.child("q_proj"), q), n_heads)
    K = _split_heads(linear(p.child("k_proj"), k), n_heads)
    V = _split_heads(linear(p.child("v_proj"), v), n_heads)
    scores = matmul(Q, transpose(K, (0, 2, 1))) * (1.0 / np.sqrt(d_head))
    weights = softmax(scores, axis=-1)
    heads = matmul(dropout(weights), V)  # [h x T_q x d_head]
    merged = reshape(transpose(heads, (1, 0, 2)), (T_q, d))
    out = linear(p.child("out_proj"), merged)
    if return_weights:
        return out, weights
    return out


# ---------------------------------------------------------------------------
# Embedding Strength Modulator
# ---------------------------------------------------------------------------

def init_esm(init: ParamInit, n_subjects: int, d_model: int) -> None:
    init.add("subject_embedding", init.rng("subject_embedding").standard_normal((n_subjects, d_model)))
    init.layer_norm("ln_se", d_model)
    init_attention(init.child("attn"), d_model)
    init.layer_norm("ln_m", d_model)
    init_ffn(init.child("ffn"), d_model)


def subject_embedding(p: ParamView, subject_id: int) -> Tensor:
    """Row `subject_id` of the table as a length-1 sequence (one-hot x table)."""
    table = p["subject_embedding"]
    n_subjects = table.shape[0]
    if not 0 <= int(subject_id) < n_subjects:
        raise UnknownSubjectError(int(subject_id), n_subjects)
    return slice_(table, slice(int(subject_id), int(subject_id) + 1))


def esm_forward(
    p: ParamView,
    P0: Tensor,
    subject_id: int,
    n_heads: int,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """
    M = P0 + MH(P0, LN(SE) + SE, LN(SE) + SE)
    F = FFN(LN(M)) + M

    The single subject key makes the attention term a per-subject offset that
    is the same at every time step; the residual carries P0 through.
    """
    P0 = as_tensor(P0)
    se = subject_embedding(p, subject_id)
    kv = norm(p.child("ln_se"), se) + se
    M = P0 + multi_head_attention(p.child("attn"), P0, kv, kv, n_heads, dropout)
    return ffn(p.child("ffn"), norm(p.child("ln_m"), M), dropout) + M


# ---------------------------------------------------------------------------
# external attention
# ---------------------------------------------------------------------------

@dataclass
class ExternalMemory:
    Mk: Tensor  # [S x d]
    Mv: Tensor  # [S x d]

    def __post_init__(self):
        self.Mk, self.Mv = as_tensor(self.Mk), as_tensor(self.Mv)
        if self.Mk.ndim != 2 or self.Mk.shape[0] < 1 or self.Mk.shape != self.Mv.shape:
            raise ShapeError("ExternalMemory", self.Mk.shape, self.Mv.shape)

    @property
    def slots(self) -> int:
        return self.Mk.shape[0]


def init_external_memory(init: ParamInit, slots: int, d_model: int) -> None:
    bound = 1.0 / np.sqrt(d_model)
    init.uniform("Mk", (slots, d_model), bound)
    init.uniform("Mv", (slots, d_model), bound)


def external_memory(p: ParamView) -> ExternalMemory:
    return ExternalMemory(p["Mk"], p["Mv"])


def external_attention_weights(x: Tensor, mem: ExternalMemory, softmax_axis: str = "slots") -> Tensor:
    """
    Double-normalized attention map [T x S]: softmax, then L1 over slots.

    `softmax_axis="time"` runs the softmax down the sequence instead, so the
    two normalizations act on different axes.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != mem.Mk.shape[1]:
        raise ShapeError("external_attention", x.shape, mem.Mk.shape)
    scores = matmul(x, transpose(mem.Mk))
    if softmax_axis == "slots":
        attn = softmax(scores, axis=-1)
    elif softmax_axis == "time":
        attn = softmax(scores, axis=0)
    else:
        raise InvalidValueError(f"unknown external-attention softmax axis '{softmax_axis}'")
    return attn / sum_(attn, axis=-1, keepdims=True)


def external_attention(x: Tensor, mem: ExternalMemory, softmax_axis: str = "slots") -> Tensor:
    return matmul(external_attention_weights(x, mem, softmax_axis), mem.Mv)


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------

def sinusoid_table(max_len: int, d_model: int) -> np.ndarray:
    """table[pos, 2i] = sin(pos / 10000^(2i/d)), table[pos, 2i+1] = cos(same)."""
    position = np.arange(max_len, dtype=np.float64)[:, None]
    rates = np.exp(-np.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[: d_model // 2])
    return table


@dataclass
class PositionalEncoding:
    table: np.ndarray  # [T_max x d]
    scale: Tensor  # [1]

    @property
    def max_len(self) -> int:
        return self.table.shape[0]


def init_positional(init: ParamInit) -> None:
    init.constant("scale", (1,), 1.0)


def positional_encoding(p: ParamView, max_len: int, d_model: int) -> PositionalEncoding:
    return PositionalEncoding(sinusoid_table(max_len, d_model), p["scale"])


def positional_encode(x: Tensor, pe: PositionalEncoding) -> Tensor:
    """x + scale * table[0:T]"""
    x = as_tensor(x)
    T = x.shape[0]
    if T > pe.max_len:
        raise ShapeError("positional_encode", x.shape, pe.table.shape, detail="sequence longer than table")
    if x.shape[1] != pe.table.shape[1]:
        raise ShapeError("positional_encode", x.shape, pe.table.shape)
    return x + multiply(pe.scale, pe.table[:T])
