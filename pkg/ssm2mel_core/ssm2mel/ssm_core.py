"""
State-space sequence kernels.

All kernels work on a diagonal real state matrix, one set of N states per
channel. Parameters are laid out [H x N] (D is [H]); sequences are [T x H].

Three interchangeable ways to run a fixed DiscreteSSM:
  * recurrence      - step-by-step h_t = A_bar h_{t-1} + B_bar x_t
  * parallel_scan   - Blelloch scan over the affine-map monoid
  * convolve        - materialize K[l] = C A_bar^l B_bar and convolve causally

The recurrence and scan share one hand-written adjoint rule, so the tape
stores a single entry per SSM call rather than one per time step.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidValueError, ShapeError
from .numerics import (
    DTYPE,
    Tensor,
    as_tensor,
    conv1d,
    exp,
    expm1,
    flip,
    matmul,
    multiply,
    record_op,
    reshape,
    softplus,
    transpose,
    where,
)
from .params import ParamInit, ParamView

logger = logging.getLogger(__name__)

ZOH_LIMIT = 1e-8
SCAN_SERIAL_THRESHOLD = 64
DT_MIN, DT_MAX = 1e-3, 1e-1

StatesFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ContinuousSSM:
    A: Tensor  # [H x N], strictly negative
    B: Tensor
    C: Tensor
    D: Tensor  # [H]

    def __post_init__(self):
        self.A, self.B, self.C, self.D = (as_tensor(v) for v in (self.A, self.B, self.C, self.D))
        _check_layout("ContinuousSSM", self.A, self.B, self.C, self.D)
        if not np.all(self.A.data < 0):
            raise InvalidValueError("ContinuousSSM: every diagonal entry of A must be negative")

    @property
    def channels(self) -> int:
        return self.A.shape[0]

    @property
    def state_size(self) -> int:
        return self.A.shape[1]


@dataclass
class DiscreteSSM:
    A_bar: Tensor  # [H x N]
    B_bar: Tensor
    C: Tensor
    D: Tensor  # [H]
    delta: Optional[Tensor] = None

    def __post_init__(self):
        self.A_bar, self.B_bar, self.C, self.D = (
            as_tensor(v) for v in (self.A_bar, self.B_bar, self.C, self.D)
        )
        _check_layout("DiscreteSSM", self.A_bar, self.B_bar, self.C, self.D)

    @property
    def channels(self) -> int:
        return self.A_bar.shape[0]


@dataclass
class SelectiveParams:
    """Input-dependent SSM: Δ_t, B_t and C_t are projections of x_t."""
    W_delta: Tensor  # [H x H]
    b_delta: Tensor  # [H]
    W_B: Tensor  # [H x N]
    b_B: Tensor  # [N]
    W_C: Tensor  # [H x N]
    b_C: Tensor  # [N]
    A: Tensor  # [H x N], negative
    D: Tensor  # [H]

    def __post_init__(self):
        for name in ("W_delta", "b_delta", "W_B", "b_B", "W_C", "b_C", "A", "D"):
            setattr(self, name, as_tensor(getattr(self, name)))


def _check_layout(name: str, A: Tensor, B: Tensor, C: Tensor, D: Tensor) -> None:
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(name, A.shape, detail="A must be [H x N] with H, N >= 1")
    if B.shape != A.shape or C.shape != A.shape:
        raise ShapeError(name, A.shape, B.shape, C.shape)
    if D.shape != (A.shape[0],):
        raise ShapeError(name, A.shape, D.shape, detail="D must be [H]")


# ---------------------------------------------------------------------------
# affine state kernels: h_t = a_t * h_{t-1} + b_t, h_{-1} = 0
# ---------------------------------------------------------------------------

def serial_states(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """`a` is either per-step [T x ...] or shared [...]; `b` is [T x ...]."""
    varying = a.ndim == b.ndim
    h = np.zeros(b.shape[1:], dtype=DTYPE)
    out = np.empty_like(b)
    for t in range(b.shape[0]):
        h = (a[t] if varying else a) * h + b[t]
        out[t] = h
    return out


def blelloch_states(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Work-efficient exclusive scan over (a, b) pairs, composed earlier-then-later:
    (a_e, b_e) then (a_l, b_l) gives (a_l a_e, a_l b_e + b_l). The sequence is
    padded to a power of two with the identity (1, 0).
    """
    T = b.shape[0]
    if T < SCAN_SERIAL_THRESHOLD:
        return serial_states(a, b)
    a = np.broadcast_to(a, b.shape)
    size = 1 << (T - 1).bit_length()
    prod = np.ones((size,) + b.shape[1:], dtype=DTYPE)
    acc = np.zeros((size,) + b.shape[1:], dtype=DTYPE)
    prod[:T] = a
    acc[:T] = b

    step = 1
    while step < size:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        acc[right] = prod[right] * acc[left] + acc[right]
        prod[right] = prod[right] * prod[left]
        step *= 2

    prod[size - 1] = 1.0
    acc[size - 1] = 0.0
    step = size // 2
    while step >= 1:
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        left_prod, left_acc = prod[left].copy(), acc[left].copy()
        prod[left] = prod[right]
        acc[left] = acc[right]
        acc[right] = left_prod * acc[right] + left_acc
        prod[right] = left_prod * prod[right]
        step //= 2

    # acc[t] is now the state before step t
    return a * acc[:T] + b


def _states_fn(method: str) -> StatesFn:
    if method == "recurrence":
        return serial_states
    if method == "scan":
        return blelloch_states
    raise InvalidValueError(f"unknown state kernel '{method}'")


# ---------------------------------------------------------------------------
# fixed-parameter SSM
# ---------------------------------------------------------------------------

def zoh_discretize(ssm: ContinuousSSM, delta: Union[float, Tensor]) -> DiscreteSSM:
    """
    Zero-order hold: A_bar = exp(Δa), B_bar = expm1(Δa)/a * b.

    `delta` is a scalar or a per-channel [H] tensor. Where |Δa| < 1e-8 the
    limit B_bar = Δb is used instead.
    """
    delta = as_tensor(delta)
    if not np.all(delta.data > 0):
        raise InvalidValueError(f"zoh_discretize: step size must be positive, got {delta.data}")
    H = ssm.channels
    if delta.ndim == 0:
        step = reshape(delta, (1, 1))
    elif delta.shape == (H,):
        step = reshape(delta, (H, 1))
    else:
        raise ShapeError("zoh_discretize", ssm.A.shape, delta.shape)
    dA = multiply(step, ssm.A)
    A_bar = exp(dA)
    near_zero = np.abs(dA.data) < ZOH_LIMIT
    safe_A = where(near_zero, np.ones(ssm.A.shape), ssm.A)
    exact = multiply(expm1(dA) / safe_A, ssm.B)
    B_bar = where(near_zero, multiply(step, ssm.B), exact)
    return DiscreteSSM(A_bar, B_bar, ssm.C, ssm.D, delta=delta)


def _check_input(op: str, disc: DiscreteSSM, x: Tensor) -> None:
    if x.ndim != 2 or x.shape[1] != disc.channels:
        raise ShapeError(op, x.shape, disc.A_bar.shape, detail="channel mismatch")


def _run_states(op: str, disc: DiscreteSSM, x: Tensor, method: str) -> Tensor:
    x = as_tensor(x)
    _check_input(op, disc, x)
    states_fn = _states_fn(method)
    Ab, Bb, C, D, xd = disc.A_bar.data, disc.B_bar.data, disc.C.data, disc.D.data, x.data
    states = states_fn(Ab, xd[:, :, None] * Bb)
    y = np.einsum("thn,hn->th", states, C) + xd * D

    def rule(gy):
        u = gy[:, :, None] * C
        lam = states_fn(Ab, np.ascontiguousarray(u[::-1]))[::-1]
        h_prev = np.concatenate([np.zeros((1,) + states.shape[1:]), states[:-1]], axis=0)
        return (
            np.einsum("thn,thn->hn", lam, h_prev),
            np.einsum("thn,th->hn", lam, xd),
            np.einsum("th,thn->hn", gy, states),
            (gy * xd).sum(axis=0),
            np.einsum("thn,hn->th", lam, Bb) + gy * D,
        )

    return record_op(op, (disc.A_bar, disc.B_bar, disc.C, disc.D, x), y, rule)


def recurrence(disc: DiscreteSSM, x: Tensor) -> Tensor:
    """Sequential scan; y_t = C·h_t + D x_t per channel, h_0 = 0."""
    return _run_states("ssm_recurrence", disc, x, "recurrence")


def parallel_scan(disc: DiscreteSSM, x: Tensor) -> Tensor:
    """Same contract as `recurrence`, computed with a Blelloch scan."""
    return _run_states("ssm_parallel_scan", disc, x, "scan")


def conv_kernel(disc: DiscreteSSM, L: int) -> Tensor:
    """K[l, h] = Σ_n C[h,n] A_bar[h,n]^l B_bar[h,n] for l in [0, L)."""
    if L < 1:
        raise InvalidValueError(f"conv_kernel: L must be >= 1, got {L}")
    Ab, Bb, C = disc.A_bar.data, disc.B_bar.data, disc.C.data
    powers = np.arange(L, dtype=DTYPE)[:, None, None]
    vander = np.power(Ab[None], powers)  # [L x H x N]
    K = np.einsum("lhn,hn->lh", vander, C * Bb)

    def rule(g):
        weighted = np.einsum("lh,lhn->hn", g, vander)
        dvander = np.zeros_like(vander)
        dvander[1:] = powers[1:] * vander[:-1]
        return (
            np.einsum("lh,lhn->hn", g, dvander) * C * Bb,
            weighted * C,
            weighted * Bb,
        )

    return record_op("ssm_conv_kernel", (disc.A_bar, disc.B_bar, disc.C), K, rule)


def causal_convolve(K: Tensor, x: Tensor) -> Tensor:
    """y[t, h] = Σ_{l<=t} K[l, h] x[t-l, h] as a depthwise conv1d."""
    K, x = as_tensor(K), as_tensor(x)
    if K.ndim != 2 or x.ndim != 2 or K.shape[1] != x.shape[1]:
        raise ShapeError("causal_convolve", K.shape, x.shape)
    L, H = K.shape
    weight = reshape(flip(transpose(K), axis=1), (H, 1, L))
    return conv1d(x, weight, padding=(L - 1, 0), groups=H)


def convolve(disc: DiscreteSSM, x: Tensor) -> Tensor:
    x = as_tensor(x)
    _check_input("ssm_convolve", disc, x)
    return causal_convolve(conv_kernel(disc, x.shape[0]), x) + multiply(x, disc.D)


def apply_ssm(disc: DiscreteSSM, x: Tensor, mode: str = "scan") -> Tensor:
    if mode == "recurrence":
        return recurrence(disc, x)
    if mode == "scan":
        return parallel_scan(disc, x)
    if mode == "conv":
        return convolve(disc, x)
    raise InvalidValueError(f"unknown SSM mode '{mode}'")


# ---------------------------------------------------------------------------
# learnable S4 (diagonal) layer
# ---------------------------------------------------------------------------

def init_s4(init: ParamInit, channels: int, state_size: int) -> None:
    """
    a_n = -(n+1)/2 stored as log(-a); B, C ~ U(+-1/sqrt(N)); D = 1;
    Δ geometrically spaced over [1e-3, 1e-1] and stored as log Δ.
    """
    n = np.arange(state_size, dtype=DTYPE)
    init.add("log_neg_A", np.tile(np.log((n + 1.0) / 2.0), (channels, 1)))
    bound = 1.0 / np.sqrt(state_size)
    init.uniform("B", (channels, state_size), bound)
    init.uniform("C", (channels, state_size), bound)
    init.constant("D", (channels,), 1.0)
    init.add("log_dt", np.log(np.geomspace(DT_MIN, DT_MAX, channels)))


def s4_discrete(p: ParamView) -> DiscreteSSM:
    ssm = ContinuousSSM(-exp(p["log_neg_A"]), p["B"], p["C"], p["D"])
    return zoh_discretize(ssm, exp(p["log_dt"]))


def s4_forward(p: ParamView, x: Tensor, mode: str = "scan") -> Tensor:
    return apply_ssm(s4_discrete(p), x, mode)


# ---------------------------------------------------------------------------
# selective (input-dependent) scan
# ---------------------------------------------------------------------------

def init_selective(init: ParamInit, channels: int, state_size: int) -> None:
    init.linear("delta_proj", channels, channels)
    init.linear("B_proj", channels, state_size)
    init.linear("C_proj", channels, state_size)
    n = np.arange(state_size, dtype=DTYPE)
    init.add("log_neg_A", np.tile(np.log(n + 1.0), (channels, 1)))
    init.constant("D", (channels,), 1.0)


def selective_params(p: ParamView) -> SelectiveParams:
    return SelectiveParams(
        W_delta=p["delta_proj.weight"], b_delta=p["delta_proj.bias"],
        W_B=p["B_proj.weight"], b_B=p["B_proj.bias"],
        W_C=p["C_proj.weight"], b_C=p["C_proj.bias"],
        A=-exp(p["log_neg_A"]), D=p["D"],
    )


def _selective_recurrence(delta: Tensor, A: Tensor, Bt: Tensor, Ct: Tensor, D: Tensor,
                          x: Tensor, method: str) -> Tensor:
    states_fn = _states_fn(method)
    dd, Ad, Bd, Cd, Dd, xd = delta.data, A.data, Bt.data, Ct.data, D.data, x.data
    a = np.exp(dd[:, :, None] * Ad[None])  # [T x H x N]
    b = (dd * xd)[:, :, None] * Bd[:, None, :]
    states = states_fn(a, b)
    y = np.einsum("thn,tn->th", states, Cd) + xd * Dd

    def rule(gy):
        u = gy[:, :, None] * Cd[:, None, :]
        a_next = np.concatenate([a[1:], np.zeros((1,) + a.shape[1:])], axis=0)
        lam = states_fn(np.ascontiguousarray(a_next[::-1]), np.ascontiguousarray(u[::-1]))[::-1]
        h_prev = np.concatenate([np.zeros((1,) + states.shape[1:]), states[:-1]], axis=0)
        ga = lam * h_prev * a  # gradient wrt the exponent Δ_t A
        lam_B = np.einsum("thn,tn->th", lam, Bd)
        return (
            np.einsum("thn,hn->th", ga, Ad) + lam_B * xd,
            np.einsum("thn,th->hn", ga, dd),
            np.einsum("thn,th->tn", lam, dd * xd),
            np.einsum("th,thn->tn", gy, states),
            (gy * xd).sum(axis=0),
            lam_B * dd + gy * Dd,
        )

    return record_op("ssm_selective_scan", (delta, A, Bt, Ct, D, x), y, rule)


def selective_scan(params: SelectiveParams, x: Tensor, method: str = "scan") -> Tensor:
    """
    Per step: Ā_t = exp(Δ_t A) (zero-order hold), B̄_t = Δ_t B_t (Euler),
    h_t = Ā_t h_{t-1} + B̄_t x_t, y_t = C_t·h_t + D x_t.
    """
    x = as_tensor(x)
    H = params.A.shape[0]
    if x.ndim != 2 or x.shape[1] != H:
        raise ShapeError("selective_scan", x.shape, params.A.shape, detail="channel mismatch")
    delta = softplus(matmul(x, params.W_delta) + params.b_delta)
    Bt = matmul(x, params.W_B) + params.b_B
    Ct = matmul(x, params.W_C) + params.b_C
    return _selective_recurrence(delta, params.A, Bt, Ct, params.D, x, method)
