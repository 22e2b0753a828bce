"""
Dense float64 tensors and a define-by-run reverse-mode tape.

Every op computes its forward value with numpy. When a `Tape` is active and at
least one input requires grad, the op appends a `TapeEntry` whose backward
closure holds the forward values its rule needs. `backward` walks the entries
in reverse and sums the contributions each node receives from its consumers.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
import logging
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Axis = Union[None, int, Tuple[int, ...]]

_node_ids = itertools.count()
_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "ssm2mel_active_tape", default=None
)
_debug_checks = False
_corrupted_ops: frozenset = frozenset()


class Tensor:
    """
    Row-major float64 array with autodiff bookkeeping.

    Tensors are treated as immutable: ops never write into `data`, and the
    optimizer builds new tensors instead of updating in place.
    """

    __slots__ = ("data", "requires_grad", "node_id")
    # numpy defers binary operators to the Tensor reflected methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=DTYPE)
        out.requires_grad = requires_grad
        out.node_id = next(_node_ids)
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # Operator sugar; all of it routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, tuple(axes) if axes else None)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


@dataclass
class TapeEntry:
    """One recorded op: its kind, input/output node ids and backward closure."""
    op: str
    inputs: Tuple[int, ...]
    output: int
    backward: BackwardFn


class Tape:
    """
    Ordered record of the ops evaluated while the tape is active.

    Used as a context manager; the active tape is held in a context variable so
    each worker thread records onto its own tape.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info) -> bool:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> List[str]:
        return [entry.op for entry in self.entries]


def set_debug_checks(enabled: bool) -> None:
    """Turn the per-op NaN/Inf check on or off."""
    global _debug_checks
    _debug_checks = bool(enabled)


@contextlib.contextmanager
def corrupt_backward(*ops: str) -> Iterator[None]:
    """Scale the backward rule of the named ops by 1.5 (negative control for grad checks)."""
    global _corrupted_ops
    previous = _corrupted_ops
    _corrupted_ops = previous | frozenset(ops)
    try:
        yield
    finally:
        _corrupted_ops = previous


def _corrupt(backward: BackwardFn) -> BackwardFn:
    def wrong(grad: np.ndarray):
        return tuple(None if g is None else 1.5 * g for g in backward(grad))
    return wrong


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record_op(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward: BackwardFn) -> Tensor:
    """
    Wrap a forward value as a Tensor and record it on the active tape.

    Fused kernels outside this module (the SSM scans) call this directly with
    their own backward rule; `backward` must return one gradient (or None) per
    input, in order.
    """
    value = np.asarray(value, dtype=DTYPE)
    if _debug_checks and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    tape = _active_tape.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, track)
    if track:
        if op in _corrupted_ops:
            backward = _corrupt(backward)
        tape.entries.append(TapeEntry(op, tuple(t.node_id for t in inputs), out.node_id, backward))
    return out


def backward(tape: Tape, loss: Tensor, leaves):
    """
    Reverse-mode sweep from a scalar loss.

    Args:
        tape: Tape the loss was computed under
        loss: Scalar tensor
        leaves: Mapping name -> Tensor, or a sequence of Tensors

    Returns:
        Gradients shaped like `leaves` (dict or list); leaves the loss does not
        depend on get zeros.
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, (), detail="loss must be scalar")
    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        grad_out = grads.pop(entry.output, None)
        if grad_out is None:
            continue
        for node_id, grad_in in zip(entry.inputs, entry.backward(grad_out)):
            if grad_in is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + grad_in
            else:
                grads[node_id] = grad_in

    def leaf_grad(t: Tensor) -> np.ndarray:
        g = grads.get(t.node_id)
        return np.zeros_like(t.data) if g is None else np.array(g, dtype=DTYPE).reshape(t.shape)

    if isinstance(leaves, Mapping):
        return {name: leaf_grad(t) for name, t in leaves.items()}
    return [leaf_grad(t) for t in leaves]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    grad = np.asarray(grad)
    if not keepdims:
        grad = np.expand_dims(grad, _normalize_axes(axis, len(shape)))
    return np.broadcast_to(grad, shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return record_op("add", (a, b), a.data + b.data,
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def subtract(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return record_op("subtract", (a, b), a.data - b.data,
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def multiply(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return record_op("multiply", (a, b), ad * bd,
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def divide(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return record_op("divide", (a, b), out, rule)


def negate(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return record_op("negate", (a,), -a.data, lambda g: (-g,))


def power(a: TensorLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    p = float(exponent)
    return record_op("power", (a,), ad ** p, lambda g: (g * p * ad ** (p - 1.0),))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op("exp", (a,), out, lambda g: (g * out,))


def expm1(a: TensorLike) -> Tensor:
    """exp(a) - 1, accurate for small |a|."""
    a = as_tensor(a)
    ad = a.data
    return record_op("expm1", (a,), np.expm1(ad), lambda g: (g * np.exp(ad),))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record_op("log", (a,), np.log(ad), lambda g: (g / ad,))


def sqrt(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record_op("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def abs_(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return record_op("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def where(condition: np.ndarray, a: TensorLike, b: TensorLike) -> Tensor:
    """Select from `a` where the constant mask is true, else from `b`."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    sa, sb = a.shape, b.shape

    def rule(g):
        return (_unbroadcast(np.where(cond, g, 0.0), sa),
                _unbroadcast(np.where(cond, 0.0, g), sb))

    return record_op("where", (a, b), np.where(cond, a.data, b.data), rule)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return record_op("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def gelu(a: TensorLike) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)
    slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
    return record_op("gelu", (a,), out, lambda g: (g * slope,))


def silu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return record_op("silu", (a,), x * s, lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def softplus(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record_op("softplus", (a,), np.logaddexp(0.0, x), lambda g: (g * _sigmoid(x),))


def softmax(a: TensorLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return record_op("softmax", (a,), s,
                     lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def layer_norm(x: TensorLike, weight: TensorLike, bias: TensorLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, weight.shape, bias.shape)
    xd, wd = x.data, weight.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    lead = tuple(range(xd.ndim - 1))

    def rule(g):
        gxhat = g * wd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record_op("layer_norm", (x, weight, bias), xhat * wd + bias.data, rule)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return record_op("sum", (a,), a.data.sum(axis=axis, keepdims=keepdims),
                     lambda g: (np.array(_expand_reduced(g, shape, axis, keepdims)),))


def mean(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = int(np.prod([shape[i] for i in _normalize_axes(axis, len(shape))]))
    return record_op("mean", (a,), a.data.mean(axis=axis, keepdims=keepdims),
                     lambda g: (_expand_reduced(g, shape, axis, keepdims) / count,))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def rule(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record_op("matmul", (a, b), ad @ bd, rule)


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inverse = tuple(np.argsort([ax % a.ndim for ax in axes]))
    return record_op("transpose", (a,), np.transpose(a.data, axes),
                     lambda g: (np.transpose(g, inverse),))


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    original = a.shape
    return record_op("reshape", (a,), out, lambda g: (g.reshape(original),))


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", (), detail="nothing to concatenate")
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise ShapeError("concat", first.shape, t.shape)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record_op("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis),
                     lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_(a: TensorLike, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    try:
        out = np.array(a.data[key])
    except IndexError:
        raise ShapeError("slice", a.shape, detail=f"bad index {key!r}") from None
    shape = a.shape

    def rule(g):
        grad = np.zeros(shape, dtype=DTYPE)
        np.add.at(grad, key, g)
        return (grad,)

    return record_op("slice", (a,), out, rule)


def flip(a: TensorLike, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    key = [slice(None)] * a.ndim
    key[axis] = slice(None, None, -1)
    return slice_(a, tuple(key))


def pad(a: TensorLike, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero padding; `widths` holds one (before, after) pair per axis."""
    a = as_tensor(a)
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != a.ndim or any(v < 0 for w in widths for v in w):
        raise ShapeError("pad", a.shape, detail=f"bad widths {widths}")
    key = tuple(slice(before, before + n) for (before, _), n in zip(widths, a.shape))
    return record_op("pad", (a,), np.pad(a.data, widths), lambda g: (g[key],))


# ---------------------------------------------------------------------------
# convolutions ([time x channels] layout, cross-correlation like torch)
# ---------------------------------------------------------------------------

def conv1d(
    x: TensorLike,
    weight: TensorLike,
    bias: Optional[TensorLike] = None,
    stride: int = 1,
    padding: Tuple[int, int] = (0, 0),
    groups: int = 1,
) -> Tensor:
    """
    1-D convolution over the time axis.

    Args:
        x: Input [T x C_in]
        weight: Kernel [C_out x C_in/groups x K]
        bias: Optional [C_out]
        stride: Step between output frames
        padding: Zeros added (left, right) along time
        groups: Channel groups (groups == C_in gives a depthwise conv)

    Returns:
        Output [T_out x C_out]
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError("conv1d", x.shape, weight.shape)
    T, c_in = x.shape
    c_out, c_in_g, K = weight.shape
    if c_in % groups or c_out % groups or c_in // groups != c_in_g:
        raise ShapeError("conv1d", x.shape, weight.shape, detail=f"groups={groups}")
    left, right = padding
    padded_len = T + left + right
    t_out = (padded_len - K) // stride + 1
    if t_out < 1:
        raise ShapeError("conv1d", x.shape, weight.shape, detail="kernel longer than padded input")
    c_out_g = c_out // groups
    xp = np.pad(x.data, ((left, right), (0, 0)))
    idx = stride * np.arange(t_out)[:, None] + np.arange(K)[None, :]
    cols = xp[idx].reshape(t_out, K, groups, c_in_g)
    wg = weight.data.reshape(groups, c_out_g, c_in_g, K)
    out = np.einsum("tkgc,gock->tgo", cols, wg).reshape(t_out, c_out)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv1d", weight.shape, bias.shape)
        out = out + bias.data
        inputs.append(bias)

    def rule(g):
        gg = g.reshape(t_out, groups, c_out_g)
        grad_w = np.einsum("tgo,tkgc->gock", gg, cols).reshape(c_out, c_in_g, K)
        grad_cols = np.einsum("tgo,gock->tkgc", gg, wg).reshape(t_out, K, c_in)
        grad_xp = np.zeros((padded_len, c_in), dtype=DTYPE)
        np.add.at(grad_xp, idx, grad_cols)
        grads = [grad_xp[left:left + T], grad_w]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return record_op("conv1d", inputs, out, rule)


def conv_transpose1d(
    x: TensorLike,
    weight: TensorLike,
    bias: Optional[TensorLike] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    1-D transposed convolution over the time axis.

    Args:
        x: Input [T x C_in]
        weight: Kernel [C_in x C_out x K]
        bias: Optional [C_out]
        stride: Upsampling factor
        padding: Frames trimmed from both ends of the full output

    Returns:
        Output [(T - 1) * stride + K - 2 * padding x C_out]
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[0] != x.shape[1]:
        raise ShapeError("conv_transpose1d", x.shape, weight.shape)
    T, _ = x.shape
    _, c_out, K = weight.shape
    full_len = (T - 1) * stride + K
    end = full_len - padding
    if end - padding < 1:
        raise ShapeError("conv_transpose1d", x.shape, weight.shape, detail=f"padding={padding}")
    idx = stride * np.arange(T)[:, None] + np.arange(K)[None, :]
    xd, wd = x.data, weight.data
    full = np.zeros((full_len, c_out), dtype=DTYPE)
    np.add.at(full, idx, np.einsum("tc,cok->tko", xd, wd))
    out = full[padding:end]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv_transpose1d", weight.shape, bias.shape)
        out = out + bias.data
        inputs.append(bias)

    def rule(g):
        g_full = np.zeros((full_len, c_out), dtype=DTYPE)
        g_full[padding:end] = g
        g_cols = g_full[idx]
        grads = [np.einsum("tko,cok->tc", g_cols, wd), np.einsum("tc,tko->cok", xd, g_cols)]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return record_op("conv_transpose1d", inputs, out, rule)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of a tape-vs-central-difference comparison."""
    max_rel_error: float
    tolerance: float
    n_checked: int
    failures: List[Tuple[str, Tuple[int, ...], float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: max rel-err {self.max_rel_error:.3e} over {self.n_checked} "
                f"coordinates (tol {self.tolerance:.0e})")


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: TensorLike,
    step: float = 1e-6,
    tol: float = 1e-6,
    floor: float = 1e-3,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare the tape gradient of scalar `f` at `x` with central differences."""
    return grad_check_many(lambda inputs: f(inputs["x"]), {"x": x}, step=step, tol=tol,
                           floor=floor, max_coords=max_coords, seed=seed)


def grad_check_many(
    f: Callable[[Dict[str, Tensor]], Tensor],
    inputs: Mapping[str, TensorLike],
    step: float = 1e-6,
    tol: float = 1e-6,
    floor: float = 1e-3,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Gradient check over several named inputs.

    The relative error of a coordinate is |tape - fd| / max(|tape|, |fd|, floor),
    so gradients below `floor` are effectively compared in absolute terms.
    With `max_coords`, a seeded random subset of each input's coordinates is
    checked.
    """
    base = {name: np.array(as_tensor(v).data, dtype=DTYPE) for name, v in inputs.items()}
    leaves = {name: Tensor(v, requires_grad=True) for name, v in base.items()}
    with Tape() as tape:
        out = f(leaves)
    analytic = backward(tape, out, leaves)

    def evaluate(name: str, idx: Tuple[int, ...], delta: float) -> float:
        args = {}
        for key, value in base.items():
            if key == name:
                value = value.copy()
                value[idx] += delta
            args[key] = Tensor(value)
        return as_tensor(f(args)).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    failures = []
    for name, value in base.items():
        coords = list(np.ndindex(value.shape))
        if max_coords is not None and len(coords) > max_coords:
            picked = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
            coords = [coords[i] for i in picked]
        for idx in coords:
            numeric = (evaluate(name, idx, step) - evaluate(name, idx, -step)) / (2.0 * step)
            tape_value = float(analytic[name][idx])
            rel = abs(tape_value - numeric) / max(abs(tape_value), abs(numeric), floor)
            if not np.isfinite(rel):
                rel = float("inf")
            worst = max(worst, rel)
            checked += 1
            if rel >= tol:
                failures.append((name, tuple(int(i) for i in idx), tape_value, numeric, rel))
    report = GradCheckReport(worst, tol, checked, failures)
    logger.debug("grad check %s", report.summary())
    return report
