"""
Flat parameter store helpers.

Parameters live in one dict keyed by dotted path ("backbone.0.ffn1.in.weight").
Initialization draws every tensor from a generator seeded by (seed, crc32(path)),
so a parameter's value depends only on its own path and shape. Swapping one
sub-module therefore leaves every other parameter untouched.
"""

import zlib
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import DataShapeError
from .numerics import Tensor, matmul

ParameterMap = Dict[str, Tensor]


def path_rng(seed: int, path: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(path.encode("utf-8"))])


def join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


class ParamInit:
    """Collects freshly initialized parameters under a path prefix."""

    def __init__(self, seed: int, prefix: str = "", store: Optional[Dict[str, np.ndarray]] = None):
        self.seed = int(seed)
        self.prefix = prefix
        self.store: Dict[str, np.ndarray] = {} if store is None else store

    def child(self, name) -> "ParamInit":
        return ParamInit(self.seed, join(self.prefix, str(name)), self.store)

    def rng(self, name: str) -> np.random.Generator:
        return path_rng(self.seed, join(self.prefix, name))

    def add(self, name: str, value: np.ndarray) -> None:
        path = join(self.prefix, name)
        if path in self.store:
            raise KeyError(f"parameter '{path}' initialized twice")
        self.store[path] = np.asarray(value, dtype=np.float64)

    def uniform(self, name: str, shape: Sequence[int], bound: float) -> None:
        self.add(name, self.rng(name).uniform(-bound, bound, size=tuple(shape)))

    def constant(self, name: str, shape: Sequence[int], value: float) -> None:
        self.add(name, np.full(tuple(shape), float(value)))

    def linear(self, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
        """Weight stored [n_in x n_out]; uniform(+-1/sqrt(n_in)) like torch.nn.Linear."""
        scope = self.child(name)
        bound = 1.0 / np.sqrt(n_in)
        scope.uniform("weight", (n_in, n_out), bound)
        if bias:
            scope.uniform("bias", (n_out,), bound)

    def layer_norm(self, name: str, d: int) -> None:
        scope = self.child(name)
        scope.constant("weight", (d,), 1.0)
        scope.constant("bias", (d,), 0.0)

    def tensors(self) -> ParameterMap:
        """Leaf tensors in lexicographic path order."""
        return {path: Tensor(self.store[path], requires_grad=True) for path in sorted(self.store)}


class ParamView:
    """Read-only prefix view over a flat parameter map."""

    __slots__ = ("params", "prefix")

    def __init__(self, params: Mapping[str, Tensor], prefix: str = ""):
        self.params = params
        self.prefix = prefix

    def child(self, name) -> "ParamView":
        return ParamView(self.params, join(self.prefix, str(name)))

    def __getitem__(self, name: str) -> Tensor:
        path = join(self.prefix, name)
        try:
            return self.params[path]
        except KeyError:
            raise DataShapeError(f"missing parameter '{path}'") from None

    def __contains__(self, name: str) -> bool:
        return join(self.prefix, name) in self.params


def linear(p: ParamView, x) -> Tensor:
    out = matmul(x, p["weight"])
    if "bias" in p:
        out = out + p["bias"]
    return out


def count_parameters(params: Mapping[str, Tensor]) -> int:
    return int(sum(t.size for t in params.values()))


def frozen(params: Mapping[str, Tensor]) -> ParameterMap:
    """Copies that never record on a tape (for evaluation workers)."""
    return {path: Tensor(t.data) for path, t in params.items()}
