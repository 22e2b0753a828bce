"""
Embedded verification suite behind `ssm2mel selftest`.

Runs small versions of the gradient, kernel-equivalence, metric and file-format
oracles so an installed build can check itself without pytest.
"""

import logging
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import numerics as nx
from .config import BackboneConfig, ModelConfig, UNetConfig
from .backbone import init_macaron, init_mamba, macaron_block_forward, mamba_block_forward
from .data import read_tensor, write_tensor
from .health_check import ResourceMonitor
from .layers import (
    esm_forward,
    external_attention,
    ExternalMemory,
    init_attention,
    init_esm,
    multi_head_attention,
)
from .model import init_parameters, loss, model_forward, pearson_r
from .params import ParamInit, ParamView
from .s4unet import init_s4_block, init_unet, s4_block_forward, unet_forward
from .ssm_core import (
    DiscreteSSM,
    SelectiveParams,
    convolve,
    parallel_scan,
    recurrence,
    selective_scan,
)
from .train import lr_at_epoch

logger = logging.getLogger(__name__)

CheckFn = Callable[[], Tuple[bool, str]]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SelfTestReport:
    results: List[CheckResult] = field(default_factory=list)
    resources: str = ""

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def render(self) -> str:
        lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} {r.seconds:7.2f}s  {r.detail}"
                 for r in self.results]
        lines.append(f"{len(self.results) - len(self.failures)}/{len(self.results)} checks passed")
        if self.resources:
            lines.append(self.resources)
        return "\n".join(lines)


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(
        n_channels=4, n_mel=3, d_model=8, n_heads=2, n_subjects=2, state_size=4, max_len=64,
        ext_slots=4, sample_rate=8, segment_seconds=2,
        unet=UNetConfig(depth=1, base_width=8, n_s4_blocks=1),
        backbone=BackboneConfig(n_blocks=2, conv_kernel=3),
    )
    values.update(overrides)
    return ModelConfig(**values)


def random_discrete(rng: np.random.Generator, H: int, N: int) -> DiscreteSSM:
    return DiscreteSSM(
        rng.uniform(-0.95, 0.95, (H, N)), rng.standard_normal((H, N)),
        rng.standard_normal((H, N)), rng.standard_normal(H),
    )


def _grad_report(report: nx.GradCheckReport) -> Tuple[bool, str]:
    return report.passed, report.summary()


def _param_check(init_fn, forward, seed: int = 0, max_coords: Optional[int] = 3, tol: float = 1e-4):
    init = ParamInit(seed)
    init_fn(init)
    params = {path: value for path, value in init.store.items()}
    return _grad_report(nx.grad_check_many(lambda leaves: forward(ParamView(leaves)), params,
                                           tol=tol, max_coords=max_coords, seed=seed))


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def check_elementwise_ops() -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 1.5, (3, 4))
    w = rng.standard_normal((3, 4))

    def f(t):
        y = nx.gelu(t) + nx.silu(t) * nx.softplus(t) + nx.exp(t) / nx.sqrt(t) + nx.log(t) ** 2.0 + nx.expm1(-t)
        y = nx.softmax(y, axis=-1) + nx.sigmoid(-t)
        return nx.sum_(y * w)

    return _grad_report(nx.grad_check(f, x, tol=1e-5))


def check_shape_ops() -> Tuple[bool, str]:
    rng = np.random.default_rng(1)
    inputs = {"x": rng.standard_normal((5, 3)), "w": rng.standard_normal((3, 2)),
              "g": np.ones(2) + 0.1 * rng.standard_normal(2), "b": rng.standard_normal(2)}

    def f(t):
        y = nx.matmul(t["x"], t["w"])
        y = nx.layer_norm(y, t["g"], t["b"])
        y = nx.concat([y, nx.transpose(nx.reshape(y, (2, 5)))], axis=1)
        y = nx.pad(nx.slice_(y, (slice(1, 4), slice(None))), ((1, 0), (0, 2)))
        return nx.mean(y * y) + nx.sum_(nx.flip(y, axis=0)[0])

    return _grad_report(nx.grad_check_many(f, inputs, tol=1e-5))


def check_convolutions() -> Tuple[bool, str]:
    rng = np.random.default_rng(2)
    inputs = {"x": rng.standard_normal((9, 4)), "w": rng.standard_normal((4, 2, 3)),
              "b": rng.standard_normal(4), "wt": rng.standard_normal((4, 2, 4))}

    def f(t):
        y = nx.conv1d(t["x"], t["w"], t["b"], stride=2, padding=(2, 1), groups=2)
        z = nx.conv_transpose1d(y, t["wt"], stride=2, padding=1)
        return nx.sum_(z * z)

    return _grad_report(nx.grad_check_many(f, inputs, tol=1e-5))


def check_kernel_equivalence() -> Tuple[bool, str]:
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        disc = random_discrete(rng, 3, 4)
        x = nx.Tensor(rng.uniform(-1, 1, (200, 3)))
        ref = recurrence(disc, x).data
        worst = max(worst, np.max(np.abs(parallel_scan(disc, x).data - ref)),
                    np.max(np.abs(convolve(disc, x).data - ref)))
    return worst < 1e-10, f"max deviation {worst:.2e}"


def check_selective_degeneration() -> Tuple[bool, str]:
    rng = np.random.default_rng(3)
    H, N, T = 3, 4, 40
    A = -rng.uniform(0.5, 2.0, (H, N))
    b_delta, b_B, b_C, D = rng.uniform(-1, 1, H), rng.standard_normal(N), rng.standard_normal(N), rng.standard_normal(H)
    params = SelectiveParams(np.zeros((H, H)), b_delta, np.zeros((H, N)), b_B, np.zeros((H, N)), b_C, A, D)
    x = nx.Tensor(rng.standard_normal((T, H)))
    delta = np.logaddexp(0.0, b_delta)[:, None]
    disc = DiscreteSSM(np.exp(delta * A), delta * b_B[None, :], np.tile(b_C, (H, 1)), D)
    deviation = float(np.max(np.abs(selective_scan(params, x).data - recurrence(disc, x).data)))
    return deviation < 1e-12, f"max deviation {deviation:.2e}"


def check_ssm_gradients() -> Tuple[bool, str]:
    rng = np.random.default_rng(4)
    H, N, T = 2, 3, 16
    inputs = {"Ab": rng.uniform(-0.9, 0.9, (H, N)), "Bb": rng.standard_normal((H, N)),
              "C": rng.standard_normal((H, N)), "D": rng.standard_normal(H),
              "x": rng.standard_normal((T, H))}
    weights = rng.standard_normal((T, H))

    def f(t):
        disc = DiscreteSSM(t["Ab"], t["Bb"], t["C"], t["D"])
        return nx.sum_((recurrence(disc, t["x"]) + convolve(disc, t["x"])) * weights)

    return _grad_report(nx.grad_check_many(f, inputs, tol=1e-4))


def check_layers() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 8))
    failures = []
    checks = {
        "mhsa": _param_check(lambda i: init_attention(i, 8),
                             lambda p: nx.sum_(multi_head_attention(p, x, x, x, 2) ** 2.0)),
        "esm": _param_check(lambda i: init_esm(i, 2, 8),
                            lambda p: nx.sum_(esm_forward(p, x, 1, 2) ** 2.0)),
        "external_attention": _grad_report(nx.grad_check_many(
            lambda t: nx.sum_(external_attention(t["x"], ExternalMemory(t["Mk"], t["Mv"])) ** 2.0),
            {"x": x, "Mk": rng.standard_normal((4, 8)), "Mv": rng.standard_normal((4, 8))},
            tol=1e-4, max_coords=8)),
        "s4_block": _param_check(lambda i: init_s4_block(i, 8, 4),
                                 lambda p: nx.sum_(s4_block_forward(p, x) ** 2.0)),
        "mamba_block": _param_check(lambda i: init_mamba(i, 8, 2, 4, 4),
                                    lambda p: nx.sum_(mamba_block_forward(p, x) ** 2.0)),
        "macaron_mamba": _param_check(
            lambda i: init_macaron(i, "mamba", 8, BackboneConfig(conv_kernel=3), 4),
            lambda p: nx.sum_(macaron_block_forward(p, x, 2) * x)),
        "unet": _param_check(lambda i: init_unet(i, UNetConfig(depth=1, base_width=4, n_s4_blocks=1), 8, 4),
                             lambda p: nx.sum_(unet_forward(p, x, UNetConfig(depth=1, base_width=4, n_s4_blocks=1)) ** 2.0)),
    }
    worst = ""
    for name, (ok, detail) in checks.items():
        if not ok:
            failures.append(name)
            worst = detail
    if failures:
        return False, f"failed: {', '.join(failures)} ({worst})"
    return True, f"{len(checks)} layers within 1e-4"


def check_full_model_gradient() -> Tuple[bool, str]:
    config = tiny_model_config()
    rng = np.random.default_rng(6)
    eeg = rng.standard_normal((16, config.n_channels))
    target = rng.standard_normal((16, config.n_mel))
    params = {path: t.data for path, t in init_parameters(config, seed=0).items()}

    def f(leaves):
        return loss(model_forward(eeg, 1, leaves, config), target, config.alpha)

    return _grad_report(nx.grad_check_many(f, params, tol=1e-4, max_coords=1, seed=6))


def check_pearson_oracle() -> Tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        a, b = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
        ac, bc = a - a.mean(axis=0), b - b.mean(axis=0)
        oracle = np.mean((ac * bc).sum(0) / (np.linalg.norm(ac, axis=0) * np.linalg.norm(bc, axis=0)))
        worst = max(worst, abs(pearson_r(a, b).item() - oracle))
    example = pearson_r(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0], [2.0], [4.0]])).item()
    ok = worst < 1e-12 and abs(example - 0.9819805060619657) < 1e-9
    return ok, f"max deviation {worst:.2e}, example r={example:.5f}"


def check_tensor_file() -> Tuple[bool, str]:
    rng = np.random.default_rng(8)
    value = rng.standard_normal((3, 5, 2))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.ssmt"
        write_tensor(path, value)
        same = read_tensor(path).data.tobytes() == value.tobytes()
        write_tensor(path, np.zeros((2, 3)))
        size = path.stat().st_size
    return same and size == 74, f"bit-identical={same}, 2x3 file size={size}"


def check_lr_schedule() -> Tuple[bool, str]:
    values = [lr_at_epoch(e) for e in (0, 49, 50, 100)]
    expected = [0.0005, 0.0005, 0.00045, 0.000405]
    ok = all(abs(v - e) < 1e-15 for v, e in zip(values, expected))
    return ok, ", ".join(f"{v:.6g}" for v in values)


CHECKS: List[Tuple[str, CheckFn]] = [
    ("elementwise_ops_gradient", check_elementwise_ops),
    ("shape_ops_gradient", check_shape_ops),
    ("convolution_gradient", check_convolutions),
    ("kernel_equivalence", check_kernel_equivalence),
    ("selective_degeneration", check_selective_degeneration),
    ("ssm_gradient", check_ssm_gradients),
    ("layer_gradients", check_layers),
    ("full_model_gradient", check_full_model_gradient),
    ("pearson_oracle", check_pearson_oracle),
    ("tensor_file_round_trip", check_tensor_file),
    ("lr_schedule", check_lr_schedule),
]


def run_selftest(corrupt_op: Optional[str] = None) -> SelfTestReport:
    """Run every check; `corrupt_op` scales that op's backward rule as a negative control."""
    monitor = ResourceMonitor()
    report = SelfTestReport()
    for name, check in CHECKS:
        start = time.time()
        try:
            if corrupt_op:
                with nx.corrupt_backward(corrupt_op):
                    passed, detail = check()
            else:
                passed, detail = check()
        except Exception as e:  # a crashing check is a failing check
            passed, detail = False, f"{type(e).__name__}: {e}"
        result = CheckResult(name, bool(passed), detail, time.time() - start)
        report.results.append(result)
        (logger.info if result.passed else logger.error)(f"selftest {name}: {detail}")
    report.resources = monitor.snapshot("selftest").describe()
    return report
