"""
Shared fixtures for the ssm2mel test suite.
"""

from typing import Dict

import numpy as np
import pytest

from ssm2mel.config import RunConfig, SyntheticSpec
from ssm2mel.data import synth_splits
from ssm2mel.numerics import Tensor, set_debug_checks
from ssm2mel.params import ParamInit, ParamView
from ssm2mel.selftest import tiny_model_config


def build(init_fn, seed: int = 0) -> Dict[str, Tensor]:
    """Run an init_* function and return its parameter map."""
    init = ParamInit(seed)
    init_fn(init)
    return init.tensors()


def zeroed(params: Dict[str, Tensor], *prefixes: str) -> Dict[str, Tensor]:
    """Copy of `params` with every tensor under the given path prefixes set to zero."""
    return {
        path: Tensor(np.zeros_like(t.data), requires_grad=True) if path.startswith(prefixes) else t
        for path, t in params.items()
    }


def with_value(params: Dict[str, Tensor], path: str, value) -> Dict[str, Tensor]:
    updated = dict(params)
    updated[path] = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    return updated


@pytest.fixture(autouse=True)
def _debug_checks_off():
    yield
    set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def tiny_run_config():
    return RunConfig(
        n_channels=4, n_mel=3, d_model=8, n_heads=2, n_subjects=2, state_size=4, max_len=128,
        ext_slots=4, sample_rate=8, segment_seconds=2, unet_depth=1, unet_base_width=8,
        unet_blocks=1, n_blocks=2, conformer_kernel=3, batch_size=4, epochs=2, lr=5e-3,
    )


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(seed=3, n_subjects=2, recordings_per_subject=3, n_samples=64,
                         n_channels=4, n_mel=3, smoothing=4, noise_std=0.0)


@pytest.fixture
def tiny_dataset(tiny_spec):
    return synth_splits(tiny_spec)


__all__ = ["build", "zeroed", "with_value", "ParamView"]
