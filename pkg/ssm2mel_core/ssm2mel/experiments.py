"""
Desk-scale behavioural experiments: the overfit run against a linear-readout
baseline, and the ablation matrix over optional modules and mixer schedules.

The scripts under `scripts/` print these; the slow tests assert on them.
"""

import itertools
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .config import RunConfig, SyntheticSpec
from .data import DatasetSplits, synth_splits
from .errors import NumericalError
from .train import evaluate, train_loop

logger = logging.getLogger(__name__)

OVERFIT_TRAIN_TARGET = 0.90
OVERFIT_VAL_TARGET = 0.50
OVERFIT_EPOCHS = 300

ABLATION_FLAGS = ("use_esm", "use_s4unet", "use_external_attention")
ABLATION_MIXERS = ("all_mamba", "all_mhsa", "alternate")
ABLATION_EPOCHS = 5


# ---------------------------------------------------------------------------
# overfit run
# ---------------------------------------------------------------------------

def overfit_spec() -> SyntheticSpec:
    """2 subjects, 4 noiseless 60 s recordings in total; 3 train, 1 val, no test."""
    return SyntheticSpec(n_subjects=2, recordings_per_subject=2, n_samples=64 * 60,
                         n_channels=16, n_mel=4, noise_std=0.0, val_ratio=0.25, test_ratio=0.0)


def overfit_config(epochs: int = OVERFIT_EPOCHS) -> RunConfig:
    return RunConfig(
        n_channels=16, n_mel=4, d_model=32, n_heads=4, n_subjects=2, state_size=8,
        ext_slots=16, unet_depth=1, unet_base_width=32, unet_blocks=1, n_blocks=2,
        conformer_kernel=7, epochs=epochs, batch_size=1, lr=2e-3, lr_decay_every=100,
    )


def baseline_config(epochs: int = OVERFIT_EPOCHS) -> RunConfig:
    """Input projection and read-out only."""
    return overfit_config(epochs).model_copy(update=dict(
        use_esm=False, use_s4unet=False, use_external_attention=False, n_blocks=0,
    ))


@dataclass
class FitScore:
    train: float
    val: float
    best_epoch: int
    epochs: int
    seconds: float


def fit_and_score(config: RunConfig, dataset: DatasetSplits, workers: int = 1, out_dir=None) -> FitScore:
    """Train, then score the best checkpoint on the train and val splits."""
    start = time.time()
    result = train_loop(config, dataset, workers=workers, out_dir=out_dir)
    best = result.best
    score = FitScore(
        train=evaluate(best.params, best.model_config, dataset.train).mean,
        val=evaluate(best.params, best.model_config, dataset.val).mean,
        best_epoch=best.epoch,
        epochs=len(result.history),
        seconds=time.time() - start,
    )
    logger.info(f"fit: train r {score.train:.4f}, val r {score.val:.4f}, best epoch {score.best_epoch}")
    return score


@dataclass
class OverfitOutcome:
    full: FitScore
    baseline: FitScore

    def checks(self) -> List[Tuple[str, bool]]:
        return [
            (f"train pearson >= {OVERFIT_TRAIN_TARGET}", self.full.train >= OVERFIT_TRAIN_TARGET),
            (f"val pearson >= {OVERFIT_VAL_TARGET}", self.full.val >= OVERFIT_VAL_TARGET),
            ("full model beats baseline on val", self.full.val > self.baseline.val),
        ]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.checks())


def overfit_run(epochs: int = OVERFIT_EPOCHS, workers: int = 1, out_dir=None,
                dataset: Optional[DatasetSplits] = None) -> OverfitOutcome:
    dataset = dataset or synth_splits(overfit_spec())
    full = fit_and_score(overfit_config(epochs), dataset, workers, out_dir)
    baseline = fit_and_score(baseline_config(epochs), dataset, workers)
    return OverfitOutcome(full, baseline)


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------

def ablation_spec() -> SyntheticSpec:
    return SyntheticSpec(n_subjects=2, recordings_per_subject=3, n_samples=16 * 8,
                         n_channels=8, n_mel=3, noise_std=0.1)


def ablation_base(epochs: int = ABLATION_EPOCHS) -> RunConfig:
    return RunConfig(
        n_channels=8, n_mel=3, d_model=16, n_heads=2, n_subjects=2, state_size=4, ext_slots=8,
        sample_rate=16, segment_seconds=2, unet_depth=1, unet_base_width=16, unet_blocks=1,
        n_blocks=2, conformer_kernel=5, epochs=epochs, batch_size=4, lr=1e-3,
    )


def variant_name(flags: Tuple[bool, ...]) -> str:
    enabled = [flag[len("use_"):] for flag, on in zip(ABLATION_FLAGS, flags) if on]
    return "+".join(enabled) or "none"


def ablation_variants(base: RunConfig) -> List[Tuple[str, str, RunConfig]]:
    """Every on/off combination of the optional modules, under each mixer schedule."""
    variants = []
    for flags in itertools.product((True, False), repeat=len(ABLATION_FLAGS)):
        for mixer in ABLATION_MIXERS:
            config = base.model_copy(update={**dict(zip(ABLATION_FLAGS, flags)), "mixer": mixer})
            variants.append((variant_name(flags), mixer, config))
    return variants


@dataclass
class VariantResult:
    name: str
    mixer: str
    status: str
    best_val: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_variant(name: str, mixer: str, config: RunConfig, dataset: DatasetSplits, workers: int = 1) -> VariantResult:
    start = time.time()
    try:
        result = train_loop(config, dataset, workers=workers)
        status, best = "ok", result.best.best_val
    except NumericalError as e:
        logger.warning(f"variant {name}/{mixer} aborted: {e}")
        status, best = f"aborted: {e}", float("nan")
    return VariantResult(name, mixer, status, best, time.time() - start)
