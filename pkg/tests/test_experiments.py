"""
Tests for the behavioural experiments: the overfit run and the ablation matrix.
"""

import math

import pytest

from ssm2mel.data import synth_splits
from ssm2mel.experiments import (
    ABLATION_MIXERS,
    OVERFIT_TRAIN_TARGET,
    OVERFIT_VAL_TARGET,
    FitScore,
    OverfitOutcome,
    ablation_base,
    ablation_spec,
    ablation_variants,
    baseline_config,
    overfit_config,
    overfit_run,
    overfit_spec,
    run_variant,
    variant_name,
)
from ssm2mel.model import init_parameters

VARIANTS = ablation_variants(ablation_base())


@pytest.fixture(scope="module")
def ablation_dataset():
    return synth_splits(ablation_spec())


def score(train, val):
    return FitScore(train=train, val=val, best_epoch=1, epochs=1, seconds=0.0)


class TestOverfitSetup:
    def test_dataset_shape(self):
        spec = overfit_spec()
        assert spec.n_subjects * spec.recordings_per_subject == 4
        assert spec.noise_std == 0.0 and spec.n_samples == 60 * 64
        assert synth_splits(spec).counts() == {"train": 3, "val": 1, "test": 0}

    def test_tiny_architecture(self):
        config = overfit_config()
        assert (config.d_model, config.unet_depth, config.n_blocks) == (32, 1, 2)
        assert config.use_esm and config.use_s4unet and config.use_external_attention

    def test_baseline_is_readout_only(self):
        config = baseline_config()
        assert not (config.use_esm or config.use_s4unet or config.use_external_attention)
        assert config.n_blocks == 0
        params = init_parameters(config.model())
        assert not any(path.startswith(("esm.", "unet.", "ext.")) for path in params)

    def test_checks(self):
        passing = OverfitOutcome(score(0.95, 0.6), score(0.5, 0.4))
        assert passing.passed
        assert [ok for _, ok in OverfitOutcome(score(0.95, 0.45), score(0.5, 0.4)).checks()] == [True, False, True]
        assert not OverfitOutcome(score(0.95, 0.6), score(0.9, 0.7)).passed
        assert OVERFIT_TRAIN_TARGET == 0.90 and OVERFIT_VAL_TARGET == 0.50


class TestAblationMatrix:
    def test_every_combination_once(self):
        assert len(VARIANTS) == 24
        assert len({(name, mixer) for name, mixer, _ in VARIANTS}) == 24
        assert {mixer for _, mixer, _ in VARIANTS} == set(ABLATION_MIXERS)

    def test_variant_names(self):
        assert variant_name((True, True, True)) == "esm+s4unet+external_attention"
        assert variant_name((False, True, False)) == "s4unet"
        assert variant_name((False, False, False)) == "none"

    def test_flags_applied(self):
        for name, mixer, config in VARIANTS:
            assert config.mixer == mixer
            assert config.use_esm == ("esm" in name.split("+"))
            assert config.use_s4unet == ("s4unet" in name.split("+"))

    @pytest.mark.slow
    @pytest.mark.parametrize("name,mixer,config", VARIANTS, ids=[f"{n}-{m}" for n, m, _ in VARIANTS])
    def test_variant_trains(self, name, mixer, config, ablation_dataset):
        result = run_variant(name, mixer, config, ablation_dataset)
        assert result.ok, result.status
        assert math.isfinite(result.best_val)


@pytest.mark.slow
def test_overfit_run_reaches_targets():
    outcome = overfit_run()
    assert outcome.full.train >= OVERFIT_TRAIN_TARGET, outcome
    assert outcome.full.val >= OVERFIT_VAL_TARGET, outcome
    assert outcome.full.val > outcome.baseline.val, outcome
