"""
Tests for the assembled model, the Pearson metric and the training loss.
"""

import numpy as np
import pytest

from ssm2mel.config import BackboneConfig, ModelConfig, UNetConfig
from ssm2mel.errors import ShapeError, UnknownSubjectError
from ssm2mel.model import init_parameters, loss, model_forward, pearson_r, predict
from ssm2mel.numerics import Tape, Tensor, backward, grad_check_many, sum_
from ssm2mel.params import count_parameters
from ssm2mel.selftest import tiny_model_config

from conftest import zeroed


def pearson_oracle(a, b):
    ac, bc = a - a.mean(axis=0), b - b.mean(axis=0)
    return np.mean((ac * bc).sum(0) / (np.linalg.norm(ac, axis=0) * np.linalg.norm(bc, axis=0)))


class TestModelForward:
    @pytest.mark.parametrize("T", [1, 5, 319, 320, 321, 640])
    def test_shape_law(self, T, rng):
        config = tiny_model_config(max_len=1024)
        params = init_parameters(config, seed=0)
        out = model_forward(rng.normal(size=(T, 4)), 1, params, config)
        assert out.shape == (T, config.n_mel)

    def test_reference_sizes(self, rng):
        config = tiny_model_config(n_channels=64, n_mel=10)
        out = model_forward(rng.normal(size=(32, 64)), 0, init_parameters(config), config)
        assert out.shape == (32, 10)

    def test_all_modules_disabled(self, rng):
        config = tiny_model_config(use_esm=False, use_s4unet=False, use_external_attention=False)
        params = init_parameters(config)
        assert not any(k.startswith(("esm.", "unet.", "ext.")) for k in params)
        assert model_forward(rng.normal(size=(16, 4)), 0, params, config).shape == (16, 3)

    @pytest.mark.parametrize("flag", ["use_esm", "use_s4unet", "use_external_attention"])
    def test_single_ablation_runs(self, flag, rng):
        config = tiny_model_config(**{flag: False})
        out = model_forward(rng.normal(size=(16, 4)), 1, init_parameters(config), config)
        assert np.all(np.isfinite(out.data))

    def test_conv_input_projection(self, rng):
        config = tiny_model_config(input_projection="conv", input_conv_kernel=3)
        params = init_parameters(config)
        assert params["input.conv.weight"].shape == (8, 4, 3)
        assert model_forward(rng.normal(size=(10, 4)), 0, params, config).shape == (10, 3)

    def test_zero_readout(self, rng):
        config = tiny_model_config()
        params = zeroed(init_parameters(config), "output.")
        np.testing.assert_array_equal(model_forward(rng.normal(size=(12, 4)), 0, params, config).data, 0.0)

    @pytest.mark.parametrize("subject", [-1, 2])
    def test_subject_out_of_range(self, subject, rng):
        config = tiny_model_config()
        with pytest.raises(UnknownSubjectError):
            model_forward(rng.normal(size=(8, 4)), subject, init_parameters(config), config)

    def test_channel_mismatch(self, rng):
        config = tiny_model_config()
        with pytest.raises(ShapeError):
            model_forward(rng.normal(size=(8, 5)), 0, init_parameters(config), config)

    def test_longer_than_positional_table(self, rng):
        config = tiny_model_config()
        with pytest.raises(ShapeError):
            model_forward(rng.normal(size=(65, 4)), 0, init_parameters(config), config)

    def test_subject_changes_output(self, rng):
        config = tiny_model_config()
        params = init_parameters(config)
        eeg = rng.normal(size=(12, 4))
        assert not np.allclose(model_forward(eeg, 0, params, config).data,
                               model_forward(eeg, 1, params, config).data)

    def test_output_depends_on_eeg(self, rng):
        config = tiny_model_config()
        assert config.use_esm and config.use_s4unet and config.use_external_attention
        params = init_parameters(config)
        a = model_forward(rng.normal(size=(16, 4)), 1, params, config).data
        b = model_forward(rng.normal(size=(16, 4)), 1, params, config).data
        assert np.max(np.abs(a - b)) > 1e-6

    def test_default_config_output_depends_on_eeg(self, rng):
        config = ModelConfig()
        params = init_parameters(config)
        eeg = rng.normal(size=(32, config.n_channels))
        a = model_forward(eeg, 0, params, config).data
        b = model_forward(eeg + rng.normal(size=eeg.shape), 0, params, config).data
        assert np.max(np.abs(a - b)) > 1e-6

    def test_eeg_gradient_is_nonzero(self, rng):
        config = tiny_model_config()
        params = init_parameters(config)
        eeg = Tensor(rng.normal(size=(16, 4)), requires_grad=True)
        with Tape() as tape:
            out = sum_(model_forward(eeg, 1, params, config) * rng.normal(size=(16, 3)))
        (grad,) = backward(tape, out, [eeg])
        assert np.max(np.abs(grad)) > 1e-6

    def test_predict_concatenates_segments(self, rng):
        config = tiny_model_config()
        params = init_parameters(config)
        eeg = rng.normal(size=(40, 4))
        out = predict(eeg, 1, params, config).data
        assert out.shape == (40, 3)
        np.testing.assert_array_equal(out[16:32], model_forward(eeg[16:32], 1, params, config).data)
        np.testing.assert_array_equal(out[32:], model_forward(eeg[32:], 1, params, config).data)

    def test_full_model_gradient(self, rng):
        config = tiny_model_config()
        eeg = rng.normal(size=(16, 4))
        target = rng.normal(size=(16, 3))
        params = {path: t.data for path, t in init_parameters(config).items()}
        report = grad_check_many(lambda leaves: loss(model_forward(eeg, 1, leaves, config), target, config.alpha),
                                 params, tol=1e-4, max_coords=1, seed=3)
        assert report.passed, report.summary()


class TestParameters:
    def test_deterministic(self):
        config = tiny_model_config()
        a, b = init_parameters(config, seed=7), init_parameters(config, seed=7)
        assert list(a) == list(b) == sorted(a)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_seed_matters(self):
        config = tiny_model_config()
        a, b = init_parameters(config, seed=1), init_parameters(config, seed=2)
        assert not np.array_equal(a["output.weight"].data, b["output.weight"].data)

    def test_parameter_count(self):
        config = ModelConfig(
            n_channels=4, n_mel=2, d_model=8, n_heads=2, n_subjects=3, state_size=4, ext_slots=4,
            unet=UNetConfig(depth=1, base_width=8, n_s4_blocks=1),
            backbone=BackboneConfig(n_blocks=2, mixer="alternate", conv_kernel=3,
                                    mamba_expand=2, mamba_conv_kernel=4),
        )
        assert count_parameters(init_parameters(config)) == 6731


class TestPearson:
    def test_identical(self, rng):
        x = rng.normal(size=(20, 3))
        assert pearson_r(x, x).item() == pytest.approx(1.0, abs=1e-12)

    def test_negated(self, rng):
        x = rng.normal(size=(20, 3))
        assert pearson_r(-x, x).item() == pytest.approx(-1.0, abs=1e-12)

    def test_example(self):
        r = pearson_r(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0], [2.0], [4.0]])).item()
        assert r == pytest.approx(0.98198, abs=1e-5)

    def test_affine_invariance(self, rng):
        a, b = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        assert pearson_r(3.0 * a + 2.0, b).item() == pytest.approx(pearson_r(a, b).item(), abs=1e-12)

    def test_symmetric(self, rng):
        a, b = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        assert pearson_r(a, b).item() == pytest.approx(pearson_r(b, a).item(), abs=1e-14)

    def test_constant_band_contributes_zero(self, rng):
        a = rng.normal(size=(10, 2))
        b = a.copy()
        b[:, 1] = 5.0
        assert pearson_r(a, b).item() == pytest.approx(0.5, abs=1e-12)

    def test_needs_two_steps(self):
        with pytest.raises(ShapeError):
            pearson_r(np.ones((1, 2)), np.ones((1, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pearson_r(np.ones((4, 2)), np.ones((4, 3)))

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b = rng.normal(size=(25, 3)), rng.normal(size=(25, 3))
            assert abs(pearson_r(a, b).item() - pearson_oracle(a, b)) < 1e-12


class TestLoss:
    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_perfect_prediction(self, alpha, rng):
        x = rng.normal(size=(20, 3))
        assert loss(x, x, alpha).item() == pytest.approx(-1.0, abs=1e-12)

    def test_alpha_zero_is_negative_pearson(self, rng):
        a, b = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
        assert loss(a, b, 0.0).item() == -pearson_r(a, b).item()

    def test_constant_offset(self, rng):
        target = rng.normal(size=(20, 3))
        assert loss(target + 1.0, target, 0.7).item() == pytest.approx(-1.0 + 0.7, abs=1e-12)

    def test_lower_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a, b = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
            assert loss(a, b, 1.0).item() >= -1.0 - 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.ones((4, 2)), np.ones((5, 2)), 1.0)
