"""
Tests for discretization, the three SSM kernels and the selective scan.
"""

import numpy as np
import pytest

from ssm2mel import numerics as nx
from ssm2mel.errors import InvalidValueError, ShapeError
from ssm2mel.numerics import Tensor, grad_check_many
from ssm2mel.params import ParamInit, ParamView
from ssm2mel.selftest import random_discrete
from ssm2mel.ssm_core import (
    ContinuousSSM,
    DiscreteSSM,
    SelectiveParams,
    apply_ssm,
    blelloch_states,
    conv_kernel,
    convolve,
    init_s4,
    parallel_scan,
    recurrence,
    s4_discrete,
    selective_scan,
    serial_states,
    zoh_discretize,
)


def scalar_disc(a, b, c, d=0.0):
    return DiscreteSSM([[a]], [[b]], [[c]], [d])


class TestDiscretization:
    def test_zoh_example(self):
        ssm = ContinuousSSM([[-1.0]], [[1.0]], [[1.0]], [0.0])
        disc = zoh_discretize(ssm, 0.1)
        assert disc.A_bar.data[0, 0] == pytest.approx(0.9048374180359595, abs=1e-12)
        assert disc.B_bar.data[0, 0] == pytest.approx(0.09516258196404048, abs=1e-12)

    def test_small_product_uses_limit(self):
        ssm = ContinuousSSM([[-1e-12]], [[1.0]], [[1.0]], [0.0])
        disc = zoh_discretize(ssm, 0.5)
        assert disc.B_bar.data[0, 0] == 0.5

    @pytest.mark.parametrize("a", [-2e-8, -1e-7, -1e-5])
    def test_small_product_keeps_precision(self, a):
        ssm = ContinuousSSM([[a]], [[1.0]], [[1.0]], [0.0])
        disc = zoh_discretize(ssm, 1.0)
        assert disc.B_bar.data[0, 0] == pytest.approx(np.expm1(a) / a, rel=1e-14)

    @pytest.mark.parametrize("delta", [0.0, -0.1])
    def test_non_positive_step_rejected(self, delta):
        ssm = ContinuousSSM([[-1.0]], [[1.0]], [[1.0]], [0.0])
        with pytest.raises(InvalidValueError):
            zoh_discretize(ssm, delta)

    def test_positive_a_rejected(self):
        with pytest.raises(InvalidValueError):
            ContinuousSSM([[0.5]], [[1.0]], [[1.0]], [0.0])

    def test_layout_checked(self):
        with pytest.raises(ShapeError):
            ContinuousSSM(-np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 3)), np.ones(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_stable_transition(self, seed):
        rng = np.random.default_rng(seed)
        ssm = ContinuousSSM(-rng.uniform(0.01, 5.0, (3, 4)), rng.normal(size=(3, 4)),
                            rng.normal(size=(3, 4)), rng.normal(size=3))
        disc = zoh_discretize(ssm, Tensor(rng.uniform(1e-3, 1.0, 3)))
        assert np.all(np.abs(disc.A_bar.data) < 1.0)

    def test_per_channel_step(self):
        ssm = ContinuousSSM(-np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)), np.zeros(2))
        disc = zoh_discretize(ssm, Tensor([0.1, 0.2]))
        np.testing.assert_allclose(disc.A_bar.data[:, 0], np.exp([-0.1, -0.2]))


class TestKernels:
    def test_recurrence_example(self):
        y = recurrence(scalar_disc(0.5, 1.0, 1.0), Tensor([[1.0], [0.0], [0.0], [0.0]]))
        np.testing.assert_allclose(y.data[:, 0], [1.0, 0.5, 0.25, 0.125])

    def test_conv_kernel_example(self):
        K = conv_kernel(scalar_disc(0.5, 1.0, 1.0), 4)
        np.testing.assert_allclose(K.data[:, 0], [1.0, 0.5, 0.25, 0.125])

    def test_zero_output_matrix_gives_zero_kernel(self, rng):
        disc = random_discrete(rng, 2, 3)
        disc = DiscreteSSM(disc.A_bar, disc.B_bar, np.zeros((2, 3)), disc.D)
        np.testing.assert_array_equal(conv_kernel(disc, 8).data, 0.0)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            recurrence(random_discrete(rng, 3, 2), Tensor(np.zeros((5, 4))))

    def test_single_step_scan(self, rng):
        disc = random_discrete(rng, 2, 3)
        x = Tensor(rng.normal(size=(1, 2)))
        np.testing.assert_allclose(parallel_scan(disc, x).data, recurrence(disc, x).data, atol=1e-14)

    def test_long_scan_matches_recurrence(self, rng):
        disc = random_discrete(rng, 3, 4)
        x = Tensor(rng.uniform(-1, 1, (1000, 3)))
        assert np.max(np.abs(parallel_scan(disc, x).data - recurrence(disc, x).data)) < 1e-10

    def test_unit_transition_scan_is_prefix_sum(self, rng):
        b = rng.normal(size=(100, 2, 1))
        a = np.ones((2, 1))
        np.testing.assert_allclose(blelloch_states(a, b), np.cumsum(b, axis=0), atol=1e-10)

    @pytest.mark.parametrize("T", [1, 63, 64, 65, 200])
    def test_blelloch_matches_serial(self, T, rng):
        a = rng.uniform(-0.9, 0.9, (T, 2, 3))
        b = rng.normal(size=(T, 2, 3))
        np.testing.assert_allclose(blelloch_states(a, b), serial_states(a, b), atol=1e-12)

    def test_unknown_mode(self, rng):
        with pytest.raises(InvalidValueError):
            apply_ssm(random_discrete(rng, 1, 1), Tensor(np.zeros((3, 1))), mode="fft")


@pytest.mark.parametrize("seed", range(20))
def test_three_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    H, N, T = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 257))
    disc = random_discrete(rng, H, N)
    x = Tensor(rng.uniform(-1, 1, (T, H)))
    ref = recurrence(disc, x).data
    assert np.max(np.abs(parallel_scan(disc, x).data - ref)) < 1e-10
    assert np.max(np.abs(convolve(disc, x).data - ref)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_state_magnitude_bound(seed):
    rng = np.random.default_rng(seed)
    Ab = rng.uniform(-0.9, 0.9, (2, 3))
    Bb = rng.normal(size=(2, 3))
    x = rng.uniform(-1, 1, (300, 2))
    states = serial_states(Ab, x[:, :, None] * Bb)
    bound = np.max(np.abs(Bb)) / (1.0 - np.max(np.abs(Ab)))
    assert np.max(np.abs(states)) <= bound + 1e-12


@pytest.mark.parametrize("mode", ["recurrence", "scan", "conv"])
def test_kernels_are_linear_in_input(mode, rng):
    disc = DiscreteSSM(rng.uniform(-0.9, 0.9, (2, 3)), rng.normal(size=(2, 3)),
                       rng.normal(size=(2, 3)), rng.normal(size=2))
    x1, x2 = rng.uniform(-1, 1, (50, 2)), rng.uniform(-1, 1, (50, 2))
    combined = apply_ssm(disc, Tensor(0.7 * x1 - 1.3 * x2), mode).data
    separate = 0.7 * apply_ssm(disc, Tensor(x1), mode).data - 1.3 * apply_ssm(disc, Tensor(x2), mode).data
    assert np.max(np.abs(combined - separate)) < 1e-12


class TestGradients:
    @pytest.mark.parametrize("mode", ["recurrence", "scan", "conv"])
    def test_discrete_parameters(self, mode, rng):
        inputs = {"Ab": rng.uniform(-0.9, 0.9, (2, 3)), "Bb": rng.normal(size=(2, 3)),
                  "C": rng.normal(size=(2, 3)), "D": rng.normal(size=2), "x": rng.normal(size=(16, 2))}
        weights = rng.normal(size=(16, 2))

        def f(t):
            disc = DiscreteSSM(t["Ab"], t["Bb"], t["C"], t["D"])
            return nx.sum_(apply_ssm(disc, t["x"], mode) * weights)

        report = grad_check_many(f, inputs, tol=1e-4)
        assert report.passed, report.summary()

    def test_through_discretization(self, rng):
        init = ParamInit(0)
        init_s4(init, 3, 4)
        x = rng.normal(size=(12, 3))

        def f(leaves):
            disc = s4_discrete(ParamView(leaves))
            return nx.sum_(recurrence(disc, x) ** 2.0)

        report = grad_check_many(f, dict(init.store), tol=1e-4)
        assert report.passed, report.summary()

    @pytest.mark.parametrize("method", ["recurrence", "scan"])
    def test_selective_scan(self, method, rng):
        H, N, T = 3, 2, 12
        inputs = {
            "W_delta": 0.5 * rng.normal(size=(H, H)), "b_delta": rng.normal(size=H),
            "W_B": rng.normal(size=(H, N)), "b_B": rng.normal(size=N),
            "W_C": rng.normal(size=(H, N)), "b_C": rng.normal(size=N),
            "A": -rng.uniform(0.5, 2.0, (H, N)), "D": rng.normal(size=H),
            "x": rng.normal(size=(T, H)),
        }
        weights = rng.normal(size=(T, H))

        def f(t):
            params = SelectiveParams(t["W_delta"], t["b_delta"], t["W_B"], t["b_B"],
                                     t["W_C"], t["b_C"], t["A"], t["D"])
            return nx.sum_(selective_scan(params, t["x"], method) * weights)

        report = grad_check_many(f, inputs, tol=1e-4)
        assert report.passed, report.summary()


class TestSelectiveScan:
    @pytest.mark.parametrize("seed", range(10))
    def test_constant_projections_reduce_to_lti(self, seed):
        rng = np.random.default_rng(seed)
        H, N, T = 3, 4, 40
        A = -rng.uniform(0.5, 2.0, (H, N))
        b_delta, b_B, b_C = rng.uniform(-1, 1, H), rng.normal(size=N), rng.normal(size=N)
        D = rng.normal(size=H)
        params = SelectiveParams(np.zeros((H, H)), b_delta, np.zeros((H, N)), b_B,
                                 np.zeros((H, N)), b_C, A, D)
        x = Tensor(rng.normal(size=(T, H)))
        delta = np.logaddexp(0.0, b_delta)[:, None]
        disc = DiscreteSSM(np.exp(delta * A), delta * b_B[None, :], np.tile(b_C, (H, 1)), D)
        assert np.max(np.abs(selective_scan(params, x).data - recurrence(disc, x).data)) < 1e-12

    def test_zero_input_gives_zero_output(self, rng):
        H, N = 2, 3
        params = SelectiveParams(rng.normal(size=(H, H)), rng.normal(size=H), rng.normal(size=(H, N)),
                                 rng.normal(size=N), rng.normal(size=(H, N)), rng.normal(size=N),
                                 -np.ones((H, N)), rng.normal(size=H))
        np.testing.assert_array_equal(selective_scan(params, Tensor(np.zeros((7, H)))).data, 0.0)

    def test_tiny_step_accumulates(self, rng):
        H, N, T, step = 2, 3, 20, 1e-6
        b_B, b_C = rng.normal(size=N), rng.normal(size=N)
        params = SelectiveParams(np.zeros((H, H)), np.full(H, np.log(np.expm1(step))),
                                 np.zeros((H, N)), b_B, np.zeros((H, N)), b_C,
                                 -np.ones((H, N)), np.zeros(H))
        x = rng.normal(size=(T, H))
        y = selective_scan(params, Tensor(x)).data
        expected = float(b_C @ b_B) * step * np.cumsum(x, axis=0)
        assert np.max(np.abs(y - expected)) < 1e-8

    def test_scan_and_recurrence_agree(self, rng):
        H, N = 2, 3
        params = SelectiveParams(rng.normal(size=(H, H)), rng.normal(size=H), rng.normal(size=(H, N)),
                                 rng.normal(size=N), rng.normal(size=(H, N)), rng.normal(size=N),
                                 -rng.uniform(0.5, 2.0, (H, N)), rng.normal(size=H))
        x = Tensor(rng.normal(size=(150, H)))
        ref = selective_scan(params, x, "recurrence").data
        assert np.max(np.abs(selective_scan(params, x, "scan").data - ref)) < 1e-10

    def test_channel_mismatch(self, rng):
        params = SelectiveParams(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 1)), np.zeros(1),
                                 np.zeros((2, 1)), np.zeros(1), -np.ones((2, 1)), np.zeros(2))
        with pytest.raises(ShapeError):
            selective_scan(params, Tensor(np.zeros((4, 3))))
