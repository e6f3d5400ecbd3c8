"""Channel layer tests: scaling, power control, superposition, residual noise."""

import numpy as np
import pytest

from wfald.channel import (
    ChannelConfig,
    check_power,
    inversion_power_gain,
    noma_superpose,
    power_gain,
    receive_aggregate,
    residual_noise_power,
    transmit_signal,
)


def test_from_snr_db_hand_value():
    # 10 dB at unit power over 5 channel uses: N0 = 1 / (5 * 10) = 0.02
    chan = ChannelConfig.from_snr_db(10.0, block_dim=5, power=1.0)
    assert chan.noise_level == pytest.approx(0.02, rel=1e-12)
    assert chan.snr == pytest.approx(10.0, rel=1e-12)


def test_from_snr_db_none_is_noiseless():
    chan = ChannelConfig.from_snr_db(None, block_dim=3)
    assert chan.noise_level == 0.0
    assert chan.snr == np.inf


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(power=0.0)
    with pytest.raises(ValueError):
        ChannelConfig(noise_level=-1e-9)
    with pytest.raises(ValueError):
        ChannelConfig(block_dim=0)
    with pytest.raises(ValueError):
        ChannelConfig(gain_model="awgn")
    with pytest.raises(ValueError):
        ChannelConfig(gain_model="constant", gain_value=0.0)


def test_transmit_signal_hand_case():
    out = transmit_signal(np.array([2.0, 0.0]), np.array([0.0, 2.0]),
                          eta=0.5, alpha_k=2.0)
    assert np.array_equal(out, np.array([4.0, -2.0]))


class TestPowerGain:
    def test_frozen_hand_case(self):
        # cap = sqrt(8 / (2 * 0.5 * 2)) = 2; power branch = min(3*1/3, 3*2/1) = 1
        payloads = np.array([[3.0, 0.0], [0.0, 1.0]])
        gains = np.array([1.0, 2.0])
        alpha = power_gain(payloads, gains, power=9.0, noise_level=8.0,
                           eta=0.5, k_total=2)
        assert alpha == pytest.approx(1.0, rel=1e-15)
        beta = residual_noise_power(alpha, 8.0, 0.5, 2)
        assert beta == pytest.approx(1.5, rel=1e-12)

    def test_cap_branch_binds_when_power_is_ample(self):
        payloads = np.array([[3.0, 0.0], [0.0, 1.0]])
        gains = np.array([1.0, 2.0])
        alpha = power_gain(payloads, gains, power=1e6, noise_level=8.0,
                           eta=0.5, k_total=2)
        assert alpha == pytest.approx(2.0, rel=1e-15)
        assert residual_noise_power(alpha, 8.0, 0.5, 2) == 0.0

    def test_noiseless_channel_uses_power_branch_only(self):
        payloads = np.array([[3.0, 0.0], [0.0, 1.0]])
        gains = np.array([1.0, 2.0])
        alpha = power_gain(payloads, gains, power=9.0, noise_level=0.0,
                           eta=0.5, k_total=2)
        assert alpha == pytest.approx(1.0, rel=1e-15)

    def test_zero_payload_device_imposes_no_constraint(self):
        payloads = np.array([[0.0, 0.0], [0.0, 1.0]])
        gains = np.array([1.0, 2.0])
        alpha = power_gain(payloads, gains, power=9.0, noise_level=0.0,
                           eta=0.5, k_total=2)
        # only the second device is active: sqrt(9) * 2 / 1
        assert alpha == pytest.approx(6.0, rel=1e-15)

    def test_all_zero_payloads_fall_back_to_unit_gain(self):
        payloads = np.zeros((3, 2))
        gains = np.ones(3)
        assert power_gain(payloads, gains, 1.0, 0.0, 0.5, 3) == 1.0

    def test_inversion_gain_matches_power_branch(self):
        payloads = np.array([[3.0, 0.0], [0.0, 1.0]])
        gains = np.array([1.0, 2.0])
        assert inversion_power_gain(payloads, gains, 9.0) == pytest.approx(1.0)
        assert inversion_power_gain(np.zeros((2, 2)), gains, 9.0) == 1.0

    def test_scaled_signals_respect_power_budget(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            payloads = rng.normal(size=(4, 3)) * rng.uniform(0.1, 10)
            gains = rng.uniform(0.2, 3.0, size=4)
            power = rng.uniform(0.5, 5.0)
            alpha = power_gain(payloads, gains, power, rng.uniform(0, 2),
                               eta=1e-2, k_total=4)
            signals = (alpha / gains)[:, None] * payloads
            assert check_power(signals, power).all()


def test_receive_aggregate_hand_case():
    out = receive_aggregate(np.array([4.0, -2.0]), alpha=2.0, k_total=2)
    assert np.array_equal(out, np.array([1.0, -0.5]))


def test_receive_aggregate_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        receive_aggregate(np.array([1.0]), alpha=0.0, k_total=2)


def test_residual_noise_snaps_float_remnants_to_zero():
    # alpha on the noise-matched cap; the subtraction leaves only rounding
    eta, k, n0 = 3e-3, 30, 0.02
    alpha = np.sqrt(n0 / (2.0 * eta * k))
    assert residual_noise_power(float(alpha), n0, eta, k) == 0.0


def test_residual_noise_positive_when_power_limited():
    assert residual_noise_power(1.0, 8.0, 0.5, 2) == pytest.approx(1.5)


class TestSuperposition:
    def test_noise_draw_replays_from_stream(self):
        signals = np.array([[1.0, 2.0], [3.0, -1.0]])
        gains = np.array([2.0, 0.5])
        n0 = 0.09
        y, z = noma_superpose(signals, gains, np.random.default_rng(42), n0)
        z_expect = np.sqrt(n0) * np.random.default_rng(42).standard_normal(2)
        assert np.array_equal(z, z_expect)
        assert np.allclose(y, gains @ signals + z_expect, rtol=1e-15)

    def test_noiseless_round_still_consumes_the_stream(self):
        signals = np.ones((2, 3))
        gains = np.ones(2)
        rng = np.random.default_rng(5)
        y, z = noma_superpose(signals, gains, rng, 0.0)
        assert np.array_equal(z, np.zeros(3))
        # the generator advanced by exactly one block of 3 standard normals
        ref = np.random.default_rng(5)
        ref.standard_normal(3)
        assert rng.standard_normal() == ref.standard_normal()

    def test_rejects_flat_signal_array(self):
        with pytest.raises(ValueError):
            noma_superpose(np.ones(4), np.ones(4), np.random.default_rng(0), 0.0)

    def test_noise_variance_matches_level(self):
        n0 = 0.37
        signals = np.zeros((2, 200_000))
        _, z = noma_superpose(signals, np.ones(2), np.random.default_rng(3), n0)
        assert np.var(z) == pytest.approx(n0, rel=0.03)


def test_check_power_boundary():
    p = 4.0
    at = np.array([[2.0, 0.0]])
    over = np.array([[2.0 * (1 + 1e-6), 0.0]])
    assert check_power(at, p).all()
    assert not check_power(over, p).any()
    # 1-d input is treated as a single device
    assert check_power(np.array([1.0, 1.0]), 2.0).shape == (1,)


def test_draw_gains_models():
    chan = ChannelConfig(gain_model="constant", gain_value=0.8)
    assert np.array_equal(chan.draw_gains(4, np.random.default_rng(0)),
                          np.full(4, 0.8))
    ray = ChannelConfig(gain_model="rayleigh")
    got = ray.draw_gains(6, np.random.default_rng(9))
    expect = np.random.default_rng(9).rayleigh(2 ** -0.5, 6)
    assert np.array_equal(got, expect)
    # scale 1/sqrt(2) gives unit mean-square gain
    big = ray.draw_gains(200_000, np.random.default_rng(1))
    assert np.mean(big ** 2) == pytest.approx(1.0, rel=0.02)
