import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cimsim import device as dev
from cimsim.device import DeviceModelError, DeviceParams, SramAdcParams

from oracles import (mp_beta, mp_ltd, mp_ltp, mp_mac_nlop,
                     mp_weight_from_conductance, popcount_and)

RRAM = dev.load_device_preset("rram-ni-hfo2-tin", p_max=100)
FEFINFET = dev.load_device_preset("fe-finfet-10nm", p_max=100)
THETA_GRID = [0.01, 0.1, 0.3, 1.0, 10.0, 100.0]


def make_params(theta_ltp=0.3, theta_ltd=0.3, p_max=64, g_min=5.6e-8, g_max=1.04e-6):
    return DeviceParams(g_max=g_max, g_min=g_min, theta_ltp=theta_ltp,
                        theta_ltd=theta_ltd, p_max=p_max)


class TestDeviceParams:
    def test_w_min_from_on_off_ratio(self):
        assert RRAM.w_min == pytest.approx(5.6e-8 / 1.04e-6, rel=1e-12)
        assert RRAM.on_off_ratio == pytest.approx(0.056 / 1.04, rel=1e-9)

    def test_invalid_window_rejected(self):
        with pytest.raises(DeviceModelError):
            make_params(g_min=2e-6)  # g_min > g_max
        with pytest.raises(DeviceModelError):
            make_params(g_min=0.0)

    @pytest.mark.parametrize("theta", [0.009, 101.0, 1e4])
    def test_theta_outside_sweep_range_rejected(self, theta):
        with pytest.raises(DeviceModelError):
            make_params(theta_ltp=theta)

    def test_p_max_resolution_required(self):
        p = dev.load_device_preset("rram-ni-hfo2-tin")
        assert p.p_max is None
        with pytest.raises(DeviceModelError):
            dev.ltp_weight(0, p)

    def test_presets_match_published_parameters(self):
        hzo = dev.load_device_preset("fefet-hzo")
        assert (hzo.g_max, hzo.g_min) == (6.8e-6, 4.6e-11)
        assert (hzo.theta_ltp, hzo.theta_ltd) == (0.67, 1.13)
        assert (FEFINFET.theta_ltp, FEFINFET.theta_ltd) == (9.2339, 0.4385)
        assert set(dev.available_device_presets()) == {
            "rram-ni-hfo2-tin", "fe-finfet-10nm", "fefet-hzo"}


class TestConductanceNormalization:
    def test_full_scale_conductance_maps_to_w_max(self):
        assert dev.weight_from_conductance(1.04e-6, RRAM) == pytest.approx(1.0, abs=1e-12)

    def test_below_window_rejected(self):
        with pytest.raises(DeviceModelError):
            dev.weight_from_conductance(0.0, RRAM)

    @pytest.mark.parametrize("frac", [0.25, 0.5, 0.75])
    def test_interior_points_match_direct_formula(self, frac):
        g = RRAM.g_min + frac * (RRAM.g_max - RRAM.g_min)
        expected = float(mp_weight_from_conductance(
            g, RRAM.g_min, RRAM.g_max, RRAM.w_min, RRAM.w_max))
        assert dev.weight_from_conductance(g, RRAM) == pytest.approx(expected, rel=1e-12)


class TestCurveConstants:
    def test_alpha_products(self):
        assert dev.alpha(0.2476, 100) == pytest.approx(24.76)
        assert dev.alpha(100, 1) == pytest.approx(100.0)
        assert dev.alpha(9.2339, 64) == pytest.approx(590.9696)

    def test_beta_saturated_exponential(self):
        p = make_params(theta_ltp=0.01)
        assert dev.beta(p, "ltp") == pytest.approx(p.w_max - p.w_min, rel=1e-12)

    def test_beta_ratio_against_high_precision(self):
        p100 = make_params(theta_ltp=100.0)
        p10 = make_params(theta_ltp=10.0)
        got = dev.beta(p100, "ltp") / dev.beta(p10, "ltp")
        expected = float(mp_beta(100, p100.w_min, 1.0) / mp_beta(10, p10.w_min, 1.0))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_beta_table_row_against_oracle(self):
        expected = float(mp_beta(0.2476, RRAM.w_min, RRAM.w_max))
        assert dev.beta(RRAM, "ltp") == pytest.approx(expected, rel=1e-12)


class TestPotentiationDepressionCurves:
    @pytest.mark.parametrize("theta", THETA_GRID)
    def test_endpoints_exact(self, theta):
        p = make_params(theta_ltp=theta, theta_ltd=theta, p_max=128)
        assert dev.ltp_weight(0, p) == pytest.approx(p.w_min, rel=1e-12)
        assert dev.ltp_weight(p.p_max, p) == pytest.approx(p.w_max, rel=1e-12)
        assert dev.ltd_weight(0, p) == pytest.approx(p.w_max, rel=1e-12)
        assert dev.ltd_weight(p.p_max, p) == pytest.approx(p.w_min, rel=1e-12)

    @pytest.mark.parametrize("theta", THETA_GRID)
    def test_strict_monotonicity_exhaustive(self, theta):
        p = make_params(theta_ltp=theta, theta_ltd=theta, p_max=256)
        pulses = np.arange(p.p_max + 1)
        ltp = dev.ltp_weight(pulses, p)
        ltd = dev.ltd_weight(pulses, p)
        # strictly monotone wherever the exact increment is representable in
        # float64; beyond that the saturated branch may only stay flat
        alpha = theta * p.p_max
        strict = int(min(p.p_max, np.floor(alpha * 34)))
        assert np.all(np.diff(ltp[:strict + 1]) > 0)
        assert np.all(np.diff(ltd[:strict + 1]) < 0)
        assert np.all(np.diff(ltp) >= 0)
        assert np.all(np.diff(ltd) <= 0)

    def test_half_range_value_against_oracle(self):
        p = make_params(theta_ltp=0.2476, p_max=100)
        got = dev.ltp_weight(50, p)
        expected = float(mp_ltp(50, 0.2476, 100, p.w_min, p.w_max))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got > (p.w_min + p.w_max) / 2  # concave curve exceeds the chord

    def test_ltd_half_range_fefinfet_against_oracle(self):
        got = dev.ltd_weight(50, FEFINFET)
        expected = float(mp_ltd(50, 0.4385, 100, FEFINFET.w_min, FEFINFET.w_max))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_linear_limit_theta_100(self):
        p = make_params(theta_ltp=100.0, p_max=200)
        pulses = np.arange(p.p_max + 1)
        line = p.w_min + p.weight_range * pulses / p.p_max
        deviation = np.max(np.abs(dev.ltp_weight(pulses, p) - line))
        assert deviation < 0.005 * p.weight_range

    def test_out_of_range_pulses_rejected(self):
        with pytest.raises(DeviceModelError):
            dev.ltp_weight(-1, RRAM)
        with pytest.raises(DeviceModelError):
            dev.ltd_weight(RRAM.p_max + 1, RRAM)


class TestPulseInversion:
    def test_boundary_targets(self):
        assert dev.pulses_for_weight(RRAM.w_min, RRAM) == 0
        assert dev.pulses_for_weight(RRAM.w_max, RRAM) == RRAM.p_max

    def test_saturation_instead_of_error_above_curve(self):
        assert dev.pulses_for_weight(RRAM.w_max * (1 + 1e-13), RRAM) == RRAM.p_max

    def test_below_floor_rounds_to_zero(self):
        assert dev.pulses_for_weight(RRAM.w_min / 2, RRAM) == 0

    @pytest.mark.parametrize("theta", [0.05, 0.2476, 1.0, 100.0])
    def test_round_trip_identity_exhaustive(self, theta):
        p = make_params(theta_ltp=theta, p_max=1024)
        pulses = np.arange(p.p_max + 1)
        recovered = dev.pulses_for_weight(dev.ltp_weight(pulses, p), p)
        assert np.array_equal(recovered, pulses)


class TestThetaFit:
    @pytest.mark.parametrize("theta_true", [0.25, 3.7])
    def test_recovers_generating_theta(self, theta_true):
        p = make_params(theta_ltp=theta_true, p_max=100)
        pulses = np.arange(0, 101, 2)
        trace = dev.ltp_weight(pulses, p)
        fitted = dev.fit_theta(pulses, trace, 100, p.w_min, p.w_max)
        assert fitted == pytest.approx(theta_true, rel=1e-2)


SRAM = SramAdcParams(theta_sram=0.5, adc_bits=4, v_min=0.1, v_max=1.0)


class TestSramAdc:
    def test_code_zero_at_v_min(self):
        assert dev.mac_nlop(SRAM.v_min, SRAM) == 0

    @pytest.mark.parametrize("bits", [1, 2, 4, 8, 16])
    def test_code_at_v_max_is_half_range(self, bits):
        s = SramAdcParams(theta_sram=0.7, adc_bits=bits, v_min=0.1, v_max=1.0)
        assert dev.mac_nlop(s.v_max, s) == 2 ** (bits - 1)

    @pytest.mark.parametrize("v", [0.2, 0.35, 0.5, 0.75, 0.95])
    def test_sample_voltages_match_high_precision(self, v):
        expected = mp_mac_nlop(v, SRAM.theta_sram, SRAM.adc_bits, SRAM.v_min, SRAM.v_max)
        assert dev.mac_nlop(v, SRAM) == expected

    def test_transfer_monotone_nondecreasing(self):
        vs = np.linspace(SRAM.v_min, SRAM.v_max, 513)
        codes = dev.mac_nlop(vs, SRAM)
        assert np.all(np.diff(codes) >= 0)

    def test_out_of_range_voltage_rejected(self):
        with pytest.raises(DeviceModelError):
            dev.mac_nlop(SRAM.v_max + 0.01, SRAM)

    def test_invalid_params_rejected(self):
        with pytest.raises(DeviceModelError):
            SramAdcParams(theta_sram=0.5, adc_bits=0, v_min=0.1, v_max=1.0)
        with pytest.raises(DeviceModelError):
            SramAdcParams(theta_sram=0.5, adc_bits=4, v_min=1.0, v_max=0.5)


class TestBitlineDrop:
    def test_only_coincident_ones_discharge(self):
        assert dev.bitline_voltage_drop([1, 1, 0, 0], [1, 0, 1, 0], 0.1) == pytest.approx(0.1)

    def test_zero_input_drops_nothing(self):
        assert dev.bitline_voltage_drop([1, 1, 1, 1], [0, 0, 0, 0], 0.2) == 0.0

    def test_random_64_bit_vectors_match_popcount(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            w = rng.integers(0, 2, 64)
            x = rng.integers(0, 2, 64)
            expected = popcount_and(w, x) * 0.05
            assert dev.bitline_voltage_drop(w, x, 0.05) == pytest.approx(expected)

    def test_exhaustive_four_bit_pairs(self):
        for wi in range(16):
            for xi in range(16):
                w = [(wi >> k) & 1 for k in range(4)]
                x = [(xi >> k) & 1 for k in range(4)]
                got = dev.bitline_voltage_drop(w, x, 1.0)
                assert got == (wi & xi).bit_count()

    def test_length_mismatch_rejected(self):
        with pytest.raises(DeviceModelError):
            dev.bitline_voltage_drop([1, 0], [1], 0.1)


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.01, 100.0), frac=st.floats(0.0, 1.0))
def test_pulse_inversion_error_bounded_by_half_pulse(theta, frac):
    p = make_params(theta_ltp=theta, p_max=200)
    target = p.w_min + frac * p.weight_range
    pulses = dev.pulses_for_weight(target, p)
    programmed = dev.ltp_weight(pulses, p)
    # nearest-integer inversion: the programmed weight is within the larger
    # neighboring half pulse step of the requested target
    lo = dev.ltp_weight(max(pulses - 1, 0), p)
    hi = dev.ltp_weight(min(pulses + 1, p.p_max), p)
    assert abs(programmed - target) <= max(programmed - lo, hi - programmed) / 2 + 1e-12
