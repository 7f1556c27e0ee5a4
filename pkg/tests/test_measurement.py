import dataclasses
import math

import numpy as np
import pytest

from canyonloc import (
    ConfigError,
    NoiseModel,
    PathMeasurement,
    RadioConfig,
    SPEED_OF_LIGHT,
    noise_variances,
    path_snr,
    synthesize,
    with_tx_power,
)
from canyonloc.constants import BOLTZMANN, REFERENCE_TEMPERATURE
from canyonloc.raytrace import LOS, SINGLE_BOUNCE, PropagationPath


def make_path(length=25.980762113533157, bounces=0, azimuth=-2.356, zenith=2.186):
    kind = LOS if bounces == 0 else SINGLE_BOUNCE
    return PropagationPath(
        index=1,
        kind=kind,
        surface_sequence=tuple(range(1, bounces + 1)),
        reflection_points=tuple((0.0, 0.0, 0.0) for _ in range(bounces)),
        length=length,
        delay=length / SPEED_OF_LIGHT,
        azimuth=azimuth,
        zenith=zenith,
    )


class TestPathSnr:
    def test_double_length_costs_inverse_square(self):
        radio = RadioConfig()
        drop = path_snr(make_path(length=20.0), radio) - path_snr(make_path(length=40.0), radio)
        assert drop == pytest.approx(20.0 * math.log10(2.0), abs=1e-12)

    def test_each_bounce_costs_reflection_loss(self):
        radio = RadioConfig(reflection_loss_db=3.0)
        a = path_snr(make_path(bounces=1), radio)
        b = path_snr(make_path(bounces=2), radio)
        assert a - b == pytest.approx(3.0, abs=1e-12)

    def test_golden_los_budget(self):
        # Independent hand evaluation of the link budget at 0 dBm for the
        # scenario LOS length 15*sqrt(3):
        #   FSPL  = 20 log10(4 pi L f / c)          = 71.6013115 dB
        #   gain  = 10 log10(64)                    = 18.0617997 dB
        #   noise = 10 log10(k T0 B) + 30 + NF      = -95.1056991 dBm
        radio = with_tx_power(RadioConfig(), 0.0)
        length = 15.0 * math.sqrt(3.0)
        fspl = 20.0 * math.log10(4.0 * math.pi * length * 3.5e9 / SPEED_OF_LIGHT)
        noise = 10.0 * math.log10(BOLTZMANN * REFERENCE_TEMPERATURE * 512 * 30e3) + 30.0 + 7.0
        expected = 0.0 - fspl + 10.0 * math.log10(64.0) - noise
        got = path_snr(make_path(length=length), radio)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(41.5509, abs=1e-3)  # frozen golden value
        assert got > 0.0

    def test_tx_power_shifts_snr_linearly(self):
        p = make_path()
        assert path_snr(p, with_tx_power(RadioConfig(), 10.0)) - path_snr(
            p, with_tx_power(RadioConfig(), 0.0)
        ) == pytest.approx(10.0, abs=1e-12)


class TestNoiseVariances:
    def test_ten_db_scales_all_by_ten(self):
        p = make_path()
        lo = noise_variances(p, with_tx_power(RadioConfig(), 0.0))
        hi = noise_variances(p, with_tx_power(RadioConfig(), 10.0))
        for a, b in zip(lo, hi):
            assert a / b == pytest.approx(10.0, rel=1e-9)

    def test_fixed_mode_returns_configured(self):
        model = NoiseModel(mode="fixed", fixed_var_delay=1e-18,
                           fixed_var_azimuth=1e-6, fixed_var_zenith=1e-6)
        assert noise_variances(make_path(), RadioConfig(), model) == (1e-18, 1e-6, 1e-6)

    def test_golden_crlb_triple(self):
        # Hand evaluation of both closed forms at the golden LOS SNR:
        #   beta^2 = (512*30e3)^2 / 12, snr = 10^(snr_db/10)
        #   var_tau = 1 / (8 pi^2 beta^2 snr); var_ang = 0.1 / (snr * 64)
        radio = with_tx_power(RadioConfig(), 0.0)
        p = make_path()
        snr = 10.0 ** (path_snr(p, radio) / 10.0)
        beta_sq = (512 * 30e3) ** 2 / 12.0
        var_tau = 1.0 / (8.0 * math.pi**2 * beta_sq * snr)
        var_ang = 0.1 / (snr * 64.0)
        got = noise_variances(p, radio)
        assert got[0] == pytest.approx(var_tau, rel=1e-12)
        assert got[1] == pytest.approx(var_ang, rel=1e-12)
        assert got[2] == got[1]
        assert got[0] == pytest.approx(4.507e-20, rel=1e-3)  # frozen golden value
        assert got[1] == pytest.approx(1.0933e-07, rel=1e-3)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ConfigError):
            NoiseModel(mode="exact")

    def test_negative_fixed_variance_rejected(self):
        with pytest.raises(ConfigError):
            NoiseModel(mode="fixed", fixed_var_delay=-1.0)


class TestSynthesize:
    def test_zero_variance_fixed_model_is_exact(self, canyon_paths):
        model = NoiseModel(mode="fixed", fixed_var_delay=0.0,
                           fixed_var_azimuth=0.0, fixed_var_zenith=0.0)
        labeled = synthesize(canyon_paths, RadioConfig(), 100e-9, rng_seed=4, model=model)
        for lm, p in zip(labeled, canyon_paths):
            assert lm.measurement.delay == pytest.approx(p.delay + 1e-7, rel=1e-15)
            assert lm.measurement.azimuth == pytest.approx(p.azimuth, abs=1e-15)
            assert lm.measurement.zenith == pytest.approx(p.zenith, abs=1e-15)

    def test_zero_noise_flag_keeps_variances(self, canyon_paths):
        labeled = synthesize(canyon_paths, RadioConfig(), 100e-9, rng_seed=4, zero_noise=True)
        for lm, p in zip(labeled, canyon_paths):
            assert lm.measurement.delay == pytest.approx(p.delay + 1e-7, rel=1e-15)
            assert lm.measurement.var_delay > 0.0

    def test_seed_determinism(self, canyon_paths):
        a = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=123)
        b = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=123)
        for x, y in zip(a, b):
            assert x.measurement == y.measurement
        c = synthesize(canyon_paths, RadioConfig(), 1e-7, rng_seed=124)
        assert any(x.measurement != y.measurement for x, y in zip(a, c))

    def test_delay_noise_is_unbiased(self, canyon_paths):
        # law-of-large-numbers check on tau_hat - tau - B pooled over paths
        radio = with_tx_power(RadioConfig(), 0.0)
        bias = 1e-7
        residuals = []
        sigma = math.sqrt(noise_variances(canyon_paths[0], radio)[0])
        draws = 15000
        for seed in range(draws):
            labeled = synthesize(canyon_paths, radio, bias, rng_seed=seed)
            residuals.extend(
                lm.measurement.delay - p.delay - bias for lm, p in zip(labeled, canyon_paths)
            )
        n = len(residuals)
        assert n >= 1e5
        # pooled sigma is path dependent; bound with the largest (LOS) sigma
        assert abs(float(np.mean(residuals))) < 4.0 * sigma / math.sqrt(draws)

    def test_empirical_variance_matches_configured(self, canyon_paths):
        radio = with_tx_power(RadioConfig(), -10.0)
        p = canyon_paths[0]
        var_d, var_a, var_z = noise_variances(p, radio)
        d, a, z = [], [], []
        for seed in range(12000):
            m = synthesize([p], radio, 0.0, rng_seed=seed)[0].measurement
            d.append(m.delay - p.delay)
            a.append(m.azimuth - p.azimuth)
            z.append(m.zenith - p.zenith)
        assert np.var(d) == pytest.approx(var_d, rel=0.10)
        assert np.var(a) == pytest.approx(var_a, rel=0.10)
        assert np.var(z) == pytest.approx(var_z, rel=0.10)

    def test_angle_wrap_and_clip(self):
        # near the azimuth cut and the zenith poles with huge fixed noise
        model = NoiseModel(mode="fixed", fixed_var_delay=1e-18,
                           fixed_var_azimuth=4.0, fixed_var_zenith=4.0)
        p = make_path(azimuth=math.pi - 0.01, zenith=0.05)
        for seed in range(300):
            m = synthesize([p], RadioConfig(), 0.0, rng_seed=seed, model=model)[0].measurement
            assert -math.pi < m.azimuth <= math.pi
            assert 0.0 <= m.zenith <= math.pi

    def test_nonfinite_bias_rejected(self, canyon_paths):
        with pytest.raises(ValueError):
            synthesize(canyon_paths, RadioConfig(), math.inf, rng_seed=0)


class TestEstimatorFacingSurface:
    def test_measurement_exposes_no_truth_fields(self):
        fields = set(PathMeasurement.__dataclass_fields__)
        assert fields == {
            "index", "delay", "azimuth", "zenith",
            "var_delay", "var_azimuth", "var_zenith",
        }
        for name in fields:
            assert "truth" not in name and "kind" not in name and "surface" not in name

    def test_truth_lives_only_on_label(self, canyon_paths):
        labeled = synthesize(canyon_paths, RadioConfig(), 0.0, rng_seed=0)
        lm = labeled[-1]
        assert lm.truth.kind == "multi_bounce"
        assert lm.truth.final_surface == lm.truth.surface_sequence[-1]
        assert dataclasses.is_dataclass(lm.measurement)


class TestRadioConfigValidation:
    def test_counts_validated(self):
        with pytest.raises(ConfigError):
            RadioConfig(n_x=0)
        with pytest.raises(ConfigError):
            RadioConfig(subcarriers=0)

    def test_positive_spacings(self):
        with pytest.raises(ConfigError):
            RadioConfig(subcarrier_spacing=0.0)

    def test_bandwidth_and_rms(self):
        r = RadioConfig()
        assert r.bandwidth == pytest.approx(512 * 30e3)
        assert r.rms_bandwidth == pytest.approx(r.bandwidth / math.sqrt(12.0))
