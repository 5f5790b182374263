"""FFT tone power meter tests: exactness on-bin, scalloping off-bin, noise behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masim.channel import MovementRegion, Position, gain_map
from masim.harness import compare_maps
from masim.powermeter import default_fft_size, measure_power, sweep_measure, zero_pad
from masim.presets import hall_psi_3p5ghz
from masim.signals import IQRecord, NoiseSpec, add_noise, apply_channel, derive_seed, gen_tone

FS = 400e6
T = 1 / FS


def tone_record(h, num_samples=4096, f0=50e6, pos=Position(0, 0), tx_power=1.0, seed=0):
    samples = h * np.sqrt(tx_power) * gen_tone(f0, num_samples, T)
    return IQRecord(position=pos, samples=samples, sample_interval_s=T, seed=seed)


class TestZeroPad:
    def test_pads_with_zeros(self):
        x = np.arange(4, dtype=complex)
        y = zero_pad(x, 8)
        np.testing.assert_array_equal(y[:4], x)
        np.testing.assert_array_equal(y[4:], np.zeros(4))

    def test_noop_at_equal_size(self):
        x = np.ones(8, dtype=complex)
        np.testing.assert_array_equal(zero_pad(x, 8), x)

    def test_rejects_shrinking(self):
        with pytest.raises(ValueError):
            zero_pad(np.ones(8, dtype=complex), 4)

    def test_default_size_is_8x_next_pow2(self):
        assert default_fft_size(4096) == 32768
        assert default_fft_size(1000) == 8192


class TestMeasurePower:
    def test_on_bin_exact(self):
        # |h|^2 = 0.5 at p_t = 2 must read exactly 1.0: the tone sits on an
        # FFT bin (f0 = fs/8 divides the padded grid), so no scalloping
        h = np.sqrt(0.5) * np.exp(1j * 0.7)
        m = measure_power(tone_record(h, tx_power=2.0), 50e6)
        assert m.power_linear == pytest.approx(1.0, rel=1e-12)
        assert m.power_db == pytest.approx(0.0, abs=1e-9)

    def test_reports_expected_bin(self):
        m = measure_power(tone_record(1.0), 50e6)
        # f0/fs = 1/8 of a 32768-point grid
        assert m.peak_bin == 4096
        assert m.fft_size == 32768

    def test_negative_frequency_bin_wraps(self):
        m = measure_power(tone_record(1.0, f0=-50e6), f0_hz=-50e6)
        assert m.peak_bin == 32768 - 4096

    def test_off_bin_scalloping_matches_sinc(self):
        # worst case: tone half a bin off the padded grid
        n, ns = 4096, 32768
        k = 2048
        f_mid = (k + 0.5) / (ns * T)
        rec = IQRecord(Position(0, 0), gen_tone(f_mid, n, T), T, 0)
        m = measure_power(rec, f_mid, fft_size=ns)
        delta = n * (T * f_mid - m.peak_bin / ns)
        assert m.power_linear == pytest.approx(float(np.sinc(delta)) ** 2, rel=1e-6)

    def test_longer_window_same_power(self):
        p_short = measure_power(tone_record(0.8, num_samples=2048), 50e6).power_linear
        p_long = measure_power(tone_record(0.8, num_samples=8192), 50e6).power_linear
        assert p_long == pytest.approx(p_short, rel=1e-9)

    @settings(max_examples=30)
    @given(scale_db=st.floats(min_value=-40.0, max_value=20.0, allow_nan=False))
    def test_scale_equivariance(self, scale_db):
        c = 10.0 ** (scale_db / 20.0)
        base = measure_power(tone_record(1.0, num_samples=512), 50e6)
        scaled = measure_power(tone_record(c, num_samples=512), 50e6)
        assert scaled.power_db == pytest.approx(base.power_db + scale_db, abs=1e-9)

    def test_rejects_fft_smaller_than_record(self):
        with pytest.raises(ValueError):
            measure_power(tone_record(1.0, num_samples=4096), 50e6, fft_size=2048)

    def test_rejects_out_of_band_tone(self):
        rec = tone_record(1.0)
        with pytest.raises(ValueError, match="Nyquist"):
            measure_power(rec, f0_hz=300e6)

    def test_variance_shrinks_with_window_length(self):
        spec = NoiseSpec(0.25, FS)
        sizes = [256, 1024, 4096, 16384]
        variances = []
        for n in sizes:
            tone = gen_tone(50e6, n, T)
            vals = []
            for trial in range(200):
                noisy = add_noise(tone, spec, derive_seed(99, "var", n, trial))
                rec = IQRecord(Position(0, 0), noisy, T, 0)
                vals.append(measure_power(rec, 50e6).power_linear)
            variances.append(np.var(vals))
        assert variances[0] > variances[1] > variances[2] > variances[3]


class TestSweep:
    def sweep_records(self, noise_power=0.0, tx_power=1.0):
        psi = hall_psi_3p5ghz()
        region = MovementRegion(0.5, 0.0, 5e-3, 5e-3)  # 101-point line keeps this quick
        tone = gen_tone(50e6, 4096, T)
        spec = NoiseSpec(noise_power, FS) if noise_power > 0 else None
        records = []
        for i, pos in enumerate(region.positions()):
            rx = apply_channel(tone, psi, pos, T, tx_power=tx_power)
            if spec is not None:
                rx = add_noise(rx, spec, derive_seed(4, "tone", i))
            records.append(IQRecord(pos, rx, T, i))
        return psi, region, records

    def test_rejects_duplicate_positions(self):
        # a duplicate paired with a hole passes the grid-count check, so the
        # per-cell collision test has to catch it
        recs = [
            tone_record(1.0, num_samples=64, pos=Position(0.0, 0.0)),
            tone_record(1.0, num_samples=64, pos=Position(0.0, 0.0)),
            tone_record(1.0, num_samples=64, pos=Position(1e-3, 1e-3)),
            tone_record(1.0, num_samples=64, pos=Position(1e-3, 0.0)),
        ]
        with pytest.raises(ValueError, match="duplicate"):
            sweep_measure(recs, 50e6)

    def test_rejects_incomplete_grid(self):
        recs = [
            tone_record(1.0, num_samples=64, pos=Position(0.0, 0.0)),
            tone_record(1.0, num_samples=64, pos=Position(1e-3, 1e-3)),
            tone_record(1.0, num_samples=64, pos=Position(1e-3, 0.0)),
        ]
        with pytest.raises(ValueError, match="complete grid"):
            sweep_measure(recs, 50e6)

    def test_noiseless_sweep_matches_gain_map(self):
        psi, region, records = self.sweep_records(tx_power=2.0)
        pm = sweep_measure(records, 50e6)
        gm = gain_map(psi, region)
        report = compare_maps(gm, pm)
        assert report.correlation >= 1.0 - 1e-9
        # offset is 10log10(beta * p_t) with beta = 1
        assert report.offset_db == pytest.approx(10 * np.log10(2.0), abs=1e-9)
        assert report.max_abs_residual_db < 1e-9

    def test_noisy_sweep_mostly_within_half_db(self):
        psi, region, records = self.sweep_records(noise_power=0.01)
        pm = sweep_measure(records, 50e6)
        gm = gain_map(psi, region)
        dev = np.abs(pm.values_dbr - gm.values_db)
        assert np.mean(dev < 0.5) >= 0.99

    def test_map_shape_and_argmax(self):
        psi, region, records = self.sweep_records()
        pm = sweep_measure(records, 50e6)
        assert pm.values_dbr.shape == region.shape
        best = pm.argmax_position()
        iy, ix = np.unravel_index(np.argmax(pm.values_dbr), pm.values_dbr.shape)
        assert best == Position(float(pm.x_m[ix]), float(pm.y_m[iy]))

    def test_csv_round_trip(self, tmp_path):
        from masim.channel import read_grid_csv

        _, _, records = self.sweep_records()
        pm = sweep_measure(records, 50e6)
        path = tmp_path / "power.csv"
        pm.to_csv(path)
        xs, ys, values, column = read_grid_csv(path)
        assert column == "power_dbr"
        np.testing.assert_allclose(values, pm.values_dbr, atol=1e-6)
