"""Spectral estimators exercised on constructed signals with known answers."""
import math

import numpy as np
import pytest

from vcosim.spectral import (
    SpectrumRecord,
    a_weight_db,
    aop_dbv,
    averaged_periodogram,
    band_noise_db,
    dynamic_range_db,
    estimate_transfer,
    fit_tone,
    folded_frequency,
    harmonic_frequencies,
    log_band_average,
    max_band_delta_db,
    slope_fit_db_per_decade,
    sndr_db,
    snr_db,
    thd_pct,
    tone_amplitude,
    tone_power,
)

FS = 48000.0


def _tone(amp, f_hz, n, fs=FS, phase=0.0):
    return amp * np.sin(2 * np.pi * f_hz / fs * np.arange(n) + phase)


def _spec(y, nfft=4096, fs=FS):
    return averaged_periodogram(y, nfft=nfft, fs_hz=fs)


def test_parseval_within_estimator_variance():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(4096 * 64)
    spec = _spec(y)
    assert spec.power() == pytest.approx(np.var(y), rel=0.02)


def test_psd_is_density_scaled():
    rng = np.random.default_rng(1)
    sigma = 0.3
    spec = _spec(sigma * rng.standard_normal(4096 * 64))
    # white noise: PSD = sigma^2 / (fs/2) one-sided, everywhere
    want = sigma**2 / (FS / 2)
    mid = spec.psd[(spec.freq_hz > 1e3) & (spec.freq_hz < 20e3)]
    assert np.mean(mid) == pytest.approx(want, rel=0.02)


def test_bin_centered_tone_amplitude():
    amp = 0.123
    f = 128 * FS / 4096  # exact bin center
    spec = _spec(_tone(amp, f, 4096 * 8))
    assert 20 * np.log10(tone_amplitude(spec, f) / amp) == pytest.approx(0.0, abs=0.05)
    assert tone_power(spec, f) == pytest.approx(amp**2 / 2, rel=0.02)


def test_record_metadata():
    spec = _spec(np.zeros(4096 * 2))
    assert spec.df_hz == FS / 4096
    assert spec.n_avg == 2
    assert len(spec.freq_hz) == 4096 // 2 + 1
    with pytest.raises(ValueError):
        averaged_periodogram(np.zeros(100), nfft=4096)
    with pytest.raises(ValueError):
        averaged_periodogram(np.zeros(8192), nfft=4096, window="kaiser")


# -- A-curve ------------------------------------------------------------------

def test_a_weight_table_values():
    assert a_weight_db(1000.0) == 0.0
    assert a_weight_db(100.0) == pytest.approx(-19.1, abs=0.15)
    assert a_weight_db(10000.0) == pytest.approx(-2.5, abs=0.15)
    assert a_weight_db(20.0) == pytest.approx(-50.5, abs=0.3)
    out = a_weight_db(np.array([100.0, 1000.0]))
    assert out.shape == (2,)


# -- folding and harmonics ----------------------------------------------------

def test_folding_reflects_into_first_nyquist_zone():
    assert folded_frequency(0.3 * FS, FS) == pytest.approx(0.3 * FS)
    assert folded_frequency(0.6 * FS, FS) == pytest.approx(0.4 * FS)
    assert folded_frequency(1.3 * FS, FS) == pytest.approx(0.3 * FS)
    assert folded_frequency(2.5 * FS, FS) == pytest.approx(0.5 * FS)


def test_harmonic_frequencies_start_at_second():
    hf = harmonic_frequencies(7000.0, FS, 3)
    assert hf == [14000.0, 21000.0, FS - 28000.0]


def test_thd_of_constructed_two_tone():
    f0 = 96 * FS / 4096
    n = 4096 * 16
    y = _tone(1.0, f0, n) + _tone(0.05, 2 * f0, n)
    assert thd_pct(_spec(y), f0) == pytest.approx(5.0, abs=0.05)
    # harmonic beyond Nyquist folds back and is still charged to THD
    f1 = 1800 * FS / 4096
    y = _tone(1.0, f1, n) + _tone(0.03, folded_frequency(2 * f1, FS), n)
    assert thd_pct(_spec(y), f1) == pytest.approx(3.0, abs=0.05)


def test_snr_excludes_harmonics_sndr_does_not():
    f0 = 96 * FS / 4096
    n = 4096 * 32
    rng = np.random.default_rng(7)
    y = _tone(1.0, f0, n) + _tone(0.01, 2 * f0, n) + 1e-3 * rng.standard_normal(n)
    spec = _spec(y)
    snr = snr_db(spec, f0, weighting="flat")
    sndr = sndr_db(spec, f0, weighting="flat")
    assert snr > sndr + 3.0
    # SNDR is dominated by the -40 dBc harmonic
    assert sndr == pytest.approx(40.0, abs=0.3)
    # SNR sees only the white noise inside [20 Hz, 20 kHz]
    band_frac = (20e3 - 20.0) / (FS / 2)
    want = 10 * np.log10((1.0**2 / 2) / (1e-6 * band_frac))
    assert snr == pytest.approx(want, abs=0.3)


def test_band_noise_is_a_weighted_integral():
    rng = np.random.default_rng(9)
    sigma = 0.01
    spec = _spec(sigma * rng.standard_normal(4096 * 64))
    flat = band_noise_db(spec, weighting="flat")
    want = 10 * np.log10(sigma**2 * (20e3 - 20.0) / (FS / 2))
    assert flat == pytest.approx(want, abs=0.2)
    # the A-curve attenuates white noise relative to the flat window
    assert band_noise_db(spec, weighting="a") < flat
    with pytest.raises(ValueError):
        band_noise_db(spec, weighting="c")


def test_fit_tone_off_bin_and_offset_immune():
    fs = 3.072e6
    f = 997.3  # nowhere near a bin center
    n = 65536
    y = 0.02 * np.sin(2 * np.pi * f / fs * np.arange(n) + 0.7) + 5.0
    amp, phase = fit_tone(y, fs, f)
    assert amp == pytest.approx(0.02, rel=1e-6)
    # fit uses cos/sin basis: sin(wt + p) = cos(wt + p - pi/2)
    assert math.remainder(phase - (0.7 - np.pi / 2), 2 * np.pi) == pytest.approx(
        0.0, abs=1e-6
    )


# -- smoothing / slopes -------------------------------------------------------

def test_log_band_average_widens_narrow_bands():
    rng = np.random.default_rng(3)
    spec = _spec(rng.standard_normal(4096 * 16))
    fc, pm = log_band_average(spec, points_per_decade=24, min_bins=64)
    assert np.all(np.diff(fc) > 0)
    assert len(fc) < len(spec.freq_hz) / 32
    # power-averaging preserves the white level in every band
    np.testing.assert_allclose(pm, 1.0 / (FS / 2), rtol=0.25)


def test_slope_fit_on_shaped_and_flat_noise():
    # the band must hold many FFT bins per smoothing band, else the widened
    # low bands flatten a steep fit; 16384 bins over one decade is plenty
    rng = np.random.default_rng(5)
    w = rng.standard_normal(16384 * 24)
    spec_w = averaged_periodogram(w, nfft=16384, fs_hz=FS)
    assert slope_fit_db_per_decade(spec_w, 100.0, 10e3) == pytest.approx(0.0, abs=1.0)
    shaped = np.diff(np.diff(w))  # |1 - z^-1|^4 -> +40 dB/dec well below fs
    spec_s = averaged_periodogram(shaped, nfft=16384, fs_hz=FS)
    assert slope_fit_db_per_decade(spec_s, 500.0, 6e3) == pytest.approx(40.0, abs=1.0)
    with pytest.raises(ValueError):
        slope_fit_db_per_decade(spec_w, 10e3, 100.0)
    with pytest.raises(ValueError):
        slope_fit_db_per_decade(spec_w, 100.0, 101.0)


def test_max_band_delta_is_exact_for_scaled_copies():
    rng = np.random.default_rng(6)
    y = rng.standard_normal(4096 * 8)
    a = _spec(y)
    b = _spec(2.0 * y)
    assert max_band_delta_db(a, a, 100.0, 20e3) == 0.0
    assert max_band_delta_db(a, b, 100.0, 20e3) == pytest.approx(
        20 * np.log10(2.0), abs=1e-9
    )
    c = averaged_periodogram(y, nfft=2048, fs_hz=FS)
    with pytest.raises(ValueError):
        max_band_delta_db(a, c, 100.0, 20e3)


def test_transfer_estimate_recovers_fir_response():
    rng = np.random.default_rng(8)
    x = rng.standard_normal(4096 * 32)
    y = 0.5 * (x + np.concatenate([[0.0], x[:-1]]))  # H = cos(pi f / fs)
    freq, mag = estimate_transfer(x, y, nfft=1024, fs_hz=FS)
    m = (freq > 500) & (freq < 18e3)
    want = np.abs(np.cos(np.pi * freq[m] / FS))
    np.testing.assert_allclose(mag[m], want, rtol=0.02)
    with pytest.raises(ValueError):
        estimate_transfer(x, y[:-1], nfft=1024, fs_hz=FS)


# -- sweep reductions ---------------------------------------------------------

def test_aop_interpolates_linearly_in_thd():
    assert aop_dbv([-10, -8, -6, -4], [1.0, 2.0, 4.0, 8.0]) == pytest.approx(-5.5)
    assert aop_dbv([-10, -8], [6.0, 9.0]) == -10.0  # already over at the start
    assert aop_dbv([-10, -8], [1.0, 2.0]) is None


def test_aop_ignores_noise_dominated_low_levels():
    # Near the floor the harmonic bins integrate noise, so the THD ratio
    # blows up; the overload knee is the top crossing, not those points.
    levels = [-90.0, -84.0, -8.0, -6.0, -5.0]
    thd = [9.8, 4.9, 0.001, 5.57, 39.5]
    aop = aop_dbv(levels, thd)
    assert aop == pytest.approx(-8.0 + (5.0 - 0.001) * 2.0 / (5.57 - 0.001))
    # A sweep whose top level never overloads has no measurable onset.
    assert aop_dbv([-90.0, -36.0], [9.8, 0.01]) is None


def test_dynamic_range_extrapolates_low_segment():
    levels = [-90.0, -84.0, -78.0, -36.0]
    snr = [10.0, 16.0, 22.0, 60.0]  # last point off the line, must be ignored
    dr = dynamic_range_db(levels, snr, aop=-4.4)
    assert dr == pytest.approx(-4.4 - (-100.0))
