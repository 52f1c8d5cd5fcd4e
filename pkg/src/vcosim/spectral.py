"""Spectral estimation and audio-band metrics.

Everything here is pure: a SpectrumRecord in, numbers out.  PSDs are stored
linearly (unit^2/Hz, one-sided) and converted to dB only at the edges.  The
audio band is fixed at [20 Hz, 20 kHz]; bins outside it never enter a
band-limited metric.

Measurement conventions (documented choices, not physics):
  * Hann window, non-overlapping segments, per-segment mean removal.
  * A tone's power is the integral of its +/- `skirt` leakage bins.
  * SNDR counts every non-signal in-band bin as noise+distortion; SNR
    additionally excludes the skirts of the lowest `n_harmonics` harmonics.
  * A-weighting is normalized to exactly 0 dB at 1 kHz and applied to the
    noise integral only, never to the signal power.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

AUDIO_BAND_HZ = (20.0, 20e3)
PSD_DB_FLOOR = -400.0  # clamp for empty bins so logs stay finite
DEFAULT_SKIRT_BINS = 3
DEFAULT_N_HARMONICS = 10


@dataclass(frozen=True)
class SpectrumRecord:
    """One-sided averaged PSD with enough metadata to interpret it."""

    freq_hz: np.ndarray
    psd: np.ndarray  # linear, unit^2/Hz
    nfft: int
    n_avg: int
    fs_hz: float
    window: str = "hann"
    unit: str = "LSB"

    @property
    def df_hz(self) -> float:
        return self.fs_hz / self.nfft

    @property
    def psd_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.psd, 10.0 ** (PSD_DB_FLOOR / 10.0)))

    def power(self, lo_hz: float | None = None, hi_hz: float | None = None) -> float:
        """Integrated power between the given frequencies (inclusive)."""
        mask = np.ones(len(self.freq_hz), dtype=bool)
        if lo_hz is not None:
            mask &= self.freq_hz >= lo_hz
        if hi_hz is not None:
            mask &= self.freq_hz <= hi_hz
        return float(np.sum(self.psd[mask]) * self.df_hz)


def averaged_periodogram(
    y,
    nfft: int,
    n_avg: int | None = None,
    fs_hz: float = 1.0,
    window: str = "hann",
    unit: str = "LSB",
    detrend: str = "constant",
) -> SpectrumRecord:
    """Mean of magnitude-squared spectra over non-overlapping segments.

    Density scaling: the integral of the PSD over frequency recovers the
    time-domain power (Parseval, within estimator variance).
    """
    y = np.asarray(y, dtype=float)
    if n_avg is None:
        n_avg = len(y) // nfft
    if n_avg < 1 or len(y) < nfft * n_avg:
        raise ValueError(
            f"need at least nfft*n_avg = {nfft * n_avg} samples, got {len(y)}"
        )
    if window == "hann":
        j = np.arange(nfft)
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * j / nfft)
    elif window == "boxcar":
        w = np.ones(nfft)
    else:
        raise ValueError(f"unknown window {window!r}")
    scale = 2.0 / (fs_hz * np.sum(w * w))  # one-sided density normalization
    segs = y[: nfft * n_avg].reshape(n_avg, nfft)
    if detrend == "constant":
        segs = segs - segs.mean(axis=1, keepdims=True)
    elif detrend != "none":
        raise ValueError(f"unknown detrend {detrend!r}")
    spec = np.fft.rfft(segs * w, axis=1)
    psd = (spec.real**2 + spec.imag**2).mean(axis=0) * scale
    psd[0] *= 0.5
    if nfft % 2 == 0:
        psd[-1] *= 0.5
    freq = np.fft.rfftfreq(nfft, d=1.0 / fs_hz)
    return SpectrumRecord(
        freq_hz=freq, psd=psd, nfft=nfft, n_avg=n_avg, fs_hz=fs_hz,
        window=window, unit=unit,
    )


# -- A-weighting -------------------------------------------------------------

def a_weight_db(f_hz):
    """Standard A-curve, renormalized to exactly 0 dB at 1 kHz."""
    f = np.asarray(f_hz, dtype=float)

    def r_a(f):
        f2 = f * f
        return (12194.0**2 * f2 * f2) / (
            (f2 + 20.6**2)
            * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2))
            * (f2 + 12194.0**2)
        )

    out = 20.0 * np.log10(r_a(f) / r_a(np.array(1000.0)))
    return out if np.ndim(f_hz) else float(out)


def _band_mask(spec: SpectrumRecord) -> np.ndarray:
    lo, hi = AUDIO_BAND_HZ
    return (spec.freq_hz >= lo) & (spec.freq_hz <= hi)


def _weights(spec: SpectrumRecord, weighting: str) -> np.ndarray:
    if weighting == "a":
        w = np.zeros(len(spec.freq_hz))
        m = _band_mask(spec)
        w[m] = 10.0 ** (a_weight_db(spec.freq_hz[m]) / 10.0)
        return w
    if weighting == "flat":
        return _band_mask(spec).astype(float)
    raise ValueError(f"weighting must be 'a' or 'flat', got {weighting!r}")


# -- tones and harmonics -----------------------------------------------------

def _skirt(spec: SpectrumRecord, f_hz: float, skirt: int) -> np.ndarray:
    k = int(round(f_hz / spec.df_hz))
    lo = max(k - skirt, 0)
    hi = min(k + skirt, len(spec.freq_hz) - 1)
    return np.arange(lo, hi + 1)


def tone_power(spec: SpectrumRecord, f_hz: float, skirt: int = DEFAULT_SKIRT_BINS) -> float:
    """Power of a tone: PSD integrated over its leakage skirt."""
    idx = _skirt(spec, f_hz, skirt)
    return float(np.sum(spec.psd[idx]) * spec.df_hz)


def tone_amplitude(spec: SpectrumRecord, f_hz: float, skirt: int = DEFAULT_SKIRT_BINS) -> float:
    """Peak amplitude of a (near) bin-centered tone, exact for Hann."""
    return math.sqrt(2.0 * tone_power(spec, f_hz, skirt))


def folded_frequency(f_hz: float, fs_hz: float) -> float:
    """Alias of a tone after sampling at fs: reflect into [0, fs/2]."""
    r = math.fmod(f_hz, fs_hz)
    if r < 0:
        r += fs_hz
    return fs_hz - r if r > fs_hz / 2 else r


def harmonic_frequencies(f_sig: float, fs_hz: float, n_harmonics: int) -> list[float]:
    """Folded frequencies of harmonics 2..n_harmonics+1."""
    return [folded_frequency(h * f_sig, fs_hz) for h in range(2, n_harmonics + 2)]


def thd_pct(
    spec: SpectrumRecord,
    f_sig: float,
    n_harmonics: int = DEFAULT_N_HARMONICS,
    skirt: int = DEFAULT_SKIRT_BINS,
) -> float:
    """Total harmonic distortion: RSS of harmonic amplitudes over the signal's."""
    p_sig = tone_power(spec, f_sig, skirt)
    if p_sig <= 0.0:
        return 0.0
    sig_idx = set(_skirt(spec, f_sig, skirt).tolist())
    p_harm = 0.0
    for fh in harmonic_frequencies(f_sig, spec.fs_hz, n_harmonics):
        idx = [i for i in _skirt(spec, fh, skirt) if i not in sig_idx]
        p_harm += float(np.sum(spec.psd[idx]) * spec.df_hz)
    return 100.0 * math.sqrt(p_harm / p_sig)


def sndr_db(
    spec: SpectrumRecord,
    f_sig: float,
    weighting: str = "a",
    skirt: int = DEFAULT_SKIRT_BINS,
) -> float:
    """Signal over weighted in-band noise-plus-distortion, in dB."""
    sig_idx = _skirt(spec, f_sig, skirt)
    p_sig = float(np.sum(spec.psd[sig_idx]) * spec.df_hz)
    w = _weights(spec, weighting)
    w[sig_idx] = 0.0
    p_noise = float(np.sum(spec.psd * w) * spec.df_hz)
    if p_noise <= 0.0:
        return math.inf
    if p_sig <= 0.0:
        return -math.inf
    return 10.0 * math.log10(p_sig / p_noise)


def snr_db(
    spec: SpectrumRecord,
    f_sig: float,
    weighting: str = "a",
    skirt: int = DEFAULT_SKIRT_BINS,
    n_harmonics: int = DEFAULT_N_HARMONICS,
) -> float:
    """Like :func:`sndr_db` but with the lowest harmonics' skirts excluded."""
    sig_idx = _skirt(spec, f_sig, skirt)
    p_sig = float(np.sum(spec.psd[sig_idx]) * spec.df_hz)
    w = _weights(spec, weighting)
    w[sig_idx] = 0.0
    for fh in harmonic_frequencies(f_sig, spec.fs_hz, n_harmonics):
        w[_skirt(spec, fh, skirt)] = 0.0
    p_noise = float(np.sum(spec.psd * w) * spec.df_hz)
    if p_noise <= 0.0:
        return math.inf
    if p_sig <= 0.0:
        return -math.inf
    return 10.0 * math.log10(p_sig / p_noise)


def band_noise_db(spec: SpectrumRecord, weighting: str = "a") -> float:
    """Weighted in-band noise power, dB re unit^2 (idle-channel figure)."""
    p = float(np.sum(spec.psd * _weights(spec, weighting)) * spec.df_hz)
    return 10.0 * math.log10(p) if p > 0.0 else PSD_DB_FLOOR


def fit_tone(y, fs_hz: float, f_hz: float) -> tuple[float, float]:
    """Least-squares amplitude and phase of a tone in a time sequence.

    Unlike the spectral estimators this needs no bin centering, which makes
    it the right tool for transfer-function sweeps at arbitrary frequencies.
    """
    y = np.asarray(y, dtype=float)
    t = np.arange(len(y)) / fs_hz
    c = np.cos(2.0 * np.pi * f_hz * t)
    s = np.sin(2.0 * np.pi * f_hz * t)
    basis = np.column_stack([c, s, np.ones(len(y))])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    amp = float(np.hypot(coef[0], coef[1]))
    phase = float(np.arctan2(-coef[1], coef[0]))
    return amp, phase


# -- smoothing and slope fits ------------------------------------------------

def log_band_average(
    spec: SpectrumRecord,
    points_per_decade: int = 24,
    min_bins: int = 16,
    f_lo: float | None = None,
    f_hi: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Power-average the PSD into log-spaced bands (skipping DC).

    Bands narrower than ``min_bins`` FFT bins are widened, so the variance
    of every returned point is bounded.  Returns (band center Hz, mean PSD).
    """
    f = spec.freq_hz
    lo = max(f_lo if f_lo is not None else f[1], f[1])
    hi = min(f_hi if f_hi is not None else f[-1], f[-1])
    if hi <= lo:
        raise ValueError("empty band")
    edges = 10.0 ** np.arange(
        math.log10(lo), math.log10(hi) + 1.0 / points_per_decade,
        1.0 / points_per_decade,
    )
    centers, means = [], []
    i_start = int(np.searchsorted(f, lo))
    for e in edges[1:]:
        i_end = int(np.searchsorted(f, e, side="right"))
        if i_end - i_start < min_bins and e != edges[-1]:
            continue
        if i_end <= i_start:
            continue
        sl = slice(i_start, i_end)
        centers.append(math.sqrt(f[sl][0] * f[sl][-1]))
        means.append(float(np.mean(spec.psd[sl])))
        i_start = i_end
    return np.array(centers), np.array(means)


def slope_fit_db_per_decade(
    spec: SpectrumRecord,
    f_lo: float,
    f_hi: float,
    points_per_decade: int = 24,
    min_bins: int = 16,
) -> float:
    """Least-squares slope of the PSD in dB versus log10(frequency).

    The fit runs on log-band-averaged points so that the dense high-
    frequency bins of a linear-frequency FFT do not dominate the fit.
    """
    if not f_lo < f_hi:
        raise ValueError("need f_lo < f_hi")
    n_raw = int(np.sum((spec.freq_hz >= f_lo) & (spec.freq_hz <= f_hi)))
    if n_raw < 10:
        raise ValueError(f"only {n_raw} bins in [{f_lo}, {f_hi}] Hz; need >= 10")
    min_bins = min(min_bins, max(1, n_raw // 10))
    fc, pm = log_band_average(
        spec, points_per_decade=points_per_decade, min_bins=min_bins,
        f_lo=f_lo, f_hi=f_hi,
    )
    keep = pm > 0
    slope, _ = np.polyfit(np.log10(fc[keep]), 10.0 * np.log10(pm[keep]), 1)
    return float(slope)


def max_band_delta_db(
    a: SpectrumRecord,
    b: SpectrumRecord,
    f_lo: float,
    f_hi: float,
    points_per_decade: int = 24,
    min_bins: int = 24,
) -> float:
    """Largest absolute difference between two smoothed spectra, in dB."""
    if a.nfft != b.nfft or a.fs_hz != b.fs_hz:
        raise ValueError("spectra must share fs and nfft")
    fa, pa = log_band_average(a, points_per_decade, min_bins, f_lo, f_hi)
    fb, pb = log_band_average(b, points_per_decade, min_bins, f_lo, f_hi)
    if len(fa) != len(fb):
        raise ValueError("band grids disagree")
    floor = 10.0 ** (PSD_DB_FLOOR / 10.0)
    da = 10.0 * np.log10(np.maximum(pa, floor))
    db_ = 10.0 * np.log10(np.maximum(pb, floor))
    return float(np.max(np.abs(da - db_)))


# -- transfer-function estimation --------------------------------------------

def estimate_transfer(
    x,
    y,
    nfft: int,
    fs_hz: float,
    n_avg: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """H1 cross-spectral transfer estimate |Y/X| (freqs, magnitude).

    Averages cross- and auto-spectra over non-overlapping Hann segments;
    standard noise-injection measurement of a loop transfer function.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if n_avg is None:
        n_avg = len(x) // nfft
    if n_avg < 1:
        raise ValueError("not enough samples for one segment")
    j = np.arange(nfft)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * j / nfft)
    xs = x[: nfft * n_avg].reshape(n_avg, nfft) * w
    ys = y[: nfft * n_avg].reshape(n_avg, nfft) * w
    fx = np.fft.rfft(xs, axis=1)
    fy = np.fft.rfft(ys, axis=1)
    sxx = (fx.real**2 + fx.imag**2).mean(axis=0)
    sxy = (np.conj(fx) * fy).mean(axis=0)
    freq = np.fft.rfftfreq(nfft, d=1.0 / fs_hz)
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = np.abs(sxy) / sxx
    mag[~np.isfinite(mag)] = 0.0
    return freq, mag


# -- amplitude sweep ----------------------------------------------------------

def _sweep_point(args):
    cfg_dict, level_dbv, f_sig = args
    # Imported lazily so this module stays import-light and the worker
    # processes re-derive everything from the serialized config.
    from .config import config_from_dict
    from .modulator import run_for_metrics

    cfg = config_from_dict(cfg_dict)
    return run_for_metrics(cfg, level_dbv, f_sig)


def amplitude_sweep(cfg, levels_dbv, f_sig: float, jobs: int = 1) -> list[dict]:
    """One simulation per input level; returns ordered metric rows.

    Each row: {level_dbv, snr_dba, sndr_dba, thd_pct, locked}.  Rows are
    independent, so the sweep parallelizes trivially; ordering follows the
    input list regardless of worker count.
    """
    from .config import config_to_dict

    levels = [float(l) for l in levels_dbv]
    if sorted(levels) != levels:
        raise ConfigError("sweep levels must be ascending")
    tasks = [(config_to_dict(cfg), lv, f_sig) for lv in levels]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    return rows


def aop_dbv(levels, thd, threshold_pct: float = 5.0) -> float | None:
    """Overload onset: level where THD crosses the threshold on the way up.

    Searched from the top of the sweep, so noise-dominated low-level points
    (the harmonic bins integrate noise there, and the ratio to a shrinking
    signal blows past any threshold) cannot shadow the distortion knee.
    Returns the interpolated crossing, the lowest swept level when even
    that is over threshold, or None when the sweep never overloads.
    """
    if len(thd) == 0 or thd[-1] < threshold_pct:
        return None
    i = len(thd) - 1
    while i > 0 and thd[i - 1] >= threshold_pct:
        i -= 1
    if i == 0:
        return float(levels[0])
    l0, l1 = levels[i - 1], levels[i]
    t0, t1 = thd[i - 1], thd[i]
    if t1 == t0:
        return float(l1)
    return float(l0 + (threshold_pct - t0) * (l1 - l0) / (t1 - t0))


def dynamic_range_db(levels, snr_db_values, aop: float, n_fit: int = 3) -> float:
    """AOP minus the SNR = 0 intercept of the low-level SNR segment."""
    lv = np.asarray(levels, dtype=float)[:n_fit]
    sn = np.asarray(snr_db_values, dtype=float)[:n_fit]
    a, b = np.polyfit(lv, sn, 1)
    level_zero = -b / a
    return float(aop - level_zero)
