"""Batch front-end: named experiments over JSON configs, CSV/SVG/JSON out.

Exit codes: 0 on success, 1 when the simulation ran but was flagged
unlocked/unstable (outputs are still written), 2 on configuration errors
(nothing is written).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import report
from .config import SimConfig, config_from_dict, config_to_dict, load_config
from .errors import ConfigError, SimulationDiverged
from .linear_model import ntf_db, stf_db
from .modulator import lock_check, measure_ntf, simulate_higher_order, simulate_proposed
from .reference import compare_architectures
from .signal_gen import Stimulus, dbv_to_peak
from .spectral import (
    SpectrumRecord,
    aop_dbv,
    amplitude_sweep,
    averaged_periodogram,
    band_noise_db,
    dynamic_range_db,
    fit_tone,
    folded_frequency,
    max_band_delta_db,
    slope_fit_db_per_decade,
    sndr_db,
    snr_db,
    thd_pct,
)

EXPERIMENTS = (
    "run",
    "sweep-amp",
    "sweep-freq",
    "ntf",
    "stf",
    "compare",
    "higher-order",
)

# Sweep experiments trade run length for point count: 8 averaged FFT
# segments per point keeps metric scatter well inside the tolerances the
# sweeps are read against.
SWEEP_SEGMENTS = 8
AMP_SWEEP_LEVELS_DBV = tuple(float(v) for v in range(-90, 1, 6))
AMP_SWEEP_TONE_HZ = 1e3
FREQ_SWEEP_SPAN_HZ = (1e3, 1e5)
FREQ_SWEEP_POINTS = 11
H3_FLOOR_DBC = -200.0


def quantization_band(cfg: SimConfig) -> tuple[float, float]:
    """Band where shaped quantization noise dominates the spectrum: above
    the dither-limited audio range, below the loop-pole corner g*fs/(2*pi)."""
    return cfg.fs_hz / 100.0, cfg.fs_hz / 20.0


def snap_to_bin(f_hz: float, cfg: SimConfig) -> float:
    """Nearest FFT bin center: coherent sampling keeps window leakage from
    masquerading as noise at high signal levels."""
    df = cfg.fs_hz / cfg.fft_len
    return max(round(f_hz / df), 1) * df


def _stimulus_tone_hz(cfg: SimConfig) -> float | None:
    stim = cfg.stimulus
    if stim.kind in ("tone", "multitone") and stim.frequency_hz:
        return float(stim.frequency_hz[0])
    return None


def cmd_run(cfg: SimConfig, out: str, jobs: int) -> int:
    trace = simulate_proposed(cfg)
    d = trace.d_out.astype(float)
    spec = averaged_periodogram(d, cfg.fft_len, fs_hz=cfg.fs_hz)
    lock = lock_check(trace)

    wn = trace.n.w if trace.n is not None else np.zeros_like(trace.p.w)
    report.write_csv(
        os.path.join(out, "trace.csv"),
        ["n", "dout", "wp", "wn"],
        zip(range(trace.n_samples), trace.d_out, trace.p.w, wn),
        cfg,
    )
    report.write_csv(
        os.path.join(out, "spectrum.csv"),
        ["freq_hz", "psd_db"],
        zip(spec.freq_hz, spec.psd_db),
        cfg,
    )

    f_lo, f_hi = quantization_band(cfg)
    metrics: dict = {
        "experiment": "run",
        "fs_hz": cfg.fs_hz,
        "n_samples": trace.n_samples,
        "fft_averages": spec.n_avg,
        "slope_db_per_dec": slope_fit_db_per_decade(spec, f_lo, f_hi),
        "slope_band_hz": [f_lo, f_hi],
        "lock": lock.as_dict(),
    }
    f_sig = _stimulus_tone_hz(cfg)
    if f_sig is not None:
        metrics.update(
            f_sig_hz=f_sig,
            snr_dba=snr_db(spec, f_sig),
            sndr_dba=sndr_db(spec, f_sig),
            thd_pct=thd_pct(spec, f_sig),
        )
    else:
        # idle channel: report the weighted in-band noise, input-referred
        # (the differential output carries twice the single-branch gain)
        gain = cfg.k_vco_eff * (2.0 if cfg.pseudo_differential else 1.0)
        counts_to_v = cfg.fs_hz / gain
        metrics["idle_noise_dbva"] = band_noise_db(spec) + 20.0 * np.log10(counts_to_v)
    report.write_metrics(os.path.join(out, "metrics.json"), metrics, cfg)

    report.save_lines_figure(
        os.path.join(out, "spectrum.svg"), cfg,
        spec.freq_hz[1:], [spec.psd_db[1:]], [""],
        "frequency (Hz)", "PSD (dB/Hz)", title="output spectrum",
    )
    report.save_trace_figure(os.path.join(out, "trace.svg"), cfg, trace.d_out)
    return 0 if lock.locked else 1


def cmd_sweep_amp(cfg: SimConfig, out: str, jobs: int) -> int:
    f_sig = snap_to_bin(AMP_SWEEP_TONE_HZ, cfg)
    cfg_pt = replace(cfg, n_samples=cfg.fft_len * SWEEP_SEGMENTS)
    levels = list(AMP_SWEEP_LEVELS_DBV)
    rows = amplitude_sweep(cfg_pt, levels, f_sig, jobs=jobs)

    report.write_csv(
        os.path.join(out, "sweep_amp.csv"),
        ["level_dbv", "snr_dba", "sndr_dba", "thd_pct", "locked"],
        ([r["level_dbv"], r["snr_dba"], r["sndr_dba"], r["thd_pct"], r["locked"]]
         for r in rows),
        cfg,
    )

    thd = [r["thd_pct"] for r in rows]
    snr = [r["snr_dba"] for r in rows]
    aop = aop_dbv(levels, thd)
    dr = dynamic_range_db(levels, snr, aop) if aop is not None else None
    metrics = {
        "experiment": "sweep-amp",
        "f_sig_hz": f_sig,
        "levels_dbv": levels,
        "aop_dbv": aop,
        "dr_db": dr,
        "peak_sndr_dba": max(r["sndr_dba"] for r in rows),
    }
    report.write_metrics(os.path.join(out, "metrics.json"), metrics, cfg)
    report.save_sweep_figure(os.path.join(out, "sweep_amp.svg"), cfg, rows)
    return 0 if rows[0]["locked"] else 1


def _freq_point(args) -> dict:
    cfg_dict, f_hz, level_dbv = args
    cfg = config_from_dict(cfg_dict)
    cfg = replace(cfg, stimulus=Stimulus.tone(level_dbv, f_hz)).validate()
    trace = simulate_higher_order(cfg)
    y = trace.d_out.astype(float)
    a1, _ = fit_tone(y, cfg.fs_hz, f_hz)
    f3 = folded_frequency(3.0 * f_hz, cfg.fs_hz)
    a3, _ = fit_tone(y, cfg.fs_hz, f3)
    gain_db = (
        20.0 * np.log10(a1 / dbv_to_peak(level_dbv)) if a1 > 0 else H3_FLOOR_DBC
    )
    h3_dbc = 20.0 * np.log10(a3 / a1) if a3 > 0 < a1 else H3_FLOOR_DBC
    return {"freq_hz": f_hz, "gain_db": gain_db, "h3_dbc": h3_dbc}


def cmd_sweep_freq(cfg: SimConfig, out: str, jobs: int) -> int:
    level = -36.0
    if cfg.stimulus.kind in ("tone", "multitone") and cfg.stimulus.amplitude_dbv:
        level = float(cfg.stimulus.amplitude_dbv[0])
    # snap to bin centers so the harmonic fits stay orthogonal to the
    # fundamental over the record
    freqs = np.array(sorted({
        snap_to_bin(f, cfg) for f in np.geomspace(*FREQ_SWEEP_SPAN_HZ, FREQ_SWEEP_POINTS)
    }))
    if freqs[-1] >= cfg.fs_hz / 2:
        raise ConfigError("frequency sweep span exceeds fs/2")
    cfg_pt = replace(cfg, n_samples=cfg.fft_len * SWEEP_SEGMENTS)
    tasks = [(config_to_dict(cfg_pt), float(f), level) for f in freqs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_freq_point, tasks))
    else:
        rows = [_freq_point(t) for t in tasks]

    report.write_csv(
        os.path.join(out, "stf.csv"),
        ["freq_hz", "gain_db", "h3_dbc"],
        ([r["freq_hz"], r["gain_db"], r["h3_dbc"]] for r in rows),
        cfg,
    )

    in_band = [r for r in rows if r["freq_hz"] <= 20e3]
    gains = [r["gain_db"] for r in in_band]
    # extrapolate the lowest point to DC along the closed-form roll-off;
    # the differential output carries twice the single-branch gain
    diff_db = 20.0 * np.log10(2.0) if cfg.pseudo_differential else 0.0
    dc_correction = float(
        stf_db(cfg.k_vco_eff, cfg.fs_hz, rows[0]["freq_hz"])
        - stf_db(cfg.k_vco_eff, cfg.fs_hz, 0.0)
    )
    metrics: dict = {
        "experiment": "sweep-freq",
        "level_dbv": level,
        "gain_flatness_db": max(gains) - min(gains),
        "dc_gain_db": rows[0]["gain_db"] - dc_correction,
        "dc_gain_model_db": float(stf_db(cfg.k_vco_eff, cfg.fs_hz, 0.0)) + diff_db,
    }
    h3 = np.array([r["h3_dbc"] for r in rows])
    usable = h3 > H3_FLOOR_DBC + 40.0
    # the first-order rise of the distortion transfer holds only while the
    # harmonic stays well below the loop-pole corner
    corner_hz = cfg.loop_gain * cfg.fs_hz / (2.0 * math.pi)
    usable &= 3.0 * freqs <= corner_hz / 2.0
    if np.count_nonzero(usable) >= 3 and any(cfg.stage2.poly_nl):
        slope, _ = np.polyfit(np.log10(freqs[usable]), h3[usable], 1)
        metrics["h3_slope_db_per_dec"] = float(slope)
    report.write_metrics(os.path.join(out, "metrics.json"), metrics, cfg)

    report.save_lines_figure(
        os.path.join(out, "stf.svg"), cfg,
        freqs, [[r["gain_db"] for r in rows], [r["h3_dbc"] for r in rows]],
        ["fundamental gain", "H3 (dBc)"],
        "input frequency (Hz)", "dB", title="signal path sweep",
    )
    return 0


def cmd_ntf(cfg: SimConfig, out: str, jobs: int) -> int:
    freqs, mag = measure_ntf(cfg)
    measured_db = 20.0 * np.log10(np.maximum(mag, 1e-15))
    model_db = ntf_db(cfg.k_dco_eff, cfg.fs_hz, freqs)

    report.write_csv(
        os.path.join(out, "ntf.csv"),
        ["freq_hz", "ntf_db"],
        zip(freqs, model_db),
        cfg,
    )
    report.write_csv(
        os.path.join(out, "ntf_measured.csv"),
        ["freq_hz", "ntf_db"],
        zip(freqs, measured_db),
        cfg,
    )

    rec = lambda db: SpectrumRecord(  # noqa: E731
        freq_hz=freqs, psd=10.0 ** (db / 10.0), nfft=cfg.fft_len,
        n_avg=1, fs_hz=cfg.fs_hz, unit="ratio",
    )
    delta = max_band_delta_db(
        rec(model_db), rec(measured_db), cfg.fs_hz / 1000.0, cfg.fs_hz / 4.0
    )
    report.write_metrics(
        os.path.join(out, "metrics.json"),
        {
            "experiment": "ntf",
            "max_band_delta_db": delta,
            "band_hz": [cfg.fs_hz / 1000.0, cfg.fs_hz / 4.0],
            "loop_gain": cfg.loop_gain,
        },
        cfg,
    )
    report.save_lines_figure(
        os.path.join(out, "ntf.svg"), cfg,
        freqs[1:], [model_db[1:], measured_db[1:]], ["closed form", "measured"],
        "frequency (Hz)", "|NTF| (dB)", title="noise transfer function",
    )
    return 0


def cmd_stf(cfg: SimConfig, out: str, jobs: int) -> int:
    freqs = np.geomspace(10.0, cfg.fs_hz / 2.0, 200)
    gain = stf_db(cfg.k_vco_eff, cfg.fs_hz, freqs)
    report.write_csv(
        os.path.join(out, "stf_model.csv"),
        ["freq_hz", "gain_db"],
        zip(freqs, gain),
        cfg,
    )
    report.write_metrics(
        os.path.join(out, "metrics.json"),
        {
            "experiment": "stf",
            "dc_gain_db": float(stf_db(cfg.k_vco_eff, cfg.fs_hz, 0.0)),
        },
        cfg,
    )
    report.save_lines_figure(
        os.path.join(out, "stf_model.svg"), cfg,
        freqs, [gain], [""],
        "frequency (Hz)", "gain (dB)", title="signal transfer function",
    )
    return 0


def cmd_compare(cfg: SimConfig, out: str, jobs: int) -> int:
    res = compare_architectures(cfg)
    for name, spec in (("reference", res["spec_ref"]), ("nested", res["spec_nested"])):
        report.write_csv(
            os.path.join(out, f"spectrum_{name}.csv"),
            ["freq_hz", "psd_db"],
            zip(spec.freq_hz, spec.psd_db),
            cfg,
        )
    report.write_metrics(
        os.path.join(out, "metrics.json"),
        {
            "experiment": "compare",
            "max_band_delta_db": res["max_delta_db"],
            "band_hz": [20.0, cfg.fs_hz / 4.0],
            "sample_exact_identical_ic": res["sample_exact"],
        },
        cfg,
    )
    report.save_lines_figure(
        os.path.join(out, "compare.svg"), cfg,
        res["spec_ref"].freq_hz[1:],
        [res["spec_ref"].psd_db[1:], res["spec_nested"].psd_db[1:]],
        ["flat second-order loop", "nested oscillator form"],
        "frequency (Hz)", "PSD (dB/Hz)", title="architecture comparison",
    )
    return 0


def cmd_higher_order(cfg: SimConfig, out: str, jobs: int) -> int:
    n_stages = cfg.n_stages if cfg.n_stages >= 3 else 3
    trace = simulate_higher_order(cfg, n_stages=n_stages)
    spec = averaged_periodogram(
        trace.d_out.astype(float), cfg.fft_len, fs_hz=cfg.fs_hz
    )
    lock = lock_check(trace)
    f_lo, f_hi = quantization_band(cfg)

    report.write_csv(
        os.path.join(out, "spectrum.csv"),
        ["freq_hz", "psd_db"],
        zip(spec.freq_hz, spec.psd_db),
        cfg,
    )
    report.write_metrics(
        os.path.join(out, "metrics.json"),
        {
            "experiment": "higher-order",
            "n_stages": n_stages,
            "slope_db_per_dec": slope_fit_db_per_decade(spec, f_lo, f_hi),
            "slope_band_hz": [f_lo, f_hi],
            "lock": lock.as_dict(),
        },
        cfg,
    )
    report.save_lines_figure(
        os.path.join(out, "spectrum.svg"), cfg,
        spec.freq_hz[1:], [spec.psd_db[1:]], [""],
        "frequency (Hz)", "PSD (dB/Hz)",
        title=f"{n_stages}-stage cascade spectrum",
    )
    return 0 if lock.locked else 1


_DISPATCH = {
    "run": cmd_run,
    "sweep-amp": cmd_sweep_amp,
    "sweep-freq": cmd_sweep_freq,
    "ntf": cmd_ntf,
    "stf": cmd_stf,
    "compare": cmd_compare,
    "higher-order": cmd_higher_order,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vcosim",
        description="Oscillator-based sigma-delta ADC simulator and analysis harness.",
    )
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON run config (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="sweep worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        cfg.validate()
    except ConfigError as exc:
        print(f"vcosim: config error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    try:
        return _DISPATCH[args.experiment](cfg, args.out, max(args.jobs, 1))
    except ConfigError as exc:
        print(f"vcosim: config error: {exc}", file=sys.stderr)
        return 2
    except SimulationDiverged as exc:
        print(f"vcosim: simulation diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
