"""Run configuration: defaults, JSON schema (version 1), validation, digest.

A config fully determines a run; together with the seed it pins every output
byte.  The JSON form is flat-by-section and documented in the README.  All
validation errors raise :class:`~vcosim.errors.ConfigError`, which the CLI
maps to exit code 2.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .oscillator import DacModel, NoiseParams, OscillatorParams
from .signal_gen import Stimulus

SCHEMA_VERSION = 1

SAMPLER_MODES = ("off", "per-word", "per-bit")

_TOP_KEYS = {
    "schema", "fs_hz", "oversample", "word_bits", "pseudo_differential",
    "seed", "n_samples", "fft_len", "full_scale_v", "dither_lsb",
    "n_stages", "stage1", "stage2", "dac", "sampler", "stimulus",
}


def _default_stage1() -> OscillatorParams:
    # Input VCO: 21-stage ring at 6 MHz with 7 counted phases
    # -> 42e6 effective counts/s at rest.
    return OscillatorParams(f0_hz=6e6, k_tune_hz_per_v=6e6, states_per_cycle=7)


def _default_stage2() -> OscillatorParams:
    # Feedback DCO: 16-tap differential ring at 1.2 MHz, 32 states/cycle.
    # With the DAC LSB below this gives 1.2e6 counts/s per LSB of control.
    return OscillatorParams(
        f0_hz=1.2e6, k_tune_hz_per_v=3.75e6, states_per_cycle=32, taps=16
    )


@dataclass(frozen=True)
class SamplerConfig:
    """Asynchronous-sampler settings for the stage-2 Gray counter."""

    mode: str = "per-word"
    aperture_s: float | None = None  # None -> one engine step

    def __post_init__(self) -> None:
        if self.mode not in SAMPLER_MODES:
            raise ConfigError(f"sampler mode must be one of {SAMPLER_MODES}")
        if self.aperture_s is not None and not self.aperture_s >= 0:
            raise ConfigError("aperture_s must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    fs_hz: float = 3.072e6
    oversample: int = 512           # engine steps per output sample
    word_bits: int = 6
    pseudo_differential: bool = True
    seed: int = 0
    n_samples: int = 524288
    fft_len: int = 16384
    full_scale_v: float = 0.85
    dither_lsb: float = 0.05        # held Gaussian dither at the stage-2 input
    n_stages: int = 2
    stage1: OscillatorParams = field(default_factory=_default_stage1)
    stage2: OscillatorParams = field(default_factory=_default_stage2)
    dac: DacModel = field(default_factory=DacModel)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    stimulus: Stimulus = field(default_factory=lambda: Stimulus.tone(-36.0, 1e3))

    # -- derived quantities -------------------------------------------------
    @property
    def dt_s(self) -> float:
        """Engine step: 1 / (oversample * fs)."""
        return 1.0 / (self.oversample * self.fs_hz)

    @property
    def k_vco_eff(self) -> float:
        """Stage-1 count-rate slope, counts/s per volt."""
        return self.stage1.k_eff_hz_per_v

    @property
    def k_dco_eff(self) -> float:
        """Stage-2 count-rate step, counts/s per feedback LSB."""
        return self.stage2.k_eff_hz_per_v * self.dac.v_lsb

    @property
    def loop_gain(self) -> float:
        """Dimensionless inner-loop gain g = k_dco_eff / fs (NTF pole 1 - g)."""
        return self.k_dco_eff / self.fs_hz

    @property
    def rest_rate_counts(self) -> float:
        """Stage-1 rest count rate per output sample, fe1 / fs."""
        return self.stage1.states_per_cycle * self.stage1.f0_hz / self.fs_hz

    @property
    def aperture_s(self) -> float:
        a = self.sampler.aperture_s
        return self.dt_s if a is None else a

    def validate(self) -> "SimConfig":
        if not self.fs_hz > 0:
            raise ConfigError("fs_hz must be > 0")
        k = self.oversample
        if k < 4 or k & (k - 1):
            raise ConfigError(f"oversample must be a power of two >= 4, got {k}")
        if not 2 <= self.word_bits <= 16:
            raise ConfigError("word_bits must be in [2, 16]")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if self.fft_len < 16 or self.fft_len & (self.fft_len - 1):
            raise ConfigError("fft_len must be a power of two >= 16")
        if not self.full_scale_v > 0:
            raise ConfigError("full_scale_v must be > 0")
        if self.dither_lsb < 0:
            raise ConfigError("dither_lsb must be >= 0")
        if self.n_stages < 2:
            raise ConfigError("n_stages must be >= 2")
        if self.dac.n_bits != self.word_bits:
            raise ConfigError("dac.n_bits must match word_bits")
        taps = self.stage2.taps
        if taps is None:
            raise ConfigError("stage2 needs an explicit tap count")
        if taps != 1 << (self.word_bits - 2):
            raise ConfigError(
                f"stage2.taps must be 2^(word_bits-2) = {1 << (self.word_bits - 2)}"
            )
        if self.stage2.states_per_cycle != 2 * taps:
            raise ConfigError("stage2.states_per_cycle must be 2 * taps")
        # Counter-advance margin: < 1 state per engine step with 4x headroom,
        # checked at the largest control excursion either stage can see.
        f1_max = self.stage1.f0_hz + abs(self.stage1.k_tune_hz_per_v) * self.full_scale_v
        v_max = max(abs(self.dac.offset_v),
                    abs(self.dac.offset_v + ((1 << self.dac.n_bits) - 1) * self.dac.v_lsb))
        f2_max = self.stage2.f0_hz + abs(self.stage2.k_tune_hz_per_v) * v_max
        worst = max(self.stage1.states_per_cycle * f1_max,
                    self.stage2.states_per_cycle * f2_max)
        if worst * self.dt_s > 0.25:
            raise ConfigError(
                f"dt * max effective frequency = {worst * self.dt_s:.3f} exceeds 0.25; "
                "raise oversample or lower the oscillator rates"
            )
        if not 0.0 < self.loop_gain < 2.0:
            raise ConfigError(
                f"k_dco_eff/fs = {self.loop_gain} outside (0, 2): loop would be unstable"
            )
        for i, (f, _a) in enumerate(
            zip(self.stimulus.frequency_hz, self.stimulus.amplitude_dbv)
        ):
            if f >= self.fs_hz / 2:
                raise ConfigError(
                    f"stimulus component {i} at {f} Hz is not below fs/2"
                )
        return self


# -- JSON round trip ---------------------------------------------------------

def _osc_to_dict(p: OscillatorParams) -> dict:
    d = {
        "f0_hz": p.f0_hz,
        "k_tune_hz_per_v": p.k_tune_hz_per_v,
        "states_per_cycle": p.states_per_cycle,
        "poly_nl": list(p.poly_nl),
        "noise": {
            "white_frac_density": p.noise.white_frac_density,
            "flicker_corner_hz": p.noise.flicker_corner_hz,
        },
    }
    if p.taps is not None:
        d["taps"] = p.taps
    return d


def _osc_from_dict(d: dict, where: str) -> OscillatorParams:
    allowed = {"f0_hz", "k_tune_hz_per_v", "states_per_cycle", "taps", "poly_nl", "noise"}
    _reject_unknown(d, allowed, where)
    noise = d.get("noise", {})
    _reject_unknown(noise, {"white_frac_density", "flicker_corner_hz"}, where + ".noise")
    try:
        return OscillatorParams(
            f0_hz=float(d["f0_hz"]),
            k_tune_hz_per_v=float(d["k_tune_hz_per_v"]),
            states_per_cycle=int(d["states_per_cycle"]),
            taps=int(d["taps"]) if "taps" in d else None,
            poly_nl=tuple(float(c) for c in d.get("poly_nl", ())),
            noise=NoiseParams(
                white_frac_density=float(noise.get("white_frac_density", 0.0)),
                flicker_corner_hz=float(noise.get("flicker_corner_hz", 0.0)),
            ),
        )
    except KeyError as e:
        raise ConfigError(f"{where}: missing field {e.args[0]!r}") from None


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def config_to_dict(cfg: SimConfig) -> dict:
    """Plain-JSON form of a config (inverse of :func:`config_from_dict`)."""
    stim = cfg.stimulus
    return {
        "schema": SCHEMA_VERSION,
        "fs_hz": cfg.fs_hz,
        "oversample": cfg.oversample,
        "word_bits": cfg.word_bits,
        "pseudo_differential": cfg.pseudo_differential,
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "fft_len": cfg.fft_len,
        "full_scale_v": cfg.full_scale_v,
        "dither_lsb": cfg.dither_lsb,
        "n_stages": cfg.n_stages,
        "stage1": _osc_to_dict(cfg.stage1),
        "stage2": _osc_to_dict(cfg.stage2),
        "dac": {
            "n_bits": cfg.dac.n_bits,
            "v_lsb": cfg.dac.v_lsb,
            "offset_v": cfg.dac.offset_v,
            "bit_weight_error": list(cfg.dac.bit_weight_error),
        },
        "sampler": {
            "mode": cfg.sampler.mode,
            "aperture_s": cfg.sampler.aperture_s,
        },
        "stimulus": {
            "kind": stim.kind,
            "amplitude_dbv": list(stim.amplitude_dbv),
            "frequency_hz": list(stim.frequency_hz),
            "phase_rad": list(stim.phase_rad),
        },
    }


def config_from_dict(d: dict) -> SimConfig:
    _reject_unknown(d, _TOP_KEYS, "config")
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigError(
            f"config must declare \"schema\": {SCHEMA_VERSION} (got {d.get('schema')!r})"
        )
    base = SimConfig()
    kwargs = {}
    for name, conv in (
        ("fs_hz", float), ("oversample", int), ("word_bits", int),
        ("pseudo_differential", bool), ("seed", int), ("n_samples", int),
        ("fft_len", int), ("full_scale_v", float), ("dither_lsb", float),
        ("n_stages", int),
    ):
        if name in d:
            kwargs[name] = conv(d[name])
    if "stage1" in d:
        kwargs["stage1"] = _osc_from_dict(d["stage1"], "stage1")
    if "stage2" in d:
        kwargs["stage2"] = _osc_from_dict(d["stage2"], "stage2")
    if "dac" in d:
        dac = d["dac"]
        _reject_unknown(dac, {"n_bits", "v_lsb", "offset_v", "bit_weight_error"}, "dac")
        kwargs["dac"] = DacModel(
            n_bits=int(dac.get("n_bits", base.dac.n_bits)),
            v_lsb=float(dac.get("v_lsb", base.dac.v_lsb)),
            offset_v=float(dac.get("offset_v", base.dac.offset_v)),
            bit_weight_error=tuple(float(e) for e in dac.get("bit_weight_error", ())),
        )
    if "sampler" in d:
        s = d["sampler"]
        _reject_unknown(s, {"mode", "aperture_s"}, "sampler")
        ap = s.get("aperture_s")
        kwargs["sampler"] = SamplerConfig(
            mode=str(s.get("mode", "per-word")),
            aperture_s=None if ap is None else float(ap),
        )
    if "stimulus" in d:
        st = d["stimulus"]
        _reject_unknown(
            st, {"kind", "amplitude_dbv", "frequency_hz", "phase_rad"}, "stimulus"
        )
        kwargs["stimulus"] = _stimulus_from_dict(st)
    return replace(base, **kwargs).validate()


def _stimulus_from_dict(st: dict) -> Stimulus:
    kind = st.get("kind", "tone")
    amps = st.get("amplitude_dbv", [])
    freqs = st.get("frequency_hz", [])
    phases = st.get("phase_rad", None)

    def as_tuple(x):
        return tuple(float(v) for v in (x if isinstance(x, (list, tuple)) else [x]))

    amps = as_tuple(amps) if amps != [] else ()
    freqs = as_tuple(freqs) if freqs != [] else ()
    if phases is None:
        phases = (0.0,) * len(freqs)
    else:
        phases = as_tuple(phases)
    if kind == "silence":
        return Stimulus.silence()
    return Stimulus(kind=kind, amplitude_dbv=amps, frequency_hz=freqs, phase_rad=phases)


def load_config(path) -> SimConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def config_digest(cfg: SimConfig) -> str:
    """Short stable hash of the canonical JSON form, echoed into every CSV."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
