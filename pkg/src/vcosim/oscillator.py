"""Ring-oscillator phase integrators, tap enumeration, and the feedback DAC.

Phase is tracked in cycles.  A ring with S internal states per cycle makes
its counter advance at an effective rate of S * f counts per second, which
is the quantity that sets the resolution of the stage.  Tuning curves are
linear by default with optional polynomial terms; the frequency is clamped
at a small positive floor so the phase accumulator can never run backwards,
and any clamping is reported as an overload.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError

# Frequencies below this are physically meaningless for a running ring;
# hitting the floor means the control input drove the stage out of range.
FREQ_FLOOR_HZ = 1.0


@dataclass(frozen=True)
class NoiseParams:
    """Oscillator frequency-noise strengths (both zero means noise off).

    ``white_frac_density`` is the square root of the one-sided PSD of the
    fractional frequency deviation, in 1/sqrt(Hz).  ``flicker_corner_hz``
    places the 1/f corner relative to that white floor.
    """

    white_frac_density: float = 0.0
    flicker_corner_hz: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.white_frac_density > 0.0


@dataclass(frozen=True)
class OscillatorParams:
    f0_hz: float
    k_tune_hz_per_v: float
    states_per_cycle: int
    taps: int | None = None
    poly_nl: tuple = ()
    noise: NoiseParams = NoiseParams()

    def __post_init__(self) -> None:
        if self.f0_hz < 0:
            raise ConfigError(f"rest frequency must be >= 0, got {self.f0_hz}")
        if self.states_per_cycle < 1:
            raise ConfigError("states_per_cycle must be >= 1")
        if self.taps is not None and (self.taps < 2 or self.taps & (self.taps - 1)):
            raise ConfigError(f"tap count must be a power of two >= 2, got {self.taps}")

    @property
    def k_eff_hz_per_v(self) -> float:
        """Tuning slope of the effective count rate, S * k_tune."""
        return self.states_per_cycle * self.k_tune_hz_per_v


class FrequencyNoise:
    """Streaming fractional-frequency noise: white plus approximate 1/f.

    The flicker part is the usual bank of one-pole low-pass sections with
    octave-spaced poles; section j is driven with variance proportional to
    its pole frequency, which makes the summed PSD fall as 1/f between the
    lowest and highest pole.
    """

    def __init__(self, params: NoiseParams, rate_hz: float, rng: np.random.Generator):
        self.params = params
        self.rate_hz = rate_hz
        self.rng = rng
        self.white_sigma = params.white_frac_density * math.sqrt(rate_hz / 2.0)
        self._sections: list[tuple[float, float, np.ndarray]] = []
        if params.flicker_corner_hz > 0.0 and params.white_frac_density > 0.0:
            f_hi = rate_hz / 16.0
            f_lo = max(0.25, f_hi / 2 ** 26)
            beta = 4.0 * math.pi * math.log(2.0) * (
                params.white_frac_density ** 2 * params.flicker_corner_hz / rate_hz
            )
            fj = f_hi
            while fj > f_lo:
                a = math.exp(-2.0 * math.pi * fj / rate_hz)
                self._sections.append((a, math.sqrt(beta * fj), np.zeros(1)))
                fj /= 2.0

    def sample(self, n: int) -> np.ndarray:
        """Next n fractional-frequency samples (stateful, deterministic)."""
        y = self.white_sigma * self.rng.standard_normal(n)
        for i, (a, b, zi) in enumerate(self._sections):
            x = b * self.rng.standard_normal(n)
            out, zf = lfilter([1.0], [1.0, -a], x, zi=zi)
            self._sections[i] = (a, b, zf)
            y += out
        return y


@dataclass
class OscillatorState:
    """Mutable phase accumulator for the single-step API."""

    theta_cycles: float = 0.0
    overload_count: int = 0
    noise: FrequencyNoise | None = None


def poly_tuning_term(params: OscillatorParams, v):
    """v plus the configured nonlinear terms; element i applies to v**(i+2)."""
    out = v
    for i, c in enumerate(params.poly_nl):
        out = out + c * v ** (i + 2)
    return out


def instantaneous_frequency(
    params: OscillatorParams, v_ctrl: float, state: OscillatorState | None = None
) -> float:
    """Oscillation frequency in Hz at the given control voltage.

    Clamps at FREQ_FLOOR_HZ; a clamp increments ``state.overload_count``
    when a state is supplied (flagged, never fatal).
    """
    f = params.f0_hz + params.k_tune_hz_per_v * poly_tuning_term(params, v_ctrl)
    if f < FREQ_FLOOR_HZ:
        if state is not None:
            state.overload_count += 1
        return FREQ_FLOOR_HZ
    return f


def advance(state: OscillatorState, f_inst_hz: float, dt_s: float) -> float:
    """Integrate phase one engine step: theta += f * dt."""
    state.theta_cycles += f_inst_hz * dt_s
    return state.theta_cycles


def advance_with_noise(
    state: OscillatorState, params: OscillatorParams, f_inst_hz: float, dt_s: float
) -> float:
    """Like :func:`advance` but adds one fractional-frequency noise sample."""
    dtheta = f_inst_hz * dt_s
    if state.noise is not None:
        dtheta += params.f0_hz * float(state.noise.sample(1)[0]) * dt_s
    state.theta_cycles += dtheta
    return state.theta_cycles


def counter_view(theta_cycles: float, states_per_cycle: int, width: int) -> int:
    """State count floor(S * theta) wrapped to a width-bit counter word."""
    return math.floor(states_per_cycle * theta_cycles) % (1 << width)


def tap_waveforms(theta_cycles: float, m: int, differential: bool = True) -> np.ndarray:
    """Logic levels of the m taps of a ring oscillator at phase theta.

    With 2m states per period, tap k of a differential ring is a square
    wave delayed by k states: phi_k = 1 iff (s - k) mod 2m < m for state
    index s = floor(2m * theta).  The non-differential view of the same
    ring sees every odd tap through an inverting stage; for even m the two
    conventions produce identical Gray encoder outputs because every XOR
    parity in the encoder spans an even number of inverted taps.
    """
    if m < 2 or m & (m - 1):
        raise ConfigError(f"tap count must be a power of two >= 2, got {m}")
    s = math.floor(2 * m * theta_cycles) % (2 * m)
    k = np.arange(m)
    phi = (((s - k) % (2 * m)) < m).astype(np.uint8)
    if not differential:
        phi ^= (k & 1).astype(np.uint8)
    return phi


@dataclass(frozen=True)
class DacModel:
    """Binary-weighted DAC: per-bit weight errors model R-2R mismatch.

    The default offset puts the loop's rest point at code 27 rather than
    midscale.  The two clipping directions are not symmetric in input
    volts: the feedback word is held for a full output period while the
    running counter keeps sweeping, so an input excursion costs the top
    of the code range both the servo shift and the extra intra-period
    sweep, while at the bottom the shrinking sweep gives part of that
    back.  Code 27 equalizes the overload onset of the two edges.
    """

    n_bits: int = 6
    v_lsb: float = 0.01
    offset_v: float = -0.24
    bit_weight_error: tuple = ()

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ConfigError("n_bits must be >= 1")
        if self.bit_weight_error and len(self.bit_weight_error) != self.n_bits:
            raise ConfigError(
                f"need {self.n_bits} bit weight errors, got {len(self.bit_weight_error)}"
            )


def dac_output(model: DacModel, code: int) -> float:
    """Output voltage for one input code."""
    if not 0 <= code < (1 << model.n_bits):
        raise ValueError(f"code {code} out of range for {model.n_bits} bits")
    err = model.bit_weight_error or (0.0,) * model.n_bits
    v = model.offset_v
    for b in range(model.n_bits):
        if (code >> b) & 1:
            v += (1 << b) * model.v_lsb * (1.0 + err[b])
    return v


def dac_table(model: DacModel) -> np.ndarray:
    """All 2**n_bits output voltages, indexed by code."""
    return np.array([dac_output(model, c) for c in range(1 << model.n_bits)])


def dac_inl_lsb(model: DacModel) -> np.ndarray:
    """Deviation of each code's output from the nominal line, in LSB."""
    table = dac_table(model)
    nominal = model.offset_v + np.arange(1 << model.n_bits) * model.v_lsb
    return (table - nominal) / model.v_lsb


def state_rate_table(
    params: OscillatorParams, dac: DacModel, dt_s: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-code state increments per engine step, plus clamp flags.

    Folds DAC voltage, tuning curve, frequency clamp, states-per-cycle and
    the engine step into a single lookup: the hot loop only indexes this.
    """
    volts = dac_table(dac)
    f = params.f0_hz + params.k_tune_hz_per_v * poly_tuning_term(params, volts)
    clamped = f < FREQ_FLOOR_HZ
    f = np.maximum(f, FREQ_FLOOR_HZ)
    return params.states_per_cycle * f * dt_s, clamped
