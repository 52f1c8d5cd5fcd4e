"""Deterministic stimulus generation at the engine rate.

Levels are given in dBV (dB relative to 1 V rms).  A tone at level L has
peak amplitude sqrt(2) * 10**(L/20); a dc stimulus uses the level as the
output voltage directly.  Generation is a pure function of the absolute
sample index so a long run can be produced in blocks without any phase
seam between them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KINDS = ("silence", "dc", "tone", "multitone")


def dbv_to_peak(level_dbv: float) -> float:
    """Peak amplitude in volts of a sine at the given dBV (rms) level."""
    if not math.isfinite(level_dbv):
        raise ConfigError(f"level must be finite, got {level_dbv}")
    return math.sqrt(2.0) * 10.0 ** (level_dbv / 20.0)


@dataclass(frozen=True)
class Stimulus:
    """A silence/dc/tone/multitone input description.

    For ``multitone`` the three tuples run in parallel, one entry per
    component.  ``tone`` and ``dc`` take single-element tuples (the
    convenience constructors below build those).
    """

    kind: str = "silence"
    amplitude_dbv: tuple = ()
    frequency_hz: tuple = ()
    phase_rad: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown stimulus kind {self.kind!r}")
        n = len(self.amplitude_dbv)
        if self.kind == "silence":
            if n:
                raise ConfigError("silence takes no components")
            return
        if self.kind in ("dc", "tone") and n != 1:
            raise ConfigError(f"{self.kind} stimulus needs exactly one component")
        if n == 0:
            raise ConfigError("multitone needs at least one component")
        if len(self.frequency_hz) != n or len(self.phase_rad) != n:
            raise ConfigError("component tuples must have equal length")
        for a in self.amplitude_dbv:
            if not math.isfinite(a):
                raise ConfigError(f"level must be finite, got {a}")
        for f in self.frequency_hz:
            if not math.isfinite(f) or f < 0:
                raise ConfigError(f"frequency must be finite and >= 0, got {f}")

    @classmethod
    def silence(cls) -> "Stimulus":
        return cls("silence")

    @classmethod
    def dc(cls, level_dbv: float) -> "Stimulus":
        return cls("dc", (level_dbv,), (0.0,), (0.0,))

    @classmethod
    def tone(
        cls, level_dbv: float, frequency_hz: float, phase_rad: float = 0.0
    ) -> "Stimulus":
        return cls("tone", (level_dbv,), (frequency_hz,), (phase_rad,))

    @classmethod
    def multitone(cls, components) -> "Stimulus":
        amps, freqs, phases = zip(*components)
        return cls("multitone", tuple(amps), tuple(freqs), tuple(phases))


def generate(
    stim: Stimulus,
    rate_hz: float,
    n: int,
    start_index: int = 0,
) -> np.ndarray:
    """Render ``n`` samples of the stimulus starting at ``start_index``.

    The same (stimulus, rate) always yields the same samples for a given
    index range, so concatenated blocks are seamless.
    """
    if rate_hz <= 0:
        raise ConfigError(f"rate must be positive, got {rate_hz}")
    out = np.zeros(n, dtype=np.float64)
    if stim.kind == "silence":
        return out
    if stim.kind == "dc":
        out += 10.0 ** (stim.amplitude_dbv[0] / 20.0)
        return out
    idx = start_index + np.arange(n, dtype=np.float64)
    for level, f, ph in zip(stim.amplitude_dbv, stim.frequency_hz, stim.phase_rad):
        if f >= rate_hz / 2:
            raise ConfigError(
                f"component at {f} Hz is not below half the {rate_hz} Hz rate"
            )
        out += dbv_to_peak(level) * np.sin(2.0 * np.pi * f / rate_hz * idx + ph)
    return out

def block_source(x, rate_hz: float, n_steps: int, block_steps: int):
    """Yield (start_index, samples) blocks of an input sequence.

    ``x`` may be a materialized array (sliced) or a :class:`Stimulus`
    (generated on the fly), which keeps long engine-rate runs from ever
    holding the full input in memory.  Block boundaries are deterministic
    functions of ``block_steps`` alone.
    """
    if isinstance(x, Stimulus):
        for start in range(0, n_steps, block_steps):
            n = min(block_steps, n_steps - start)
            yield start, generate(x, rate_hz, n, start_index=start)
        return
    arr = np.asarray(x, dtype=np.float64)
    if len(arr) < n_steps:
        raise ConfigError(f"input has {len(arr)} samples; need {n_steps}")
    for start in range(0, n_steps, block_steps):
        yield start, arr[start : min(start + block_steps, n_steps)]
