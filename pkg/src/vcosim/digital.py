"""Bit-accurate digital elements of the counter feedback path.

Everything in here operates on small integers and is meant to be exhaustively
testable: Gray encode/decode, the XOR network that reads a Gray word off
ring-oscillator taps, counter width extension, modulo subtraction, the
sampling register with a metastability window, and the first difference that
turns sampled phase counts into rate samples.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

BINARY = "binary"
GRAY = "gray"


@dataclass(frozen=True)
class DigitalWord:
    """An integer constrained to a bit width and tagged with its encoding."""

    value: int
    width: int
    encoding: str = BINARY

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.encoding not in (BINARY, GRAY):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(
                f"value {self.value} does not fit in {self.width} bits"
            )

    def bit(self, i: int) -> int:
        return (self.value >> i) & 1


def gray_encode_int(x: int) -> int:
    """Binary-reflected Gray code of a nonnegative integer."""
    if x < 0:
        raise ValueError("negative value has no Gray code")
    return x ^ (x >> 1)


def gray_decode_int(g: int) -> int:
    """Inverse of :func:`gray_encode_int` (XOR prefix scan from the MSB)."""
    if g < 0:
        raise ValueError("negative value has no Gray code")
    x = 0
    while g:
        x ^= g
        g >>= 1
    return x


def binary_to_gray(word: DigitalWord) -> DigitalWord:
    if word.encoding != BINARY:
        raise ValueError("binary_to_gray needs a binary-encoded word")
    return DigitalWord(gray_encode_int(word.value), word.width, GRAY)


def gray_to_binary(word: DigitalWord) -> DigitalWord:
    if word.encoding != GRAY:
        raise ValueError("gray_to_binary needs a Gray-encoded word")
    return DigitalWord(gray_decode_int(word.value), word.width, BINARY)


def mod_subtract(x: DigitalWord, w: DigitalWord) -> DigitalWord:
    """(x - w) on the wrapped number circle: (x + 2**B - w) mod 2**B.

    Matches an unbounded integer subtraction whenever the true difference
    lies in [0, 2**B), i.e. as long as the minuend counter has not lapped
    the subtrahend more than once.
    """
    if x.width != w.width:
        raise ValueError(f"width mismatch: {x.width} vs {w.width}")
    if x.encoding != BINARY or w.encoding != BINARY:
        raise ValueError("mod_subtract operates on binary-encoded words")
    m = 1 << x.width
    return DigitalWord((x.value + m - w.value) % m, x.width, BINARY)


def gray_from_phases(phases, width: int) -> DigitalWord:
    """Combine 2**width oscillator taps into a Gray word with XOR parities.

    Bit n (for n = 0 .. width-3) is the parity of taps 2**n * (2j - 1),
    j = 1 .. 2**width / 2**(n+1).  The two MSBs come from single tap pairs:
    bit width-2 = phi[M/4] ^ phi[3M/4] and bit width-1 = phi[M/2] ^ phi[0].
    Walking the physical tap states in order yields a cyclic unit-Hamming
    sequence; whether the decoded value counts up or down depends on the
    tap ordering handed in (see tap_waveforms).
    """
    phases = [int(p) & 1 for p in phases]
    m = len(phases)
    if m < 4 or m & (m - 1):
        raise ValueError(f"need a power-of-two tap count >= 4, got {m}")
    if (1 << width) != m:
        raise ValueError(f"width {width} does not match {m} taps")

    bits = []
    for n in range(width - 2):
        step = 1 << n
        parity = 0
        for k in range(step, m, 2 * step):
            parity ^= phases[k]
        bits.append(parity)
    bits.append(phases[m // 4] ^ phases[3 * m // 4])
    bits.append(phases[m // 2] ^ phases[0])

    value = 0
    for i, b in enumerate(bits):
        value |= b << i
    return DigitalWord(value, width, GRAY)


class GrayWidthExtender:
    """Track wraps of a narrow Gray counter to synthesize a wider one.

    The hardware analogue is a pair of toggle registers seeded at start-up:
    the low bits of the wide word follow the input, while the wrapped cycle
    count supplies the upper bits.  The output equals the Gray code of the
    total transition count modulo 2**width_out, up to a constant offset
    fixed by the word seen at reset.
    """

    def __init__(self, width_in: int = 4, width_out: int = 6):
        if width_out <= width_in:
            raise ValueError("width_out must exceed width_in")
        self.width_in = width_in
        self.width_out = width_out
        self._count: int | None = None

    def reset(self, gc: DigitalWord) -> DigitalWord:
        self._require_gray(gc)
        self._count = gray_decode_int(gc.value)
        return self.word()

    def step(self, gc: DigitalWord) -> DigitalWord:
        """Advance with the next Gray word; input must move by one state."""
        if self._count is None:
            raise RuntimeError("extender used before reset")
        self._require_gray(gc)
        m = 1 << self.width_in
        new = gray_decode_int(gc.value)
        delta = (new - self._count) % m
        if delta == 0:
            return self.word()
        if delta == 1:
            self._count += 1
        elif delta == m - 1:
            self._count -= 1
        else:
            raise RuntimeError(
                f"input jumped {delta} states; extender called out of order"
            )
        return self.word()

    def word(self) -> DigitalWord:
        full = 1 << self.width_out
        return DigitalWord(
            gray_encode_int(self._count % full), self.width_out, GRAY
        )

    def _require_gray(self, gc: DigitalWord) -> None:
        if gc.encoding != GRAY or gc.width != self.width_in:
            raise ValueError(
                f"expected a {self.width_in}-bit Gray word, got {gc}"
            )


def first_difference(words, width: int) -> np.ndarray:
    """Signed per-sample increments of a wrapping counter sequence.

    y[n] = ((w[n] - w[n-1] + 2**(B-1)) mod 2**B) - 2**(B-1), with w[-1] = 0.
    The decode is unambiguous while the true increment per sample stays
    inside [-2**(B-1), 2**(B-1)).
    """
    w = np.asarray(words, dtype=np.int64)
    if w.ndim != 1:
        raise ValueError("expected a 1-d sequence of counter words")
    full = 1 << width
    half = full >> 1
    d = np.diff(w, prepend=np.int64(0))
    return ((d + half) % full) - half


@dataclass(frozen=True)
class CounterTrajectory:
    """Piecewise-constant word history around a sampling instant.

    ``times`` holds transition instants in ascending order; ``words[i]`` is
    the value that becomes visible at ``times[i]``.  ``initial`` is the value
    before the first transition.
    """

    initial: DigitalWord
    times: tuple = ()
    words: tuple = ()

    def __post_init__(self) -> None:
        if len(self.times) != len(self.words):
            raise ValueError("times and words must have equal length")
        if any(t1 >= t2 for t1, t2 in zip(self.times, self.times[1:])):
            raise ValueError("transition times must be strictly ascending")

    def word_at(self, t: float) -> DigitalWord:
        i = bisect_right(self.times, t)
        return self.initial if i == 0 else self.words[i - 1]


PER_WORD = "per-word"
PER_BIT = "per-bit"


@dataclass
class SamplerModel:
    """Sampling register with a finite decision aperture.

    A transition landing inside the half-open window (t_s - aperture, t_s]
    leaves the register holding either the old or the new word.  In
    ``per-word`` mode the whole word resolves one way (the safe case for a
    Gray input, where old and new differ in a single bit anyway).  In
    ``per-bit`` mode each differing bit resolves independently, which is how
    a plain binary counter produces multi-LSB glitches.
    """

    aperture_s: float
    mode: str = PER_WORD
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )
    aperture_events: int = 0
    resolved_events: int = 0

    def __post_init__(self) -> None:
        if self.aperture_s < 0:
            raise ValueError("aperture must be nonnegative")
        if self.mode not in (PER_WORD, PER_BIT):
            raise ValueError(f"unknown sampler mode {self.mode!r}")

    def sample(self, trajectory: CounterTrajectory, t_s: float) -> DigitalWord:
        new = trajectory.word_at(t_s)
        lo = t_s - self.aperture_s
        # transitions with lo < t <= t_s
        i0 = bisect_right(trajectory.times, lo)
        i1 = bisect_right(trajectory.times, t_s)
        n_hits = i1 - i0
        if n_hits == 0:
            return new
        if n_hits > 1:
            # More than one state boundary inside the aperture: the window is
            # too wide for the counter rate.  Recorded, not fatal; resolve
            # between the last two values.
            self.aperture_events += 1
        self.resolved_events += 1
        old = (
            trajectory.initial if i1 - 1 == 0 else trajectory.words[i1 - 2]
        )
        if self.mode == PER_WORD:
            return old if self.rng.integers(2) == 0 else new
        diff = old.value ^ new.value
        mask = 0
        for i in range(new.width):
            if (diff >> i) & 1 and self.rng.integers(2):
                mask |= 1 << i
        return DigitalWord(old.value ^ mask, new.width, new.encoding)


def sample(
    trajectory: CounterTrajectory, t_s: float, model: SamplerModel
) -> DigitalWord:
    """Sample a counter trajectory at t_s through a metastability model."""
    return model.sample(trajectory, t_s)
