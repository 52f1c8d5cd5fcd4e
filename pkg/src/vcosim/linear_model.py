"""Discrete-time linear model of the loop: symbolic reduction and NTF/STF.

The sampled-data model of the modulator is a chain of delaying accumulators
(the oscillators), each preceded by a subtraction of the fed-back word, with
additive quantization noise at the final counter and a first difference at
the output.  This module builds that block diagram symbolically, solves the
loop, and also provides fast numeric evaluation of the resulting transfer
functions.

Conventions: ``zi`` stands for z**-1; stage gains are the dimensionless
g_i = k_eff_i / fs of every in-loop oscillator (the input oscillator sits
outside the loop and only scales the STF).
"""
from __future__ import annotations

import numpy as np
import sympy as sp

zi = sp.symbols("zi")  # z**-1


def _stage_gain_symbols(n_stages: int):
    # Gains of the in-loop stages 2..N.
    return sp.symbols(f"g2:{n_stages + 1}", positive=True)


def solve_loop(n_stages: int = 2):
    """Solve the linear loop; returns (W/Q, W/U, gain symbols).

    Block equations, with I(zi) = zi/(1 - zi) the delaying accumulator and
    U the count rate entering the first subtractor::

        C_2 = I * g_2 * (U   - W)
        C_k = I * g_k * (C_{k-1} - W)      k = 3..N
        W   = C_N + Q

    The output first difference is applied by the callers that want the
    full NTF/STF rather than the loop transfer.
    """
    if n_stages < 2:
        raise ValueError("need at least one in-loop stage")
    gains = _stage_gain_symbols(n_stages)
    I = zi / (1 - zi)
    U, Q, W = sp.symbols("U Q W")
    prev = U
    for g in gains:
        prev = I * g * (prev - W)
    w_solved = sp.solve(sp.Eq(W, prev + Q), W)[0]
    # The loop is linear in U and Q, so the partial derivatives are the
    # transfer functions regardless of how sympy factored the solution.
    w_over_q = sp.cancel(sp.together(sp.diff(w_solved, Q)))
    w_over_u = sp.cancel(sp.together(sp.diff(w_solved, U)))
    return w_over_q, w_over_u, gains


def ntf_symbolic(n_stages: int = 2):
    """Full output NTF: first difference times the loop's W/Q."""
    w_over_q, _, gains = solve_loop(n_stages)
    return sp.cancel((1 - zi) * w_over_q), gains


def ntf_reference_second_order(g):
    """The closed-form second-order NTF the reduction must reproduce."""
    return (1 - zi) / (1 - (1 - g) * zi) * (1 - zi)


def ntf_as_polys(expr, gains, gain_values):
    """Numerator/denominator coefficient arrays in zi, denominator monic.

    Coefficients are ordered constant-first (index = power of z**-1).
    """
    subbed = expr.subs(dict(zip(gains, [sp.Rational(str(v)) for v in gain_values])))
    num, den = sp.fraction(sp.cancel(sp.together(subbed)))
    pnum = sp.Poly(sp.expand(num), zi)
    pden = sp.Poly(sp.expand(den), zi)
    lead = pden.all_coeffs()[-1]  # constant term of den -> normalize to 1
    ncoef = [sp.nsimplify(c) / lead for c in reversed(pnum.all_coeffs())]
    dcoef = [sp.nsimplify(c) / lead for c in reversed(pden.all_coeffs())]
    return (
        np.array([float(c) for c in ncoef]),
        np.array([float(c) for c in dcoef]),
    )


def ntf_coefficients(gain_values) -> tuple[np.ndarray, np.ndarray]:
    """Numeric NTF polynomial coefficients for an N-stage loop.

    ``gain_values`` holds g_i = k_eff_i / fs for in-loop stages, inner to
    outer; its length sets the loop order (numerator (1 - zi)**(len+1)).
    """
    n_stages = len(gain_values) + 1
    expr, gains = ntf_symbolic(n_stages)
    return ntf_as_polys(expr, gains, gain_values)


def _eval_poly(coeffs: np.ndarray, z_inv: np.ndarray) -> np.ndarray:
    # coeffs are constant-first in zi
    acc = np.zeros_like(z_inv)
    for c in reversed(coeffs):
        acc = acc * z_inv + c
    return acc


def ntf_magnitude(f_hz, fs_hz: float, gain_values) -> np.ndarray:
    """|NTF| at the given frequencies (linear scale)."""
    f = np.atleast_1d(np.asarray(f_hz, dtype=float))
    num, den = ntf_coefficients(list(gain_values))
    z_inv = np.exp(-2j * np.pi * f / fs_hz)
    mag = np.abs(_eval_poly(num, z_inv) / _eval_poly(den, z_inv))
    return mag if np.ndim(f_hz) else float(mag[0])


NTF_DB_FLOOR = -300.0


def ntf_magnitude_db(f_hz, fs_hz: float, gain_values) -> np.ndarray:
    """|NTF| in dB, clamped at the -300 dB floor (double zero at DC)."""
    mag = ntf_magnitude(f_hz, fs_hz, gain_values)
    return 20.0 * np.log10(np.maximum(mag, 10.0 ** (NTF_DB_FLOOR / 20.0)))


def ntf_poles(gain_values) -> np.ndarray:
    """Poles in the z plane; all must sit inside the unit circle."""
    _, den = ntf_coefficients(list(gain_values))
    # den is constant-first in zi; as a polynomial in z it reverses.
    return np.roots(den)


def stf_magnitude(f_hz, fs_hz: float, k_vco_eff: float) -> np.ndarray:
    """Low-frequency signal gain (counts/sample per volt): k_vco/fs * sinc^2.

    The input oscillator integrates continuously and the output difference
    spans one sample period, so the signal path is a cascaded pair of
    sample-wide averaging windows.
    """
    f = np.asarray(f_hz, dtype=float)
    return (k_vco_eff / fs_hz) * np.sinc(f / fs_hz) ** 2


def stf_magnitude_db(f_hz, fs_hz: float, k_vco_eff: float) -> np.ndarray:
    return 20.0 * np.log10(
        np.maximum(stf_magnitude(f_hz, fs_hz, k_vco_eff), 10.0 ** (NTF_DB_FLOOR / 20.0))
    )


def ntf_db(k_dco_eff_hz: float, fs_hz: float, f_hz):
    """Second-order NTF magnitude in dB for one in-loop gain (Hz arguments).

    Warns (without raising) when k_dco/fs leaves (0, 2) and the pole exits
    the unit circle.
    """
    g = k_dco_eff_hz / fs_hz
    if not 0.0 < g < 2.0:
        import warnings

        warnings.warn(
            f"k_dco/fs = {g:.3f} outside (0, 2): NTF pole outside the unit circle",
            stacklevel=2,
        )
    return ntf_magnitude_db(f_hz, fs_hz, [g])


def stf_db(k_vco_eff_hz_per_v: float, fs_hz: float, f_hz):
    """Eq-form STF magnitude in dB (Hz arguments, matching ntf_db)."""
    return stf_magnitude_db(f_hz, fs_hz, k_vco_eff_hz_per_v)
