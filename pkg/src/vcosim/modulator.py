"""The full modulator engine: oscillators, counters, feedback, sampling.

One branch is a chain: input oscillator -> counter C1 -> modulo subtractor
-> DAC+DCO (stage 2) -> ... -> final stage counter, sampled at fs through
the Gray path, fed back to every subtractor, first-differenced into the
output.  Two mirrored branches (input negated) form the pseudo-differential
system; their difference is D_out.

Engine scheme: fixed step dt = 1/(K*fs).  Within one output period the
feedback word is constant (it changes one engine step after each sampling
edge), so each stage's phase advance over an interval is a single gather
from a 64-entry rate table plus a cumulative sum — no per-step Python work.
State words live in count units; the Gray encode/decode that the hardware
performs on the way to the sampled word is bit-exact equivalent to sampling
the count itself with at most a one-count old/new ambiguity, which is how
the sampler is modeled here (the equivalence is pinned by the digital-logic
tests).

All randomness (metastability resolution, dither, oscillator noise) is
drawn from per-branch, per-purpose generators derived from the config seed,
so a run is reproducible byte-for-byte regardless of block sizes or worker
counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import SimConfig
from .errors import ConfigError
from .oscillator import FREQ_FLOOR_HZ, FrequencyNoise, poly_tuning_term, state_rate_table
from .signal_gen import Stimulus, block_source

SAMPLES_PER_BLOCK = 128
PHASE_WRAP_STATES = 1 << 20  # multiple of 2^6, so wrapped counts stay valid
EVENT_LOG_CAP = 100_000


@dataclass(frozen=True)
class LockReport:
    overload_count: int
    multi_wrap_count: int
    saturation_dwell: float
    aperture_count: int = 0

    @property
    def locked(self) -> bool:
        return (
            self.overload_count == 0
            and self.multi_wrap_count == 0
            and self.saturation_dwell == 0.0
        )

    def as_dict(self) -> dict:
        return {
            "locked": self.locked,
            "overload_count": self.overload_count,
            "multi_wrap_count": self.multi_wrap_count,
            "saturation_dwell": self.saturation_dwell,
            "aperture_count": self.aperture_count,
        }


@dataclass(frozen=True)
class BranchTrace:
    y: np.ndarray           # first-difference output, centered signed counts
    w: np.ndarray           # sampled feedback word (after injection), 0..2^B-1
    v1: np.ndarray          # subtractor output probed at each edge
    overload: np.ndarray    # sample indices (capped)
    multi_wrap: np.ndarray
    aperture: np.ndarray
    overload_count: int
    multi_wrap_count: int
    aperture_count: int
    dwell_steps: int
    n_steps: int


@dataclass(frozen=True)
class ModulatorTrace:
    cfg: SimConfig
    p: BranchTrace
    n: BranchTrace | None

    @property
    def d_out(self) -> np.ndarray:
        if self.n is None:
            return self.p.y.astype(np.int16)
        return (self.p.y.astype(np.int16) - self.n.y.astype(np.int16))

    @property
    def n_samples(self) -> int:
        return len(self.p.y)

    def branches(self):
        return [b for b in (self.p, self.n) if b is not None]


def lock_check(trace: ModulatorTrace) -> LockReport:
    """Aggregate event counters into the loop-health verdict."""
    overload = sum(b.overload_count for b in trace.branches())
    wraps = sum(b.multi_wrap_count for b in trace.branches())
    aperture = sum(b.aperture_count for b in trace.branches())
    steps = sum(b.n_steps for b in trace.branches())
    dwell = sum(b.dwell_steps for b in trace.branches()) / max(steps, 1)
    return LockReport(
        overload_count=overload,
        multi_wrap_count=wraps,
        saturation_dwell=dwell,
        aperture_count=aperture,
    )


class _EventLog:
    __slots__ = ("idx", "count")

    def __init__(self) -> None:
        self.idx: list[int] = []
        self.count = 0

    def add(self, n: int) -> None:
        self.count += 1
        if len(self.idx) < EVENT_LOG_CAP:
            self.idx.append(n)

    def array(self) -> np.ndarray:
        return np.array(self.idx, dtype=np.int64)


def _op_code(cfg: SimConfig) -> int:
    """Feedback code at which a loop stage matches the stage-1 rest rate."""
    f_needed = cfg.stage1.states_per_cycle * cfg.stage1.f0_hz / cfg.stage2.states_per_cycle
    v_ctrl = (f_needed - cfg.stage2.f0_hz) / cfg.stage2.k_tune_hz_per_v
    code = round((v_ctrl - cfg.dac.offset_v) / cfg.dac.v_lsb)
    return min(max(code, 0), (1 << cfg.word_bits) - 1)


def _simulate_branch(
    cfg: SimConfig,
    x,
    n_samples: int,
    sign: float,
    entropy_tag: int,
    n_stages: int,
    inject: np.ndarray | None,
    stage2_tone: tuple[float, float] | None,
) -> BranchTrace:
    kk = cfg.oversample
    dt = cfg.dt_s
    n_steps = n_samples * kk
    mod = 1 << cfg.word_bits
    s1p = cfg.stage1

    ss = np.random.SeedSequence(entropy=(cfg.seed, entropy_tag))
    meta_rng, dither_rng, *noise_seeds = [
        np.random.default_rng(c) for c in ss.spawn(2 + n_stages)
    ]

    # per-code state advance per engine step for every in-loop stage
    tbl, clamp_flags = state_rate_table(cfg.stage2, cfg.dac, dt)
    if len(tbl) != mod:
        raise ConfigError("DAC code space must match the feedback word width")
    clamped_codes = np.flatnonzero(clamp_flags)
    k1 = s1p.states_per_cycle
    rate1_floor = k1 * FREQ_FLOOR_HZ * dt
    dither_step = cfg.dither_lsb * cfg.k_dco_eff * dt  # held offset, states/step

    ap = cfg.aperture_s
    if ap > kk * dt / 2:
        raise ConfigError("sampler aperture must not exceed half a sample period")
    ap_steps = int(ap / dt)
    ap_frac = ap / dt - ap_steps
    meta_on = cfg.sampler.mode != "off" and ap > 0.0

    noises = []
    if s1p.noise.enabled:
        noises.append((0, FrequencyNoise(s1p.noise, 1.0 / dt, noise_seeds[0]),
                       k1 * s1p.f0_hz * dt))
    if cfg.stage2.noise.enabled:
        for j in range(1, n_stages):
            noises.append((j, FrequencyNoise(cfg.stage2.noise, 1.0 / dt, noise_seeds[j]),
                           cfg.stage2.states_per_cycle * cfg.stage2.f0_hz * dt))

    op = _op_code(cfg)
    s_phase = [float(op)] * (n_stages - 1) + [0.0]  # states, index 0 = stage 1
    w = 0              # held feedback word
    w_prev_hold = 0    # word held during the first step of the interval
    c1_unb = op        # unbounded count shadows for wrap detection
    w_unb = 0
    wrap_branch = (c1_unb - w_unb) // mod
    c1_edge_prev = op

    y = np.empty(n_samples, dtype=np.int16)
    w_arr = np.empty(n_samples, dtype=np.uint8)
    v1_arr = np.empty(n_samples, dtype=np.uint8)
    ev_over = _EventLog()
    ev_wrap = _EventLog()
    ev_aper = _EventLog()
    dwell_steps = 0
    w_used_prev = 0
    half = mod >> 1
    if inject is not None and len(inject) < n_samples:
        raise ValueError("inject must cover every output sample")

    tone_w = tone_amp_rate = 0.0
    if stage2_tone is not None:
        amp_lsb, f_tone = stage2_tone
        tone_amp_rate = amp_lsb * cfg.k_dco_eff * dt
        tone_w = 2.0 * math.pi * f_tone * dt

    n = 0
    for start, block in block_source(x, 1.0 / dt, n_steps, SAMPLES_PER_BLOCK * kk):
        xb = sign * block
        f1 = s1p.f0_hz + s1p.k_tune_hz_per_v * poly_tuning_term(s1p, xb)
        rate1 = k1 * dt * f1
        clamped1 = rate1 < rate1_floor
        np.maximum(rate1, rate1_floor, out=rate1)
        stage_extra = [None] * n_stages
        for st_idx, gen, scale in noises:
            stage_extra[st_idx] = gen.sample(len(xb)) * scale
        if stage_extra[0] is not None:
            rate1 += stage_extra[0]
        if stage2_tone is not None:
            steps_idx = start + np.arange(len(xb), dtype=np.float64)
            tone_extra = tone_amp_rate * np.sin(tone_w * steps_idx)
            stage_extra[1] = tone_extra if stage_extra[1] is None else stage_extra[1] + tone_extra

        s1_traj = s_phase[0] + np.cumsum(rate1)
        c1_pre = np.floor(s1_traj - rate1)
        c1m = c1_pre.astype(np.int64) % mod
        clamp1_per_sample = clamped1.reshape(-1, kk).sum(axis=1)
        s_phase[0] = float(s1_traj[-1] % PHASE_WRAP_STATES)
        c1_edges = np.floor(s1_traj[kk - 1 :: kk]).astype(np.int64) % PHASE_WRAP_STATES

        n_block = len(xb) // kk
        dith = (
            dither_rng.standard_normal(n_block) * dither_step
            if cfg.dither_lsb > 0
            else np.zeros(n_block)
        )

        for j in range(n_block):
            sl = slice(j * kk, (j + 1) * kk)
            cm = c1m[sl]
            if clamp1_per_sample[j]:
                ev_over.add(n)
            # subtractor-driven stages 2..N
            for st in range(1, n_stages):
                rolled = np.roll(tbl, w)
                r = rolled[cm]
                if w_prev_hold != w:
                    r[0] = tbl[(int(cm[0]) - w_prev_hold) % mod]
                if st == 1:
                    dwell_steps += int(
                        np.count_nonzero(cm == (w % mod))
                        + np.count_nonzero(cm == ((w - 1) % mod))
                    )
                    if stage_extra[1] is not None:
                        r = r + stage_extra[1][sl]
                elif stage_extra[st] is not None:
                    r = r + stage_extra[st][sl]
                if st == n_stages - 1 and dith[j] != 0.0:
                    r = r + dith[j]
                if len(clamped_codes):
                    for code in clamped_codes:
                        if np.count_nonzero(cm == ((code + w) % mod)):
                            ev_over.add(n)
                            break
                s_traj = s_phase[st] + np.cumsum(r)
                if st < n_stages - 1:
                    cm = np.floor(s_traj - r).astype(np.int64) % mod
                    s_phase[st] = float(s_traj[-1] % PHASE_WRAP_STATES)
            # sample the final stage counter at the edge
            s_end = float(s_traj[-1])
            count_new = math.floor(s_end)
            if meta_on:
                if ap_steps == 0:
                    s_at = s_end - float(r[-1]) * ap_frac
                else:
                    base = kk - 1 - ap_steps
                    s_at = float(s_traj[base]) - float(r[base]) * ap_frac if base >= 0 else float(s_phase[-1])
                n_trans = count_new - math.floor(s_at)
            else:
                n_trans = 0
            if n_trans <= 0:
                count_sampled = count_new
                w_word = count_sampled % mod
            else:
                if n_trans >= 2:
                    ev_aper.add(n)
                old = count_new - n_trans
                if cfg.sampler.mode == "per-bit":
                    ow, nw = old % mod, count_new % mod
                    mask = ow ^ nw
                    pick = int(meta_rng.integers(0, mod))
                    w_word = (ow & ~mask) | ((pick & nw) | (~pick & ow)) & mask
                else:
                    w_word = (count_new if meta_rng.integers(2) else old) % mod
            s_phase[n_stages - 1] = s_end % PHASE_WRAP_STATES
            # injection at the quantizer: felt by feedback and output alike
            w_used = (w_word + int(inject[n])) % mod if inject is not None else w_word
            # unbounded shadows; a slip of the subtractor range is the
            # modulo-arithmetic failure mode worth flagging
            c1_edge = int(c1_edges[j])
            delta_c1 = (c1_edge - c1_edge_prev) % PHASE_WRAP_STATES
            c1_unb += delta_c1
            c1_edge_prev = c1_edge
            w_unb += (w_used - w_used_prev) % mod
            # a slip moves the true subtractor difference across a multiple
            # of 2^B; the wrapped loop cannot tell, so it is flagged here
            branch_now = (c1_unb - w_unb) // mod
            if delta_c1 >= mod or branch_now != wrap_branch:
                ev_wrap.add(n)
            wrap_branch = branch_now
            y[n] = ((w_used - w_used_prev + half) % mod) - half
            w_arr[n] = w_used
            v1_arr[n] = (c1_edge - w_used) % mod
            w_prev_hold = w
            w = w_used
            w_used_prev = w_used
            n += 1

    return BranchTrace(
        y=y, w=w_arr, v1=v1_arr,
        overload=ev_over.array(), multi_wrap=ev_wrap.array(), aperture=ev_aper.array(),
        overload_count=ev_over.count, multi_wrap_count=ev_wrap.count,
        aperture_count=ev_aper.count, dwell_steps=dwell_steps, n_steps=n_steps,
    )


def simulate_higher_order(
    cfg: SimConfig,
    x=None,
    n_samples: int | None = None,
    n_stages: int | None = None,
    inject=None,
    stage2_tone: tuple[float, float] | None = None,
    branch_entropy: tuple[int, int] = (0, 1),
) -> ModulatorTrace:
    """Run the N-stage cascade (N = 2 is the standard system).

    ``x`` is the input at engine rate (array or Stimulus; defaults to the
    configured stimulus).  ``inject`` adds an integer sequence at the final
    quantizer of each branch; ``stage2_tone = (amp_lsb, f_hz)`` injects an
    additive tone at the stage-2 input to exercise the first-order shaping
    of that node.
    """
    cfg.validate()
    if x is None:
        x = cfg.stimulus
    if n_samples is None:
        n_samples = cfg.n_samples if isinstance(x, Stimulus) else len(x) // cfg.oversample
    stages = cfg.n_stages if n_stages is None else n_stages
    if stages < 2:
        raise ConfigError("cascade needs at least 2 stages")
    inj = None if inject is None else np.asarray(inject, dtype=np.int64)
    p = _simulate_branch(
        cfg, x, n_samples, +1.0, branch_entropy[0], stages, inj, stage2_tone
    )
    nb = None
    if cfg.pseudo_differential:
        nb = _simulate_branch(
            cfg, x, n_samples, -1.0, branch_entropy[1], stages, inj, stage2_tone
        )
    return ModulatorTrace(cfg=cfg, p=p, n=nb)


def simulate_proposed(cfg: SimConfig, x=None, **kwargs) -> ModulatorTrace:
    """The second-order system (degenerate case of the cascade)."""
    return simulate_higher_order(cfg, x, n_stages=2, **kwargs)


def measure_ntf(
    cfg: SimConfig,
    n_samples: int | None = None,
    amplitude: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-injection NTF measurement: (freqs, |NTF| linear).

    Injects a +/-amplitude pseudo-random sequence at the quantizer of a
    single silent branch and cross-correlates it with the branch output.
    """
    from .spectral import estimate_transfer

    if n_samples is None:
        n_samples = cfg.n_samples
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 999)))
    d = (rng.integers(0, 2, size=n_samples).astype(np.int64) * 2 - 1) * amplitude
    quiet = replace(cfg, stimulus=Stimulus.silence(), pseudo_differential=False)
    trace = simulate_higher_order(quiet, n_samples=n_samples, inject=d)
    return estimate_transfer(
        d.astype(float), trace.p.y.astype(float), cfg.fft_len, cfg.fs_hz
    )


def run_for_metrics(cfg: SimConfig, level_dbv: float, f_sig: float) -> dict:
    """One sweep point: simulate a tone and compute the standard metrics."""
    from .spectral import averaged_periodogram, sndr_db, snr_db, thd_pct

    cfg_pt = replace(cfg, stimulus=Stimulus.tone(level_dbv, f_sig)).validate()
    trace = simulate_higher_order(cfg_pt)
    spec = averaged_periodogram(
        trace.d_out.astype(float), cfg_pt.fft_len, fs_hz=cfg_pt.fs_hz
    )
    report = lock_check(trace)
    return {
        "level_dbv": level_dbv,
        "snr_dba": snr_db(spec, f_sig),
        "sndr_dba": sndr_db(spec, f_sig),
        "thd_pct": thd_pct(spec, f_sig),
        "locked": report.locked,
    }
