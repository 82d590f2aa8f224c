"""Stochastic shot-by-shot simulation of the readout and spin protocols.

Random numbers come from counter-based Philox streams keyed by (seed,
block/shot index), so results are bitwise reproducible regardless of
execution order or the number of worker threads (SPINSHOT_THREADS).
The readout engine vectorizes over shots in fixed-size blocks and
reduces the blocks in index order.

Unit conventions: optical lifetimes and gate/pulse times in us, MW
Rabi/detuning frequencies in kHz, spectroscopy offsets in MHz, spin
lifetime in s.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import FitError, gaussian_fwhm_to_sigma
from .readout import (CountDistribution, ReadoutParams, cyclicity,
                      fit_decay_constant, readout_report)

__all__ = [
    "BLOCK_SHOTS",
    "ShotState",
    "PhotonRecords",
    "BathParams",
    "ReadoutSimResult",
    "ProtocolCurve",
    "AreaScanResult",
    "TimelineRun",
    "rng_stream",
    "worker_count",
    "simulate_readout_shots",
    "apply_mw_pulse",
    "run_protocol",
    "pulse_area_scan",
    "run_timeline",
]

BLOCK_SHOTS = 65536
_MASK64 = (1 << 64) - 1
PROTOCOLS = ("t1", "odmr", "rabi", "echo")


def worker_count() -> int:
    """Worker cap from SPINSHOT_THREADS (0 or unset = auto)."""
    raw = os.environ.get("SPINSHOT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SPINSHOT_THREADS must be an integer, got {raw!r}")
    if n <= 0:
        return os.cpu_count() or 1
    return n


def _stream(seed: int, *key: int) -> np.random.Generator:
    entropy = (int(seed) & _MASK64,) + tuple(int(k) & _MASK64 for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def rng_stream(seed: int, shot_index: int) -> np.random.Generator:
    """Independent, reproducible random stream for one shot."""
    return _stream(seed, shot_index)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class ShotState:
    """Bloch vector (z > 0 = bright side), excitation flag, and the
    static per-shot spin-frequency offset (MHz)."""
    spin: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    excited: bool = False
    frequency_offset: float = 0.0

    def __post_init__(self):
        self.spin = np.asarray(self.spin, dtype=float)
        if self.spin.shape != (3,):
            raise ValueError("spin must be a 3-vector")
        if np.linalg.norm(self.spin) > 1.0 + 1e-9:
            raise ValueError("Bloch vector norm exceeds 1")


_ORIGINS = ("emitter", "dark")


@dataclass
class PhotonRecords:
    """Columnar table of detected photons across shots."""
    shot_id: np.ndarray
    pulse_index: np.ndarray
    timestamp_us: np.ndarray
    origin_code: np.ndarray      # 0 = emitter, 1 = dark
    n_shots: int
    n_pulses: int

    def __len__(self):
        return len(self.shot_id)

    @property
    def origin(self) -> np.ndarray:
        return np.where(self.origin_code == 0, "emitter", "dark")

    def counts_matrix(self) -> np.ndarray:
        """(n_shots, n_pulses) detected-photon counts."""
        flat = np.bincount(self.shot_id * self.n_pulses + self.pulse_index,
                           minlength=self.n_shots * self.n_pulses)
        return flat.reshape(self.n_shots, self.n_pulses)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# photon records: shot_id pulse_index timestamp_us origin\n")
            fh.write(f"# shots={self.n_shots} pulses={self.n_pulses}\n")
            origins = self.origin
            for s, p, t, o in zip(self.shot_id, self.pulse_index,
                                  self.timestamp_us, origins):
                fh.write(f"{s} {p} {t:.12g} {o}\n")

    @classmethod
    def from_file(cls, path) -> "PhotonRecords":
        shots = pulses = None
        shot, pulse, ts, code = [], [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for token in line[1:].split():
                        if token.startswith("shots="):
                            shots = int(token[6:])
                        elif token.startswith("pulses="):
                            pulses = int(token[7:])
                    continue
                parts = line.split()
                if len(parts) != 4 or parts[3] not in _ORIGINS:
                    raise ValueError(f"{path}:{line_no}: expected "
                                     f"'shot pulse timestamp origin' row, got {line!r}")
                shot.append(int(parts[0]))
                pulse.append(int(parts[1]))
                ts.append(float(parts[2]))
                code.append(_ORIGINS.index(parts[3]))
        shot = np.array(shot, dtype=np.int64)
        pulse = np.array(pulse, dtype=np.int64)
        if shots is None:
            shots = int(shot.max()) + 1 if len(shot) else 0
        if pulses is None:
            pulses = int(pulse.max()) + 1 if len(pulse) else 0
        return cls(shot, pulse, np.array(ts), np.array(code, dtype=np.int8),
                   shots, pulses)


def _nominal_sigma():
    return gaussian_fwhm_to_sigma(2.37)


@dataclass(frozen=True)
class BathParams:
    """Spin environment: superhyperfine ODMR mixture and T1/T2.

    The three-peak splitting and weights are assumptions (the split is
    visible but unquantified in the device data); the linewidth, T1 and
    T2 defaults are the nominal device values.
    """
    odmr_centers: tuple = (-3.3, 0.0, 3.3)          # MHz
    odmr_weights: tuple = (0.25, 0.5, 0.25)
    odmr_sigma: float = field(default_factory=_nominal_sigma)  # MHz, 1 SD
    t1_spin: float = 0.44                            # s
    t2_echo: float = 48.0                            # us
    echo_exponent: float = 2.0

    def __post_init__(self):
        weights = np.asarray(self.odmr_weights, dtype=float)
        if len(self.odmr_centers) != len(self.odmr_weights):
            raise ValueError("odmr_centers and odmr_weights must match in length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("odmr_weights must be >= 0 and sum to 1")
        if self.odmr_sigma < 0:
            raise ValueError("odmr_sigma must be >= 0")
        if self.t1_spin <= 0 or self.t2_echo <= 0:
            raise ValueError("t1_spin and t2_echo must be > 0")
        if self.echo_exponent <= 0:
            raise ValueError("echo_exponent must be > 0")


def _sample_mixture(rng, bath: BathParams, size: int) -> np.ndarray:
    components = rng.choice(len(bath.odmr_weights), size=size,
                            p=np.asarray(bath.odmr_weights, dtype=float))
    centers = np.asarray(bath.odmr_centers, dtype=float)[components]
    if bath.odmr_sigma == 0.0:
        return centers
    return centers + rng.normal(0.0, bath.odmr_sigma, size)


# ---------------------------------------------------------------------------
# pulsed-readout engine
# ---------------------------------------------------------------------------

@dataclass
class ReadoutSimResult:
    histogram: CountDistribution
    trace: np.ndarray
    per_shot_counts: np.ndarray
    records: PhotonRecords | None
    mean_detected_before_flip: float


def _truncated_exponential(u, lifetime_us, window_us):
    """Emission delay inside [0, window] given detection happened there."""
    if lifetime_us <= 0.0:
        return np.zeros_like(u)
    cap = 1.0 - math.exp(-window_us / lifetime_us)
    return -lifetime_us * np.log1p(-u * cap)


def _readout_block(params: ReadoutParams, initial: str, n_block: int,
                   rng, collect: bool, lifetime_us: float):
    n = params.n_pulses
    a, b = params.flip_bright, params.flip_dark
    d = params.detection_probability
    window, period = params.gate_window, params.pulse_period
    mu_gate = params.dark_rate * window * 1e-6

    bright = np.full(n_block, initial == "bright")
    counts = np.zeros(n_block, dtype=np.int64)
    unflipped = np.ones(n_block, dtype=bool)
    before_flip = np.zeros(n_block, dtype=np.int64)
    trace = np.zeros(n)
    rec_shot, rec_pulse, rec_time, rec_code = [], [], [], []

    for k in range(n):
        r_flip = rng.random(n_block)
        r_det = rng.random(n_block)
        r_time = rng.random(n_block)
        flip_b = bright & (r_flip < a)
        flip_d = ~bright & (r_flip < b)
        detect = bright & ~flip_b & (r_det < d)
        counts += detect
        trace[k] = detect.sum()
        before_flip += detect & unflipped
        unflipped &= ~flip_b
        bright = (bright & ~flip_b) | flip_d

        gate_start = k * period
        if mu_gate > 0.0:
            n_dark = rng.poisson(mu_gate, n_block)
            counts += n_dark
            total_dark = int(n_dark.sum())
            t_dark = rng.random(total_dark)
        else:
            n_dark = None
        if collect:
            idx = np.nonzero(detect)[0]
            if idx.size:
                rec_shot.append(idx)
                rec_pulse.append(np.full(idx.size, k, dtype=np.int64))
                rec_time.append(gate_start +
                                _truncated_exponential(r_time[idx], lifetime_us, window))
                rec_code.append(np.zeros(idx.size, dtype=np.int8))
            if n_dark is not None and total_dark:
                dark_idx = np.repeat(np.arange(n_block), n_dark)
                rec_shot.append(dark_idx)
                gate_of = np.full(total_dark, k, dtype=np.int64)
                rec_pulse.append(gate_of)
                rec_time.append(gate_start + t_dark * window)
                rec_code.append(np.ones(total_dark, dtype=np.int8))

    def _concat(parts, dtype):
        return (np.concatenate(parts) if parts
                else np.array([], dtype=dtype))

    return (counts, trace, before_flip,
            _concat(rec_shot, np.int64), _concat(rec_pulse, np.int64),
            _concat(rec_time, float), _concat(rec_code, np.int8))


def simulate_readout_shots(params: ReadoutParams, initial: str = "bright",
                           shots: int = 1, seed: int = 0,
                           collect_records: bool = True,
                           emission_lifetime_us: float = 0.803,
                           _key: tuple = ()) -> ReadoutSimResult:
    """Shot-by-shot sampling of the pulsed-readout outcome model.

    Counts follow exactly the per-pulse chain of
    :func:`spinshot.readout.count_distribution`; emission timestamps
    are exponential with the effective lifetime, conditioned to fall
    inside the 'gate that detected them; dark counts are Poisson per
    gate with uniform timestamps.  The count statistics do not depend
    on ``collect_records``.
    """
    if initial not in ("bright", "dark"):
        raise ValueError("initial must be 'bright' or 'dark'")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n = params.n_pulses
    block_sizes = [min(BLOCK_SHOTS, shots - s)
                   for s in range(0, shots, BLOCK_SHOTS)]

    def run_block(i):
        rng = _stream(seed, *_key, i)
        return _readout_block(params, initial, block_sizes[i], rng,
                              collect_records, emission_lifetime_us)

    workers = min(worker_count(), len(block_sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, range(len(block_sizes))))
    else:
        results = [run_block(i) for i in range(len(block_sizes))]

    counts = np.concatenate([r[0] for r in results])
    trace = np.sum([r[1] for r in results], axis=0) / shots
    before_flip = np.concatenate([r[2] for r in results])
    histogram = CountDistribution(np.bincount(counts) / shots, initial, n)

    records = None
    if collect_records:
        offsets = np.cumsum([0] + block_sizes[:-1])
        shot_id = np.concatenate([r[3] + off for r, off in zip(results, offsets)])
        pulse = np.concatenate([r[4] for r in results])
        times = np.concatenate([r[5] for r in results])
        code = np.concatenate([r[6] for r in results])
        order = np.lexsort((times, shot_id))
        records = PhotonRecords(shot_id[order], pulse[order], times[order],
                                code[order], shots, n)
    return ReadoutSimResult(
        histogram=histogram,
        trace=trace,
        per_shot_counts=counts,
        records=records,
        mean_detected_before_flip=float(before_flip.mean()),
    )


# ---------------------------------------------------------------------------
# Bloch rotations
# ---------------------------------------------------------------------------

def _rotate(spins, rabi_khz, detuning_khz, duration_us, phase_rad=0.0):
    """Rodrigues rotation of Bloch vectors about the driven-frame axis
    (O cos phi, O sin phi, Delta)/O_eff by angle 2*pi*O_eff*t."""
    spins = np.asarray(spins, dtype=float)
    single = spins.ndim == 1
    v = spins.reshape(1, 3) if single else spins
    omega = np.broadcast_to(np.asarray(rabi_khz, dtype=float), v.shape[:1]).copy()
    delta = np.broadcast_to(np.asarray(detuning_khz, dtype=float), v.shape[:1]).copy()
    eff = np.hypot(omega, delta)
    angle = 2.0 * np.pi * eff * duration_us * 1e-3
    safe = np.where(eff > 0.0, eff, 1.0)
    axis = np.stack([omega * math.cos(phase_rad) / safe,
                     omega * math.sin(phase_rad) / safe,
                     delta / safe], axis=1)
    cos_t = np.cos(angle)[:, None]
    sin_t = np.sin(angle)[:, None]
    dot = np.sum(axis * v, axis=1, keepdims=True)
    out = v * cos_t + np.cross(axis, v) * sin_t + axis * dot * (1.0 - cos_t)
    out = np.where((eff > 0.0)[:, None], out, v)
    return out[0] if single else out


def apply_mw_pulse(state: ShotState, rabi_frequency: float, detuning: float,
                   duration: float, phase: float = 0.0) -> ShotState:
    """Rotate the spin by a MW pulse (Rabi and detuning in kHz, duration
    in us, phase in radians); returns a new state."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    spin = _rotate(state.spin, rabi_frequency, detuning, duration, phase)
    return ShotState(spin=spin, excited=state.excited,
                     frequency_offset=state.frequency_offset)


# ---------------------------------------------------------------------------
# protocol curves
# ---------------------------------------------------------------------------

@dataclass
class ProtocolCurve:
    protocol: str
    x: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    shots: int

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,mean,stderr,shots\n")
            for x, m, s in zip(self.x, self.mean, self.stderr):
                fh.write(f"{x:.12g},{m:.12g},{s:.12g},{self.shots}\n")


def _bernoulli_stats(rng, p, shots):
    hits = rng.random(shots) < p
    m = float(hits.mean())
    return m, math.sqrt(max(m * (1.0 - m), 0.0) / shots)


def _pi_time_us(rabi_khz: float) -> float:
    return 500.0 / rabi_khz


def run_protocol(protocol: str, sweep, bath: BathParams, shots: int = 1000,
                 seed: int = 0, mw_rabi_khz: float = 217.4,
                 detuning_sigma_khz: float = 20.0,
                 drive_jitter: float = 0.0) -> ProtocolCurve:
    """Simulate one spin-characterization protocol over a sweep grid.

    t1: wait times in s, signal = P(still bright) after relaxation of z
    toward 0 with t1_spin.  odmr: MW offsets in MHz, signal = flip
    probability of a pi pulse, per-shot spin offset drawn from the
    three-Gaussian mixture.  rabi: durations in us; the decay envelope
    comes from a per-shot detuning spread (detuning_sigma_khz) and,
    optionally, fractional drive-amplitude jitter — both knobs exist
    because the data does not pin down the mechanism.  echo: total
    sequence lengths in us; pi/2 - pi - pi/2 with the two opposite
    first-pulse phases subtracted and transverse components damped by
    exp(-(t/t2_echo)^echo_exponent).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    x = np.asarray(sweep, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("sweep grid must be a non-empty 1-d array")
    mean = np.empty_like(x)
    stderr = np.empty_like(x)

    for i, value in enumerate(x):
        rng = _stream(seed, i)
        if protocol == "t1":
            z = math.exp(-value / bath.t1_spin)
            mean[i], stderr[i] = _bernoulli_stats(rng, 0.5 * (1.0 + z), shots)
        elif protocol == "odmr":
            offsets = _sample_mixture(rng, bath, shots)
            detuning = (value - offsets) * 1e3
            spins = np.tile([0.0, 0.0, 1.0], (shots, 1))
            spins = _rotate(spins, mw_rabi_khz, detuning, _pi_time_us(mw_rabi_khz))
            p_flip = 0.5 * (1.0 - spins[:, 2])
            hits = rng.random(shots) < p_flip
            m = float(hits.mean())
            mean[i], stderr[i] = m, math.sqrt(max(m * (1 - m), 0.0) / shots)
        elif protocol == "rabi":
            detuning = rng.normal(0.0, detuning_sigma_khz, shots)
            omega = np.full(shots, mw_rabi_khz)
            if drive_jitter > 0.0:
                omega = np.clip(omega * (1.0 + drive_jitter *
                                         rng.normal(0.0, 1.0, shots)), 0.0, None)
            spins = np.tile([0.0, 0.0, 1.0], (shots, 1))
            spins = _rotate(spins, omega, detuning, value)
            p_flip = 0.5 * (1.0 - spins[:, 2])
            hits = rng.random(shots) < p_flip
            m = float(hits.mean())
            mean[i], stderr[i] = m, math.sqrt(max(m * (1 - m), 0.0) / shots)
        else:  # echo
            offsets_khz = _sample_mixture(rng, bath, shots) * 1e3
            damping = math.exp(-((value / bath.t2_echo) ** bath.echo_exponent))
            results = []
            for phase in (math.pi, 0.0):   # first pi/2 about -x, then +x
                spins = np.tile([0.0, 0.0, 1.0], (shots, 1))
                spins = _rotate(spins, mw_rabi_khz, 0.0,
                                0.5 * _pi_time_us(mw_rabi_khz), phase)
                spins = _free_precession(spins, offsets_khz, 0.5 * value)
                spins = _rotate(spins, mw_rabi_khz, 0.0, _pi_time_us(mw_rabi_khz))
                spins = _free_precession(spins, offsets_khz, 0.5 * value)
                spins[:, 0] *= damping
                spins[:, 1] *= damping
                spins = _rotate(spins, mw_rabi_khz, 0.0,
                                0.5 * _pi_time_us(mw_rabi_khz))
                p_dark = 0.5 * (1.0 - spins[:, 2])
                hits = rng.random(shots) < p_dark
                m = float(hits.mean())
                results.append((m, m * (1.0 - m) / shots))
            mean[i] = results[0][0] - results[1][0]
            stderr[i] = math.sqrt(results[0][1] + results[1][1])
    return ProtocolCurve(protocol=protocol, x=x, mean=mean, stderr=stderr,
                         shots=shots)


def _free_precession(spins, detuning_khz, duration_us):
    angle = 2.0 * np.pi * detuning_khz * duration_us * 1e-3
    cos_t, sin_t = np.cos(angle), np.sin(angle)
    out = spins.copy()
    out[:, 0] = spins[:, 0] * cos_t - spins[:, 1] * sin_t
    out[:, 1] = spins[:, 0] * sin_t + spins[:, 1] * cos_t
    return out


# ---------------------------------------------------------------------------
# pulse-area sweep
# ---------------------------------------------------------------------------

def excitation_probability(area_pi: float) -> float:
    """Excitation probability vs pulse area, anchored at 1 for a pi pulse."""
    return math.sin(area_pi * math.pi / 2.0) ** 2


@dataclass
class AreaScanResult:
    area: np.ndarray
    p_excite: np.ndarray
    n0: np.ndarray
    zeta: np.ndarray
    f_min: np.ndarray
    threshold: np.ndarray
    mean_detected_before_flip: np.ndarray

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("area,p_excite,n0,cyclicity,threshold,f_min\n")
            for a, p, n0, z, t, f in zip(self.area, self.p_excite, self.n0,
                                         self.zeta, self.threshold, self.f_min):
                fh.write(f"{a:.12g},{p:.12g},{n0:.12g},{z:.12g},"
                         f"{int(t)},{f:.12g}\n")


def pulse_area_scan(areas, flip_bright_model, flip_dark_model,
                    params: ReadoutParams, shots: int = 20000,
                    seed: int = 0) -> AreaScanResult:
    """Cyclicity and fidelity vs excitation pulse area.

    For each area: excitation probability sin^2(area*pi/2), per-pulse
    flip probabilities from the two model callables, Monte Carlo trace
    with an exponential fit for N0, cyclicity p*N0, and the exact
    best-threshold fidelity at the same pulse count.
    """
    areas = np.asarray(areas, dtype=float)
    out = {k: np.empty(areas.size) for k in
           ("p", "n0", "zeta", "f", "t", "before")}
    for i, area in enumerate(areas):
        p = excitation_probability(area)
        point = replace(params, p_excite=p,
                        flip_bright=float(flip_bright_model(area)),
                        flip_dark=float(flip_dark_model(area)))
        sim = simulate_readout_shots(point, "bright", shots, seed,
                                     collect_records=False, _key=(i,))
        try:
            n0 = fit_decay_constant(sim.trace).n0
            zeta = cyclicity(p, n0) if p > 0 else math.nan
        except (FitError, ValueError):
            n0, zeta = math.nan, math.nan
        report = readout_report(point)
        out["p"][i] = p
        out["n0"][i] = n0
        out["zeta"][i] = zeta
        out["f"][i] = report.f_min
        out["t"][i] = report.threshold
        out["before"][i] = sim.mean_detected_before_flip
    return AreaScanResult(
        area=areas, p_excite=out["p"], n0=out["n0"], zeta=out["zeta"],
        f_min=out["f"], threshold=out["t"].astype(int),
        mean_detected_before_flip=out["before"],
    )


# ---------------------------------------------------------------------------
# compiled-timeline executor
# ---------------------------------------------------------------------------

@dataclass
class TimelineRun:
    histogram: CountDistribution
    records: PhotonRecords | None
    gate_count: int
    per_gate_mean: np.ndarray


def _lorentzian_weight(offset_mhz: float, fwhm_mhz: float) -> float:
    if offset_mhz is None or offset_mhz == 0.0:
        return 1.0
    if fwhm_mhz <= 0.0:
        return 0.0
    u = 2.0 * offset_mhz / fwhm_mhz
    return 1.0 / (1.0 + u * u)


def run_timeline(timeline, params: ReadoutParams, bath: BathParams | None = None,
                 shots: int = 1000, seed: int = 0,
                 emission_lifetime_us: float = 0.803,
                 mw_rabi_khz: float = 217.4,
                 spectral_diffusion_fwhm_mhz: float = 13.5,
                 collect_records: bool = True) -> TimelineRun:
    """Execute a compiled sequence timeline shot by shot.

    Semantics per event: optical pulses on the readout transition (A,
    or a literal detuning weighted by the Lorentzian spectral-diffusion
    line) follow the per-pulse readout outcome model and leave a real
    emission time behind — the photon is only detected if a later gate
    covers it (unlike the calibrated readout engine, which conditions
    the timestamp on detection).  Pulses on C/D act as optical pumping
    between the ground states; pulses on B are emission on the
    off-resonant branch and are not detected.  MW pulse frequencies are
    offsets (MHz) from the nominal spin transition of the shot.
    """
    gates = [(i, e) for i, e in enumerate(timeline.events) if e.kind == "detect"]
    n_gates = len(gates)
    gate_counts = np.zeros((shots, max(n_gates, 1)), dtype=np.int64)
    rec_shot, rec_pulse, rec_time, rec_code = [], [], [], []
    p_area_cache = {}

    for shot in range(shots):
        rng = rng_stream(seed, shot)
        offset_mhz = (float(_sample_mixture(rng, bath, 1)[0])
                      if bath is not None else 0.0)
        spin = np.array([0.0, 0.0, 1.0])
        pending = []            # emission times awaiting a gate
        gate_idx = 0
        for event in timeline.events:
            if event.kind == "mw":
                detuning = (event.params["frequency_mhz"] - offset_mhz) * 1e3
                spin = _rotate(spin, mw_rabi_khz, detuning, event.duration_us,
                               math.radians(event.params["phase_deg"]))
            elif event.kind == "optical":
                # collapse the spin: optical pulses are projective
                bright = rng.random() < 0.5 * (1.0 + spin[2])
                label = event.params["transition"]
                area = event.params["area_pi"]
                if area not in p_area_cache:
                    p_area_cache[area] = excitation_probability(area)
                p_area = p_area_cache[area]
                if label in (None, "A"):
                    weight = _lorentzian_weight(event.params["offset_mhz"],
                                                spectral_diffusion_fwhm_mhz)
                    r_flip, r_exc, r_t = rng.random(3)
                    if bright:
                        if r_flip < params.flip_bright:
                            bright = False
                        elif r_exc < params.p_excite * p_area * weight:
                            pending.append(event.end_us - emission_lifetime_us *
                                           math.log1p(-r_t))
                    else:
                        if r_flip < params.flip_dark:
                            bright = True
                elif label == "C":      # pumps bright -> dark
                    if bright and rng.random() < p_area:
                        bright = False
                elif label == "D":      # pumps dark -> bright
                    if not bright and rng.random() < p_area:
                        bright = True
                # label B: off-resonant emission, nothing detected
                spin = np.array([0.0, 0.0, 1.0 if bright else -1.0])
            elif event.kind == "detect":
                start, end = event.start_us, event.end_us
                kept = []
                for t_emit in pending:
                    if start <= t_emit <= end:
                        if rng.random() < params.eta_detect:
                            gate_counts[shot, gate_idx] += 1
                            if collect_records:
                                rec_shot.append(shot)
                                rec_pulse.append(gate_idx)
                                rec_time.append(t_emit)
                                rec_code.append(0)
                    elif t_emit > end:
                        kept.append(t_emit)
                pending = kept
                mu = params.dark_rate * event.duration_us * 1e-6
                if mu > 0.0:
                    n_dark = rng.poisson(mu)
                    if n_dark:
                        gate_counts[shot, gate_idx] += n_dark
                        # draw timestamps whether or not we keep them, so
                        # the stream (and histogram) ignores collect_records
                        u_times = rng.random(n_dark)
                        if collect_records:
                            for u in u_times:
                                rec_shot.append(shot)
                                rec_pulse.append(gate_idx)
                                rec_time.append(start + u * event.duration_us)
                                rec_code.append(1)
                gate_idx += 1

    totals = gate_counts.sum(axis=1) if n_gates else np.zeros(shots, dtype=np.int64)
    histogram = CountDistribution(np.bincount(totals) / shots, "bright",
                                  max(n_gates, 1))
    records = None
    if collect_records:
        shot_arr = np.array(rec_shot, dtype=np.int64)
        pulse_arr = np.array(rec_pulse, dtype=np.int64)
        time_arr = np.array(rec_time, dtype=float)
        code_arr = np.array(rec_code, dtype=np.int8)
        order = np.lexsort((time_arr, shot_arr))
        records = PhotonRecords(shot_arr[order], pulse_arr[order],
                                time_arr[order], code_arr[order],
                                shots, max(n_gates, 1))
    per_gate = (gate_counts.mean(axis=0) if n_gates
                else np.zeros(0))
    return TimelineRun(histogram=histogram, records=records,
                       gate_count=n_gates, per_gate_mean=per_gate)
