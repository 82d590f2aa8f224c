"""Exact photon-count statistics of the pulsed single-shot spin readout.

Per pulse the spin follows a two-state chain with an attached detection
channel:

    bright: flip to dark   a        (no photon collected)
            stay + detect  (1-a)*d
            stay, silent   (1-a)*(1-d)
    dark:   flip to bright b        (no photon within the flipping pulse)
            stay           (1-b)

with d = p_excite * eta_detect.  The full count distribution is computed
by dynamic programming over (pulse, state, count) and convolved with a
Poisson dark-count background over the total gated time.  Everything
here is exact arithmetic on the model — no sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .estimators import FitError, FitResult, fit_model

__all__ = [
    "CAPACITY_PULSES",
    "CapacityError",
    "CalibrationError",
    "ReadoutParams",
    "CountDistribution",
    "FidelityReport",
    "DecayFit",
    "FlipCalibration",
    "OptimizeResult",
    "count_distribution",
    "expected_trace",
    "fit_decay_constant",
    "cyclicity",
    "readout_fidelity",
    "readout_report",
    "optimize_readout",
    "calibrate_flip_asymmetry",
    "dark_count_penalty",
    "format_fidelity_report",
]

CAPACITY_PULSES = 10_000
_STATES = ("bright", "dark")
_POISSON_TAIL = 1e-13


class CapacityError(ValueError):
    """Pulse count exceeds what the exact DP is rated for."""


class CalibrationError(RuntimeError):
    """Requested fidelity is outside the attainable range."""

    def __init__(self, message, attainable=None):
        super().__init__(message)
        self.attainable = attainable


def _probability(name, value):
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return float(value)


@dataclass(frozen=True)
class ReadoutParams:
    """Knobs of one pulsed-readout sequence.

    Rates in Hz, times in microseconds; ``flip_bright``/``flip_dark``
    are the per-pulse flip probabilities of the bright and dark ground
    state (a and b in the chain above).
    """
    n_pulses: int
    p_excite: float
    eta_detect: float
    flip_bright: float
    flip_dark: float
    dark_rate: float = 0.0
    gate_window: float = 3.0
    pulse_period: float = 10.0

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError(f"n_pulses must be >= 1, got {self.n_pulses}")
        for name in ("p_excite", "eta_detect", "flip_bright", "flip_dark"):
            _probability(name, getattr(self, name))
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if self.gate_window < 0:
            raise ValueError("gate_window must be >= 0")
        if self.pulse_period <= 0:
            raise ValueError("pulse_period must be > 0")

    @property
    def detection_probability(self) -> float:
        return self.p_excite * self.eta_detect

    @property
    def dark_count_mean(self) -> float:
        # Hz * us over all gates
        return self.dark_rate * self.gate_window * 1e-6 * self.n_pulses

    @property
    def duration_ms(self) -> float:
        return self.n_pulses * self.pulse_period * 1e-3


@dataclass
class CountDistribution:
    probabilities: np.ndarray
    initial_state: str
    n_pulses: int

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", p)
        if self.initial_state not in _STATES:
            raise ValueError(f"initial_state must be one of {_STATES}")
        if np.any(p < 0):
            raise ValueError("count probabilities must be non-negative")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("count probabilities must sum to 1 within 1e-12")

    @property
    def max_count(self) -> int:
        return len(self.probabilities) - 1

    def mean(self) -> float:
        return float(np.arange(len(self.probabilities)) @ self.probabilities)

    def prob_at_least(self, threshold: int) -> float:
        return float(self.probabilities[threshold:].sum())

    def prob_below(self, threshold: int) -> float:
        return float(self.probabilities[:threshold].sum())

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("count,probability\n")
            for k, p in enumerate(self.probabilities):
                fh.write(f"{k},{p:.12g}\n")


@dataclass
class FidelityReport:
    f_bright: float
    f_dark: float
    f_min: float
    threshold: int
    n_pulses: int
    readout_duration: float | None = None   # ms
    cyclicity_bright: float | None = None
    cyclicity_dark: float | None = None
    cyclicity_mean: float | None = None
    f_bright_se: float | None = None
    f_dark_se: float | None = None

    def __post_init__(self):
        expected = min(self.f_bright, self.f_dark)
        if abs(self.f_min - expected) > 1e-12:
            raise ValueError("f_min must equal min(f_bright, f_dark)")

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,threshold,f_bright,f_dark,f_min\n")
            fh.write(f"{self.n_pulses},{self.threshold},"
                     f"{self.f_bright:.12g},{self.f_dark:.12g},"
                     f"{self.f_min:.12g}\n")


# ---------------------------------------------------------------------------
# dynamic programming over (pulse, state, count)
# ---------------------------------------------------------------------------

def _check_state(initial: str):
    if initial not in _STATES:
        raise ValueError(f"initial state must be one of {_STATES}, got {initial!r}")


def _check_capacity(n: int):
    if n > CAPACITY_PULSES:
        raise CapacityError(
            f"n_pulses={n} exceeds the exact-DP capacity of {CAPACITY_PULSES}")


def _dp_step(bright, dark, a, b, d):
    """One pulse of the chain; count axis grows by the detect channel."""
    new_bright = bright * ((1.0 - a) * (1.0 - d)) + dark * b
    new_bright[1:] += bright[:-1] * ((1.0 - a) * d)
    new_dark = bright * a + dark * (1.0 - b)
    return new_bright, new_dark


def _signal_pmf(params: ReadoutParams, initial: str) -> np.ndarray:
    n = params.n_pulses
    a, b, d = params.flip_bright, params.flip_dark, params.detection_probability
    bright = np.zeros(n + 1)
    dark = np.zeros(n + 1)
    (bright if initial == "bright" else dark)[0] = 1.0
    for _ in range(n):
        bright, dark = _dp_step(bright, dark, a, b, d)
    return bright + dark


def _poisson_pmf(mu: float) -> np.ndarray:
    """Poisson pmf truncated once the missing tail is < 1e-13."""
    if mu <= 0.0:
        return np.array([1.0])
    terms = [math.exp(-mu)]
    cum = terms[0]
    k = 0
    while 1.0 - cum > _POISSON_TAIL:
        k += 1
        terms.append(terms[-1] * mu / k)
        cum += terms[-1]
    return np.array(terms)


def _convolve_dark(pmf: np.ndarray, mu: float) -> np.ndarray:
    if mu <= 0.0:
        return pmf
    return np.convolve(pmf, _poisson_pmf(mu))


def count_distribution(params: ReadoutParams, initial: str = "bright") -> CountDistribution:
    """Exact distribution of detected photons over the full sequence."""
    _check_state(initial)
    _check_capacity(params.n_pulses)
    pmf = _convolve_dark(_signal_pmf(params, initial), params.dark_count_mean)
    return CountDistribution(pmf, initial, params.n_pulses)


def expected_trace(params: ReadoutParams, initial: str = "bright") -> np.ndarray:
    """Per-pulse detection probability d * P(bright at pulse k).

    The two-state chain relaxes toward pi = b/(a+b) with per-pulse
    factor (1 - a - b); a = b = 0 freezes the chain (constant trace).
    """
    _check_state(initial)
    a, b = params.flip_bright, params.flip_dark
    d = params.detection_probability
    p0 = 1.0 if initial == "bright" else 0.0
    k = np.arange(params.n_pulses)
    s = a + b
    if s == 0.0:
        return np.full(params.n_pulses, d * p0)
    stationary = b / s
    return d * (stationary + (p0 - stationary) * (1.0 - s) ** k)


@dataclass
class DecayFit:
    n0: float
    amplitude: float
    offset: float
    n0_sd: float
    fit: FitResult


def fit_decay_constant(trace) -> DecayFit:
    """Fit A*exp(-k/N0)+c to a per-pulse trace; N0 in pulses."""
    trace = np.asarray(trace, dtype=float)
    if trace.size < 4:
        raise ValueError("need at least 4 trace points")
    scale = max(float(np.max(np.abs(trace))), 1.0)
    if float(np.ptp(trace)) <= 1e-14 * scale:
        raise FitError("constant trace: decay constant is unbounded")
    pulses = np.arange(trace.size, dtype=float)
    result = fit_model("exp_decay", pulses, trace)
    return DecayFit(
        n0=result["tau"],
        amplitude=result["amplitude"],
        offset=result["offset"],
        n0_sd=result.uncertainties["tau"],
        fit=result,
    )


def cyclicity(p_excite: float, n0: float) -> float:
    """Mean photons emitted on the readout transition before a flip."""
    if p_excite <= 0 or n0 <= 0:
        raise ValueError("p_excite and n0 must be > 0")
    return p_excite * n0


def readout_fidelity(dist_bright: CountDistribution, dist_dark: CountDistribution,
                     threshold: int) -> FidelityReport:
    """min-fidelity of thresholding: classify bright if count >= threshold."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if (len(dist_bright.probabilities) != len(dist_dark.probabilities)
            or dist_bright.n_pulses != dist_dark.n_pulses):
        raise ValueError("mismatched supports: distributions must share "
                         "pulse count and count axis")
    f_bright = dist_bright.prob_at_least(threshold)
    f_dark = dist_dark.prob_below(threshold)
    return FidelityReport(
        f_bright=f_bright,
        f_dark=f_dark,
        f_min=min(f_bright, f_dark),
        threshold=threshold,
        n_pulses=dist_bright.n_pulses,
    )


def _best_threshold(pmf_bright, pmf_dark, n_pulses):
    """Scan thresholds 1..n_pulses; ties keep the lowest threshold."""
    cum_b = np.cumsum(pmf_bright)
    cum_d = np.cumsum(pmf_dark)
    top = min(n_pulses, len(cum_b) - 1)
    f_bright = 1.0 - cum_b[:top]
    f_dark = cum_d[:top]
    f_min = np.minimum(f_bright, f_dark)
    i = int(np.argmax(f_min))
    return i + 1, float(f_bright[i]), float(f_dark[i]), float(f_min[i])


def readout_report(params: ReadoutParams, threshold: int | None = None) -> FidelityReport:
    """Full fidelity report at fixed n_pulses, with duration and cyclicity.

    threshold=None picks the best threshold.  Cyclicities come from
    exponential fits to the expected traces of both initial states and
    are left unset when the chain does not relax.
    """
    dist_b = count_distribution(params, "bright")
    dist_d = count_distribution(params, "dark")
    if threshold is None:
        threshold, _, _, _ = _best_threshold(
            dist_b.probabilities, dist_d.probabilities, params.n_pulses)
    report = readout_fidelity(dist_b, dist_d, threshold)
    report.readout_duration = params.duration_ms
    try:
        n0_bright = fit_decay_constant(expected_trace(params, "bright")).n0
        n0_dark = fit_decay_constant(expected_trace(params, "dark")).n0
    except (FitError, ValueError):
        return report
    report.cyclicity_bright = cyclicity(params.p_excite, n0_bright)
    report.cyclicity_dark = cyclicity(params.p_excite, n0_dark)
    report.cyclicity_mean = 0.5 * (report.cyclicity_bright + report.cyclicity_dark)
    return report


@dataclass
class OptimizeResult:
    n_star: int
    threshold_star: int
    f_star: float
    n_values: np.ndarray
    threshold_values: np.ndarray
    f_bright_values: np.ndarray
    f_dark_values: np.ndarray
    f_values: np.ndarray

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,threshold,f_bright,f_dark,f_min\n")
            for n, t, fb, fd, fm in zip(self.n_values, self.threshold_values,
                                        self.f_bright_values, self.f_dark_values,
                                        self.f_values):
                fh.write(f"{n},{t},{fb:.12g},{fd:.12g},{fm:.12g}\n")


def optimize_readout(params: ReadoutParams, n_range) -> OptimizeResult:
    """Exhaustive (pulse count, threshold) scan of the min-fidelity.

    Runs the DP once up to the top of ``n_range`` and reads off every
    intermediate pulse count, which is bitwise identical to rerunning
    the DP per N.  Ties resolve to the smallest N, then threshold.
    """
    n_lo, n_hi = int(n_range[0]), int(n_range[1])
    if n_lo < 1 or n_lo > n_hi:
        raise ValueError(f"empty or invalid pulse range ({n_lo}, {n_hi})")
    _check_capacity(n_hi)
    a, b, d = params.flip_bright, params.flip_dark, params.detection_probability
    dark_mean_per_pulse = params.dark_rate * params.gate_window * 1e-6

    bright_b = np.zeros(n_hi + 1)
    dark_b = np.zeros(n_hi + 1)
    bright_b[0] = 1.0
    bright_d = np.zeros(n_hi + 1)
    dark_d = np.zeros(n_hi + 1)
    dark_d[0] = 1.0

    rows = []
    best = None
    for pulse in range(1, n_hi + 1):
        bright_b, dark_b = _dp_step(bright_b, dark_b, a, b, d)
        bright_d, dark_d = _dp_step(bright_d, dark_d, a, b, d)
        if pulse < n_lo:
            continue
        mu = dark_mean_per_pulse * pulse
        pmf_b = _convolve_dark((bright_b + dark_b)[:pulse + 1], mu)
        pmf_d = _convolve_dark((bright_d + dark_d)[:pulse + 1], mu)
        t, fb, fd, fm = _best_threshold(pmf_b, pmf_d, pulse)
        rows.append((pulse, t, fb, fd, fm))
        if best is None or fm > best[4]:
            best = (pulse, t, fb, fd, fm)

    n_values, t_values, fb_values, fd_values, f_values = map(np.array, zip(*rows))
    return OptimizeResult(
        n_star=int(best[0]),
        threshold_star=int(best[1]),
        f_star=float(best[4]),
        n_values=n_values,
        threshold_values=t_values,
        f_bright_values=fb_values,
        f_dark_values=fd_values,
        f_values=f_values,
    )


@dataclass
class FlipCalibration:
    a: float
    b: float
    asymmetry: float
    achieved_f: float
    f_max: float


def calibrate_flip_asymmetry(relaxation_constant: float, target_f: float,
                             n_pulses: int, threshold: int,
                             p_excite: float, eta_detect: float,
                             dark_rate: float = 0.0, gate_window: float = 3.0,
                             pulse_period: float = 10.0,
                             tol: float = 1e-4) -> FlipCalibration:
    """Invert the DP model for the flip asymmetry at fixed relaxation.

    With a = s/R and b = (1-s)/R (R = relaxation_constant, so a + b is
    pinned to 1/R), the min-fidelity is unimodal in s: the dark-state
    arm rises with s while the bright arm falls.  The peak is located
    by ternary search and the requested fidelity is then bisected on
    the rising branch (falling branch as fallback), i.e. the solution
    with the *larger* dark-state stability is preferred.
    """
    if relaxation_constant <= 1.0:
        raise ValueError("relaxation_constant must exceed 1 pulse")
    if not (0.0 < target_f < 1.0):
        raise ValueError("target_f must be in (0, 1)")
    base = ReadoutParams(
        n_pulses=n_pulses, p_excite=p_excite, eta_detect=eta_detect,
        flip_bright=0.0, flip_dark=0.0, dark_rate=dark_rate,
        gate_window=gate_window, pulse_period=pulse_period)

    def fidelity(s: float) -> float:
        params = replace(base, flip_bright=s / relaxation_constant,
                         flip_dark=(1.0 - s) / relaxation_constant)
        dist_b = count_distribution(params, "bright")
        dist_d = count_distribution(params, "dark")
        return readout_fidelity(dist_b, dist_d, threshold).f_min

    lo, hi = 0.0, 1.0
    while hi - lo > 1e-10:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if fidelity(m1) < fidelity(m2):
            lo = m1
        else:
            hi = m2
    s_peak = 0.5 * (lo + hi)
    f_max = fidelity(s_peak)
    f_left = fidelity(0.0)
    f_right = fidelity(1.0)
    if target_f > f_max + tol:
        raise CalibrationError(
            f"target fidelity {target_f:.6g} unreachable; attainable range "
            f"[{min(f_left, f_right):.6g}, {f_max:.6g}] at "
            f"relaxation_constant={relaxation_constant:g}",
            attainable=(min(f_left, f_right), f_max))

    if target_f >= f_left:            # rising branch: fidelity grows with s
        lo, hi, rising = 0.0, s_peak, True
    elif target_f >= f_right:         # falling branch
        lo, hi, rising = s_peak, 1.0, False
    else:
        raise CalibrationError(
            f"target fidelity {target_f:.6g} below both endpoints "
            f"({f_left:.6g}, {f_right:.6g})",
            attainable=(min(f_left, f_right), f_max))

    s = s_peak
    f_s = f_max
    for _ in range(200):
        s = 0.5 * (lo + hi)
        f_s = fidelity(s)
        if abs(f_s - target_f) <= tol and hi - lo < 1e-6:
            break
        if (f_s < target_f) == rising:
            lo = s
        else:
            hi = s
        if hi - lo < 1e-14:
            break
    if abs(f_s - target_f) > tol:
        raise CalibrationError(
            f"bisection stalled at fidelity {f_s:.6g} for target {target_f:.6g}",
            attainable=(min(f_left, f_right), f_max))
    return FlipCalibration(
        a=s / relaxation_constant,
        b=(1.0 - s) / relaxation_constant,
        asymmetry=s,
        achieved_f=f_s,
        f_max=f_max,
    )


def dark_count_penalty(params: ReadoutParams, threshold: int = 1) -> float:
    """Dark-state fidelity lost to detector dark counts at this threshold."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    with_dark = count_distribution(params, "dark").prob_below(threshold)
    without = count_distribution(replace(params, dark_rate=0.0),
                                 "dark").prob_below(threshold)
    return without - with_dark


def format_fidelity_report(report: FidelityReport) -> str:
    lines = [
        f"pulses: {report.n_pulses}   threshold: {report.threshold}",
        f"F_bright: {report.f_bright:.12g}",
        f"F_dark:   {report.f_dark:.12g}",
        f"F_min:    {report.f_min:.12g}",
    ]
    if report.f_bright_se is not None:
        lines.insert(2, f"F_bright_se: {report.f_bright_se:.3g}   "
                        f"F_dark_se: {report.f_dark_se:.3g}")
    if report.readout_duration is not None:
        lines.append(f"duration: {report.readout_duration:.12g} ms")
    if report.cyclicity_mean is not None:
        lines.append(
            f"cyclicity: bright {report.cyclicity_bright:.6g}, "
            f"dark {report.cyclicity_dark:.6g}, mean {report.cyclicity_mean:.6g}")
    return "\n".join(lines) + "\n"
