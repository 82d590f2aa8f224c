"""Nonlinear least-squares fitting, pulsed autocorrelation and
empirical two-histogram fidelity estimates.

The fitter is a damped Gauss-Newton (Levenberg-Marquardt) loop with a
finite-difference Jacobian and a deterministic multi-start policy; no
randomness enters anywhere, so identical inputs give identical fits.
Width- and rate-like parameters are kept positive by optimizing their
logarithm internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FitError",
    "NormalizationError",
    "FitResult",
    "G2Result",
    "fit_model",
    "model_param_names",
    "g2_pulsed",
    "empirical_fidelity",
    "gaussian_fwhm_to_sigma",
    "gaussian_sigma_to_fwhm",
    "lorentzian_fwhm_to_hwhm",
    "read_series_csv",
    "format_fit_report",
]

# FWHM conversions are centralized here; all other modules import them.
_GAUSS_K = 2.0 * math.sqrt(2.0 * math.log(2.0))


def gaussian_fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / _GAUSS_K


def gaussian_sigma_to_fwhm(sigma: float) -> float:
    return sigma * _GAUSS_K


def lorentzian_fwhm_to_hwhm(fwhm: float) -> float:
    return fwhm / 2.0


class FitError(RuntimeError):
    """No start converged; carries per-start diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class NormalizationError(RuntimeError):
    """Autocorrelation normalization is undefined (no cross-lag pairs)."""


@dataclass
class FitResult:
    kind: str
    params: dict[str, float]
    uncertainties: dict[str, float]
    residual_norm: float
    converged: bool
    iterations: int
    degenerate: bool = False
    n_points: int = 0

    def __getitem__(self, name: str) -> float:
        return self.params[name]


# ---------------------------------------------------------------------------
# model registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ModelSpec:
    names: tuple
    positive: frozenset
    predict: object        # predict(x, params_vector) -> y
    starts: object         # starts(x, y) -> list of start vectors


def _predict_exp_decay(x, p):
    amplitude, tau, offset = p
    return amplitude * np.exp(-x / tau) + offset


def _predict_exp_relax(x, p):
    amplitude, tau, offset = p
    return amplitude * (1.0 - np.exp(-x / tau)) + offset


def _predict_gaussian_echo(x, p):
    amplitude, t2, offset = p
    return amplitude * np.exp(-((x / t2) ** 2)) + offset


def _predict_damped_sine(x, p):
    amplitude, frequency, tau, phase, offset = p
    return amplitude * np.exp(-x / tau) * np.cos(2.0 * np.pi * frequency * x + phase) + offset


def _predict_lorentzian(x, p):
    amplitude, center, fwhm, offset = p
    u = 2.0 * (x - center) / fwhm
    return amplitude / (1.0 + u * u) + offset


def _span(x):
    s = float(np.max(x) - np.min(x))
    return s if s > 0 else 1.0


def _decay_tau_guess(x, y, offset):
    """Crude 1/e crossing of |y - offset|, clipped to the data span."""
    dev = np.abs(y - offset)
    top = dev[0] if dev[0] > 0 else (np.max(dev) or 1.0)
    below = np.nonzero(dev <= top / math.e)[0]
    if below.size and below[0] > 0:
        return max(float(x[below[0]] - x[0]), _span(x) * 1e-3)
    return _span(x) / 3.0


def _starts_exp_decay(x, y):
    offset = float(np.min(y)) if y[0] >= y[-1] else float(np.max(y))
    amplitude = float(y[0] - offset)
    if amplitude == 0.0:
        amplitude = float(np.ptp(y)) or 1.0
    tau = _decay_tau_guess(x, y, offset)
    return [
        np.array([amplitude, tau, offset]),
        np.array([amplitude, tau * 3.0, offset]),
        np.array([amplitude, tau / 3.0, offset]),
    ]


def _starts_exp_relax(x, y):
    offset = float(y[0])
    amplitude = float(y[-1] - y[0])
    if amplitude == 0.0:
        amplitude = float(np.ptp(y)) or 1.0
    tau = _span(x) / 3.0
    return [
        np.array([amplitude, tau, offset]),
        np.array([amplitude, tau * 3.0, offset]),
        np.array([amplitude, tau / 3.0, offset]),
    ]


def _starts_gaussian_echo(x, y):
    offset = float(np.min(y))
    amplitude = float(y[0] - offset) or float(np.ptp(y)) or 1.0
    t2 = _decay_tau_guess(x, y, offset)
    return [
        np.array([amplitude, t2, offset]),
        np.array([amplitude, t2 * 2.0, offset]),
        np.array([amplitude, t2 / 2.0, offset]),
    ]


def _fft_frequency_guess(x, y):
    """Dominant non-DC frequency assuming a roughly uniform grid."""
    n = len(x)
    dx = _span(x) / max(n - 1, 1)
    spec = np.abs(np.fft.rfft(y - np.mean(y)))
    if len(spec) < 2:
        return 1.0 / _span(x)
    k = int(np.argmax(spec[1:])) + 1
    return max(k / (n * dx), 1e-3 / _span(x))


def _starts_damped_sine(x, y):
    offset = float(np.mean(y))
    amplitude = float(np.ptp(y)) / 2.0 or 1.0
    frequency = _fft_frequency_guess(x, y)
    tau = _span(x)
    return [
        np.array([amplitude, frequency, tau, phase, offset])
        for phase in (0.0, math.pi / 2.0, math.pi, -math.pi / 2.0)
    ]


def _starts_lorentzian(x, y):
    offset = float(np.median(y))
    idx = int(np.argmax(np.abs(y - offset)))
    amplitude = float(y[idx] - offset) or 1.0
    center = float(x[idx])
    width = _span(x) / 10.0
    return [
        np.array([amplitude, center, width, offset]),
        np.array([amplitude, center, width * 3.0, offset]),
        np.array([amplitude, center, width / 3.0, offset]),
    ]


_MODELS = {
    "exp_decay": _ModelSpec(
        ("amplitude", "tau", "offset"), frozenset({"tau"}),
        _predict_exp_decay, _starts_exp_decay),
    "exp_relax": _ModelSpec(
        ("amplitude", "tau", "offset"), frozenset({"tau"}),
        _predict_exp_relax, _starts_exp_relax),
    "gaussian_echo": _ModelSpec(
        ("amplitude", "t2", "offset"), frozenset({"t2"}),
        _predict_gaussian_echo, _starts_gaussian_echo),
    "damped_sine": _ModelSpec(
        ("amplitude", "frequency", "tau", "phase", "offset"),
        frozenset({"frequency", "tau"}),
        _predict_damped_sine, _starts_damped_sine),
    "lorentzian": _ModelSpec(
        ("amplitude", "center", "fwhm", "offset"), frozenset({"fwhm"}),
        _predict_lorentzian, _starts_lorentzian),
}


def _gaussian_sum_spec(k: int) -> _ModelSpec:
    if k < 1:
        raise ValueError("gaussian_sum needs at least one component")
    names = []
    for i in range(1, k + 1):
        names += [f"amplitude_{i}", f"center_{i}", f"sigma_{i}"]
    names.append("offset")
    positive = frozenset(n for n in names if n.startswith("sigma_"))

    def predict(x, p):
        y = np.full_like(np.asarray(x, dtype=float), p[-1])
        for i in range(k):
            a, mu, sig = p[3 * i], p[3 * i + 1], p[3 * i + 2]
            y = y + a * np.exp(-0.5 * ((x - mu) / sig) ** 2)
        return y

    def starts(x, y):
        offset = float(np.min(y))
        dev = y - offset
        # k tallest well-separated samples as center guesses
        order = np.argsort(dev)[::-1]
        centers, min_gap = [], _span(x) / (3.0 * k)
        for idx in order:
            if all(abs(x[idx] - c) > min_gap for c in centers):
                centers.append(float(x[idx]))
            if len(centers) == k:
                break
        while len(centers) < k:
            centers.append(float(np.min(x)) + _span(x) * (len(centers) + 0.5) / k)
        centers.sort()
        sigma = _span(x) / (5.0 * k)
        base = []
        for c in centers:
            amp = float(np.interp(c, x, dev)) or float(np.max(dev)) or 1.0
            base += [amp, c, sigma]
        base.append(offset)
        base = np.array(base)
        wide = base.copy()
        wide[2::3] *= 2.0
        narrow = base.copy()
        narrow[2::3] *= 0.5
        return [base, wide, narrow]

    return _ModelSpec(tuple(names), positive, predict, starts)


def _resolve_spec(kind: str, n_components) -> _ModelSpec:
    if kind == "gaussian_sum":
        return _gaussian_sum_spec(int(n_components or 3))
    if kind not in _MODELS:
        raise ValueError(f"unknown model kind {kind!r}; known: "
                         f"{sorted(_MODELS)} + ['gaussian_sum']")
    return _MODELS[kind]


def model_param_names(kind: str, n_components=None) -> tuple:
    return _resolve_spec(kind, n_components).names


# ---------------------------------------------------------------------------
# Levenberg-Marquardt core
# ---------------------------------------------------------------------------

_FD_REL = 1e-6
_FD_ABS = 1e-9


def _to_internal(p, pos_mask):
    q = np.array(p, dtype=float)
    q[pos_mask] = np.log(q[pos_mask])
    return q


def _to_external(q, pos_mask):
    p = np.array(q, dtype=float)
    p[pos_mask] = np.exp(p[pos_mask])
    return p


def _jacobian(resid, theta, r0):
    m, n = len(r0), len(theta)
    jac = np.empty((m, n))
    for j in range(n):
        h = max(_FD_REL * abs(theta[j]), _FD_ABS)
        step = theta.copy()
        step[j] += h
        jac[:, j] = (resid(step) - r0) / h
    return jac


def _lm_minimize(resid, theta0, max_iter=200):
    """Damped Gauss-Newton descent; returns (theta, cost, jac, converged, iters)."""
    theta = np.asarray(theta0, dtype=float)
    r = resid(theta)
    cost = float(r @ r)
    lam = 1e-3
    jac = _jacobian(resid, theta, r)
    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        grad = jac.T @ r
        if np.max(np.abs(grad)) <= 1e-12 * (1.0 + cost):
            converged = True
            break
        hess = jac.T @ jac
        diag = np.diag(np.maximum(np.diag(hess), 1e-14))
        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(hess + lam * diag, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess + lam * diag, -grad, rcond=None)[0]
            trial = theta + step
            with np.errstate(over="ignore", invalid="ignore"):
                r_trial = resid(trial)
            cost_trial = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else np.inf
            if cost_trial < cost:
                rel_drop = (cost - cost_trial) / (1.0 + cost)
                step_size = float(np.linalg.norm(step))
                theta, r, cost = trial, r_trial, cost_trial
                jac = _jacobian(resid, theta, r)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_drop <= 1e-14 or step_size <= 1e-12 * (1.0 + float(np.linalg.norm(theta))):
                    converged = True
                break
            lam *= 5.0
        if not accepted:
            # stalled: treat as converged if the gradient is already tiny
            converged = np.max(np.abs(grad)) <= 1e-6 * (1.0 + cost)
            break
        if converged:
            break
    return theta, cost, jac, converged, iters


def fit_model(kind, x, y, sigma=None, initial=None, n_components=None,
              max_iter=200) -> FitResult:
    """Least-squares fit of a named model to an (x, y[, sigma]) series.

    ``initial`` may be None (deterministic data-driven multi-start), a
    single parameter vector, or a list of vectors, all in the external
    parameterization and the order given by :func:`model_param_names`.
    Raises :class:`FitError` with per-start diagnostics when no start
    converges.
    """
    spec = _resolve_spec(kind, n_components)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("data must be finite")
    n_par = len(spec.names)
    if len(x) < n_par + 1:
        raise ValueError(f"need at least {n_par + 1} points to fit {kind}")
    weights = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("sigma entries must be > 0")
        weights = 1.0 / sigma

    pos_mask = np.array([name in spec.positive for name in spec.names])

    def residuals(theta):
        # overflowing trial steps yield infinite cost and get rejected;
        # keep that path silent
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return _residuals_ext(_to_external(theta, pos_mask))

    def _residuals_ext(p):
        r = spec.predict(x, p) - y
        return r * weights if weights is not None else r

    if initial is None:
        starts = spec.starts(x, y)
    elif isinstance(initial, (list, tuple)) and np.ndim(initial[0]) == 1:
        starts = [np.asarray(s, dtype=float) for s in initial]
    else:
        starts = [np.asarray(initial, dtype=float)]

    best = None
    diagnostics = []
    for i, start in enumerate(starts):
        p0 = np.array(start, dtype=float)
        if np.any(p0[pos_mask] <= 0):
            diagnostics.append((i, "start violates positivity", np.inf))
            continue
        theta, cost, jac, converged, iters = _lm_minimize(
            residuals, _to_internal(p0, pos_mask), max_iter=max_iter)
        diagnostics.append((i, "converged" if converged else "not converged", cost))
        if converged and (best is None or cost < best[1]):
            best = (theta, cost, jac, iters)
    if best is None:
        raise FitError(
            f"no start converged for model {kind!r}",
            diagnostics=diagnostics,
        )

    theta, cost, jac, iters = best
    p_ext = _to_external(theta, pos_mask)
    if kind == "damped_sine":
        # (A, phase) and (-A, phase+pi) are the same curve; report the
        # canonical representative with A >= 0 and phase in (-pi, pi]
        amp_i = spec.names.index("amplitude")
        ph_i = spec.names.index("phase")
        if p_ext[amp_i] < 0:
            p_ext[amp_i] = -p_ext[amp_i]
            p_ext[ph_i] += math.pi
        p_ext[ph_i] = math.remainder(p_ext[ph_i], 2 * math.pi)
    dof = max(len(x) - n_par, 1)
    scale = 1.0 if weights is not None else cost / dof
    hess = jac.T @ jac
    degenerate = np.linalg.matrix_rank(jac) < n_par
    cov_int = np.linalg.pinv(hess) * scale
    var_int = np.clip(np.diag(cov_int), 0.0, None)
    # chain rule through the log reparameterization
    deriv = np.where(pos_mask, p_ext, 1.0)
    sd_ext = np.sqrt(var_int) * np.abs(deriv)
    return FitResult(
        kind=kind,
        params=dict(zip(spec.names, p_ext.tolist())),
        uncertainties=dict(zip(spec.names, sd_ext.tolist())),
        residual_norm=math.sqrt(cost),
        converged=True,
        iterations=iters,
        degenerate=bool(degenerate),
        n_points=len(x),
    )


# ---------------------------------------------------------------------------
# pulsed autocorrelation
# ---------------------------------------------------------------------------

@dataclass
class G2Result:
    g2_zero: float
    lags: np.ndarray
    pair_rates: np.ndarray    # per-pulse-pair coincidence rates, lag 0..L
    pair_counts: np.ndarray


def g2_pulsed(records, pulse_period_us: float, n_lags: int = 20) -> G2Result:
    """Pulse-wise autocorrelation from detected-photon records.

    Same-pulse (ordered) pair rate over the mean of the pair rates at
    lags 1..n_lags.  Records need ``shot_id``/``pulse_index`` arrays
    plus ``n_shots``/``n_pulses``; ``pulse_period_us`` is used to fold
    timestamps into pulse slots when an index is missing (< 0).
    """
    shot = np.asarray(records.shot_id, dtype=np.int64)
    pulse = np.asarray(records.pulse_index, dtype=np.int64)
    if shot.size < 2:
        raise NormalizationError("need at least two detected events")
    if np.any(pulse < 0):
        t = np.asarray(records.timestamp_us, dtype=float)
        pulse = pulse.copy()
        missing = pulse < 0
        folded = np.floor(t[missing] / pulse_period_us).astype(np.int64)
        # only pulse separations matter; rebasing the folded indices to
        # zero makes the result invariant under shifting every timestamp
        # by a whole number of periods
        folded -= folded.min()
        pulse[missing] = folded
    n_shots = int(records.n_shots)
    n_pulses = int(records.n_pulses)
    if np.any(pulse >= n_pulses):
        raise ValueError("pulse indices fall outside the declared pulse grid")
    counts = np.bincount(shot * n_pulses + pulse, minlength=n_shots * n_pulses)
    counts = counts.reshape(n_shots, n_pulses).astype(np.int64)

    n_lags = min(n_lags, n_pulses - 1)
    if n_lags < 1:
        raise NormalizationError("need at least two pulses for a cross-lag")
    pair_counts = np.empty(n_lags + 1, dtype=np.int64)
    pair_slots = np.empty(n_lags + 1, dtype=np.int64)
    pair_counts[0] = int(np.sum(counts * (counts - 1)))
    pair_slots[0] = n_shots * n_pulses
    for lag in range(1, n_lags + 1):
        pair_counts[lag] = int(np.sum(counts[:, :-lag] * counts[:, lag:]))
        pair_slots[lag] = n_shots * (n_pulses - lag)
    pair_rates = pair_counts / pair_slots
    cross = float(np.mean(pair_rates[1:]))
    if cross == 0.0:
        raise NormalizationError("no cross-lag coincidences: g2(0) undefined")
    return G2Result(
        g2_zero=float(pair_rates[0] / cross),
        lags=np.arange(n_lags + 1),
        pair_rates=pair_rates,
        pair_counts=pair_counts,
    )


# ---------------------------------------------------------------------------
# empirical two-histogram fidelity
# ---------------------------------------------------------------------------

def empirical_fidelity(shots_bright, shots_dark):
    """Best-threshold readout fidelity from per-shot photon counts.

    Scans all thresholds, returns the report at the threshold that
    maximizes min(F_bright, F_dark); binomial standard errors attached.
    """
    from .readout import FidelityReport  # deferred: readout imports us

    bright = np.asarray(shots_bright, dtype=np.int64)
    dark = np.asarray(shots_dark, dtype=np.int64)
    if bright.size == 0 or dark.size == 0:
        raise ValueError("both shot lists must be non-empty")
    top = int(max(bright.max(), dark.max()))
    best = None
    for threshold in range(1, top + 2):
        f_bright = float(np.mean(bright >= threshold))
        f_dark = float(np.mean(dark < threshold))
        f_min = min(f_bright, f_dark)
        if best is None or f_min > best[0]:
            best = (f_min, threshold, f_bright, f_dark)
    f_min, threshold, f_bright, f_dark = best
    se_b = math.sqrt(f_bright * (1.0 - f_bright) / bright.size)
    se_d = math.sqrt(f_dark * (1.0 - f_dark) / dark.size)
    return FidelityReport(
        f_bright=f_bright,
        f_dark=f_dark,
        f_min=f_min,
        threshold=threshold,
        n_pulses=0,
        f_bright_se=se_b,
        f_dark_se=se_d,
    )


# ---------------------------------------------------------------------------
# series I/O and report formatting
# ---------------------------------------------------------------------------

def read_series_csv(path):
    """Read an (x, y[, sigma]) series; a non-numeric first line is a header."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                if line_no == 1:
                    continue
                raise ValueError(f"{path}:{line_no}: non-numeric row {line!r}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if width not in (2, 3) or any(len(r) != width for r in rows):
        raise ValueError(f"{path}: expected 2 or 3 columns throughout")
    data = np.array(rows)
    sigma = data[:, 2] if width == 3 else None
    return data[:, 0], data[:, 1], sigma


def format_fit_report(result: FitResult) -> str:
    lines = [
        f"model: {result.kind}",
        f"converged: {result.converged}   iterations: {result.iterations}"
        f"   points: {result.n_points}",
        f"residual norm: {result.residual_norm:.12g}",
    ]
    if result.degenerate:
        lines.append("warning: degenerate fit (rank-deficient Jacobian)")
    lines.append("parameter            value            1-sd")
    for name, value in result.params.items():
        sd = result.uncertainties[name]
        lines.append(f"{name:<18} {value:>16.8g} {sd:>16.3g}")
    return "\n".join(lines) + "\n"
