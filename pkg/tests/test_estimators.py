import numpy as np
import pytest

from spinshot.estimators import (FitError, NormalizationError,
                                 empirical_fidelity, fit_model, g2_pulsed,
                                 gaussian_fwhm_to_sigma, gaussian_sigma_to_fwhm,
                                 lorentzian_fwhm_to_hwhm, model_param_names,
                                 read_series_csv)
from spinshot.montecarlo import PhotonRecords
from spinshot.readout import ReadoutParams, count_distribution, readout_fidelity

# (kind, params, x grid, n_components)
CASES = [
    ("exp_decay", {"amplitude": 0.9, "tau": 127.0, "offset": 0.04},
     np.linspace(0.0, 500.0, 120), None),
    ("exp_relax", {"amplitude": 0.8, "tau": 0.44, "offset": 0.1},
     np.linspace(0.0, 2.0, 80), None),
    ("gaussian_echo", {"amplitude": 1.0, "t2": 48.0, "offset": 0.02},
     np.linspace(0.0, 150.0, 90), None),
    ("damped_sine", {"amplitude": 0.5, "frequency": 0.2174, "tau": 25.0,
                     "phase": 0.4, "offset": 0.5},
     np.linspace(0.0, 40.0, 240), None),
    ("lorentzian", {"amplitude": -0.35, "center": 3598.0, "fwhm": 2.37,
                    "offset": 1.0},
     np.linspace(3598.0 - 12, 3598.0 + 12, 160), None),
    ("gaussian_sum", {"amplitude_1": 0.3, "center_1": -3.3, "sigma_1": 1.0,
                      "amplitude_2": 0.55, "center_2": 0.0, "sigma_2": 1.0,
                      "amplitude_3": 0.3, "center_3": 3.3, "sigma_3": 1.0,
                      "offset": 0.01},
     np.linspace(-9.0, 9.0, 220), 3),
]


def evaluate(kind, params, x, n_components=None):
    if kind == "exp_decay":
        return params["amplitude"] * np.exp(-x / params["tau"]) + params["offset"]
    if kind == "exp_relax":
        return (params["amplitude"] * (1 - np.exp(-x / params["tau"]))
                + params["offset"])
    if kind == "gaussian_echo":
        return (params["amplitude"] * np.exp(-((x / params["t2"]) ** 2))
                + params["offset"])
    if kind == "damped_sine":
        return (params["amplitude"] * np.exp(-x / params["tau"])
                * np.cos(2 * np.pi * params["frequency"] * x + params["phase"])
                + params["offset"])
    if kind == "lorentzian":
        return (params["amplitude"]
                / (1 + (2 * (x - params["center"]) / params["fwhm"]) ** 2)
                + params["offset"])
    if kind == "gaussian_sum":
        out = np.full_like(x, params["offset"])
        for i in range(1, n_components + 1):
            out += params[f"amplitude_{i}"] * np.exp(
                -0.5 * ((x - params[f"center_{i}"]) / params[f"sigma_{i}"]) ** 2)
        return out
    raise AssertionError(kind)


@pytest.mark.parametrize("kind,params,x,ncomp", CASES,
                         ids=[c[0] for c in CASES])
class TestRecovery:
    def test_noiseless(self, kind, params, x, ncomp):
        y = evaluate(kind, params, x, ncomp)
        res = fit_model(kind, x, y, n_components=ncomp)
        assert res.converged
        for name, want in params.items():
            got = res.params[name]
            scale = max(abs(want), 1e-9)
            assert abs(got - want) / scale < 1e-6, (name, got, want)

    def test_noisy_within_uncertainty(self, kind, params, x, ncomp):
        # modest trial count here; the acceptance suite runs the full 200
        hits = trials = 0
        scale = np.ptp(evaluate(kind, params, x, ncomp))
        for seed in range(30):
            rng = np.random.default_rng(1000 + seed)
            y = evaluate(kind, params, x, ncomp) + rng.normal(
                0.0, 0.01 * scale, x.size)
            try:
                res = fit_model(kind, x, y, n_components=ncomp)
            except FitError:
                continue
            trials += 1
            ok = all(
                abs(res.params[n] - params[n]) <= 3 * res.uncertainties[n]
                + 1e-12
                for n in params)
            hits += ok
        assert trials >= 25
        assert hits / trials >= 0.85

    def test_descent_from_user_start(self, kind, params, x, ncomp):
        y = evaluate(kind, params, x, ncomp)
        start = [params[n] * 1.4 + (0.1 if params[n] == 0 else 0.0)
                 for n in model_param_names(kind, n_components=ncomp)]
        res = fit_model(kind, x, y, initial=start, n_components=ncomp)
        start_res = float(np.linalg.norm(
            y - evaluate(kind, dict(zip(res.params, start)), x, ncomp)))
        assert res.residual_norm <= start_res + 1e-12

    def test_gradient_at_optimum(self, kind, params, x, ncomp):
        rng = np.random.default_rng(7)
        scale = np.ptp(evaluate(kind, params, x, ncomp))
        y = evaluate(kind, params, x, ncomp) + rng.normal(
            0.0, 0.005 * scale, x.size)
        res = fit_model(kind, x, y, n_components=ncomp)
        if not res.converged:
            pytest.skip("stall fallback did not certify convergence")
        names = model_param_names(kind, n_components=ncomp)
        theta = np.array([res.params[n] for n in names])
        cost = res.residual_norm ** 2

        def ssr(vec):
            return float(np.sum(
                (y - evaluate(kind, dict(zip(names, vec)), x, ncomp)) ** 2))

        grad = np.zeros(len(theta))
        for i in range(len(theta)):
            h = 1e-6 * (1.0 + abs(theta[i]))
            up = theta.copy(); up[i] += h
            dn = theta.copy(); dn[i] -= h
            grad[i] = (ssr(up) - ssr(dn)) / (2 * h)
        assert np.linalg.norm(grad) <= 1e-3 * (1.0 + cost)


class TestFitPlumbing:
    def test_unknown_model(self):
        with pytest.raises(ValueError):
            fit_model("spline", np.arange(5.0), np.arange(5.0))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_model("exp_decay", np.arange(3.0), np.arange(3.0))

    def test_sigma_validation(self):
        x = np.linspace(0, 10, 20)
        y = np.exp(-x / 3.0)
        with pytest.raises(ValueError):
            fit_model("exp_decay", x, y, sigma=np.zeros(20))

    def test_weighted_fit_prefers_low_sigma_points(self):
        x = np.linspace(0.0, 10.0, 60)
        y = 2.0 * np.exp(-x / 3.0) + 0.1
        y_corrupt = y.copy()
        y_corrupt[::7] += 0.5
        sigma = np.full(60, 0.01)
        sigma[::7] = 10.0  # corrupted points carry no weight
        res = fit_model("exp_decay", x, y_corrupt, sigma=sigma)
        assert res.params["tau"] == pytest.approx(3.0, rel=1e-4)

    def test_result_indexing_and_report(self):
        x = np.linspace(0, 50, 40)
        y = 1.5 * np.exp(-x / 9.0) + 0.2
        res = fit_model("exp_decay", x, y)
        assert res["tau"] == res.params["tau"]
        assert set(res.uncertainties) == set(res.params)
        from spinshot.estimators import format_fit_report
        text = format_fit_report(res)
        assert "tau" in text and "exp_decay" in text

    def test_degenerate_flag_on_flat_data(self):
        x = np.linspace(0, 10, 30)
        y = np.full(30, 0.7)
        res = fit_model("exp_decay", x, y)
        assert res.degenerate

    def test_no_convergence_raises_with_diagnostics(self):
        x = np.linspace(0, 10, 20)
        rng = np.random.default_rng(0)
        y = rng.normal(0, 1, 20)
        with pytest.raises(FitError) as exc:
            fit_model("damped_sine", x, y, max_iter=1)
        assert exc.value.diagnostics


class TestConversions:
    def test_gaussian_round_trip(self):
        assert gaussian_sigma_to_fwhm(1.0) == pytest.approx(2.3548200450309493)
        assert gaussian_fwhm_to_sigma(
            gaussian_sigma_to_fwhm(0.37)) == pytest.approx(0.37, rel=1e-12)

    def test_lorentzian_hwhm(self):
        assert lorentzian_fwhm_to_hwhm(2.37) == pytest.approx(1.185)


def make_records(shot, pulse, t, n_shots, n_pulses):
    return PhotonRecords(
        shot_id=np.asarray(shot, dtype=np.int64),
        pulse_index=np.asarray(pulse, dtype=np.int64),
        timestamp_us=np.asarray(t, dtype=float),
        origin_code=np.zeros(len(shot), dtype=np.int8),
        n_shots=n_shots, n_pulses=n_pulses)


class TestG2:
    def test_single_photon_per_pulse_gives_zero(self):
        # at most one count per (shot, pulse): no same-pulse pairs
        rng = np.random.default_rng(5)
        shots, pulses = 300, 40
        shot, pulse = np.nonzero(rng.random((shots, pulses)) < 0.3)
        rec = make_records(shot, pulse, pulse * 10.0, shots, pulses)
        res = g2_pulsed(rec, 10.0)
        assert res.g2_zero == 0.0
        assert res.pair_counts[0] == 0

    def test_poissonian_light_is_unity(self):
        rng = np.random.default_rng(42)
        shots, pulses, lam = 2000, 50, 0.8
        counts = rng.poisson(lam, size=(shots, pulses))
        shot_idx = np.repeat(np.arange(shots), counts.sum(axis=1))
        pulse_idx = np.concatenate(
            [np.repeat(np.arange(pulses), row) for row in counts])
        rec = make_records(shot_idx, pulse_idx, pulse_idx * 10.0,
                           shots, pulses)
        res = g2_pulsed(rec, 10.0)
        n_pairs = res.pair_counts[0]
        se = 3.0 / max(np.sqrt(n_pairs), 1.0)
        assert res.g2_zero == pytest.approx(1.0, abs=max(3 * se, 0.05))

    def test_time_translation_invariance(self):
        rng = np.random.default_rng(9)
        shots, pulses = 200, 30
        counts = rng.poisson(0.5, size=(shots, pulses))
        shot_idx = np.repeat(np.arange(shots), counts.sum(axis=1))
        pulse_idx = np.concatenate(
            [np.repeat(np.arange(pulses), row) for row in counts])
        t = pulse_idx * 10.0 + rng.uniform(0.0, 3.0, pulse_idx.size)
        base = make_records(shot_idx, np.full_like(shot_idx, -1), t,
                            shots, pulses)
        shifted = make_records(shot_idx, np.full_like(shot_idx, -1),
                               t + 7 * 10.0, shots, pulses)
        r0 = g2_pulsed(base, 10.0)
        r1 = g2_pulsed(shifted, 10.0)
        assert r0.g2_zero == r1.g2_zero
        assert np.array_equal(r0.pair_counts, r1.pair_counts)

    def test_folding_matches_explicit_indices(self):
        rng = np.random.default_rng(11)
        shots, pulses = 150, 25
        counts = rng.poisson(0.4, size=(shots, pulses))
        shot_idx = np.repeat(np.arange(shots), counts.sum(axis=1))
        pulse_idx = np.concatenate(
            [np.repeat(np.arange(pulses), row) for row in counts])
        t = pulse_idx * 10.0 + rng.uniform(0.0, 3.0, pulse_idx.size)
        explicit = make_records(shot_idx, pulse_idx, t, shots, pulses)
        folded = make_records(shot_idx, np.full_like(shot_idx, -1), t,
                              shots, pulses)
        assert np.array_equal(g2_pulsed(explicit, 10.0).pair_counts,
                              g2_pulsed(folded, 10.0).pair_counts)

    def test_no_cross_coincidences_raises(self):
        rec = make_records([0, 1], [0, 0], [1.0, 1.0], 2, 5)
        with pytest.raises(NormalizationError):
            g2_pulsed(rec, 10.0)

    def test_too_few_events(self):
        rec = make_records([0], [0], [1.0], 1, 5)
        with pytest.raises(NormalizationError):
            g2_pulsed(rec, 10.0)


class TestEmpiricalFidelity:
    def test_perfectly_separated(self):
        rep = empirical_fidelity([5, 6, 7, 8], [0, 0, 0, 0])
        assert rep.f_min == 1.0
        assert rep.threshold >= 1

    def test_converges_to_dp_fidelity(self):
        params = ReadoutParams(n_pulses=30, p_excite=0.78, eta_detect=0.10,
                               flip_bright=0.5 / 131, flip_dark=0.5 / 131)
        bright = count_distribution(params, "bright")
        dark = count_distribution(params, "dark")
        rng = np.random.default_rng(3)
        n = 200_000
        shots_b = rng.choice(len(bright.probabilities), size=n,
                             p=bright.probabilities)
        shots_d = rng.choice(len(dark.probabilities), size=n,
                             p=dark.probabilities)
        emp = empirical_fidelity(shots_b, shots_d)
        dp = readout_fidelity(bright, dark, emp.threshold)
        assert emp.f_bright == pytest.approx(
            dp.f_bright, abs=3 * max(emp.f_bright_se, 1e-4))
        assert emp.f_dark == pytest.approx(
            dp.f_dark, abs=3 * max(emp.f_dark_se, 1e-4))

    def test_empty_input(self):
        with pytest.raises(ValueError):
            empirical_fidelity([], [1, 2])


class TestSeriesCsv:
    def test_two_and_three_columns(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("x,y\n0,1.0\n1,0.5\n")
        x, y, sigma = read_series_csv(str(p))
        assert x.tolist() == [0.0, 1.0]
        assert sigma is None
        p3 = tmp_path / "s3.csv"
        p3.write_text("0,1.0,0.1\n1,0.5,0.1\n")
        x, y, sigma = read_series_csv(str(p3))
        assert sigma.tolist() == [0.1, 0.1]

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1\n1\n")
        with pytest.raises(ValueError):
            read_series_csv(str(p))
