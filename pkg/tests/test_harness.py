import dataclasses
import math

import numpy as np
import pytest

from relaxlab.harness import (
    InitialDataSpec,
    FunctionalX,
    check_sigma1_admissible,
    fit_rate,
    flat_profile_ratio,
    functional_X,
    functional_X0,
    make_initial_data,
    run_decay_study,
    run_epsilon_convergence,
    run_overdamping_scan,
    run_selftest,
    run_spectrum,
)
from relaxlab.integrators import StepperConfig, evolve
from relaxlab.models import JinXinModel, effective_Z, make_flux
from relaxlab.spectral_core import (
    Grid,
    NormSeries,
    SpectralField,
    besov_norm,
    lp_norm,
    scheme_for,
)
from relaxlab.spectral_analysis import threshold_J


@pytest.fixture
def grid():
    return Grid(1, 256, 2 * np.pi * 16)


class TestInitialData:
    def test_darcy_prepared_closure(self, grid):
        model = JinXinModel(make_flux("burgers1d"), (1.0,), 0.2)
        spec = InitialDataSpec(kind="gaussian_bump", amplitude=0.1, width=3.0, v_kind="darcy")
        jx, lim = make_initial_data(spec, grid, model)
        Z = effective_Z(model, jx)[0]
        assert lp_norm(Z, 2) <= 1e-10
        assert np.array_equal(lim.u_star.coeffs, jx.u.coeffs)

    def test_single_mode_besov(self, grid):
        model = JinXinModel(make_flux("zero", 1, 1), (1.0,), 0.5)
        spec = InitialDataSpec(kind="single_mode", amplitude=0.3, mode=(16,), v_kind="zero")
        jx, _ = make_initial_data(spec, grid, model)
        # kappa = 16 * kmin = 1.0: the annuli at that radius carry the mode
        m = lp_norm(jx.u, 2)
        s = 0.8
        sch = scheme_for(grid)
        idx = np.argwhere(np.abs(jx.u.coeffs[0]) > 1e-12)[0][0]
        expected = sum(2.0 ** (j * s) * sch.multipliers[j][idx] * m for j in sch.j_indices)
        assert besov_norm(jx.u, s, 2, 1) == pytest.approx(expected, rel=1e-10)

    def test_random_spectrum_flat_profile(self):
        # the synthesis contract: factor-2 flatness over fully-populated blocks
        g = Grid(1, 2048, 200 * np.pi)
        model = JinXinModel(make_flux("zero", 1, 1), (1.0,), 0.1)
        spec = InitialDataSpec(kind="random_spectrum", amplitude=0.02, sigma1=-0.5,
                               seed=7, v_kind="zero")
        jx, _ = make_initial_data(spec, g, model)
        J = threshold_J(0.1)
        assert flat_profile_ratio(jx.u, -0.5, J) <= 2.0

    def test_random_spectrum_deterministic_moduli(self):
        g = Grid(1, 512, 64.0)
        model = JinXinModel(make_flux("zero", 1, 1), (1.0,), 0.2)
        spec = InitialDataSpec(kind="random_spectrum", amplitude=0.02, sigma1=-0.5, seed=1)
        a1, _ = make_initial_data(spec, g, model)
        a2, _ = make_initial_data(dataclasses.replace(spec, seed=99), g, model)
        # phases differ, moduli identical
        assert not np.array_equal(a1.u.coeffs, a2.u.coeffs)
        assert np.allclose(np.abs(a1.u.coeffs), np.abs(a2.u.coeffs), atol=1e-15)
        assert a1.u.hermitian_defect() <= 1e-12

    def test_ill_prepared_norm(self, grid):
        model = JinXinModel(make_flux("burgers1d"), (1.0,), 0.2)
        spec = InitialDataSpec(kind="gaussian_bump", amplitude=0.05,
                               v_kind="ill_prepared", v_scale=0.7, v_band_hi=1.0, seed=3)
        jx, _ = make_initial_data(spec, grid, model)
        total = math.sqrt(sum(lp_norm(v, 2) ** 2 for v in jx.v))
        assert total == pytest.approx(0.7, rel=1e-12)

    def test_sigma1_admissibility(self):
        check_sigma1_admissible(-0.5, 1, 2)
        with pytest.raises(ValueError, match="admissible range"):
            check_sigma1_admissible(0.3, 1, 2)


class TestFunctionalX:
    def _zero_series(self, grid, p):
        sch = scheme_for(grid)
        s = NormSeries(sch.j_indices, p)
        for t in (0.0, 0.5, 1.0):
            s.append(t, np.zeros(sch.j_indices.size))
        return s

    def test_zero_trajectory(self, grid):
        series = {(n, 2): self._zero_series(grid, 2) for n in ("u", "v")}
        X = functional_X(series, 0.5, 2, 1, 1)
        assert X.total == 0.0
        assert all(v == 0.0 for v in X.terms.values())

    def test_missing_tracker_listed(self, grid):
        series = {("u", 2): self._zero_series(grid, 2)}
        with pytest.raises(KeyError, match="missing.*v"):
            functional_X(series, 0.5, 2, 1, 1)

    def test_single_block_closed_form(self, grid):
        # one low block decaying like e^{-t}: every term is a scalar integral
        sch = scheme_for(grid)
        eps, p, d = 0.5, 2, 1
        J = threshold_J(eps)
        j0 = J - 2
        i0 = list(sch.j_indices).index(j0)
        times = np.linspace(0.0, 8.0, 2001)
        series = {}
        for name in ("u", "v"):
            s = NormSeries(sch.j_indices, 2)
            for t in times:
                row = np.zeros(sch.j_indices.size)
                row[i0] = math.exp(-t)
                s.append(t, row)
            series[(name, 2)] = s
        X = functional_X(series, eps, p, J, d)
        w = lambda s: 2.0 ** (j0 * s)
        integral = 1.0 - math.exp(-8.0)
        dp = d / p
        assert X.terms["u_low_sup"] == pytest.approx(w(dp - 1) + w(dp), rel=1e-12)
        assert X.terms["u_low_int"] == pytest.approx((w(dp + 1) + w(dp + 2)) * integral, rel=5e-6)
        assert X.terms["v_low_sup"] == pytest.approx(eps**2 * (w(dp) + w(dp + 1)), rel=1e-12)
        assert X.terms["v_low_int"] == pytest.approx((w(dp) + w(dp + 1)) * integral, rel=5e-6)
        # block j0 = J-2 lies outside the high window j >= J-1
        assert X.terms["u_high_sup"] == 0.0
        assert X.total == pytest.approx(sum(X.terms.values()))

    def test_x0_weights(self, grid):
        model = JinXinModel(make_flux("burgers1d"), (1.0,), 0.5)
        spec = InitialDataSpec(kind="gaussian_bump", amplitude=0.05, width=2.0)
        jx, _ = make_initial_data(spec, grid, model)
        J = threshold_J(0.5)
        x0 = functional_X0(jx, 0.5, 2, J)
        u0, vs = jx.u, SpectralField.stack(jx.v)
        manual = (besov_norm(u0, -0.5, 2, 1, ("low", J)) + besov_norm(u0, 0.5, 2, 1, ("low", J))
                  + 0.25 * (besov_norm(vs, 0.5, 2, 1, ("low", J)) + besov_norm(vs, 1.5, 2, 1, ("low", J)))
                  + 1.5 * besov_norm(u0, 0.5, 2, 1, ("high", J))
                  + 0.75 * besov_norm(vs, 0.5, 2, 1, ("high", J)))
        assert x0 == pytest.approx(manual, rel=1e-12)


class TestFitRate:
    def test_exact_power_law(self):
        ts = np.geomspace(1.0, 100.0, 30)
        y = (1.0 + ts) ** -0.25
        f = fit_rate(ts, y, kind="time")
        assert f.exponent == pytest.approx(-0.25, abs=1e-12)
        assert f.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_linear_epsilon_slope(self):
        eps = [0.2, 0.1, 0.05, 0.025]
        y = [3.0 * e for e in eps]
        f = fit_rate(eps, y, kind="plain", min_points=3)
        assert f.exponent == pytest.approx(1.0, abs=1e-12)

    def test_exponential_flagged(self):
        ts = np.geomspace(1.0, 100.0, 40)
        y = np.exp(-ts / 10)
        f = fit_rate(ts, y, kind="time")
        assert f.low_r2

    def test_degenerate_window(self):
        with pytest.raises(ValueError, match="points"):
            fit_rate([1.0, 2.0], [1.0, 2.0], kind="plain")


class TestExperiments:
    def test_epsilon_convergence_linear_oracle(self):
        # zero flux + exact per-mode propagator: difference closed-form, slope 1
        g = Grid(1, 32, 2 * np.pi)
        flux = make_flux("zero", 1, 1)
        data = InitialDataSpec(kind="single_mode", amplitude=0.1, mode=(1,),
                               v_kind="ill_prepared", v_scale=0.2, v_band_hi=1.5, seed=0)
        stepper = StepperConfig(scheme="exact_linear", dt_max=0.05, t_end=10.0, sample_every=0.2)
        out = run_epsilon_convergence(g, flux, (1.0,), [0.1, 0.05, 0.025, 0.0125],
                                      data, stepper, p=2)
        f = out["fits"]["fit_sup_du"]
        assert abs(f["exponent"] - 1.0) <= 3 * max(f["stderr"], 0.02)
        assert out["fits"]["fit_int_Zlow"]["exponent"] >= 0.85

    def test_decay_window_guard(self):
        g = Grid(1, 256, 2 * np.pi * 16)  # cutoff time 0.05*16^2 = 12.8
        flux = make_flux("burgers1d")
        data = InitialDataSpec(kind="random_spectrum", amplitude=0.02, sigma1=-0.5)
        with pytest.raises(ValueError, match="cutoff"):
            run_decay_study(g, flux, (1.0,), 0.1, data,
                            StepperConfig(scheme="imex_ssp2"), fit_window=(1.0, 100.0))

    def test_decay_pure_exponential_flagged(self):
        # a single mode decays exponentially; the power-law fit must flag it
        g = Grid(1, 64, 2 * np.pi * 16)
        flux = make_flux("zero", 1, 1)
        data = InitialDataSpec(kind="single_mode", amplitude=0.1, mode=(16,),
                               sigma1=-0.5, v_kind="darcy")
        out = run_decay_study(g, flux, (1.0,), 0.1, data,
                              StepperConfig(scheme="imex_ssp2", dt_max=0.02),
                              fit_window=(1.0, 12.0), sigma_list=(0.0,))
        assert out["fits"]["rows"][0]["low_r2"]

    def test_overdamping_scan_small(self):
        g = Grid(1, 16, 2 * np.pi)
        out = run_overdamping_scan(g, (1.0,), (1,), eps_grid=[1.0, 0.5, 0.25])
        for row in out["fits"]["rows"]:
            assert row["rel_err"] <= 0.02
        # the peak friction 1/eps = 2 is in the grid: measured 2S within 2%
        peak = out["fits"]["peak"]
        assert abs(peak["omega_measured"] - peak["target"]) <= 0.02 * peak["target"]

    def test_zero_mode_no_decay(self):
        # the conserved mean mode never decays
        g = Grid(1, 16, 2 * np.pi)
        flux = make_flux("zero", 1, 1)
        model = JinXinModel(flux, (1.0,), 0.5)
        u = SpectralField.from_physical(g, np.full(g.shape, 0.3))
        from relaxlab.models import JinXinState
        from relaxlab.integrators import step_jinxin

        st = JinXinState(u, [SpectralField.zero(g)])
        for _ in range(100):
            st = step_jinxin(model, st, 1e-3, "imex_ssp2")
        assert abs(st.u.mean()[0] - 0.3) <= 1e-10

    def test_spectrum_rows(self):
        out = run_spectrum((1.0,), mode_kappa=(1.0,), points=11)
        rows = out["fits"]["rows"]
        assert len(rows) == 11
        regimes = {r["regime"] for r in rows}
        assert {"low", "high"} <= regimes

    def test_selftest_all_pass(self):
        out = run_selftest(N=64)
        assert out["fits"]["passed"] == out["fits"]["total"]

    def test_grid_refinement_stability(self):
        # doubling N moves the fitted exponent by less than the fit stderr
        flux = make_flux("burgers1d")
        data = InitialDataSpec(kind="random_spectrum", amplitude=0.02, sigma1=-0.5,
                               ir_compensation=True, ir_sigma_fit=0.0, ir_t_hi=100.0,
                               v_kind="darcy", seed=0)
        stepper = StepperConfig(scheme="imex_ssp2", cfl=0.45, dt_max=0.05)
        fits = []
        for N in (1024, 2048):
            g = Grid(1, N, 200 * np.pi)
            out = run_decay_study(g, flux, (1.0,), 0.1, data, stepper,
                                  fit_window=(5.0, 100.0), sigma_list=(0.0,))
            fits.append(out["fits"]["rows"][0])
        gap = abs(fits[0]["exponent"] - fits[1]["exponent"])
        assert gap <= max(fits[0]["stderr"], fits[1]["stderr"])
