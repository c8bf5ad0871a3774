"""Scoring function, simplex minimization, and the 1-D/2-D fit drivers."""

import numpy as np
import pytest

from modereco.config import Config
from modereco.fitting import (
    FitResult,
    Param,
    ParamSpace,
    exact_sigmas,
    fit_jpd,
    fit_rpd,
    fit_thermal_stack,
    gauss_newton_covariance,
    minimize,
    score,
    sqrt_scale_sigma,
)
from modereco.forward import ModeSpec, Occupancy, SourceModel, full_jpd
from modereco.photon_stats import ModeType, convolve, pmf
from modereco.reduction import Arm, Rpd, marginalize
from modereco.sampling import CountMatrix, sample_counts, to_probabilities

TH, PO, SP = ModeType.THERMAL, ModeType.POISSONIAN, ModeType.SINGLE_PHOTON
CONJ, SIG, IDL = Occupancy.CONJUGATED, Occupancy.SIGNAL_ONLY, Occupancy.IDLER_ONLY

FAST = Config(restarts=4)


class TestScore:
    def test_perfect_fit(self):
        x = np.array([0.5, 0.3, 0.2])
        assert score(x, x, 1.0) == 0.0

    def test_quoted_example(self):
        assert score([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]) == pytest.approx(2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score([1.0, 0.0], [[0.5], [0.5]], 1.0)

    def test_zero_sigma_rejected(self):
        with pytest.raises(ValueError):
            score([1.0], [0.5], 0.0)


class TestParamSpace:
    def test_roundtrip(self):
        space = ParamSpace([Param("mu", "log"), Param("eta", "logit")])
        vals = np.array([3.7, 0.42])
        back = space.from_unconstrained(space.to_unconstrained(vals))
        np.testing.assert_allclose(back, vals, rtol=1e-12)

    def test_bounds_enforced(self):
        space = ParamSpace([Param("eta", "logit")])
        assert 0.0 < space.from_unconstrained(np.array([-40.0]))[0] < 1.0
        assert 0.0 < space.from_unconstrained(np.array([40.0]))[0] <= 1.0


class TestMinimize:
    def test_quadratic(self):
        space = ParamSpace([Param("theta", "log")])
        res = minimize(lambda v: (v[0] - 3.0) ** 2, space, np.array([1.0]),
                       restarts=4, seed=0, config=FAST)
        assert res.params["theta"] == pytest.approx(3.0, abs=1e-7)
        assert res.converged

    def test_two_param_bowl(self):
        space = ParamSpace([Param("a", "log"), Param("b", "logit")])
        res = minimize(lambda v: (v[0] - 2.0) ** 2 + (v[1] - 0.25) ** 2, space,
                       np.array([0.5, 0.5]), restarts=6, seed=1, config=FAST)
        assert res.params["a"] == pytest.approx(2.0, abs=1e-6)
        assert res.params["b"] == pytest.approx(0.25, abs=1e-6)

    def test_restart_metadata(self):
        space = ParamSpace([Param("t", "log")])
        res = minimize(lambda v: (v[0] - 1.0) ** 2, space, np.array([1.0]),
                       restarts=5, seed=2, config=FAST)
        assert res.restarts_used == 5
        assert len(res.restart_scores) == 5
        assert 0 <= res.best_restart_seed < 5


class TestFitRpd:
    def test_noiseless_thermal_identifiable(self):
        rpd = Rpd(pmf(TH, 2.0, 40).probs, Arm.SIGNAL)
        res = fit_rpd(rpd, [TH], FAST, seed=3)
        assert res.modes[0][1] == pytest.approx(2.0, abs=1e-6)
        assert res.converged

    def test_two_thermal_recovery(self):
        # detected means of a bright+dim thermal pair behind 44% transmission
        rpd_probs = convolve(pmf(TH, 19 * 0.44, 40), pmf(TH, 0.93 * 0.44, 40), 40).probs
        res = fit_rpd(Rpd(rpd_probs, Arm.SIGNAL), [TH, TH], FAST, seed=4)
        mus = sorted((m for _, m in res.modes), reverse=True)
        assert mus[0] == pytest.approx(19 * 0.44, abs=0.01)
        assert mus[1] == pytest.approx(0.93 * 0.44, abs=0.01)

    def test_canonical_mode_order(self):
        rpd_probs = convolve(pmf(PO, 0.5, 30), pmf(TH, 2.0, 30), 30).probs
        res = fit_rpd(Rpd(rpd_probs, Arm.SIGNAL), [PO, TH], FAST, seed=5)
        assert [t for t, _ in res.modes] == [TH, PO]

    def test_empty_template_rejected(self):
        with pytest.raises(ValueError):
            fit_rpd(Rpd(pmf(TH, 1.0, 10).probs, Arm.SIGNAL), [])

    def test_counts_based_fit(self):
        jpd = full_jpd(SourceModel((ModeSpec(TH, 1.8, CONJ, 0.9, 0.9),), 25))
        counts = sample_counts(jpd, 10**6, seed=11)
        rpd = marginalize(counts, Arm.SIGNAL)
        res = fit_rpd(rpd, [TH], FAST, seed=6)
        assert res.modes[0][1] == pytest.approx(1.8 * 0.9, rel=0.02)


class TestThermalStackFit:
    def test_exact_thermal_recovered(self):
        rpd = Rpd(pmf(TH, 2.0, 40).probs, Arm.SIGNAL)
        res = fit_thermal_stack(rpd, 1, seed=7)
        assert res.params["mu_per_mode"] == pytest.approx(2.0, abs=1e-5)
        assert res.abs_error < 1e-7

    def test_escalation_row_regression(self):
        # frozen values of the calibrated exact-input weighting convention
        rpd = Rpd(pmf(PO, 5.0, 40).probs, Arm.SIGNAL)
        res = fit_thermal_stack(rpd, 2, seed=8)
        assert res.params["mu_per_mode"] == pytest.approx(1.280, abs=0.005)
        assert res.abs_error == pytest.approx(0.341, abs=0.005)


class TestFitJpd:
    def test_noiseless_self_inversion_per_mode(self):
        true = SourceModel((ModeSpec(TH, 1.5, CONJ, 0.7, 0.4),), 15)
        jpd = full_jpd(true)
        template = SourceModel((ModeSpec(TH, 1.0, CONJ, 0.5, 0.5),), 15)
        res = fit_jpd(jpd, template, config=FAST, seed=9, share_losses=False)
        got = res.model.conjugated[0]
        assert got.mu == pytest.approx(1.5, rel=1e-3)
        assert got.eta_s == pytest.approx(0.7, rel=1e-3)
        assert got.eta_i == pytest.approx(0.4, rel=1e-3)

    def test_counts_recovery_with_background(self):
        true = SourceModel(
            (ModeSpec(TH, 2.5, CONJ, 0.6, 0.8), ModeSpec(PO, 0.3, SIG)), 20
        )
        counts = sample_counts(full_jpd(true), 10**6, seed=13)
        template = SourceModel(
            (ModeSpec(TH, 2.0, CONJ, 0.5, 0.5), ModeSpec(PO, 0.2, SIG)), 20
        )
        constraints = {"signal": [2.5 * 0.6], "idler": [2.5 * 0.8]}
        res = fit_jpd(counts, template, constraints, FAST, seed=10)
        got = res.model.conjugated[0]
        assert got.mu == pytest.approx(2.5, rel=0.05)
        assert got.eta_s == pytest.approx(0.6, rel=0.05)
        assert got.eta_i == pytest.approx(0.8, rel=0.05)
        bg = res.model.signal_background[0]
        assert bg.mu == pytest.approx(0.3, abs=0.03)

    def test_degenerate_input_returns_boundary(self):
        counts = CountMatrix(np.eye(5, dtype=int)[:, ::-1] * 0 + np.diag([100, 0, 0, 0, 0]), 100)
        template = SourceModel((ModeSpec(TH, 1.0, CONJ, 0.5, 0.5),), 4)
        res = fit_jpd(counts, template, config=FAST, seed=11)
        assert not res.converged
        assert "degenerate" in res.message

    def test_label_swap_invariance(self):
        true = SourceModel(
            (
                ModeSpec(TH, 2.0, CONJ, 0.7, 0.7),
                ModeSpec(TH, 0.5, CONJ, 0.7, 0.7),
            ),
            15,
        )
        jpd = full_jpd(true)
        t1 = SourceModel(true.modes, 15)
        t2 = SourceModel(true.modes[::-1], 15)
        r1 = fit_jpd(jpd, t1, config=FAST, seed=12, share_losses=True)
        r2 = fit_jpd(jpd, t2, config=FAST, seed=12, share_losses=True)
        mus1 = [m.mu for m in r1.model.conjugated]
        mus2 = [m.mu for m in r2.model.conjugated]
        np.testing.assert_allclose(mus1, mus2, rtol=1e-4)

    def test_score_at_truth_chi_squared_scale(self):
        true = SourceModel((ModeSpec(TH, 1.2, CONJ, 0.8, 0.6),), 8)
        jpd = full_jpd(true)
        n_tot = 10**5
        scores = []
        for s in range(31):
            counts = sample_counts(jpd, n_tot, seed=100 + s)
            p_hat = counts.counts / n_tot
            scores.append(score(p_hat, jpd.p, sqrt_scale_sigma(n_tot)))
        dof = 81
        assert 0.5 * dof < np.median(scores) < 2 * dof


class TestGaussNewton:
    def test_covariance_scale_against_monte_carlo(self):
        true_mu, eta, n_tot = 2.0, 0.85, 10**5
        jpd = full_jpd(SourceModel((ModeSpec(TH, true_mu, CONJ, eta, eta),), 20))
        rpd_model = marginalize(jpd, Arm.SIGNAL)

        def model_fn(v):
            return pmf(TH, float(v[0]), 20).probs

        estimates = []
        for s in range(12):
            counts = sample_counts(jpd, n_tot, seed=200 + s)
            rpd = marginalize(counts, Arm.SIGNAL)
            res = fit_rpd(rpd, [TH], FAST, seed=s)
            estimates.append(res.modes[0][1])
        emp_std = np.std(estimates, ddof=1)

        cov = gauss_newton_covariance(
            model_fn, np.array([true_mu * eta]), rpd_model.probs,
            sqrt_scale_sigma(n_tot),
        )
        gn_std = np.sqrt(cov[0, 0])
        assert gn_std == pytest.approx(emp_std, rel=1.5)  # same order of magnitude
        assert 1e-4 < gn_std < 0.1
