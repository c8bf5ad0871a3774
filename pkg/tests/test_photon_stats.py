"""Distribution kernels: exact values, analytic tails, loss and
convolution identities."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modereco.photon_stats import (
    ModeType,
    Pmf,
    apply_loss,
    convolve,
    convolve_many,
    loss_factor,
    loss_matrix,
    pmf,
    thermal_stack_pmf,
    vacuum_pmf,
)

from oracles import convolve_lists, lpf_exact, mode_p

ALL_TYPES = [ModeType.THERMAL, ModeType.POISSONIAN, ModeType.SINGLE_PHOTON]


class TestPmf:
    def test_thermal_closed_form(self):
        p = pmf(ModeType.THERMAL, 1.0, 2)
        np.testing.assert_allclose(p.probs, [0.5, 0.25, 0.125], rtol=1e-15)
        assert p.tail_mass == pytest.approx(0.125, rel=1e-15)

    def test_poisson_vacuum(self):
        p = pmf(ModeType.POISSONIAN, 0.0, 3)
        np.testing.assert_array_equal(p.probs, [1, 0, 0, 0])
        assert p.tail_mass == 0.0

    def test_single_photon(self):
        p = pmf(ModeType.SINGLE_PHOTON, 0.6, 5)
        np.testing.assert_allclose(p.probs, [0.4, 0.6, 0, 0, 0, 0], rtol=1e-15)
        assert p.tail_mass == 0.0

    def test_single_photon_n_max_zero_tail(self):
        p = pmf(ModeType.SINGLE_PHOTON, 0.3, 0)
        assert p.probs[0] == pytest.approx(0.7)
        assert p.tail_mass == pytest.approx(0.3)

    def test_poisson_tail_matches_direct_sum(self):
        mu, n_max = 7.3, 12
        p = pmf(ModeType.POISSONIAN, mu, n_max)
        direct = sum(mode_p("poissonian", mu, k) for k in range(n_max + 1))
        assert p.tail_mass == pytest.approx(1.0 - direct, abs=1e-13)

    def test_entries_match_oracle(self):
        for t, mu in [(ModeType.THERMAL, 3.7), (ModeType.POISSONIAN, 2.2),
                      (ModeType.SINGLE_PHOTON, 0.25)]:
            p = pmf(t, mu, 15)
            expected = [mode_p(t.value, mu, k) for k in range(16)]
            np.testing.assert_allclose(p.probs, expected, rtol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            pmf(ModeType.THERMAL, -0.5, 10)
        with pytest.raises(ValueError):
            pmf(ModeType.SINGLE_PHOTON, 1.2, 10)

    @given(
        t=st.sampled_from(ALL_TYPES),
        mu=st.floats(0.0, 30.0),
        n_max=st.integers(0, 80),
    )
    @settings(max_examples=200, deadline=None)
    def test_normalization(self, t, mu, n_max):
        if t is ModeType.SINGLE_PHOTON:
            mu = min(mu / 30.0, 1.0)
        p = pmf(t, mu, n_max)
        assert abs(p.probs.sum() + p.tail_mass - 1.0) < 1e-12
        assert p.tail_mass >= 0.0
        assert np.all(p.probs >= 0.0)

    def test_large_mu_log_space_regime(self):
        # bright thermal at the 40-photon truncation: finite, normalized
        p = pmf(ModeType.THERMAL, 500.0, 40)
        assert np.all(np.isfinite(p.probs))
        assert abs(p.probs.sum() + p.tail_mass - 1.0) < 1e-12


class TestLossFactor:
    def test_trivial_values(self):
        assert loss_factor(0, 0, 0.3) == 1.0
        assert loss_factor(1, 2, 0.5) == pytest.approx(0.5, rel=1e-15)

    def test_against_exact_rational(self):
        # large-k case evaluated in log space vs arbitrary-precision rational
        exact = lpf_exact(40, 80, Fraction(44, 100))
        assert loss_factor(40, 80, 0.44) == pytest.approx(float(exact), rel=1e-12)

    def test_more_rational_cases(self):
        for n, k, num in [(3, 7, 1), (55, 120, 9), (0, 200, 3), (150, 150, 7)]:
            eta = Fraction(num, 10)
            got = loss_factor(n, k, num / 10)
            assert got == pytest.approx(float(lpf_exact(n, k, eta)), rel=1e-11)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            loss_factor(3, 2, 0.5)
        with pytest.raises(ValueError):
            loss_factor(1, 2, 1.5)
        with pytest.raises(ValueError):
            loss_factor(-1, 2, 0.5)

    @given(k=st.integers(0, 200), eta=st.floats(0.0, 1.0))
    @settings(max_examples=150, deadline=None)
    def test_rows_sum_to_one(self, k, eta):
        total = math.fsum(loss_factor(n, k, eta) for n in range(k + 1))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_matrix_consistent_with_scalar(self):
        L = loss_matrix(0.37, 10, 25)
        for n in range(11):
            for k in range(26):
                if n <= k:
                    assert L[n, k] == pytest.approx(loss_factor(n, k, 0.37), rel=1e-12)
                else:
                    assert L[n, k] == 0.0


class TestApplyLoss:
    def test_identity_channel(self):
        p = pmf(ModeType.POISSONIAN, 2.5, 20)
        out = apply_loss(p, 1.0)
        np.testing.assert_allclose(out.probs, p.probs, rtol=0, atol=1e-15)

    @pytest.mark.parametrize(
        "t,mu,eta",
        [
            (ModeType.THERMAL, 2.0, 0.5),
            (ModeType.POISSONIAN, 4.0, 0.25),
            (ModeType.SINGLE_PHOTON, 0.8, 0.6),
        ],
    )
    def test_statistics_invariance(self, t, mu, eta):
        # loss only rescales the mean: compare against the closed form at
        # the reduced mean, with the input computed far enough out that the
        # truncation does not leak into the compared range
        big = 120
        n_max = 25
        lossy = apply_loss(pmf(t, mu, big), eta, n_max)
        direct = pmf(t, mu * eta, n_max)
        np.testing.assert_allclose(lossy.probs, direct.probs, atol=1e-10)

    @given(
        t=st.sampled_from(ALL_TYPES),
        mu=st.floats(0.01, 20.0),
        eta=st.floats(0.0, 1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_loss_scales_means(self, t, mu, eta):
        if t is ModeType.SINGLE_PHOTON:
            mu = min(mu / 20.0, 1.0)
        big = 220
        p = pmf(t, mu, big)
        out = apply_loss(p, eta, big)
        assert out.mean() == pytest.approx(eta * p.mean(), abs=1e-8)

    def test_tail_not_increased_when_range_kept(self):
        p = pmf(ModeType.THERMAL, 3.0, 30)
        out = apply_loss(p, 0.4, 30)
        assert out.tail_mass <= p.tail_mass + 1e-15

    def test_normalization(self):
        p = pmf(ModeType.THERMAL, 6.0, 25)
        out = apply_loss(p, 0.77, 12)
        assert abs(out.probs.sum() + out.tail_mass - 1.0) < 1e-12


class TestConvolve:
    def test_vacuum_is_identity(self):
        x = pmf(ModeType.THERMAL, 1.7, 12)
        out = convolve(vacuum_pmf(12), x)
        np.testing.assert_allclose(out.probs, x.probs, rtol=0, atol=1e-15)

    def test_poisson_additivity(self):
        a = pmf(ModeType.POISSONIAN, 1.0, 40)
        b = pmf(ModeType.POISSONIAN, 2.0, 40)
        out = convolve(a, b, 40)
        expected = pmf(ModeType.POISSONIAN, 3.0, 40)
        np.testing.assert_allclose(out.probs, expected.probs, atol=1e-12)

    def test_triple_thermal_against_partition_sum(self):
        n_max = 18
        parts = [pmf(ModeType.THERMAL, 0.5, n_max) for _ in range(3)]
        got = convolve_many(parts, n_max)
        expected = [1.0] + [0.0] * n_max
        for p in parts:
            expected = convolve_lists(expected, list(p.probs), n_max)
        np.testing.assert_allclose(got.probs, expected, rtol=1e-12)

    @given(
        mu_a=st.floats(0.0, 8.0),
        mu_b=st.floats(0.0, 8.0),
        n_max=st.integers(1, 60),
    )
    @settings(max_examples=100, deadline=None)
    def test_mean_additivity_and_normalization(self, mu_a, mu_b, n_max):
        big = 400  # keeps tails below 1e-12 for mu <= 16
        a = pmf(ModeType.THERMAL, mu_a, big)
        b = pmf(ModeType.POISSONIAN, mu_b, big)
        out = convolve(a, b, big)
        assert abs(out.probs.sum() + out.tail_mass - 1.0) < 1e-12
        if a.tail_mass < 1e-12 and b.tail_mass < 1e-12:
            assert out.mean() == pytest.approx(a.mean() + b.mean(), abs=1e-8)


class TestThermalStack:
    def test_matches_iterated_convolution(self):
        k, mu, n_max = 7, 0.6, 30
        stack = thermal_stack_pmf(mu, k, n_max)
        iterated = convolve_many([pmf(ModeType.THERMAL, mu, n_max)] * k, n_max)
        np.testing.assert_allclose(stack.probs, iterated.probs, rtol=1e-10)

    def test_single_mode_is_thermal(self):
        np.testing.assert_allclose(
            thermal_stack_pmf(1.3, 1, 20).probs,
            pmf(ModeType.THERMAL, 1.3, 20).probs,
            rtol=1e-12,
        )
