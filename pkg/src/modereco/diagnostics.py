"""Goodness of fit, the even/odd nonclassicality witness, and Monte-Carlo
accuracy curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2 as _chi2_dist

from .config import Config
from .forward import ProbMatrix, SourceModel, full_jpd
from .fitting import two_step_fit
from .sampling import CountMatrix, sample_counts, spawn_rngs

__all__ = [
    "pearson_pvalue",
    "HilleryResult",
    "hillery",
    "hillery_parametric_sigma",
    "uncertainty_curve",
]

_MIN_EXPECTED = 5.0  # textbook validity floor for Pearson cells


def _pool_cells(observed: np.ndarray, expected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pool sparse cells for the chi-squared statistic.

    Cells with expected count below the validity floor are merged into one
    pooled cell per total-photon-number shell; pooled shells still below
    the floor collapse into a single remainder, which is finally absorbed
    into the largest cell if it stays too small.
    """
    n = observed.shape[0]
    shell = np.add.outer(np.arange(n), np.arange(n))
    keep_o, keep_e = [], []
    small_o = small_e = 0.0
    for t in range(2 * n - 1):
        mask = shell == t
        o, e = observed[mask], expected[mask]
        big = e >= _MIN_EXPECTED
        keep_o.extend(o[big])
        keep_e.extend(e[big])
        pooled_o, pooled_e = o[~big].sum(), e[~big].sum()
        if pooled_e >= _MIN_EXPECTED:
            keep_o.append(pooled_o)
            keep_e.append(pooled_e)
        else:
            small_o += pooled_o
            small_e += pooled_e
    if small_e >= _MIN_EXPECTED or not keep_e:
        keep_o.append(small_o)
        keep_e.append(small_e)
    else:
        i = int(np.argmax(keep_e))
        keep_o[i] += small_o
        keep_e[i] += small_e
    return np.asarray(keep_o, dtype=float), np.asarray(keep_e, dtype=float)


def pearson_pvalue(
    observed: CountMatrix, model: ProbMatrix, n_fit_params: int
) -> float | None:
    """Upper-tail Pearson chi-squared probability of the observed counts
    under the model, with sparse-cell pooling and ``dof = cells -
    n_fit_params - 1``.  Returns None when no degrees of freedom remain."""
    if observed.counts.shape != model.p.shape:
        raise ValueError("count and model grids differ in shape")
    n_tot = observed.n_tot
    obs = np.append(observed.counts.astype(float).ravel(), float(observed.overflow))
    exp = np.append(n_tot * model.p.ravel(), n_tot * max(model.tail_mass, 0.0))
    obs2d = obs[:-1].reshape(observed.counts.shape)
    exp2d = exp[:-1].reshape(model.p.shape)
    o_pool, e_pool = _pool_cells(obs2d, exp2d)
    # the overflow bin joins as one more cell (or merges if too thin)
    if exp[-1] >= _MIN_EXPECTED:
        o_pool = np.append(o_pool, obs[-1])
        e_pool = np.append(e_pool, exp[-1])
    else:
        i = int(np.argmax(e_pool))
        o_pool[i] += obs[-1]
        e_pool[i] += exp[-1]
    chisq = float(np.sum((o_pool - e_pool) ** 2 / e_pool))
    dof = o_pool.size - n_fit_params - 1
    if dof <= 0:
        return None
    return float(_chi2_dist.sf(chisq, dof))


@dataclass(frozen=True)
class HilleryResult:
    """Even/odd total-photon-number mass balance (vacuum excluded).

    Classical two-arm states satisfy ``even_sum <= odd_sum``; the sums are
    taken over the distribution renormalized within the truncated grid
    (out-of-grid parity is unknown), whose excluded fraction is reported.
    """

    even_sum: float
    odd_sum: float
    vacuum: float
    excluded_fraction: float
    even_sigma: float | None = None
    odd_sigma: float | None = None
    significance: float | None = None

    @property
    def violates_classical_bound(self) -> bool:
        return self.even_sum > self.odd_sum


def hillery(m: ProbMatrix | CountMatrix) -> HilleryResult:
    """Even/odd witness sums of a joint distribution or of measured counts.

    For counts the sums come with binomial-proportion uncertainties and the
    significance of the violation (even - odd in combined sigma units).
    """
    if isinstance(m, CountMatrix):
        grid = m.counts.astype(float)
        in_grid = float(grid.sum())
        excluded = m.overflow / m.n_tot
    else:
        grid = m.p
        in_grid = float(grid.sum())
        excluded = m.tail_mass
    n = grid.shape[0]
    shell = np.add.outer(np.arange(n), np.arange(n))
    even = float(grid[(shell % 2 == 0) & (shell >= 2)].sum()) / in_grid
    odd = float(grid[shell % 2 == 1].sum()) / in_grid
    vac = float(grid[0, 0]) / in_grid

    if isinstance(m, CountMatrix):
        n_in = in_grid
        sig_e = math.sqrt(max(even * (1 - even), 0.0) / n_in)
        sig_o = math.sqrt(max(odd * (1 - odd), 0.0) / n_in)
        denom = math.hypot(sig_e, sig_o)
        signif = (even - odd) / denom if denom > 0 else None
        return HilleryResult(even, odd, vac, excluded, sig_e, sig_o, signif)
    return HilleryResult(even, odd, vac, excluded)


def hillery_parametric_sigma(
    jpd_builder,
    values: np.ndarray,
    covariance: np.ndarray,
    n_resamples: int = 50,
    seed: int = 0,
) -> tuple[float, float]:
    """Parametric-bootstrap uncertainties of model-based witness sums:
    draw fit parameters from their Gaussian covariance, rebuild the
    distribution each time, and take the spread of the sums."""
    if n_resamples < 2:
        raise ValueError("need at least 2 resamples")
    rng = np.random.default_rng(seed)
    values = np.asarray(values, dtype=float)
    draws = rng.multivariate_normal(values, covariance, size=n_resamples)
    evens, odds = [], []
    for row in draws:
        row = np.maximum(row, 1e-9)
        try:
            res = hillery(jpd_builder(row))
        except ValueError:
            continue  # out-of-domain draw
        evens.append(res.even_sum)
        odds.append(res.odd_sum)
    if len(evens) < 2:
        return float("nan"), float("nan")
    return float(np.std(evens, ddof=1)), float(np.std(odds, ddof=1))


@dataclass(frozen=True)
class UncertaintyPoint:
    n_tot: int
    mean_relative_error: float
    n_used: int
    n_excluded: int


def uncertainty_curve(
    model: SourceModel,
    n_tot_list: list[int],
    repeats: int = 60,
    seed: int = 0,
    config: Config | None = None,
) -> list[UncertaintyPoint]:
    """Reconstruction accuracy versus statistics: for each trial count,
    simulate ``repeats`` shot-noise realizations, run the two-step fit with
    the true structure, and average the summed relative brightness error
    sum_j |mu_rec - mu_true| / sum_j mu_true.  Non-converged fits are
    excluded and counted."""
    if repeats < 2:
        raise ValueError("need at least 2 repeats")
    cfg = config or Config()
    model = model.canonical()
    jpd = full_jpd(model)
    true_mus = np.array([m.mu for m in model.modes])
    points = []
    for idx, n_tot in enumerate(n_tot_list):
        rngs = spawn_rngs(seed + 7919 * idx, repeats)
        errors = []
        excluded = 0
        for r, rng in enumerate(rngs):
            counts = sample_counts(jpd, n_tot, rng)
            fit, _, _ = two_step_fit(counts, model, cfg, seed=seed + 31 * r,
                                     restarts=cfg.assignment_restarts)
            if not fit.converged:
                excluded += 1
                continue
            rec = np.array([m.mu for m in fit.model.modes])
            errors.append(float(np.abs(rec - true_mus).sum() / true_mus.sum()))
        points.append(
            UncertaintyPoint(n_tot, float(np.mean(errors)) if errors else float("nan"),
                             len(errors), excluded)
        )
    return points
