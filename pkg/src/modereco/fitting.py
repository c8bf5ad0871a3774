"""Scoring function, bounded derivative-free minimization, and the 1-D
(per-arm) and 2-D (joint) fit drivers of the two-step reconstruction.

Parameters are fitted in unconstrained coordinates (log for means,
log-odds for transmittances and single-photon means) by multi-start
Nelder-Mead simplex search; the data enter through the square-root
residual score quoted below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize as _nm_minimize
from scipy.special import expit, logit
from scipy.stats import qmc

from .config import Config
from .forward import (
    ModeSpec,
    Occupancy,
    ProbMatrix,
    SourceModel,
    full_jpd,
    generation_cutoff,
)
from .photon_stats import ModeType, loss_matrix, pmf, thermal_stack_pmf, vacuum_pmf
from .reduction import Rpd
from .sampling import CountMatrix

__all__ = [
    "score",
    "ParamSpace",
    "FitResult",
    "minimize",
    "fit_rpd",
    "fit_thermal_stack",
    "fit_jpd",
    "sqrt_scale_sigma",
    "exact_sigmas",
    "gauss_newton_covariance",
]

_MU_FLOOR = 1e-9  # transformed-space anchor for zero-ish means
_LOGIT_CLIP = 1e-9


def score(observed: np.ndarray, model: np.ndarray, sigmas: np.ndarray | float) -> float:
    """Weighted square-root residual sum:  sum_j ((sqrt x_j - sqrt f_j) / sigma_j)^2.

    Raises:
        ValueError: on shape mismatch or non-positive sigmas.
    """
    x = np.asarray(observed, dtype=float)
    f = np.asarray(model, dtype=float)
    if x.shape != f.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {f.shape}")
    sig = np.broadcast_to(np.asarray(sigmas, dtype=float), x.shape)
    if np.any(sig <= 0):
        raise ValueError("sigmas must be strictly positive")
    r = (np.sqrt(np.maximum(x, 0.0)) - np.sqrt(np.maximum(f, 0.0))) / sig
    return float(np.sum(r * r))


def sqrt_scale_sigma(n_tot: int) -> float:
    """Uncertainty of sqrt(p_hat) for a counted frequency: 1 / (2 sqrt(N)).

    This is the shot-noise sigma sqrt(p/N) (with its 1/N zero-count floor)
    carried through the square-root transform; it is uniform across cells,
    which is what makes the score chi-squared-scaled at the true model.
    """
    return 1.0 / (2.0 * math.sqrt(n_tot))


def exact_sigmas(probs: np.ndarray, n_eff: float) -> np.ndarray:
    """Weighting convention for fits of exact (noise-free) distributions:
    the shot-noise sigmas a measurement of ``n_eff`` trials would have,
    floored at 1/n_eff.  Keeps noise-free mode analysis consistent with
    the counted-data behaviour."""
    return np.maximum(np.sqrt(np.asarray(probs) / n_eff), 1.0 / n_eff)


@dataclass(frozen=True)
class Param:
    """One free parameter: a name and its bounding transform."""

    name: str
    kind: str  # "log" (positive) or "logit" (unit interval)


class ParamSpace:
    """Bijection between named, bounded natural parameters and the
    unconstrained coordinates the simplex search runs in."""

    def __init__(self, params: list[Param]):
        if not params:
            raise ValueError("parameter space must not be empty")
        self.params = list(params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def to_unconstrained(self, values: np.ndarray) -> np.ndarray:
        theta = np.empty(len(self.params))
        for i, (p, v) in enumerate(zip(self.params, values)):
            if p.kind == "log":
                theta[i] = math.log(max(v, _MU_FLOOR))
            else:
                theta[i] = logit(min(max(v, _LOGIT_CLIP), 1.0 - _LOGIT_CLIP))
        return theta

    def from_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        values = np.empty(len(self.params))
        for i, p in enumerate(self.params):
            values[i] = math.exp(theta[i]) if p.kind == "log" else expit(theta[i])
        return values


@dataclass
class FitResult:
    """Outcome of a multi-start fit."""

    params: dict[str, float]
    score: float
    converged: bool
    restarts_used: int
    best_restart_seed: int
    restart_scores: list[float] = field(default_factory=list)
    n_evals: int = 0
    p_value: float | None = None
    abs_error: float | None = None
    modes: list[tuple[ModeType, float]] | None = None
    model: SourceModel | None = None
    message: str = ""


def _single_nm(objective, theta0, space, cfg: Config):
    n = len(space)
    maxiter = cfg.max_iter_per_param * n

    def fun(theta):
        return objective(space.from_unconstrained(theta))

    res = _nm_minimize(
        fun,
        theta0,
        method="Nelder-Mead",
        options={
            "xatol": cfg.xatol,
            "fatol": cfg.fatol,
            "maxiter": maxiter,
            "maxfev": 2 * maxiter,
            "adaptive": n > 4,
        },
    )
    return res


def minimize(
    objective,
    space: ParamSpace,
    initial: np.ndarray,
    restarts: int,
    seed: int,
    config: Config | None = None,
) -> FitResult:
    """Multi-start Nelder-Mead in transformed coordinates.

    The first start is the supplied initial point; the remaining starts are
    Latin-hypercube samples in a box of half-width ``config.init_spread``
    around it.  The best end point is re-polished until the score stops
    improving.  Never raises on non-convergence; ``converged`` reflects
    whether the winning restart terminated on tolerance.
    """
    cfg = config or Config()
    theta0 = space.to_unconstrained(np.asarray(initial, dtype=float))
    starts = [theta0]
    if restarts > 1:
        sampler = qmc.LatinHypercube(d=len(space), seed=seed)
        unit = sampler.random(restarts - 1)
        starts.extend(theta0 + cfg.init_spread * (2.0 * unit - 1.0))

    if cfg.n_jobs != 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_single_nm)(objective, th, space, cfg) for th in starts
        )
    else:
        results = [_single_nm(objective, th, space, cfg) for th in starts]

    best_idx = min(range(len(results)), key=lambda i: (results[i].fun, i))
    best = results[best_idx]
    n_evals = sum(r.nfev for r in results)

    for _ in range(cfg.polish_rounds):
        again = _single_nm(objective, best.x, space, cfg)
        n_evals += again.nfev
        if again.fun < best.fun:
            best = again
        else:
            break

    restart_scores = [float(r.fun) for r in results]
    agree = sum(1 for s in restart_scores if s <= best.fun + max(1e-9, 1e-6 * abs(best.fun)))
    message = ""
    if restarts >= 4 and agree < max(2, restarts // 4):
        message = "restarts disagree; score landscape may have local minima"

    values = space.from_unconstrained(best.x)
    return FitResult(
        params=dict(zip(space.names, values.tolist())),
        score=float(best.fun),
        converged=bool(best.success),
        restarts_used=len(starts),
        best_restart_seed=best_idx,
        restart_scores=restart_scores,
        n_evals=n_evals,
        message=message,
    )


# ---------------------------------------------------------------------------
# 1-D (reduced distribution) fits
# ---------------------------------------------------------------------------


def _mu_kind(mode_type: ModeType) -> str:
    return "logit" if mode_type is ModeType.SINGLE_PHOTON else "log"


def _with_remainder(vec: np.ndarray) -> np.ndarray:
    """Append the out-of-truncation remainder as one extra cell.

    Whatever mass the model pushes beyond the grid is observable (it is
    the overflow fraction of a measurement), and fitting it prevents
    runaway-brightness solutions that dodge the in-grid residuals by
    spreading all mass past the truncation.
    """
    v = np.asarray(vec, dtype=float).ravel()
    return np.append(v, max(0.0, 1.0 - v.sum()))


def _rpd_model(template: list[ModeType], mus: np.ndarray, n_max: int) -> np.ndarray:
    out = vacuum_pmf(n_max).probs
    for t, mu in zip(template, mus):
        out = np.convolve(out, pmf(t, float(mu), n_max).probs)[: n_max + 1]
    return out


def _guard_cut(probs: np.ndarray, tail_mass: float, factor: float) -> int:
    """Largest arm photon number that is safe to fit.

    When a reduced distribution comes from a truncated joint grid, its top
    rows are depressed by events in which the *other* arm overflowed (the
    arms are correlated, so the leak concentrates there).  The leak is
    bounded by the recorded out-of-grid mass; dropping the top rows that
    hold ``factor`` times that mass keeps the fitted range clean."""
    if tail_mass <= 0.0:
        return probs.size - 1
    above = np.concatenate([np.cumsum(probs[::-1])[::-1][1:], [0.0]])
    target = min(factor * tail_mass, 0.3 * probs.sum())
    hits = np.nonzero(above >= target)[0]
    return int(hits.max()) if hits.size else probs.size - 1


def _rpd_vector(rpd: Rpd, cfg: Config) -> tuple[np.ndarray, np.ndarray | float, bool, int]:
    """Data vector, weights, remainder flag and fit range for a 1-D fit.

    Counted data compare in-grid cells only (the recorded overflow is a
    joint quantity, not a single-arm tail).  Exact distributions append the
    truncation remainder, which anchors the total brightness and blocks
    runaway solutions under the tail-heavy exact-fit weighting.
    """
    n_cut = _guard_cut(rpd.probs, rpd.tail_mass, cfg.rpd_guard_factor)
    probs = rpd.probs[: n_cut + 1]
    if rpd.n_tot is not None:
        return probs, sqrt_scale_sigma(rpd.n_tot), False, n_cut
    x = _with_remainder(probs)
    return x, exact_sigmas(x, cfg.exact_fit_n_eff), True, n_cut


def fit_rpd(
    rpd: Rpd,
    template: list[ModeType] | tuple[ModeType, ...],
    config: Config | None = None,
    seed: int = 0,
    restarts: int | None = None,
    init_mus: list[float] | None = None,
) -> FitResult:
    """Fit one arm's reduced distribution with the given mode types,
    recovering effective (loss-adjusted) means only.  Modes come back in
    canonical order: thermal, Poissonian, single-photon, brighter first.

    ``init_mus`` warm-starts the search (structure-growth callers seed the
    new mode small instead of splitting the mean evenly)."""
    cfg = config or Config()
    template = list(template)
    if not template:
        raise ValueError("template must contain at least one mode")
    x, sig, extended, n_fit = _rpd_vector(rpd, cfg)

    space = ParamSpace([Param(f"mu_{i}", _mu_kind(t)) for i, t in enumerate(template)])
    mean = max(rpd.mean(), 1e-6)
    if init_mus is not None:
        if len(init_mus) != len(template):
            raise ValueError("init_mus length must match the template")
        init = np.array(
            [min(v, 0.95) if t is ModeType.SINGLE_PHOTON else v
             for v, t in zip(init_mus, template)]
        )
    else:
        init = np.array(
            [min(mean / len(template), 0.9) if t is ModeType.SINGLE_PHOTON else mean / len(template)
             for t in template]
        )

    def objective(values):
        f = _rpd_model(template, values, n_fit)
        return score(x, _with_remainder(f) if extended else f, sig)

    result = minimize(objective, space, init, restarts or cfg.restarts, seed, cfg)
    mus = [result.params[f"mu_{i}"] for i in range(len(template))]
    f = _rpd_model(template, np.array(mus), rpd.n_max)
    result.abs_error = float(np.sqrt(np.sum((rpd.probs - f) ** 2)))
    result.modes = _canonical_modes(list(zip(template, mus)))
    return result


def _canonical_modes(modes: list[tuple[ModeType, float]]) -> list[tuple[ModeType, float]]:
    order = {ModeType.THERMAL: 0, ModeType.POISSONIAN: 1, ModeType.SINGLE_PHOTON: 2}
    return sorted(modes, key=lambda tm: (order[tm[0]], -tm[1]))


def fit_thermal_stack(
    rpd: Rpd,
    k_modes: int,
    config: Config | None = None,
    seed: int = 0,
    restarts: int = 4,
) -> FitResult:
    """Fit ``k_modes`` equally populated thermal modes (one shared mean) to
    a reduced distribution."""
    cfg = config or Config()
    x, sig, extended, n_fit = _rpd_vector(rpd, cfg)
    space = ParamSpace([Param("mu_per_mode", "log")])
    init = np.array([max(rpd.mean() / k_modes, 1e-6)])

    def objective(values):
        f = thermal_stack_pmf(float(values[0]), k_modes, n_fit).probs
        return score(x, _with_remainder(f) if extended else f, sig)

    result = minimize(objective, space, init, restarts, seed, cfg)
    mu = result.params["mu_per_mode"]
    f = thermal_stack_pmf(mu, k_modes, n_max).probs
    result.abs_error = float(np.sqrt(np.sum((rpd.probs - f) ** 2)))
    result.modes = [(ModeType.THERMAL, mu)] * k_modes
    return result


# ---------------------------------------------------------------------------
# 2-D (joint distribution) fits
# ---------------------------------------------------------------------------


class _JpdEvaluator:
    """Builds model joint matrices from a parameter vector for a fixed
    template structure.

    With shared losses the pair-number distribution of all conjugated modes
    is convolved first and a single loss matrix per arm is applied, which
    is algebraically identical to per-mode loss at equal transmittances and
    much cheaper inside the optimizer loop.
    """

    def __init__(self, template: SourceModel, n_max: int, share_losses: bool):
        self.template = template.canonical()
        self.n_max = n_max
        self.share =  share_losses
        self.conj = self.template.conjugated
        self.sig_bg = self.template.signal_background
        self.idl_bg = self.template.idler_background
        params: list[Param] = []
        for i, m in enumerate(self.conj):
            params.append(Param(f"mu_c{i}", _mu_kind(m.mode_type)))
        if self.conj:
            if share_losses:
                params.append(Param("eta_s", "logit"))
                params.append(Param("eta_i", "logit"))
            else:
                for i in range(len(self.conj)):
                    params.append(Param(f"eta_s{i}", "logit"))
                    params.append(Param(f"eta_i{i}", "logit"))
        for i in range(len(self.sig_bg)):
            params.append(Param(f"mu_s{i}", "log"))
        for i in range(len(self.idl_bg)):
            params.append(Param(f"mu_i{i}", "log"))
        self.space = ParamSpace(params)

    def initial_values(self) -> np.ndarray:
        vals = [m.mu for m in self.conj]
        if self.conj:
            if self.share:
                vals += [self.conj[0].eta_s, self.conj[0].eta_i]
            else:
                for m in self.conj:
                    vals += [m.eta_s, m.eta_i]
        vals += [m.mu for m in self.sig_bg]
        vals += [m.mu for m in self.idl_bg]
        return np.array(vals)

    def unpack(self, values: np.ndarray) -> SourceModel:
        names = self.space.names
        d = dict(zip(names, values))
        modes = []
        for i, m in enumerate(self.conj):
            es = d["eta_s"] if self.share else d[f"eta_s{i}"]
            ei = d["eta_i"] if self.share else d[f"eta_i{i}"]
            modes.append(replace(m, mu=d[f"mu_c{i}"], eta_s=es, eta_i=ei))
        for i, m in enumerate(self.sig_bg):
            modes.append(replace(m, mu=d[f"mu_s{i}"]))
        for i, m in enumerate(self.idl_bg):
            modes.append(replace(m, mu=d[f"mu_i{i}"]))
        return SourceModel(tuple(modes), self.n_max)

    def matrix(self, values: np.ndarray) -> np.ndarray:
        if self.share and self.conj:
            return self._shared_matrix(values)
        return full_jpd(self.unpack(values)).p

    def _shared_matrix(self, values: np.ndarray) -> np.ndarray:
        n_max = self.n_max
        d = dict(zip(self.space.names, values))
        conj_specs = tuple(
            replace(m, mu=d[f"mu_c{i}"]) for i, m in enumerate(self.conj)
        )
        k_lim = generation_cutoff(conj_specs, n_max)
        pair = vacuum_pmf(k_lim).probs
        for m in conj_specs:
            pair = np.convolve(pair, pmf(m.mode_type, m.mu, k_lim).probs)[: k_lim + 1]
        ls = loss_matrix(d["eta_s"], n_max, k_lim)
        li = loss_matrix(d["eta_i"], n_max, k_lim)
        out = (ls * pair[None, :]) @ li.T
        us = self._bg_vector(self.sig_bg, [d[f"mu_s{i}"] for i in range(len(self.sig_bg))])
        ui = self._bg_vector(self.idl_bg, [d[f"mu_i{i}"] for i in range(len(self.idl_bg))])
        if us is not None:
            out = np.apply_along_axis(lambda c: np.convolve(c, us)[: n_max + 1], 0, out)
        if ui is not None:
            out = np.apply_along_axis(lambda r: np.convolve(r, ui)[: n_max + 1], 1, out)
        return out

    def _bg_vector(self, specs, mus) -> np.ndarray | None:
        if not specs:
            return None
        out = vacuum_pmf(self.n_max).probs
        for m, mu in zip(specs, mus):
            out = np.convolve(out, pmf(m.mode_type, float(mu), self.n_max).probs)[: self.n_max + 1]
        return out


def _is_degenerate(x: np.ndarray) -> bool:
    return np.count_nonzero(x) <= 1


def fit_jpd(
    observed: CountMatrix | ProbMatrix,
    template: SourceModel,
    constraints: dict | None = None,
    config: Config | None = None,
    seed: int = 0,
    restarts: int | None = None,
    share_losses: bool | None = None,
) -> FitResult:
    """Fit the full mode model to a joint distribution.

    ``template`` fixes mode count, types and occupancies and provides the
    starting point (step-1 effective means with transmittances at 0.5).
    ``constraints`` optionally ties each conjugated mode's mu*eta to the
    step-1 effective means through a soft quadratic penalty::

        {"signal": [mu_eff per conjugated mode], "idler": [...]}

    Non-convergence is reported in the result, never raised.
    """
    cfg = config or Config()
    share = cfg.share_losses if share_losses is None else share_losses

    if isinstance(observed, CountMatrix):
        x = observed.counts / observed.n_tot
        sig = sqrt_scale_sigma(observed.n_tot)
        n_max = observed.n_max
    else:
        x = observed.p
        sig = 1.0
        n_max = observed.n_max

    evaluator = _JpdEvaluator(template, n_max, share)

    if _is_degenerate(x):
        vals = evaluator.initial_values()
        boundary = np.where(
            np.array([p.kind == "log" for p in evaluator.space.params]), _MU_FLOOR, 0.5
        )
        model = evaluator.unpack(boundary)
        return FitResult(
            params=dict(zip(evaluator.space.names, boundary.tolist())),
            score=float("nan"),
            converged=False,
            restarts_used=0,
            best_restart_seed=-1,
            model=model.canonical(),
            message="degenerate input: all events in a single cell; "
            "returning the vacuum-boundary solution",
        )

    targets = _penalty_targets(evaluator, constraints)
    x_ext = _with_remainder(x)

    def objective(values):
        s = score(x_ext, _with_remainder(evaluator.matrix(values)), sig)
        if targets is not None:
            s += cfg.penalty_weight * _penalty(evaluator, values, targets)
        return s

    result = minimize(
        objective, evaluator.space, evaluator.initial_values(),
        restarts or cfg.restarts, seed, cfg,
    )
    values = np.array([result.params[n] for n in evaluator.space.names])
    f = evaluator.matrix(values)
    result.abs_error = float(np.sqrt(np.sum((x - f) ** 2)))
    # report the data score without the coupling penalty
    result.score = score(x_ext, _with_remainder(f), sig)
    result.model = evaluator.unpack(values).canonical()
    return result


def _penalty_targets(evaluator: _JpdEvaluator, constraints: dict | None):
    if not constraints or not evaluator.conj:
        return None
    t_s = list(constraints.get("signal", []))
    t_i = list(constraints.get("idler", []))
    if len(t_s) != len(evaluator.conj) or len(t_i) != len(evaluator.conj):
        raise ValueError(
            "constraints must list one signal and one idler effective mean "
            f"per conjugated mode ({len(evaluator.conj)} expected)"
        )
    return np.array(t_s), np.array(t_i)


def _penalty(evaluator: _JpdEvaluator, values: np.ndarray, targets) -> float:
    d = dict(zip(evaluator.space.names, values))
    t_s, t_i = targets
    total = 0.0
    for i in range(len(evaluator.conj)):
        mu = d[f"mu_c{i}"]
        es = d["eta_s"] if evaluator.share else d[f"eta_s{i}"]
        ei = d["eta_i"] if evaluator.share else d[f"eta_i{i}"]
        total += ((mu * es - t_s[i]) / max(t_s[i], 1e-6)) ** 2
        total += ((mu * ei - t_i[i]) / max(t_i[i], 1e-6)) ** 2
    return total


# ---------------------------------------------------------------------------
# two-step driver
# ---------------------------------------------------------------------------


def _arm_types(template: SourceModel, arm_bg) -> list[ModeType]:
    return [m.mode_type for m in template.conjugated] + [m.mode_type for m in arm_bg]


def _assign_by_brightness(
    slots: list[tuple[int, ModeType, float]], fitted: list[tuple[ModeType, float]]
) -> dict[int, float]:
    """Match fitted arm modes to template slots: within each mode type,
    brighter fitted means go to the slots expected to be brighter."""
    out: dict[int, float] = {}
    for t in set(ft for _, ft, _ in slots):
        slot_group = sorted(
            (s for s in slots if s[1] is t), key=lambda s: -s[2]
        )
        fit_group = sorted((m for tt, m in fitted if tt is t), reverse=True)
        if len(slot_group) != len(fit_group):
            raise ValueError("fitted arm structure does not match the template")
        for (idx, _, _), mu in zip(slot_group, fit_group):
            out[idx] = mu
    return out


def two_step_fit(
    observed: CountMatrix | ProbMatrix,
    template: SourceModel,
    config: Config | None = None,
    seed: int = 0,
    restarts: int | None = None,
    share_losses: bool | None = None,
) -> tuple[FitResult, FitResult, FitResult]:
    """Full two-step reconstruction with a known mode structure.

    Step 1 fits each arm's reduced distribution with the template's arm
    types to pin the effective means; step 2 fits the joint distribution
    seeded by those means (transmittances start at 0.5) and softly tied to
    them.  Returns (joint fit, signal arm fit, idler arm fit).
    """
    from .reduction import Arm, marginalize

    cfg = config or Config()
    template = template.canonical()
    conj = template.conjugated
    sig_bg = template.signal_background
    idl_bg = template.idler_background

    rpd_s = marginalize(observed, Arm.SIGNAL)
    rpd_i = marginalize(observed, Arm.IDLER)
    fit_s = fit_rpd(rpd_s, _arm_types(template, sig_bg), cfg, seed=seed * 2 + 1,
                    restarts=cfg.detect_restarts)
    fit_i = fit_rpd(rpd_i, _arm_types(template, idl_bg), cfg, seed=seed * 2 + 2,
                    restarts=cfg.detect_restarts)

    # slots: conjugated modes then backgrounds, with expected effective means
    slots_s = [(j, m.mode_type, m.mu * m.eta_s) for j, m in enumerate(conj)]
    slots_s += [(len(conj) + j, m.mode_type, m.mu) for j, m in enumerate(sig_bg)]
    slots_i = [(j, m.mode_type, m.mu * m.eta_i) for j, m in enumerate(conj)]
    slots_i += [(len(conj) + j, m.mode_type, m.mu) for j, m in enumerate(idl_bg)]
    eff_s = _assign_by_brightness(slots_s, fit_s.modes)
    eff_i = _assign_by_brightness(slots_i, fit_i.modes)

    modes = []
    for j, m in enumerate(conj):
        mu0 = eff_s[j] + eff_i[j]  # consistent with eta_s = eta_i = 0.5
        if m.mode_type is ModeType.SINGLE_PHOTON:
            mu0 = min(mu0, 0.99)
        modes.append(replace(m, mu=mu0, eta_s=0.5, eta_i=0.5))
    for j, m in enumerate(sig_bg):
        modes.append(replace(m, mu=eff_s[len(conj) + j]))
    for j, m in enumerate(idl_bg):
        modes.append(replace(m, mu=eff_i[len(conj) + j]))
    start = SourceModel(tuple(modes), template.n_max)
    constraints = {
        "signal": [eff_s[j] for j in range(len(conj))],
        "idler": [eff_i[j] for j in range(len(conj))],
    } if conj else None

    joint = fit_jpd(observed, start, constraints, cfg, seed=seed,
                    restarts=restarts, share_losses=share_losses)
    return joint, fit_s, fit_i


# ---------------------------------------------------------------------------
# local parameter uncertainties
# ---------------------------------------------------------------------------


def gauss_newton_covariance(
    model_fn,
    values: np.ndarray,
    observed: np.ndarray,
    sigmas: np.ndarray | float,
    rel_step: float = 1e-4,
) -> np.ndarray:
    """Covariance of the fitted parameters from the Gauss-Newton
    approximation at the optimum: inv(J^T J) of the score residuals,
    with J taken by central differences in natural parameter space."""
    values = np.asarray(values, dtype=float)
    x = np.asarray(observed, dtype=float).ravel()
    sig = np.broadcast_to(np.asarray(sigmas, dtype=float), x.shape).ravel()

    def residuals(v):
        f = np.asarray(model_fn(v), dtype=float).ravel()
        return (np.sqrt(np.maximum(x, 0.0)) - np.sqrt(np.maximum(f, 0.0))) / sig

    cols = []
    for i, v in enumerate(values):
        h = max(abs(v) * rel_step, 1e-9)
        up, dn = values.copy(), values.copy()
        up[i] += h
        dn[i] = max(dn[i] - h, 0.0)
        cols.append((residuals(up) - residuals(dn)) / (up[i] - dn[i]))
    jac = np.column_stack(cols)
    jtj = jac.T @ jac
    try:
        return np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(jtj)
