"""Mode-structure discovery with no prior structure: thermal escalation,
Poissonian/single-photon typing, sub-threshold pruning, and the search over
conjugated/background assignments of the two arms."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .diagnostics import pearson_pvalue
from .fitting import FitResult, fit_jpd, fit_rpd, fit_thermal_stack
from .forward import ModeSpec, Occupancy, SourceModel, full_jpd
from .photon_stats import ModeType
from .reduction import Rpd
from .sampling import CountMatrix

__all__ = [
    "EscalationRow",
    "escalate_thermal",
    "DetectionResult",
    "detect_structure",
    "prune_modes",
    "Assignment",
    "AssignmentResult",
    "assign_conjugation",
]

_VACUUM_MEAN = 1e-4


@dataclass(frozen=True)
class EscalationRow:
    k_modes: int
    mu_per_mode: float
    total_mean: float
    abs_error: float
    score: float


def escalate_thermal(
    rpd: Rpd,
    k_max: int,
    config: Config | None = None,
    seed: int = 0,
    ks: list[int] | None = None,
) -> list[EscalationRow]:
    """Fit growing stacks of equally populated thermal modes to one arm's
    distribution; a plateauing error with equal per-mode brightness is the
    signature of an underlying Poissonian component."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    cfg = config or Config()
    rows = []
    for k in ks if ks is not None else range(1, k_max + 1):
        fit = fit_thermal_stack(rpd, k, cfg, seed=seed + k, restarts=4)
        mu = fit.params["mu_per_mode"]
        rows.append(EscalationRow(k, mu, k * mu, fit.abs_error, fit.score))
    return rows


@dataclass
class DetectionResult:
    modes: list[tuple[ModeType, float]]
    fit: FitResult | None
    ambiguous: bool = False
    message: str = ""
    history: list[dict] = field(default_factory=list)
    # candidate modes dropped by the population rule; goodness-of-fit on the
    # joint distribution may later argue for restoring one of them
    pruned: list[tuple[ModeType, float]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.modes)


def _improvement_threshold(cfg: Config, ref_score: float, counts_based: bool) -> float:
    base = cfg.min_score_drop if counts_based else 0.0
    return max(base, cfg.rel_score_drop * abs(ref_score))


def _equal_cluster(mus: list[float], spread: float) -> list[int] | None:
    """Largest index set of near-equal means (descending order assumed);
    None unless at least two modes fall within the relative spread."""
    best: list[int] | None = None
    i = 0
    while i < len(mus):
        j = i
        while (
            j + 1 < len(mus)
            and mus[i] <= (1.0 + spread) * mus[j + 1]
        ):
            j += 1
        if j > i and (best is None or j - i + 1 > len(best)):
            best = list(range(i, j + 1))
        i = max(j, i + 1)
    return best


def detect_structure(
    rpd: Rpd,
    candidate_types: tuple[ModeType, ...] | None = None,
    config: Config | None = None,
    seed: int = 0,
) -> DetectionResult:
    """Determine the number and statistics of one arm's modes.

    Thermal modes are added while the fit improves beyond a noise-scaled
    threshold; a near-equal group of thermal means triggers a Poissonian
    replacement candidate which is kept if it beats the thermal plateau;
    remaining modes are then greedily re-typed against the other candidate
    statistics, and finally sub-threshold modes are pruned.  Structures
    whose scores are indistinguishable within the noise margin are flagged
    ambiguous rather than silently resolved.
    """
    cfg = config or Config()
    cand = tuple(candidate_types or cfg.candidate_types)
    counts_based = rpd.n_tot is not None
    history: list[dict] = []

    if rpd.mean() < _VACUUM_MEAN:
        return DetectionResult([], None, message="vacuum input")

    cache: dict[tuple[ModeType, ...], FitResult] = {}

    def fitted(types: tuple[ModeType, ...], init: list[float] | None = None) -> FitResult:
        if types not in cache:
            cache[types] = fit_rpd(
                rpd, list(types), cfg,
                seed=seed + 611 * len(cache), restarts=cfg.detect_restarts,
                init_mus=init,
            )
            history.append(
                {
                    "types": [t.value for t in types],
                    "mus": [m for _, m in cache[types].modes],
                    "score": cache[types].score,
                    "abs_error": cache[types].abs_error,
                }
            )
        return cache[types]

    # thermal escalation with free means; each growth step warm-starts from
    # the previous optimum with the new mode seeded small
    pruned_candidates: list[tuple[ModeType, float]] = []
    structure: tuple[ModeType, ...] = (ModeType.THERMAL,)
    best = fitted(structure)
    while len(structure) < cfg.max_detect_modes:
        grown = structure + (ModeType.THERMAL,)
        prev_mus = [m for _, m in best.modes]
        trial = fitted(grown, init=prev_mus + [0.02 * sum(prev_mus)])
        mus = [m for _, m in trial.modes]
        total = sum(mus)
        if min(mus) < cfg.prune_threshold * total:
            # the added mode falls below the population rule; remember it as
            # a candidate in case the joint fit later shows lack of fit
            if min(mus) > 1e-6 * total and best.score - trial.score > _improvement_threshold(
                cfg, best.score, counts_based
            ):
                pruned_candidates.append((ModeType.THERMAL, min(mus)))
            break
        if best.score - trial.score < _improvement_threshold(cfg, best.score, counts_based):
            break
        structure, best = grown, trial

        # equal-population signature: try folding the near-equal thermal
        # cluster into one Poissonian; keep it if that beats the stack
        if ModeType.POISSONIAN in cand:
            th_idx = [i for i, (t, _) in enumerate(best.modes) if t is ModeType.THERMAL]
            th_mus = [best.modes[i][1] for i in th_idx]
            cluster_local = _equal_cluster(th_mus, cfg.equal_population_spread)
            if cluster_local is not None:
                cluster = {th_idx[i] for i in cluster_local}
                kept = [
                    (t, m) for i, (t, m) in enumerate(best.modes) if i not in cluster
                ]
                pois_structure = tuple(
                    [t for t, _ in kept] + [ModeType.POISSONIAN]
                )
                pois_init = [m for _, m in kept] + [
                    sum(best.modes[i][1] for i in cluster)
                ]
                pois_trial = fitted(pois_structure, init=pois_init)
                if pois_trial.score <= best.score:
                    structure, best = pois_structure, pois_trial

    # greedy re-typing of individual modes, warm-started at the current means
    improved = True
    while improved:
        improved = False
        modes = best.modes
        for j in range(len(modes)):
            for t in cand:
                if t is modes[j][0]:
                    continue
                if t is ModeType.SINGLE_PHOTON and modes[j][1] > 0.95:
                    continue
                trial_types = tuple(
                    t if i == j else mt for i, (mt, _) in enumerate(modes)
                )
                trial = fitted(trial_types, init=[m for _, m in modes])
                thr = max(
                    cfg.type_accept_drop if counts_based else 0.0,
                    cfg.rel_score_drop * abs(best.score),
                )
                if best.score - trial.score > thr:
                    best = trial
                    improved = True
                    break
            if improved:
                break

    # prune weak modes and refit the reduced structure for clean means
    kept = prune_modes(best.modes, cfg.prune_threshold)
    if not kept:
        return DetectionResult([], None, message="all modes below population threshold",
                               history=history, pruned=list(best.modes))
    if len(kept) != len(best.modes):
        pruned_candidates.extend(
            (t, m) for t, m in best.modes if (t, m) not in kept
        )
        best = fitted(tuple(t for t, _ in kept))

    # ambiguity: a viable alternative type composition within the noise margin
    best_key = tuple(sorted(t.value for t, _ in best.modes))
    ambiguous = False
    rivals = []
    for types, fit in cache.items():
        key = tuple(sorted(t.value for t in types))
        if key == best_key:
            continue
        mus = [m for _, m in fit.modes]
        viable = min(mus) >= cfg.prune_threshold * sum(mus)
        if viable and fit.score < best.score + cfg.ambiguity_margin:
            ambiguous = True
            rivals.append([t.value for t in types])
    message = ""
    if ambiguous:
        message = f"structures within noise of the best: {rivals}"

    return DetectionResult(list(best.modes), best, ambiguous, message, history,
                           pruned_candidates)


def prune_modes(
    modes: list[tuple[ModeType, float]], threshold: float = 0.01
) -> list[tuple[ModeType, float]]:
    """Drop modes whose population is below ``threshold`` of the total mean
    photon number, keeping canonical order."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    total = sum(mu for _, mu in modes)
    kept = [(t, mu) for t, mu in modes if mu >= threshold * total]
    order = {ModeType.THERMAL: 0, ModeType.POISSONIAN: 1, ModeType.SINGLE_PHOTON: 2}
    return sorted(kept, key=lambda tm: (order[tm[0]], -tm[1]))


@dataclass
class Assignment:
    """One way of pairing same-type signal and idler modes into conjugated
    modes, everything unpaired staying background."""

    pairs: tuple[tuple[int, int], ...]
    model: SourceModel | None = None
    fit: FitResult | None = None
    p_value: float | None = None


@dataclass
class AssignmentResult:
    best_model: SourceModel
    best_fit: FitResult
    ranking: list[Assignment]
    truncated: bool = False
    message: str = ""


def _enumerate_matchings(
    sig: list[tuple[ModeType, float]], idl: list[tuple[ModeType, float]]
):
    """All partial injective type-respecting matchings between the arms."""
    def recurse(i, used, acc):
        if i == len(sig):
            yield tuple(acc)
            return
        yield from recurse(i + 1, used, acc)  # signal mode i stays background
        for j in range(len(idl)):
            if j not in used and idl[j][0] is sig[i][0]:
                yield from recurse(i + 1, used | {j}, acc + [(i, j)])

    yield from recurse(0, frozenset(), [])


def _assignment_template(
    pairs, sig, idl, n_max: int
) -> tuple[SourceModel, dict]:
    modes = []
    t_s, t_i = [], []
    paired_s = {i for i, _ in pairs}
    paired_i = {j for _, j in pairs}
    for i, j in pairs:
        t, mu_s = sig[i]
        mu_i = idl[j][1]
        mu0 = mu_s + mu_i  # consistent with both arms at eta = 0.5
        if t is ModeType.SINGLE_PHOTON:
            mu0 = min(mu0, 0.99)
        modes.append(ModeSpec(t, mu0, Occupancy.CONJUGATED, 0.5, 0.5))
        t_s.append(mu_s)
        t_i.append(mu_i)
    for i, (t, mu) in enumerate(sig):
        if i not in paired_s:
            modes.append(ModeSpec(t, mu, Occupancy.SIGNAL_ONLY))
    for j, (t, mu) in enumerate(idl):
        if j not in paired_i:
            modes.append(ModeSpec(t, mu, Occupancy.IDLER_ONLY))
    constraints = {"signal": t_s, "idler": t_i} if pairs else None
    return SourceModel(tuple(modes), n_max), constraints


def assign_conjugation(
    signal_modes: list[tuple[ModeType, float]],
    idler_modes: list[tuple[ModeType, float]],
    observed: CountMatrix,
    config: Config | None = None,
    seed: int = 0,
) -> AssignmentResult:
    """Search over conjugated/background assignments of the detected arm
    modes: each candidate pairing is fitted to the joint counts and ranked
    by its Pearson chi-squared probability; the winner is refit at full
    restart budget.  The enumeration prefers pairing bright with bright and
    is capped (with notice) against combinatorial blow-up."""
    cfg = config or Config()
    sig = sorted(signal_modes, key=lambda tm: -tm[1])
    idl = sorted(idler_modes, key=lambda tm: -tm[1])

    matchings = list(_enumerate_matchings(sig, idl))
    # bright-with-bright first: larger pairings, larger paired product mass
    matchings.sort(
        key=lambda ps: (-len(ps), -sum(sig[i][1] * idl[j][1] for i, j in ps))
    )
    truncated = len(matchings) > cfg.assignment_cap
    matchings = matchings[: cfg.assignment_cap]

    ranking: list[Assignment] = []
    for k, pairs in enumerate(matchings):
        template, constraints = _assignment_template(pairs, sig, idl, observed.n_max)
        fit = fit_jpd(
            observed, template, constraints, cfg,
            seed=seed + 127 * k, restarts=cfg.assignment_restarts,
        )
        p_val = None
        if fit.model is not None:
            p_val = pearson_pvalue(observed, full_jpd(fit.model), len(fit.params))
        ranking.append(Assignment(pairs, fit.model, fit, p_val))

    ranking.sort(
        key=lambda a: (
            -(a.p_value if a.p_value is not None else -1.0),
            a.fit.score if a.fit is not None else float("inf"),
        )
    )
    best = ranking[0]
    template, constraints = _assignment_template(best.pairs, sig, idl, observed.n_max)
    final = fit_jpd(observed, template, constraints, cfg, seed=seed + 7,
                    restarts=cfg.final_restarts)
    final.p_value = pearson_pvalue(observed, full_jpd(final.model), len(final.params))
    message = "assignment enumeration truncated at cap" if truncated else ""
    return AssignmentResult(final.model, final, ranking, truncated, message)
