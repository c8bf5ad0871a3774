"""Run configuration shared by the fitting, model-selection and pipeline
layers.  Everything here is an engineering knob, not physics; the defaults
are desk-scale settings that the JSON config file may override."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .photon_stats import ModeType

__all__ = ["Config", "DEFAULT_SEED_ENV_VAR", "default_seed"]

DEFAULT_SEED_ENV_VAR = "MODERECO_SEED"


def default_seed() -> int:
    """Seed from the environment, falling back to 0."""
    raw = os.environ.get(DEFAULT_SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(
            f"{DEFAULT_SEED_ENV_VAR} must be an integer, got {raw!r}"
        ) from exc


@dataclass
class Config:
    # optimizer
    restarts: int = 16
    xatol: float = 1e-8
    fatol: float = 1e-10
    max_iter_per_param: int = 600
    init_spread: float = 2.0  # half-width of restart box in transformed space
    polish_rounds: int = 2
    n_jobs: int = 1

    # two-step coupling: weight of the soft penalty tying conjugated
    # mu*eta to the step-1 effective means
    penalty_weight: float = 1e3

    # weighting convention for fits of exact (noise-free) distributions:
    # shot-noise sigmas at this fictitious trial count, with the 1/N floor
    exact_fit_n_eff: float = 6000.0

    # arm fits ignore the top rows carrying this multiple of the recorded
    # out-of-grid mass: the other arm's truncation depresses them
    rpd_guard_factor: float = 3.0

    # model selection
    prune_threshold: float = 0.01
    max_detect_modes: int = 6
    detect_restarts: int = 6
    min_score_drop: float = 9.0
    rel_score_drop: float = 1e-3
    equal_population_spread: float = 0.25
    type_accept_drop: float = 5.0
    ambiguity_margin: float = 4.0
    candidate_types: tuple[ModeType, ...] = (
        ModeType.THERMAL,
        ModeType.POISSONIAN,
        ModeType.SINGLE_PHOTON,
    )

    # conjugation assignment
    assignment_cap: int = 64
    assignment_restarts: int = 4
    final_restarts: int = 8
    share_losses: bool = True

    # pipeline: restore population-pruned modes when the joint fit shows
    # lack of fit below this chi-squared probability
    recover_pvalue: float = 0.01
    # pipeline: grid enlargement for the before-loss witness evaluation
    lossless_nmax_factor: int = 4
    hillery_resamples: int = 50

    def __post_init__(self):
        if not 0.0 < self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must lie in (0, 1)")
        if self.restarts < 1 or self.assignment_restarts < 1 or self.final_restarts < 1:
            raise ValueError("restart counts must be >= 1")
        if self.assignment_cap < 1:
            raise ValueError("assignment_cap must be >= 1")
        self.candidate_types = tuple(
            ModeType(t) if not isinstance(t, ModeType) else t
            for t in self.candidate_types
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["candidate_types"] = [t.value for t in self.candidate_types]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)
