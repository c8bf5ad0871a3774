"""Joint photon-number distributions of multimode two-arm sources.

A source is a collection of modes that are either conjugated (photons
generated in exact pairs feeding both arms, with independent per-arm
transmittances) or single-arm backgrounds carrying a loss-adjusted
effective mean.  The joint distribution is the 2-D convolution of the
lossy pair part with the two background parts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import convolve2d
from scipy.stats import poisson as _poisson_dist

from .photon_stats import (
    DEFAULT_N_MAX,
    ModeType,
    Pmf,
    convolve_many,
    loss_matrix,
    pmf,
    vacuum_pmf,
)

__all__ = [
    "Occupancy",
    "ModeSpec",
    "SourceModel",
    "ProbMatrix",
    "uncorrelated_pmf",
    "correlated_jpd",
    "full_jpd",
    "experiment_jpd",
    "lossless_jpd",
    "generation_cutoff",
]

# Pair-generation sums are truncated where every conjugated mode's tail
# drops below this, capped at 4*n_max.
_GEN_TAIL_TOL = 1e-12
_GEN_CUTOFF_FACTOR = 4


class Occupancy(enum.Enum):
    SIGNAL_ONLY = "signal"
    IDLER_ONLY = "idler"
    CONJUGATED = "conjugated"


@dataclass(frozen=True)
class ModeSpec:
    """One optical mode.

    For single-arm modes ``mu`` is already the loss-adjusted effective mean
    and the transmittance fields are unused; for conjugated modes ``mu`` is
    the generated pair number and ``eta_s``/``eta_i`` the per-arm
    transmittances.
    """

    mode_type: ModeType
    mu: float
    occupancy: Occupancy
    eta_s: float = 1.0
    eta_i: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mean photon number must be >= 0, got {self.mu}")
        if self.mode_type is ModeType.SINGLE_PHOTON and self.mu > 1.0:
            raise ValueError(f"single-photon mode needs mu <= 1, got {self.mu}")
        for name in ("eta_s", "eta_i"):
            eta = getattr(self, name)
            if not 0.0 <= eta <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {eta}")


_TYPE_ORDER = {ModeType.THERMAL: 0, ModeType.POISSONIAN: 1, ModeType.SINGLE_PHOTON: 2}
_OCC_ORDER = {Occupancy.CONJUGATED: 0, Occupancy.SIGNAL_ONLY: 1, Occupancy.IDLER_ONLY: 2}


def _mode_sort_key(m: ModeSpec):
    return (_OCC_ORDER[m.occupancy], _TYPE_ORDER[m.mode_type], -m.mu, -m.eta_s)


@dataclass(frozen=True)
class SourceModel:
    """Ordered mode list plus the photon-number truncation."""

    modes: tuple[ModeSpec, ...]
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.n_max < 0:
            raise ValueError(f"n_max must be >= 0, got {self.n_max}")

    def canonical(self) -> "SourceModel":
        """Canonical mode order: conjugated before signal before idler;
        thermal before Poissonian before single-photon; brighter first."""
        return replace(self, modes=tuple(sorted(self.modes, key=_mode_sort_key)))

    def select(self, occupancy: Occupancy) -> tuple[ModeSpec, ...]:
        return tuple(m for m in self.modes if m.occupancy is occupancy)

    @property
    def conjugated(self) -> tuple[ModeSpec, ...]:
        return self.select(Occupancy.CONJUGATED)

    @property
    def signal_background(self) -> tuple[ModeSpec, ...]:
        return self.select(Occupancy.SIGNAL_ONLY)

    @property
    def idler_background(self) -> tuple[ModeSpec, ...]:
        return self.select(Occupancy.IDLER_ONLY)


@dataclass(frozen=True)
class ProbMatrix:
    """Joint distribution P(n_s, n_i) over 0..n_max per arm, plus the
    probability mass falling outside the truncated grid."""

    p: np.ndarray
    tail_mass: float = 0.0
    meta: dict | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"need a square matrix, got shape {p.shape}")
        if np.any(p < -1e-12):
            raise ValueError("negative probability entries")
        total = float(p.sum(dtype=np.longdouble)) + self.tail_mass
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"matrix not normalized: total = {total!r}")

    @property
    def n_max(self) -> int:
        return self.p.shape[0] - 1

    def total(self) -> float:
        return float(self.p.sum())


def generation_cutoff(modes: tuple[ModeSpec, ...] | list[ModeSpec], n_max: int) -> int:
    """Upper limit for pair-generation sums: smallest photon number where
    every conjugated mode's distribution tail is below 1e-12, clamped to
    [n_max, 4*n_max]."""
    k_needed = n_max
    for m in modes:
        if m.mu == 0:
            continue
        if m.mode_type is ModeType.THERMAL:
            q = m.mu / (1.0 + m.mu)
            k = int(math.ceil(math.log(_GEN_TAIL_TOL) / math.log(q))) + 1
        elif m.mode_type is ModeType.POISSONIAN:
            k = int(_poisson_dist.isf(_GEN_TAIL_TOL, m.mu)) + 1
        else:
            k = 1
        k_needed = max(k_needed, k)
    return min(k_needed, _GEN_CUTOFF_FACTOR * max(n_max, 1))


def _single_mode_joint(mode: ModeSpec, n_max: int, k_lim: int) -> np.ndarray:
    """Lossy pair distribution of one conjugated mode:
    S[n_s, n_i] = sum_k p(k) L[n_s, k](eta_s) L[n_i, k](eta_i)."""
    gen = pmf(mode.mode_type, mode.mu, k_lim).probs
    ls = loss_matrix(mode.eta_s, n_max, k_lim)
    li = loss_matrix(mode.eta_i, n_max, k_lim)
    return (ls * gen[None, :]) @ li.T


def _convolve2d_trunc(a: np.ndarray, b: np.ndarray, n_max: int) -> np.ndarray:
    return convolve2d(a, b)[: n_max + 1, : n_max + 1]


def uncorrelated_pmf(modes: list[ModeSpec] | tuple[ModeSpec, ...], n_max: int) -> Pmf:
    """Total photon-number distribution of one arm's background modes
    (empty list gives the vacuum).  All modes must occupy the same arm."""
    occs = {m.occupancy for m in modes}
    if Occupancy.CONJUGATED in occs or len(occs) > 1:
        raise ValueError("background modes must share a single-arm occupancy")
    return convolve_many([pmf(m.mode_type, m.mu, n_max) for m in modes], n_max)


def correlated_jpd(
    modes: list[ModeSpec] | tuple[ModeSpec, ...], n_max: int
) -> ProbMatrix:
    """Joint distribution of the conjugated modes after per-arm, per-mode
    loss.  Pair-generation sums run to ``generation_cutoff``."""
    if any(m.occupancy is not Occupancy.CONJUGATED for m in modes):
        raise ValueError("correlated_jpd expects conjugated modes only")
    if not modes:
        out = np.zeros((n_max + 1, n_max + 1))
        out[0, 0] = 1.0
        return ProbMatrix(out, 0.0)
    k_lim = generation_cutoff(modes, n_max)
    joint = _single_mode_joint(modes[0], n_max, k_lim)
    for mode in modes[1:]:
        joint = _convolve2d_trunc(joint, _single_mode_joint(mode, n_max, k_lim), n_max)
    return ProbMatrix(joint, _residual_mass(joint))


def _residual_mass(p: np.ndarray) -> float:
    return max(0.0, 1.0 - float(p.sum(dtype=np.longdouble)))


def _lower_toeplitz(v: np.ndarray) -> np.ndarray:
    return toeplitz(v, np.zeros(v.size))


def full_jpd(model: SourceModel) -> ProbMatrix:
    """Joint distribution of the complete source: correlated part convolved
    with the outer product of the two arms' background distributions."""
    n_max = model.n_max
    corr = correlated_jpd(model.conjugated, n_max)
    us = uncorrelated_pmf(model.signal_background, n_max)
    ui = uncorrelated_pmf(model.idler_background, n_max)
    # rank-1 background kernel: convolve rows with u_i, columns with u_s
    out = _lower_toeplitz(us.probs) @ corr.p @ _lower_toeplitz(ui.probs).T
    return ProbMatrix(out, _residual_mass(out))


def experiment_jpd(
    mu1: float,
    mu2: float,
    eta_s: float,
    eta_i: float,
    mu_bs: float,
    mu_bi: float,
    n_max: int = DEFAULT_N_MAX,
) -> ProbMatrix:
    """Two conjugated thermal modes behind one shared transmittance per arm,
    plus a Poissonian background in each arm.

    Independent evaluation route for the shared-loss special case: the loss
    acts once on the summed pair number instead of per mode, which must agree
    with :func:`full_jpd` whenever all conjugated transmittances in an arm
    are equal.
    """
    spec1 = ModeSpec(ModeType.THERMAL, mu1, Occupancy.CONJUGATED, eta_s, eta_i)
    spec2 = ModeSpec(ModeType.THERMAL, mu2, Occupancy.CONJUGATED, eta_s, eta_i)
    k_lim = generation_cutoff((spec1, spec2), n_max)
    pair = np.convolve(
        pmf(ModeType.THERMAL, mu1, k_lim).probs,
        pmf(ModeType.THERMAL, mu2, k_lim).probs,
    )[: k_lim + 1]
    ls = loss_matrix(eta_s, n_max, k_lim)
    li = loss_matrix(eta_i, n_max, k_lim)
    corr = (ls * pair[None, :]) @ li.T
    bg = np.outer(
        pmf(ModeType.POISSONIAN, mu_bs, n_max).probs,
        pmf(ModeType.POISSONIAN, mu_bi, n_max).probs,
    )
    out = _convolve2d_trunc(corr, bg, n_max)
    return ProbMatrix(out, _residual_mass(out))


def lossless_jpd(model: SourceModel, n_max: int | None = None) -> ProbMatrix:
    """Back-project the source to before its losses: conjugated
    transmittances set to 1 and background effective means divided by the
    arm's conjugated transmittance (brightness-weighted when modes differ).

    The background back-projection is an estimate, not data; the divisors
    used are recorded in the result's ``meta``.
    """
    if n_max is None:
        n_max = model.n_max
    eta_s = _arm_eta(model.conjugated, "eta_s")
    eta_i = _arm_eta(model.conjugated, "eta_i")
    modes = []
    for m in model.modes:
        if m.occupancy is Occupancy.CONJUGATED:
            modes.append(replace(m, eta_s=1.0, eta_i=1.0))
        elif m.occupancy is Occupancy.SIGNAL_ONLY:
            modes.append(_backproject(m, eta_s))
        else:
            modes.append(_backproject(m, eta_i))
    out = full_jpd(SourceModel(tuple(modes), n_max))
    meta = {"background_backprojection_eta": {"signal": eta_s, "idler": eta_i}}
    return ProbMatrix(out.p, out.tail_mass, meta)


def _backproject(mode: ModeSpec, eta: float) -> ModeSpec:
    mu = mode.mu / eta
    if mode.mode_type is ModeType.SINGLE_PHOTON:
        mu = min(mu, 1.0)
    return replace(mode, mu=mu)


def _arm_eta(conj: tuple[ModeSpec, ...], field: str) -> float:
    """Brightness-weighted conjugated transmittance of one arm; 1.0 when
    there is nothing to weight."""
    total = sum(m.mu for m in conj)
    if not conj or total == 0.0:
        return 1.0
    return sum(m.mu * getattr(m, field) for m in conj) / total
