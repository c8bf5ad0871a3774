"""Reduction of joint distributions and count matrices to per-arm
(one-dimensional) photon-number distributions."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .forward import ProbMatrix
from .sampling import CountMatrix

__all__ = ["Arm", "Rpd", "marginalize"]


class Arm(enum.Enum):
    SIGNAL = "signal"
    IDLER = "idler"


@dataclass(frozen=True)
class Rpd:
    """Single-arm reduced distribution.  ``sigmas`` and ``n_tot`` are set
    when the reduction came from measured counts; ``tail_mass`` is whatever
    probability (or event fraction) fell outside the grid."""

    probs: np.ndarray
    arm: Arm
    sigmas: np.ndarray | None = None
    n_tot: int | None = None
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1:
            raise ValueError("probs must be 1-D")
        if np.any(probs < -1e-12):
            raise ValueError("negative probabilities")
        if probs.sum() + self.tail_mass > 1.0 + 1e-9:
            raise ValueError("reduced distribution exceeds unit mass")
        if self.sigmas is not None:
            sig = np.asarray(self.sigmas, dtype=float)
            sig.setflags(write=False)
            object.__setattr__(self, "sigmas", sig)
            if sig.shape != probs.shape:
                raise ValueError("sigmas shape mismatch")

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)


def marginalize(m: ProbMatrix | CountMatrix, arm: Arm) -> Rpd:
    """Collapse a joint matrix onto one arm by summing out the other.

    For counts the uncertainties are recomputed from the summed counts
    (the summed bin is itself binomial), not by propagating per-cell
    sigmas, which would overstate them.
    """
    axis = 1 if arm is Arm.SIGNAL else 0
    if isinstance(m, CountMatrix):
        row_counts = m.counts.sum(axis=axis)
        probs = row_counts / m.n_tot
        sigmas = np.sqrt(np.maximum(row_counts, 1)) / m.n_tot
        return Rpd(probs, arm, sigmas, m.n_tot, m.overflow / m.n_tot)
    return Rpd(m.p.sum(axis=axis), arm, None, None, m.tail_mass)
