"""Finite-trial measurement simulation: multinomial shot noise over a joint
distribution, and conversion of event counts back to probability estimates
with per-cell uncertainties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import ProbMatrix

__all__ = ["CountMatrix", "sample_counts", "to_probabilities", "spawn_rngs"]


@dataclass(frozen=True)
class CountMatrix:
    """Event counts N(n_s, n_i) out of ``n_tot`` trials.  Events beyond the
    truncated grid are dropped from the matrix; their number is the
    difference between ``n_tot`` and the matrix sum."""

    counts: np.ndarray
    n_tot: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.rint(counts)):
                raise ValueError("counts must be integers")
            counts = counts.astype(np.int64)
        counts = counts.astype(np.int64, copy=False)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"need a square count matrix, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("negative counts")
        if self.n_tot < 1:
            raise ValueError(f"n_tot must be >= 1, got {self.n_tot}")
        if int(counts.sum()) > self.n_tot:
            raise ValueError("counts exceed the number of trials")

    @property
    def n_max(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def overflow(self) -> int:
        """Events that fell beyond the truncation."""
        return self.n_tot - int(self.counts.sum())


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent substreams for parallel workers, derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_counts(jpd: ProbMatrix, n_tot: int, seed: int | np.random.Generator) -> CountMatrix:
    """Multinomial draw of ``n_tot`` trials over the grid cells plus one
    implicit overflow cell holding the tail mass.  Deterministic for a
    fixed seed."""
    if n_tot < 1:
        raise ValueError(f"n_tot must be >= 1, got {n_tot}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pvals = np.append(jpd.p.ravel(), max(jpd.tail_mass, 0.0))
    pvals = np.clip(pvals, 0.0, None)
    pvals /= pvals.sum()
    draw = rng.multinomial(n_tot, pvals)
    counts = draw[:-1].reshape(jpd.p.shape)
    return CountMatrix(counts, n_tot)


def to_probabilities(counts: CountMatrix) -> tuple[ProbMatrix, np.ndarray]:
    """Relative frequencies and their shot-noise uncertainties.

    sigma = sqrt(p_hat / n_tot), floored at 1/n_tot for empty cells (the
    "fewer than one expected event" scale) so downstream weighting never
    divides by zero.
    """
    n_tot = counts.n_tot
    p_hat = counts.counts / n_tot
    sigma = np.sqrt(np.maximum(counts.counts, 1)) / n_tot
    overflow_frac = counts.overflow / n_tot
    return ProbMatrix(p_hat, overflow_frac), sigma
