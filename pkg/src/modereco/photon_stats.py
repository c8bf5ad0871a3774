"""Photon-number statistics kernels: single-mode distributions, binomial
loss channels, and the convolution machinery everything else builds on.

All distributions are represented as truncated probability vectors with an
explicit tail mass, so truncation error stays observable instead of being
silently renormalized away.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln

__all__ = [
    "ModeType",
    "Pmf",
    "pmf",
    "loss_factor",
    "loss_matrix",
    "apply_loss",
    "convolve",
    "thermal_stack_pmf",
    "vacuum_pmf",
    "DEFAULT_N_MAX",
]

# Experimental JPDs in this problem domain are truncated at 40 photons.
DEFAULT_N_MAX = 40

# Above this photon number, binomial coefficients and pmf bodies are
# evaluated in log space to dodge factorial overflow.
_LOG_SPACE_THRESHOLD = 30

_NORM_TOL = 1e-12


class ModeType(enum.Enum):
    """Admissible single-mode photon statistics."""

    THERMAL = "thermal"
    POISSONIAN = "poissonian"
    SINGLE_PHOTON = "single_photon"


@dataclass(frozen=True)
class Pmf:
    """Truncated photon-number distribution over n = 0..n_max.

    Invariant: ``sum(probs) + tail_mass == 1`` within 1e-12, all entries
    in [0, 1], ``tail_mass >= 0``.
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if self.tail_mass < -_NORM_TOL:
            raise ValueError(f"negative tail mass: {self.tail_mass}")
        if np.any(probs < -_NORM_TOL) or np.any(probs > 1.0 + _NORM_TOL):
            raise ValueError("pmf entries outside [0, 1]")
        total = math.fsum(probs.tolist()) + self.tail_mass
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pmf not normalized: sum + tail = {total!r}")

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        """Mean photon number of the represented range (tail excluded)."""
        return float(np.arange(self.probs.size) @ self.probs)


def vacuum_pmf(n_max: int) -> Pmf:
    probs = np.zeros(n_max + 1)
    probs[0] = 1.0
    return Pmf(probs, 0.0)


def pmf(mode_type: ModeType, mu: float, n_max: int = DEFAULT_N_MAX) -> Pmf:
    """Photon-number distribution of a single mode.

    Thermal modes follow Bose-Einstein statistics mu^k / (1+mu)^(k+1),
    Poissonian modes exp(-mu) mu^k / k!, and single-photon modes are the
    two-point binomial {1-mu, mu}.  The tail mass is the exact analytic
    remainder above ``n_max`` (geometric for thermal, regularized-gamma
    for Poissonian, zero for single-photon once n_max >= 1).

    Raises:
        ValueError: if ``mu < 0``, or ``mu > 1`` for a single-photon mode.
    """
    if mu < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu}")
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1)

    if mode_type is ModeType.SINGLE_PHOTON:
        if mu > 1.0:
            raise ValueError(f"single-photon mode needs mu <= 1, got {mu}")
        probs = np.zeros(n_max + 1)
        probs[0] = 1.0 - mu
        tail = 0.0
        if n_max >= 1:
            probs[1] = mu
        else:
            tail = mu
        return Pmf(probs, tail)

    if mu == 0.0:
        return vacuum_pmf(n_max)

    if mode_type is ModeType.THERMAL:
        q = mu / (1.0 + mu)
        # exact in log space for any k; q < 1 so no overflow either way
        probs = np.exp(n * math.log(q) + math.log1p(-q))
        tail = q ** (n_max + 1)
        return Pmf(probs, tail)

    if mode_type is ModeType.POISSONIAN:
        probs = np.exp(n * math.log(mu) - mu - gammaln(n + 1))
        # survival function of Poisson(mu) at n_max
        tail = float(gammainc(n_max + 1, mu))
        return Pmf(probs, tail)

    raise TypeError(f"unknown mode type: {mode_type!r}")


def loss_factor(n: int, k: int, eta: float) -> float:
    """Binomial probability that n of k photons survive transmittance eta.

    Computed in log space above k = 30 so the paper-scale 40-photon regime
    stays clear of factorial overflow.

    Raises:
        ValueError: if ``n > k``, n or k negative, or eta outside [0, 1].
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {eta}")
    if n < 0 or k < 0 or n > k:
        raise ValueError(f"need 0 <= n <= k, got n={n}, k={k}")
    if eta == 1.0:
        return 1.0 if n == k else 0.0
    if eta == 0.0:
        return 1.0 if n == 0 else 0.0
    if k <= _LOG_SPACE_THRESHOLD:
        return math.comb(k, n) * eta**n * (1.0 - eta) ** (k - n)
    log_c = gammaln(k + 1) - gammaln(n + 1) - gammaln(k - n + 1)
    return float(np.exp(log_c + n * math.log(eta) + (k - n) * math.log1p(-eta)))


def loss_matrix(eta: float, n_max: int, k_max: int) -> np.ndarray:
    """Dense loss-factor matrix L[n, k] for n <= n_max, k <= k_max.

    Column k holds the binomial distribution of survivors out of k photons,
    truncated at n_max; columns therefore sum to <= 1, with equality when
    k <= n_max.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {eta}")
    n = np.arange(n_max + 1)[:, None]
    k = np.arange(k_max + 1)[None, :]
    if eta == 1.0:
        return (n == k).astype(float)
    if eta == 0.0:
        return ((n == 0) & (k >= 0)).astype(float)
    log_c = gammaln(k + 1) - gammaln(n + 1) - gammaln(np.maximum(k - n, 0) + 1)
    arg = np.where(
        n <= k, log_c + n * math.log(eta) + (k - n) * math.log1p(-eta), -np.inf
    )
    return np.exp(arg)


def apply_loss(p: Pmf, eta: float, n_max: int | None = None) -> Pmf:
    """Push a photon-number distribution through a transmittance-eta channel.

    output(n) = sum_k p(k) L[n, k](eta).  Mass sitting in the input tail is
    carried to the output tail unchanged: loss can only move it downward,
    so the output entries are exact up to the input tail mass.
    """
    if n_max is None:
        n_max = p.n_max
    L = loss_matrix(eta, n_max, p.n_max)
    out = L @ p.probs
    tail = max(0.0, 1.0 - math.fsum(out.tolist()))
    return Pmf(out, tail)


def convolve(a: Pmf, b: Pmf, n_max: int | None = None) -> Pmf:
    """Distribution of the sum of two independent photon numbers.

    output(M) = sum_{i+j=M} a(i) b(j), truncated at n_max; everything that
    lands above n_max, plus all tail cross terms, goes to the output tail.
    """
    if n_max is None:
        n_max = max(a.n_max, b.n_max)
    full = np.convolve(a.probs, b.probs)
    out = np.zeros(n_max + 1)
    m = min(n_max + 1, full.size)
    out[:m] = full[:m]
    tail = max(0.0, 1.0 - math.fsum(out.tolist()))
    return Pmf(out, tail)


def convolve_many(pmfs: list[Pmf], n_max: int) -> Pmf:
    """Iterated convolution; the empty product is the vacuum."""
    out = vacuum_pmf(n_max)
    for p in pmfs:
        out = convolve(out, p, n_max)
    return out


def thermal_stack_pmf(mu_per_mode: float, k_modes: int, n_max: int) -> Pmf:
    """Total photon-number distribution of ``k_modes`` equally bright
    thermal modes (negative binomial), used by the equal-population
    escalation fits.
    """
    if k_modes < 1:
        raise ValueError(f"need at least one mode, got {k_modes}")
    if mu_per_mode < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu_per_mode}")
    if mu_per_mode == 0.0:
        return vacuum_pmf(n_max)
    n = np.arange(n_max + 1)
    q = mu_per_mode / (1.0 + mu_per_mode)
    logp = (
        gammaln(n + k_modes)
        - gammaln(n + 1)
        - gammaln(k_modes)
        + n * math.log(q)
        + k_modes * math.log1p(-q)
    )
    probs = np.exp(logp)
    tail = max(0.0, 1.0 - math.fsum(probs.tolist()))
    return Pmf(probs, tail)
