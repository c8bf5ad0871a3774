"""Independent brute-force oracles used by the test suite.

Everything here is deliberately written with explicit Python loops,
``math`` scalars and exact rational arithmetic, sharing no numerical code
with the package: these are the reference implementations the fast paths
are checked against.
"""

from __future__ import annotations

import math
from fractions import Fraction


def thermal_p(mu: float, k: int) -> float:
    return mu**k / (1.0 + mu) ** (k + 1)


def poisson_p(mu: float, k: int) -> float:
    if mu == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-mu) * mu**k / math.factorial(k)


def single_photon_p(mu: float, k: int) -> float:
    if k == 0:
        return 1.0 - mu
    if k == 1:
        return mu
    return 0.0


def mode_p(kind: str, mu: float, k: int) -> float:
    if kind == "thermal":
        if mu == 0.0:
            return 1.0 if k == 0 else 0.0
        return thermal_p(mu, k)
    if kind == "poissonian":
        return poisson_p(mu, k)
    if kind == "single_photon":
        return single_photon_p(mu, k)
    raise ValueError(kind)


def lpf(n: int, k: int, eta: float) -> float:
    """Loss probability factor, direct float evaluation."""
    return math.comb(k, n) * eta**n * (1.0 - eta) ** (k - n)


def lpf_exact(n: int, k: int, eta: Fraction) -> Fraction:
    """Loss probability factor in exact rational arithmetic."""
    return math.comb(k, n) * eta**n * (1 - eta) ** (k - n)


def convolve_lists(a: list[float], b: list[float], n_max: int) -> list[float]:
    out = [0.0] * (n_max + 1)
    for i, ai in enumerate(a):
        if i > n_max:
            break
        for j, bj in enumerate(b):
            if i + j > n_max:
                break
            out[i + j] += ai * bj
    return out


def uncorrelated_bruteforce(modes: list[tuple[str, float]], n_max: int) -> list[float]:
    """Total photon-number distribution of independent modes by explicit
    partition sums."""
    out = [1.0] + [0.0] * n_max
    for kind, mu in modes:
        p = [mode_p(kind, mu, k) for k in range(n_max + 1)]
        out = convolve_lists(out, p, n_max)
    return out


def single_mode_lossy_jpd(
    kind: str, mu: float, eta_s: float, eta_i: float, n_max: int, k_lim: int
) -> list[list[float]]:
    """Pair generation followed by independent per-arm binomial loss,
    summed over the generated pair number."""
    out = [[0.0] * (n_max + 1) for _ in range(n_max + 1)]
    for k in range(k_lim + 1):
        pk = mode_p(kind, mu, k)
        if pk == 0.0:
            continue
        for ns in range(min(k, n_max) + 1):
            ls = lpf(ns, k, eta_s)
            for ni in range(min(k, n_max) + 1):
                out[ns][ni] += pk * ls * lpf(ni, k, eta_i)
    return out


def correlated_bruteforce(
    modes: list[tuple[str, float, float, float]], n_max: int, k_lim: int
) -> list[list[float]]:
    """Correlated part for up to a few conjugated modes: per-mode lossy
    joint distributions combined by explicit 2-D partition sums."""
    out = [[0.0] * (n_max + 1) for _ in range(n_max + 1)]
    out[0][0] = 1.0
    for kind, mu, es, ei in modes:
        s = single_mode_lossy_jpd(kind, mu, es, ei, n_max, k_lim)
        nxt = [[0.0] * (n_max + 1) for _ in range(n_max + 1)]
        for a in range(n_max + 1):
            for b in range(n_max + 1):
                acc = out[a][b]
                if acc == 0.0:
                    continue
                for c in range(n_max + 1 - a):
                    row = s[c]
                    for d in range(n_max + 1 - b):
                        nxt[a + c][b + d] += acc * row[d]
        out = nxt
    return out


def correlated_two_mode_six_index(
    m1: tuple[str, float, float, float],
    m2: tuple[str, float, float, float],
    n_max: int,
    k_lim: int,
) -> list[list[float]]:
    """Literal six-index enumeration (k1, k2, ns1, ns2, ni1, ni2) of the
    two-mode correlated part.  Slow; for spot checks only."""
    k1t, mu1, es1, ei1 = m1
    k2t, mu2, es2, ei2 = m2
    out = [[0.0] * (n_max + 1) for _ in range(n_max + 1)]
    for k1 in range(k_lim + 1):
        p1 = mode_p(k1t, mu1, k1)
        if p1 == 0.0:
            continue
        for k2 in range(k_lim + 1):
            p12 = p1 * mode_p(k2t, mu2, k2)
            if p12 == 0.0:
                continue
            for ns1 in range(min(k1, n_max) + 1):
                for ns2 in range(min(k2, n_max - ns1) + 1):
                    ls = lpf(ns1, k1, es1) * lpf(ns2, k2, es2)
                    for ni1 in range(min(k1, n_max) + 1):
                        li1 = lpf(ni1, k1, ei1)
                        for ni2 in range(min(k2, n_max - ni1) + 1):
                            out[ns1 + ns2][ni1 + ni2] += (
                                p12 * ls * li1 * lpf(ni2, k2, ei2)
                            )
    return out


def full_jpd_bruteforce(
    conj: list[tuple[str, float, float, float]],
    sig_bg: list[tuple[str, float]],
    idl_bg: list[tuple[str, float]],
    n_max: int,
    k_lim: int,
) -> list[list[float]]:
    """Complete joint distribution by explicit nested sums: correlated part
    convolved with the two background distributions."""
    pc = correlated_bruteforce(conj, n_max, k_lim)
    pus = uncorrelated_bruteforce(sig_bg, n_max)
    pui = uncorrelated_bruteforce(idl_bg, n_max)
    out = [[0.0] * (n_max + 1) for _ in range(n_max + 1)]
    for ns in range(n_max + 1):
        for ni in range(n_max + 1):
            acc = 0.0
            for big_ns in range(ns + 1):
                row = pc[big_ns]
                pm_s = pus[ns - big_ns]
                if pm_s == 0.0:
                    continue
                for big_ni in range(ni + 1):
                    acc += row[big_ni] * pm_s * pui[ni - big_ni]
            out[ns][ni] = acc
    return out
