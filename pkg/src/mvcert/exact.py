"""Exact majority-vote error probabilities for a known distribution.

Two independent routes: brute-force enumeration of count vectors (tiny
instances only) and a log-space dynamic program over
``(votes for the mode, max rival count, votes allocated)``.
"""

from __future__ import annotations

import math
from math import comb

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import as_distribution, mode_profile

ENUM_MAX_STATES = 10**6


class InstanceTooLarge(ValueError):
    pass


def _compositions(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def exact_error_enumeration(p, n: int) -> float:
    """Sum the multinomial pmf over all count vectors where the mode fails.

    Ties between the mode and a rival count as failures.
    """
    p = as_distribution(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    k = p.k
    if comb(n + k - 1, k - 1) > ENUM_MAX_STATES:
        raise InstanceTooLarge(f"instance too large for enumeration: n={n}, k={k}")
    c = mode_profile(p).c_star
    fact_n = math.factorial(n)
    terms = []
    for x in _compositions(n, k):
        if x[c] > max(x[j] for j in range(k) if j != c):
            continue
        coef = fact_n
        for xi in x:
            coef //= math.factorial(xi)
        prob = float(coef)
        for pi, xi in zip(p.probs, x):
            if xi:
                prob *= pi**xi
        terms.append(prob)
    return math.fsum(terms)


def _log_poisson_terms(pj: float, n: int) -> np.ndarray:
    """``log(pj**x / x!)`` for ``x = 0..n``."""
    x = np.arange(n + 1)
    if pj == 0.0:
        out = np.full(n + 1, -np.inf)
        out[0] = 0.0
        return out
    return x * math.log(pj) - gammaln(x + 1)


def dp_table(p, n: int) -> np.ndarray:
    """Final log DP table indexed ``[t, m, s]``.

    ``exp(table[t, m, s]) * s!`` is the probability that the mode got ``t``
    votes, the best rival ``m``, with ``s`` votes allocated in total. Only
    the ``s = n`` slice is a probability distribution.
    """
    p = as_distribution(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    prof = mode_profile(p)
    size = n + 1
    table = np.full((size, size, size), -np.inf)
    lp_c = _log_poisson_terms(p[prof.c_star], n)
    t = np.arange(size)
    table[t, 0, t] = lp_c

    for j in prof.rivals:
        lp = _log_poisson_terms(p[j], n)
        new = np.full_like(table, -np.inf)
        for x in range(size):
            if lp[x] == -np.inf:
                continue
            width = size - x
            src = table[:, :, :width]
            # rival maxima below x collapse onto newMax = x
            if x > 0:
                low = logsumexp(src[:, :x, :], axis=1) + lp[x]
                new[:, x, x:] = np.logaddexp(new[:, x, x:], low)
            new[:, x:, x:] = np.logaddexp(new[:, x:, x:], src[:, x:, :] + lp[x])
        table = new
    return table


def exact_error_dp(p, n: int) -> float:
    """Exact ``Pr[majority != mode]`` via the dynamic program (ties are errors)."""
    table = dp_table(p, n)
    size = n + 1
    final = table[:, :, n]
    tt, mm = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    err = final[tt <= mm]
    log_err = logsumexp(err) + gammaln(n + 1)
    return float(min(1.0, math.exp(log_err))) if np.isfinite(log_err) else 0.0
