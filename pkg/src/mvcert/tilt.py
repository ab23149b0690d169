"""Tilted and tempered answer distributions, label-free rewards, advantages.

Entropies are in nats throughout.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import (
    SNR_INF,
    CategoricalDistribution,
    Tally,
    as_distribution,
    label_key,
    mode_profile,
    snr_from_margin,
)

SNR_CAP = 1e6
TV_TOL = 1e-10
RESIDUAL_TOL = 1e-6
MAX_ITER = 200_000

Objective = Literal["snr", "entropy"]


@dataclass(frozen=True)
class TiltParams:
    """Regularization strength ``beta`` and the matching exponent ``kappa``."""

    beta: float
    kappa: float

    @classmethod
    def for_tilt(cls, beta: float) -> TiltParams:
        if not beta > 0:
            raise ValueError("tilt requires beta > 0")
        return cls(beta, 1.0 / beta)

    @classmethod
    def for_temper(cls, beta: float) -> TiltParams:
        if not beta > 1:
            raise ValueError("tempering requires beta > 1")
        return cls(beta, beta / (beta - 1.0))


@dataclass(frozen=True)
class RewardSample:
    answers: tuple[Hashable, ...]

    def __init__(self, answers: Sequence[Hashable]):
        answers = tuple(answers)
        if len(answers) < 2:
            raise ValueError("a reward sample needs at least 2 answers")
        object.__setattr__(self, "answers", answers)

    @property
    def n(self) -> int:
        return len(self.answers)

    @property
    def tally(self) -> Tally:
        return Tally.from_votes(self.answers)


@dataclass(frozen=True)
class RewardValue:
    """A reward together with whether it was capped."""

    value: float
    overflow: bool = False

    def __float__(self) -> float:
        return self.value


def _as_sample(sample) -> RewardSample:
    return sample if isinstance(sample, RewardSample) else RewardSample(sample)


def _softmax(logw: np.ndarray) -> CategoricalDistribution:
    finite = np.isfinite(logw)
    w = np.zeros_like(logw)
    w[finite] = np.exp(logw[finite] - logw[finite].max())
    return CategoricalDistribution(w / w.sum())


# -- transforms of a known distribution ---------------------------------------


def ttrl_tilt(p, c_hat: int, beta: float) -> CategoricalDistribution:
    """Exponential tilt ``q_j ∝ p_j exp(1{j = c_hat} / beta)``."""
    p = as_distribution(p)
    if not beta > 0:
        raise ValueError("beta must be > 0")
    if not 0 <= c_hat < p.k:
        raise ValueError(f"c_hat={c_hat} outside 0..{p.k - 1}")
    with np.errstate(divide="ignore"):
        logw = np.log(p.as_array())
    logw[c_hat] += 1.0 / beta
    return _softmax(logw)


def temper(p, kappa: float) -> CategoricalDistribution:
    """Power transform ``q_j ∝ p_j ** kappa`` (zeros stay zero)."""
    p = as_distribution(p)
    if not kappa >= 1:
        raise ValueError("kappa must be >= 1")
    with np.errstate(divide="ignore"):
        return _softmax(kappa * np.log(p.as_array()))


def _snr_against_runner(q: CategoricalDistribution, c_hat: int) -> float:
    rival = max((j for j in range(q.k) if j != c_hat), key=lambda j: (q[j], -j))
    if q[c_hat] < q[rival]:
        return mode_profile(q).snr
    return snr_from_margin(q[c_hat], q[rival])


def snr_curve_tilt(p, c_hat: int, kappa_grid: Sequence[float]) -> list[float]:
    """SNR of the tilt with ``kappa = 1/beta`` at each grid point.

    The runner-up is whichever rival is largest at that ``kappa``; ``kappa = 0``
    is the untilted distribution.
    """
    p = as_distribution(p)
    out = []
    for kappa in kappa_grid:
        if kappa < 0:
            raise ValueError("kappa must be >= 0")
        q = p if kappa == 0 else ttrl_tilt(p, c_hat, 1.0 / kappa)
        out.append(_snr_against_runner(q, c_hat))
    return out


# -- rewards computed from a sample of answers --------------------------------


def _top_two_counts(tally: Tally) -> tuple[int, int]:
    ranked = sorted(tally.counts.items(), key=lambda kv: (-kv[1], label_key(kv[0])))
    n_c = ranked[0][1] if ranked else 0
    n_j = ranked[1][1] if len(ranked) > 1 else 0
    return n_c, n_j


def _snr_from_tally(tally: Tally, cap: float) -> RewardValue:
    n = tally.n
    n_c, n_j = _top_two_counts(tally)
    diff = n_c - n_j
    denom = n * (n_c + n_j) - diff * diff
    if denom <= 0:
        return RewardValue(cap, True)
    return RewardValue(diff * diff / denom)


def snr_reward(sample, cap: float = SNR_CAP) -> RewardValue:
    """Empirical SNR of the leading answer against the runner-up.

    A unanimous sample has zero denominator; it gets ``cap`` with
    ``overflow=True`` so reward pipelines never see an infinity.
    """
    return _snr_from_tally(_as_sample(sample).tally, cap)


def _neg_entropy(counts, total: float) -> float:
    return math.fsum(c / total * math.log(c / total) for c in counts if c > 0)


def entropy_reward(sample) -> float:
    """Plug-in negative entropy ``sum_j (N_j/n) log(N_j/n)``."""
    tally = _as_sample(sample).tally
    return _neg_entropy(tally.counts.values(), tally.n)


def entropy_reward_dirichlet(sample, alpha: float, labels: Sequence[Hashable]) -> float:
    """Smoothed negative entropy over the declared ``labels``.

    Each probability is estimated as ``(N_j + alpha) / (n + alpha)``. This is
    a smoothing heuristic; the estimates do not sum to one unless
    ``alpha = 0`` and they are not a posterior mean.
    """
    sample = _as_sample(sample)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    labels = list(labels)
    unknown = set(sample.tally.counts) - set(labels)
    if unknown:
        raise ValueError(f"answers outside the declared labels: {sorted(map(str, unknown))}")
    return _dirichlet_neg_entropy(sample.tally, alpha, labels)


def _dirichlet_neg_entropy(tally: Tally, alpha: float, labels: Sequence[Hashable]) -> float:
    total = tally.n + alpha
    return math.fsum(
        (tally[j] + alpha) / total * math.log((tally[j] + alpha) / total)
        for j in labels
        if tally[j] + alpha > 0
    )


RewardKind = Literal["snr", "entropy"]


def loo_advantages(
    sample,
    reward_kind: RewardKind = "snr",
    cap: float = SNR_CAP,
    alpha: float | None = None,
    labels: Sequence[Hashable] | None = None,
) -> list[float]:
    """``A_i = r(X) - r(X without answer i)``.

    Leader and runner-up are recomputed on every reduced sample. For the
    entropy reward, ``alpha`` switches to the Dirichlet-smoothed estimate
    over ``labels`` (default: the labels seen in the sample).
    """
    sample = _as_sample(sample)
    tally = sample.tally
    if reward_kind == "snr":
        def reward(t: Tally) -> float:
            return _snr_from_tally(t, cap).value
    elif reward_kind == "entropy" and alpha is not None:
        universe = sorted(tally.counts, key=label_key) if labels is None else list(labels)
        entropy_reward_dirichlet(sample, alpha, universe)

        def reward(t: Tally) -> float:
            return _dirichlet_neg_entropy(t, alpha, universe)
    elif reward_kind == "entropy":
        def reward(t: Tally) -> float:
            return _neg_entropy(t.counts.values(), t.n)
    else:
        raise ValueError(f"unknown reward kind {reward_kind!r}")
    full = reward(tally)
    cache: dict[Hashable, float] = {}
    out = []
    for a in sample.answers:
        if a not in cache:
            counts = dict(tally.counts)
            counts[a] -= 1
            if counts[a] == 0:
                del counts[a]
            cache[a] = full - reward(Tally(counts))
        out.append(cache[a])
    return out


def grpo_center(advantages: Sequence[float]) -> list[float]:
    """Subtract the mean so the outputs sum to exactly zero.

    Centered values are snapped to a common power-of-two grid fine enough
    for every partial sum to be exact, and the integer rounding remainder is
    pushed onto the largest entries. Float summation of the result then
    gives 0.0 in any order.
    """
    a = [float(x) for x in advantages]
    n = len(a)
    if n == 0:
        return []
    if not all(math.isfinite(x) for x in a):
        raise ValueError("advantages must be finite")
    mean = math.fsum(a) / n
    centered = [x - mean for x in a]
    peak = max(abs(x) for x in centered)
    if peak == 0.0:
        return [0.0] * n
    exp = math.frexp(peak)[1] + math.ceil(math.log2(n)) + 1
    grid = math.ldexp(1.0, exp - 53)
    units = [round(x / grid) for x in centered]
    rem = sum(units)
    order = sorted(range(n), key=lambda i: -abs(units[i]))
    step = -1 if rem > 0 else 1
    i = 0
    while rem != 0:
        units[order[i % n]] += step
        rem += step
        i += 1
    return [u * grid for u in units]


# -- regularized objectives over the simplex ----------------------------------


class SolverDidNotConverge(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3g}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


def _snr_and_grad(q: np.ndarray, c: int, j: int):
    x, y = q[c], q[j]
    d = x - y
    den = x + y - d * d
    g = np.zeros_like(q)
    if den <= 0.0:
        return math.inf, g
    g[c] = (2.0 * d * den - d * d * (1.0 - 2.0 * d)) / den**2
    g[j] = (-2.0 * d * den - d * d * (1.0 + 2.0 * d)) / den**2
    return d * d / den, g


def _objective(q: np.ndarray, objective: Objective, anchors):
    if objective == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            logq = np.where(q > 0, np.log(q), 0.0)
        return float(np.sum(q * logq)), logq + 1.0
    return _snr_and_grad(q, *anchors)


def _kl(q: np.ndarray, p: np.ndarray) -> float:
    mask = q > 0
    return float(np.sum(q[mask] * np.log(q[mask] / p[mask])))


def _anchors(p: CategoricalDistribution) -> tuple[int, int]:
    prof = mode_profile(p)
    return prof.c_star, prof.j_star


def regularized_value(q, p, objective: Objective, beta: float) -> float:
    """``objective(q) - beta * KL(q || p)``.

    For ``snr`` the leader and runner-up are those of ``p``.
    """
    p, q = as_distribution(p), as_distribution(q)
    val, _ = _objective(q.as_array(), objective, _anchors(p))
    return val - beta * _kl(q.as_array(), p.as_array())


def stationarity_residual(q, p, objective: Objective, beta: float) -> float:
    """Largest violation of the first-order conditions at ``q``.

    Each coordinate should satisfy ``g_i - beta (1 + log(q_i/p_i)) = lambda``.
    ``lambda`` is taken from the coordinates the objective does not touch
    (they must all agree, i.e. ``q_i ∝ p_i`` there), or from the mean when
    every coordinate is touched.
    """
    p, q = as_distribution(p), as_distribution(q)
    pa, qa = p.as_array(), q.as_array()
    anchors = _anchors(p)
    _, g = _objective(qa, objective, anchors)
    expr = g - beta * (1.0 + np.log(qa / pa))
    if objective == "snr" and p.k > 2:
        others = [i for i in range(p.k) if i not in anchors]
        lam = float(np.mean(expr[others]))
    else:
        lam = float(np.mean(expr))
    return float(np.max(np.abs(expr - lam)))


def solve_regularized(p, objective: Objective, beta: float, max_iter: int = MAX_ITER) -> CategoricalDistribution:
    """Maximize ``objective(q) - beta KL(q || p)`` by entropic mirror ascent.

    Starts at ``p`` with step ``1/beta``, under which each update is
    ``q <- p exp(grad(q)/beta)`` normalized. A step that lowers the value is
    halved. Stops when successive iterates are within ``1e-10`` in total
    variation and the stationarity residual is below ``1e-6``.

    ``objective="entropy"`` maximizes the negative entropy; its maximizer is
    ``temper(p, beta/(beta-1))``. ``objective="snr"`` is not bounded above
    on the simplex (the point mass on the mode has finite KL), so the result
    is the stationary point reached from ``p``.
    """
    p = as_distribution(p)
    pa = p.as_array()
    if np.any(pa <= 0):
        raise ValueError("p must be strictly positive")
    if objective == "entropy":
        if not beta > 1:
            raise ValueError("entropy objective requires beta > 1")
    elif objective == "snr":
        if not beta > 0:
            raise ValueError("snr objective requires beta > 0")
    else:
        raise ValueError(f"unknown objective {objective!r}")
    anchors = _anchors(p)
    log_p = np.log(pa)

    def value(q):
        val, g = _objective(q, objective, anchors)
        kl = _kl(q, pa)
        # rounding scale of the value, so that noise never triggers backtracking
        return val - beta * kl, g, 1e-12 * (1.0 + abs(val) + beta * kl)

    q = pa.copy()
    f, g, _ = value(q)
    for it in range(1, max_iter + 1):
        eta = 1.0 / beta
        for _ in range(60):
            step = (1.0 - eta * beta) * np.log(q) + eta * beta * log_p + eta * g
            step -= step.max()
            new = np.exp(step)
            new /= new.sum()
            f_new, g_new, noise = value(new)
            if f_new >= f - noise:
                break
            eta *= 0.5
        tv = 0.5 * float(np.abs(new - q).sum())
        q, f, g = new, f_new, g_new
        if not np.isfinite(f):
            break
        if tv < TV_TOL:
            out = CategoricalDistribution(q)
            res = stationarity_residual(out, p, objective, beta)
            if res < RESIDUAL_TOL:
                return out
    q = np.clip(q, 1e-300, None)
    q = q / q.sum()
    res = stationarity_residual(CategoricalDistribution(q), p, objective, beta) if np.isfinite(f) else math.inf
    raise SolverDidNotConverge("mirror ascent did not converge", res, it)


__all__ = [
    "SNR_CAP",
    "SNR_INF",
    "TiltParams",
    "RewardSample",
    "RewardValue",
    "ttrl_tilt",
    "temper",
    "snr_curve_tilt",
    "snr_reward",
    "entropy_reward",
    "entropy_reward_dirichlet",
    "loo_advantages",
    "grpo_center",
    "SolverDidNotConverge",
    "regularized_value",
    "stationarity_residual",
    "solve_regularized",
]
