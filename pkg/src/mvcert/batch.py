"""Lock-step vectorised certificates for Monte Carlo studies.

Runs many independent certificates on integer labels ``0..k-1`` (the label
universe is known, so empty top-m slots go to the lowest unseen labels, as in
the scalar path with ``labels=range(k)``). Each trial draws its votes from
its own generator seeded by :func:`trial_seed`, which makes results
independent of chunking and trial order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CertificateConfig, as_distribution
from .mmc import PointRatio, PointShared, TruncatedBeta, log_threshold
from .special import LOG2, beta_step_ratios, log_upper_half_beta

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TABLE_MAX_CELLS = 4_000_000
CHUNK = 8192


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """64-bit per-trial seed: ``splitmix64(master ^ splitmix64(index))``."""
    return splitmix64((int(master_seed) & _MASK64) ^ splitmix64(int(trial_index)))


def sample_votes(cdf: np.ndarray, seed: int, n: int) -> np.ndarray:
    """``n`` categorical draws by inverse CDF from one seeded stream."""
    u = np.random.Generator(np.random.PCG64(seed)).random(n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def cumulative(p) -> np.ndarray:
    cdf = np.cumsum(as_distribution(p).as_array())
    cdf[-1] = 1.0
    return cdf


@dataclass
class BatchResult:
    """Per-trial outcomes; rounds are 1-based, ``-1`` means never."""

    stopped: np.ndarray
    rounds: np.ndarray
    winner: np.ndarray
    log_e_run: np.ndarray
    log_e_oth: np.ndarray
    first_cross_run: np.ndarray
    first_cross_oth: np.ndarray
    max_log_e_run: np.ndarray
    recorded_log_e_run: dict

    @property
    def trials(self) -> int:
        return len(self.stopped)

    @classmethod
    def concat(cls, parts: list[BatchResult]) -> BatchResult:
        keys = parts[0].recorded_log_e_run.keys()
        return cls(
            *(np.concatenate([getattr(p, name) for p in parts]) for name in (
                "stopped", "rounds", "winner", "log_e_run", "log_e_oth",
                "first_cross_run", "first_cross_oth", "max_log_e_run",
            )),
            recorded_log_e_run={r: np.concatenate([p.recorded_log_e_run[r] for p in parts]) for r in keys},
        )


class _BetaLookup:
    def __init__(self, prior: TruncatedBeta, horizon: int):
        self.a, self.b = prior.a, prior.b
        self.table = None
        size = horizon + 1
        if size * size <= _TABLE_MAX_CELLS:
            s, f = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
            self.table = log_upper_half_beta(self.a + s, self.b + f)

    def ratios(self, s: np.ndarray, f: np.ndarray):
        a, b = self.a + s, self.b + f
        log_u = self.table[s, f] if self.table is not None else log_upper_half_beta(a, b)
        return beta_step_ratios(a, b, log_u)


def _plugin(s, f, o, prior):
    r = f.shape[1]
    total = s + f.sum(axis=1) + o + prior.alpha_a + r * prior.alpha_b + prior.alpha_o
    pa = (s + prior.alpha_a) / total
    pb = (f + prior.alpha_b) / total[:, None]
    po = (o + prior.alpha_o) / total
    lo, hi = 0.5 + prior.clip, 1.0 - prior.clip
    theta = np.clip(pa[:, None] / (pa[:, None] + pb), lo, hi)
    lam = np.clip(pa / (pa + po), lo, hi)
    return theta, lam


def _run_chunk(votes: np.ndarray, k: int, config: CertificateConfig, stop: bool, record: tuple, beta) -> BatchResult:
    trials, horizon = votes.shape
    m = config.m
    r = m - 1
    prior = config.prior
    thr = log_threshold(config.epsilon)
    rows = np.arange(trials)

    counts = np.zeros((trials, k), dtype=np.int64)
    s = np.zeros(trials, dtype=np.int64)
    f = np.zeros((trials, r), dtype=np.int64)
    o = np.zeros(trials, dtype=np.int64)
    log_run = np.zeros((trials, r))
    log_oth = np.zeros(trials)

    done = np.zeros(trials, dtype=bool)
    rounds = np.full(trials, horizon, dtype=np.int64)
    winner = np.full(trials, -1, dtype=np.int64)
    fin_run = np.zeros((trials, r))
    fin_oth = np.zeros(trials)
    cross_run = np.full(trials, -1, dtype=np.int64)
    cross_oth = np.full(trials, -1, dtype=np.int64)
    max_run = np.zeros(trials)
    recorded = {}

    for n in range(horizon):
        order = np.argsort(-counts, axis=1, kind="stable")[:, :m]
        lead, runners = order[:, 0], order[:, 1:]
        v = votes[:, n]
        is_lead = v == lead
        is_run = v[:, None] == runners
        is_oth = ~is_lead & ~is_run.any(axis=1)

        if isinstance(prior, TruncatedBeta):
            rho_l, rho_r = beta.ratios(s[:, None], f)
            fac = np.where(is_lead[:, None], rho_l, np.where(is_run, rho_r, 1.0))
            log_run += np.log(fac)
            rho_l, rho_r = beta.ratios(s, o)
            log_oth += np.log(np.where(is_lead, rho_l, np.where(is_oth, rho_r, 1.0)))
        elif isinstance(prior, PointRatio):
            theta, lam = _plugin(s, f, o, prior)
            fac = np.where(is_lead[:, None], 2.0 * theta, np.where(is_run, 2.0 * (1.0 - theta), 1.0))
            log_run += np.log(fac)
            log_oth += np.log(np.where(is_lead, 2.0 * lam, np.where(is_oth, 2.0 * (1.0 - lam), 1.0)))
        elif isinstance(prior, PointShared):
            theta, lam = _plugin(s, f, o, prior)

        s += is_lead
        f += is_run
        o += is_oth
        counts[rows, v] += 1

        if isinstance(prior, PointShared):
            log_run = (s[:, None] + f) * LOG2 + s[:, None] * np.log(theta) + f * np.log1p(-theta)
            log_oth = (s + o) * LOG2 + s * np.log(lam) + o * np.log1p(-lam)

        worst_run = log_run.min(axis=1)
        np.maximum(max_run, worst_run, out=max_run)
        hit_run = worst_run >= thr
        hit_oth = log_oth >= thr
        cross_run[(cross_run < 0) & hit_run] = n + 1
        cross_oth[(cross_oth < 0) & hit_oth] = n + 1
        if n + 1 in record:
            recorded[n + 1] = log_run[:, 0].copy()

        newly = ~done & hit_run & hit_oth
        if stop and newly.any():
            rounds[newly] = n + 1
            winner[newly] = np.argmax(counts[newly], axis=1)
            fin_run[newly] = log_run[newly]
            fin_oth[newly] = log_oth[newly]
            done |= newly

    stopped = done.copy()
    rest = ~done
    winner[rest] = np.argmax(counts[rest], axis=1)
    fin_run[rest] = log_run[rest]
    fin_oth[rest] = log_oth[rest]
    return BatchResult(stopped, rounds, winner, fin_run, fin_oth, cross_run, cross_oth, max_run, recorded)


def run_batch(
    p,
    config: CertificateConfig,
    trials: int,
    master_seed: int,
    *,
    stop: bool = True,
    record_rounds: tuple = (),
    first_trial: int = 0,
) -> BatchResult:
    """Run ``trials`` certificates on votes drawn i.i.d. from ``p``.

    With ``stop=False`` every trial runs the full budget and only the
    crossing times and running maxima are meaningful; ``stopped`` is then
    all False.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = as_distribution(p)
    cdf = cumulative(p)
    horizon = config.budget
    beta = _BetaLookup(config.prior, horizon) if isinstance(config.prior, TruncatedBeta) else None
    parts = []
    for start in range(0, trials, CHUNK):
        idx = range(first_trial + start, first_trial + min(trials, start + CHUNK))
        votes = np.stack([sample_votes(cdf, trial_seed(master_seed, i), horizon) for i in idx])
        parts.append(_run_chunk(votes, p.k, config, stop, tuple(record_rounds), beta))
    return BatchResult.concat(parts)


def run_votes(votes: np.ndarray, k: int, config: CertificateConfig, *, stop: bool = True) -> BatchResult:
    """Run certificates on a given ``(trials, budget)`` array of integer votes."""
    votes = np.asarray(votes, dtype=np.int64)
    beta = _BetaLookup(config.prior, votes.shape[1]) if isinstance(config.prior, TruncatedBeta) else None
    return _run_chunk(votes, k, config, stop, (), beta)
