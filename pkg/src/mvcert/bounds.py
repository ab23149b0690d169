"""Closed-form certificates for the majority-vote error probability.

Finite-sample bounds (Hoeffding, Bernstein, Chernoff-Markov) hold for every
``n``. The CLT, Berry-Esseen refined CLT and Bahadur-Rao values are
asymptotic approximations and are reported alongside, not as guarantees.
All probability-like outputs are clamped to ``[0, 1]``.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Sequence
from dataclasses import dataclass

from .core import SNR_INF, as_distribution, label_key, mode_profile

BERRY_ESSEEN_C = 0.56


class NoUniqueMode(ValueError):
    pass


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def _require_unique_mode(p):
    p = as_distribution(p)
    prof = mode_profile(p)
    if prof.delta <= 0.0:
        raise NoUniqueMode("no unique mode: leader and runner-up are tied")
    return p, prof


def hoeffding_terms(p, n: int) -> list[float]:
    p, prof = _require_unique_mode(p)
    pc = p[prof.c_star]
    return [math.exp(-0.5 * n * (pc - p[j]) ** 2) for j in prof.rivals]


def hoeffding_bound(p, n: int) -> float:
    return _clamp(math.fsum(hoeffding_terms(p, n)))


def hoeffding_sample_size(delta: float, k: int, epsilon: float) -> int:
    """Smallest ``n`` with ``(k-1) exp(-n delta^2 / 2) <= epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    if k < 2:
        raise ValueError("k must be >= 2")
    if delta <= 0.0:
        raise ValueError("delta = 0 gives an unbounded sample size")
    if delta > 1.0:
        raise ValueError("delta must be <= 1")
    raw = -(2.0 / delta**2) * math.log(epsilon / (k - 1))
    return max(1, math.ceil(raw))


def _bernstein_exponent(delta: float, var: float) -> float:
    return delta**2 / (2.0 * var + (2.0 / 3.0) * delta + (2.0 / 3.0) * delta**2)


def bernstein_terms(p, n: int, loose: bool = False) -> list[float]:
    p, prof = _require_unique_mode(p)
    pc = p[prof.c_star]
    out = []
    for j, var in zip(prof.rivals, prof.sigma_sq):
        d = pc - p[j]
        if loose:
            # uses sigma_j^2 <= 1 - d^2
            var = 1.0 - d * d
        out.append(math.exp(-n * _bernstein_exponent(d, var)))
    return out


def bernstein_bound(p, n: int) -> float:
    return _clamp(math.fsum(bernstein_terms(p, n)))


def bernstein_loose_bound(p, n: int) -> float:
    return _clamp(math.fsum(bernstein_terms(p, n, loose=True)))


def chernoff_rate(p_c: float, p_j: float) -> float:
    """Per-rival decay rate ``-log(1 - (sqrt(p_c) - sqrt(p_j))^2)``."""
    gap = (math.sqrt(p_c) - math.sqrt(p_j)) ** 2
    if gap >= 1.0:
        return math.inf
    return -math.log1p(-gap)


def chernoff_terms(p, n: int) -> list[float]:
    p, prof = _require_unique_mode(p)
    pc = p[prof.c_star]
    out = []
    for j in prof.rivals:
        rate = chernoff_rate(pc, p[j])
        out.append(0.0 if math.isinf(rate) else math.exp(-n * rate))
    return out


def chernoff_markov_bound(p, n: int) -> float:
    return _clamp(math.fsum(chernoff_terms(p, n)))


def finite_sample_bound(p, n: int) -> float:
    """Sum over rivals of the smallest of the three finite-sample terms."""
    terms = zip(hoeffding_terms(p, n), bernstein_terms(p, n), chernoff_terms(p, n))
    return _clamp(math.fsum(min(t) for t in terms))


def clt_bound(p, n: int) -> float:
    p, prof = _require_unique_mode(p)
    if prof.snr == SNR_INF:
        return 0.0
    return _clamp(0.5 * (p.k - 1) * math.exp(-0.5 * n * prof.snr))


def berry_esseen_third_moment(p_c: float, p_j: float) -> float:
    """Signed third central moment of the margin variable."""
    d = p_c - p_j
    return d * (1.0 - 3.0 * (p_c + p_j) + 2.0 * d * d)


def absolute_third_moment(p_c: float, p_j: float) -> float:
    """``E|Y - d|^3`` for the margin variable ``Y`` in ``{1, -1, 0}``."""
    d = p_c - p_j
    return p_c * abs(1.0 - d) ** 3 + p_j * (1.0 + d) ** 3 + (1.0 - p_c - p_j) * d**3


@dataclass(frozen=True)
class RefinedCLT:
    value: float
    raw: float
    correction_dominates: bool


def clt_refined(p, n: int, absolute_moment: bool = False) -> RefinedCLT:
    """CLT with continuity correction and a Berry-Esseen term per rival.

    By default the correction uses the signed third central moment, which
    can be negative, so the result is an approximation rather than a bound.
    ``absolute_moment=True`` uses ``E|Y - d|^3`` instead, which makes each
    term a valid Berry-Esseen upper bound.

    ``correction_dominates`` is set when the summed Berry-Esseen terms are
    larger than the Gaussian part, i.e. the value carries little information.
    """
    p, prof = _require_unique_mode(p)
    pc = p[prof.c_star]
    rn = math.sqrt(n)
    gauss, corr = [], []
    for j, var in zip(prof.rivals, prof.sigma_sq):
        if var <= 0.0:
            continue
        d = pc - p[j]
        sd = math.sqrt(var)
        gauss.append(0.5 * math.erfc((rn * d - 0.5 / rn) / (math.sqrt(2.0) * sd)))
        rho = absolute_third_moment(pc, p[j]) if absolute_moment else berry_esseen_third_moment(pc, p[j])
        corr.append(BERRY_ESSEEN_C * rho / (var * sd * rn))
    raw = math.fsum(gauss) + math.fsum(corr)
    return RefinedCLT(_clamp(raw), raw, abs(math.fsum(corr)) > math.fsum(gauss))


def clt_refined_bound(p, n: int, absolute_moment: bool = False) -> float:
    return clt_refined(p, n, absolute_moment).value


def sanov_exponent(p) -> float:
    p = as_distribution(p)
    prof = mode_profile(p)
    return chernoff_rate(p[prof.c_star], p[prof.j_star])


def sanov_small_gap(p) -> float:
    """Second-order expansion ``delta^2 / (2 sigma_{j*}^2)`` of the exponent."""
    prof = mode_profile(p)
    var = prof.sigma_sq_runner
    if var <= 0.0:
        return math.inf
    return prof.delta**2 / (2.0 * var)


def bahadur_rao_approx(p, n: int) -> float:
    p, prof = _require_unique_mode(p)
    pc, pj = p[prof.c_star], p[prof.j_star]
    if pj == 0.0:
        return 0.0
    gap = (math.sqrt(pc) - math.sqrt(pj)) ** 2
    sigma_t = math.sqrt(2.0 * math.sqrt(pc * pj) / (1.0 - gap))
    pref = 1.0 / (math.sqrt(2.0 * math.pi * n) * (1.0 - math.sqrt(pj / pc)) * sigma_t)
    return _clamp(pref * math.exp(n * math.log1p(-gap)))


@dataclass(frozen=True)
class BoundReport:
    n: int
    hoeffding: float
    bernstein: float
    bernstein_loose: float
    chernoff_markov: float
    clt: float
    clt_refined: float
    bahadur_rao: float
    sanov_exponent: float
    clt_refined_uninformative: bool = False

    FIELDS = (
        "hoeffding",
        "bernstein",
        "bernstein_loose",
        "chernoff_markov",
        "clt",
        "clt_refined",
        "bahadur_rao",
    )
    RIGOROUS = ("hoeffding", "bernstein", "bernstein_loose", "chernoff_markov")

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            **{f: getattr(self, f) for f in self.FIELDS},
            "sanov_exponent": self.sanov_exponent,
            "clt_refined_uninformative": self.clt_refined_uninformative,
        }


def bound_report(p, n: int) -> BoundReport:
    p, _ = _require_unique_mode(p)
    refined = clt_refined(p, n)
    return BoundReport(
        n=n,
        hoeffding=hoeffding_bound(p, n),
        bernstein=bernstein_bound(p, n),
        bernstein_loose=bernstein_loose_bound(p, n),
        chernoff_markov=chernoff_markov_bound(p, n),
        clt=clt_bound(p, n),
        clt_refined=refined.value,
        bahadur_rao=bahadur_rao_approx(p, n),
        sanov_exponent=sanov_exponent(p),
        clt_refined_uninformative=refined.correction_dominates,
    )


# -- heterogeneous experts ----------------------------------------------------


@dataclass(frozen=True)
class ExpertPanel:
    weights: tuple[float, ...]
    per_expert_dists: tuple
    samples_per_expert: tuple[int, ...]

    def __init__(self, weights, per_expert_dists, samples_per_expert):
        weights = tuple(float(w) for w in weights)
        dists = tuple(as_distribution(d) for d in per_expert_dists)
        ns = tuple(int(n) for n in samples_per_expert)
        if not (len(weights) == len(dists) == len(ns) >= 1):
            raise ValueError("weights, distributions and sample counts must share a length >= 1")
        if any(w <= 0 for w in weights):
            raise ValueError("expert weights must be positive")
        if any(n < 1 for n in ns):
            raise ValueError("each expert needs at least one sample")
        if len({d.k for d in dists}) != 1:
            raise ValueError("all experts must share the label universe")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "per_expert_dists", dists)
        object.__setattr__(self, "samples_per_expert", ns)


def weighted_hoeffding_bound(panel: ExpertPanel, target: int) -> float:
    """Hoeffding bound for the weighted majority against a declared target label."""
    k = panel.per_expert_dists[0].k
    if not 0 <= target < k:
        raise ValueError(f"target label {target} outside 0..{k - 1}")
    denom = math.fsum(n * w * w for n, w in zip(panel.samples_per_expert, panel.weights))
    if denom <= 0.0:
        raise ValueError("zero weighted sample size")
    terms = []
    for j in range(k):
        if j == target:
            continue
        mean = math.fsum(
            n * w * (d[target] - d[j])
            for n, w, d in zip(panel.samples_per_expert, panel.weights, panel.per_expert_dists)
        )
        terms.append(math.exp(-0.5 * mean * mean / denom))
    return _clamp(math.fsum(terms))


def map_weight(q: float, k: int) -> float:
    return math.log(q * (k - 1) / (1.0 - q))


def map_decision(
    competences: Sequence[float],
    votes: Sequence[Sequence[Hashable]],
    k: int,
    labels: Sequence[Hashable] | None = None,
) -> Hashable:
    """MAP label under a uniform-error model of each expert.

    Each vote of expert ``l`` for label ``j`` adds ``log q_l`` to ``j``'s
    score and ``log((1 - q_l)/(k - 1))`` to every other label. Candidates are
    ``labels`` if given, otherwise the labels that received votes.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(competences) != len(votes):
        raise ValueError("one vote sequence per expert is required")
    for q in competences:
        if not 0.0 < q < 1.0:
            raise ValueError("competences must lie in (0, 1)")
    candidates = list(labels) if labels is not None else []
    seen = set(candidates)
    for seq in votes:
        for v in seq:
            if v not in seen:
                seen.add(v)
                candidates.append(v)
    if not candidates:
        raise ValueError("no votes and no candidate labels")
    score = {lab: 0.0 for lab in candidates}
    for q, seq in zip(competences, votes):
        hit, miss = math.log(q), math.log((1.0 - q) / (k - 1))
        for v in seq:
            for lab in candidates:
                score[lab] += hit if lab == v else miss
    return min(candidates, key=lambda lab: (-score[lab], label_key(lab)))
