"""Martingale Majority Certificate: anytime-valid stopping for majority votes.

At every round the leader ``A`` and runner-ups ``B_1..B_{m-1}`` are read off
the tally *before* the new vote arrives. Each runner-up gets a leader-vs-
runner e-process and one more e-process pits the leader against the pooled
"others" (every label outside the top-m). A process only moves on its
informative rounds. The certificate stops once every e-process has reached
``1/epsilon``; by Ville's inequality the returned majority is then wrong with
probability at most ``epsilon``.

E-values are carried as natural logs throughout.
"""

from __future__ import annotations

import json
import math
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Union

from .core import (
    CategoricalDistribution,
    CertificateConfig,
    Tally,
    as_distribution,
    label_key,
    leader_and_runners,
    mode_profile,
)
from .special import (
    LOG2,
    beta_step_ratios,
    log_upper_half_beta,
    reg_inc_beta_at_half,
    upper_half_beta,
)

__all__ = [
    "TruncatedBeta",
    "PointShared",
    "PointRatio",
    "PriorSpec",
    "RecursiveCounts",
    "CertificateState",
    "CertificateOutcome",
    "BudgetExhausted",
    "VoteStreamError",
    "initial_state",
    "step",
    "check_stop",
    "run_certificate",
    "eps_hat",
    "stop_time_heuristics",
    "upper_half_beta",
    "reg_inc_beta_at_half",
    "state_to_json",
    "state_from_json",
]

# Slack on the 1/epsilon comparison so that e-values equal to the threshold
# up to rounding still count as crossing.
THRESHOLD_SLACK = 1e-12
SNAPSHOT_VERSION = 1


class BudgetExhausted(RuntimeError):
    pass


class VoteStreamError(RuntimeError):
    """Raised by vote sources that fail irrecoverably."""


# -- priors -------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedBeta:
    """Beta(a, b) restricted to (1/2, 1], one latent parameter per test."""

    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Beta shapes must be positive")


@dataclass(frozen=True)
class _PointPrior:
    alpha_a: float = 1.0
    alpha_b: float = 1.0
    alpha_o: float = 1.0
    clip: float = 1e-3

    def __post_init__(self):
        if min(self.alpha_a, self.alpha_b, self.alpha_o) <= 0:
            raise ValueError("Dirichlet smoothing constants must be positive")
        if not 0.0 < self.clip <= 1e-3:
            raise ValueError("clip must lie in (0, 1e-3]")


@dataclass(frozen=True)
class PointShared(_PointPrior):
    """Plug-in point prior; e-values recomputed from the current estimate."""


@dataclass(frozen=True)
class PointRatio(_PointPrior):
    """Plug-in point prior applied as per-round multiplicative factors."""


PriorSpec = Union[TruncatedBeta, PointShared, PointRatio]

PRIOR_PRESETS = {
    "jeffreys": lambda: TruncatedBeta(0.5, 0.5),
    "laplace": lambda: TruncatedBeta(1.0, 1.0),
    "point-shared": PointShared,
    "point-ratio": PointRatio,
}


def prior_to_dict(prior: PriorSpec) -> dict:
    if isinstance(prior, TruncatedBeta):
        return {"kind": "truncated_beta", "a": prior.a, "b": prior.b}
    kind = "point_shared" if isinstance(prior, PointShared) else "point_ratio"
    return {
        "kind": kind,
        "alpha_a": prior.alpha_a,
        "alpha_b": prior.alpha_b,
        "alpha_o": prior.alpha_o,
        "clip": prior.clip,
    }


def prior_from_dict(d: dict) -> PriorSpec:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"truncated_beta": TruncatedBeta, "point_shared": PointShared, "point_ratio": PointRatio}[kind]
    return cls(**d)


def plugin_parameters(s: int, f: Sequence[int], o: int, prior: _PointPrior) -> tuple[list[float], float]:
    """Clipped ``theta*`` per runner-up and ``lambda*`` from smoothed counts.

    With ``m - 1`` runner-ups the Dirichlet has ``m + 1`` cells (leader,
    each runner-up, others) and ``lambda*`` compares the leader with the
    others cell only.
    """
    total = s + sum(f) + o + prior.alpha_a + len(f) * prior.alpha_b + prior.alpha_o
    pa = (s + prior.alpha_a) / total
    po = (o + prior.alpha_o) / total
    lo, hi = 0.5 + prior.clip, 1.0 - prior.clip
    thetas = []
    for fi in f:
        pb = (fi + prior.alpha_b) / total
        thetas.append(min(hi, max(lo, pa / (pa + pb))))
    lam = min(hi, max(lo, pa / (pa + po)))
    return thetas, lam


# -- state --------------------------------------------------------------------


@dataclass(frozen=True)
class RecursiveCounts:
    """Leader, per-runner-up and others hits under the predictable top-m."""

    s: int = 0
    f: tuple[int, ...] = (0,)
    o: int = 0

    @property
    def rounds(self) -> int:
        return self.s + sum(self.f) + self.o

    @property
    def M(self) -> tuple[int, ...]:
        return tuple(self.s + fi for fi in self.f)

    @property
    def T(self) -> int:
        return self.s + self.o


@dataclass(frozen=True)
class CertificateState:
    config: CertificateConfig
    tally: Tally = field(default_factory=Tally)
    counts: RecursiveCounts = field(default_factory=RecursiveCounts)
    log_e_run: tuple[float, ...] = (0.0,)
    log_e_oth: float = 0.0
    round: int = 0

    def top(self) -> list[Hashable]:
        """Predictable leader and runner-ups for the *next* vote."""
        return leader_and_runners(self.tally, self.config.m, self.config.labels)

    @property
    def e_run(self) -> tuple[float, ...]:
        return tuple(math.exp(x) for x in self.log_e_run)

    @property
    def e_oth(self) -> float:
        return math.exp(self.log_e_oth)


def initial_state(config: CertificateConfig) -> CertificateState:
    r = config.m - 1
    return CertificateState(
        config=config,
        counts=RecursiveCounts(0, (0,) * r, 0),
        log_e_run=(0.0,) * r,
    )


def _classify(vote: Hashable, top: list[Hashable]) -> tuple[str, int]:
    if vote == top[0]:
        return "leader", -1
    for i, b in enumerate(top[1:]):
        if vote == b:
            return "runner", i
    return "other", -1


def _beta_factor(a: float, b: float, leader: bool) -> float:
    rho_lead, rho_rival = beta_step_ratios(a, b, log_upper_half_beta(a, b))
    return math.log(rho_lead if leader else rho_rival)


def step(state: CertificateState, vote: Hashable) -> CertificateState:
    """Feed one vote and return the successor state."""
    cfg = state.config
    if state.round >= cfg.budget:
        raise BudgetExhausted(f"budget of {cfg.budget} votes already used")
    top = state.top()
    kind, idx = _classify(vote, top)
    c = state.counts
    prior = cfg.prior

    log_run = list(state.log_e_run)
    log_oth = state.log_e_oth
    if isinstance(prior, TruncatedBeta):
        a, b = prior.a + c.s, prior.b
        for i, fi in enumerate(c.f):
            if kind == "leader" or (kind == "runner" and idx == i):
                log_run[i] += _beta_factor(a, b + fi, kind == "leader")
        if kind != "runner":
            log_oth += _beta_factor(a, b + c.o, kind == "leader")
    elif isinstance(prior, PointRatio):
        thetas, lam = plugin_parameters(c.s, c.f, c.o, prior)
        for i, th in enumerate(thetas):
            if kind == "leader":
                log_run[i] += math.log(2.0 * th)
            elif kind == "runner" and idx == i:
                log_run[i] += math.log(2.0 * (1.0 - th))
        if kind == "leader":
            log_oth += math.log(2.0 * lam)
        elif kind == "other":
            log_oth += math.log(2.0 * (1.0 - lam))

    s = c.s + (kind == "leader")
    f = tuple(fi + (kind == "runner" and idx == i) for i, fi in enumerate(c.f))
    o = c.o + (kind == "other")

    if isinstance(prior, PointShared):
        # the pre-vote estimate is applied to the whole post-vote history
        thetas, lam = plugin_parameters(c.s, c.f, c.o, prior)
        log_run = [
            (s + fi) * LOG2 + s * math.log(th) + fi * math.log1p(-th) for th, fi in zip(thetas, f)
        ]
        log_oth = (s + o) * LOG2 + s * math.log(lam) + o * math.log1p(-lam)

    return replace(
        state,
        tally=state.tally.add(vote),
        counts=RecursiveCounts(s, f, o),
        log_e_run=tuple(log_run),
        log_e_oth=log_oth,
        round=state.round + 1,
    )


def log_threshold(epsilon: float) -> float:
    return -math.log(epsilon) - THRESHOLD_SLACK


def crosses(log_e_values: Iterable[float], epsilon: float) -> bool:
    thr = log_threshold(epsilon)
    return all(x >= thr for x in log_e_values)


def check_stop(state: CertificateState, epsilon: float | None = None) -> bool:
    eps = state.config.epsilon if epsilon is None else epsilon
    return crosses((*state.log_e_run, state.log_e_oth), eps)


# -- outcome ------------------------------------------------------------------


def eps_hat(counts: RecursiveCounts) -> float:
    """Beta-approximation lower bound on ``Pr[majority == mode]``.

    This is the ``1 - epsilon_hat`` form: the worst of the leader-vs-runner-up
    and leader-vs-others posterior probabilities under uniform priors.
    """
    vals = [reg_inc_beta_at_half(fi + 1, counts.s + 1) for fi in counts.f]
    vals.append(reg_inc_beta_at_half(counts.o + 1, counts.s + 1))
    return min(vals)


@dataclass(frozen=True)
class CertificateOutcome:
    decision: str
    winner: Hashable | None
    rounds_used: int
    final_log_e_run: tuple[float, ...]
    final_log_e_oth: float
    eps_hat: float
    error: str | None = None
    state: CertificateState | None = field(default=None, compare=False, repr=False)

    @property
    def stopped(self) -> bool:
        return self.decision == "stopped"

    def as_dict(self) -> dict:
        return {
            "decision": self.decision,
            "winner": _label_to_json(self.winner),
            "rounds_used": self.rounds_used,
            "log_e_run": list(self.final_log_e_run),
            "log_e_oth": self.final_log_e_oth,
            "e_run": [_exp_or_none(x) for x in self.final_log_e_run],
            "e_oth": _exp_or_none(self.final_log_e_oth),
            "eps_hat": self.eps_hat,
            "error": self.error,
        }


def _exp_or_none(x: float) -> float | None:
    # e-values past float range are reported through their logs only
    return math.exp(x) if x < 709.0 else None


def _majority(tally: Tally) -> Hashable | None:
    ranked = tally.ranked()
    return ranked[0] if ranked else None


def _outcome(state: CertificateState, decision: str, error: str | None = None) -> CertificateOutcome:
    return CertificateOutcome(
        decision=decision,
        winner=_majority(state.tally),
        rounds_used=state.round,
        final_log_e_run=state.log_e_run,
        final_log_e_oth=state.log_e_oth,
        eps_hat=eps_hat(state.counts),
        error=error,
        state=state,
    )


def run_certificate(
    source: Iterable[Hashable],
    config: CertificateConfig,
    state: CertificateState | None = None,
) -> CertificateOutcome:
    """Consume votes until the certificate stops or the budget runs out.

    An exhausted or failing source yields an abstention; a source failure is
    reported in ``error``. Pass ``state`` to resume from a snapshot.
    """
    state = initial_state(config) if state is None else state
    if state.round >= config.budget:
        return _outcome(state, "abstained")
    it = iter(source)
    while True:
        try:
            vote = next(it)
        except StopIteration:
            return _outcome(state, "abstained")
        except VoteStreamError as exc:
            return _outcome(state, "abstained", error=str(exc))
        state = step(state, vote)
        if check_stop(state):
            return _outcome(state, "stopped")
        if state.round >= config.budget:
            return _outcome(state, "abstained")


# -- stopping-time heuristics -------------------------------------------------


def kl_bernoulli_half(theta: float) -> float:
    """``KL(Ber(theta) || Ber(1/2))`` in nats."""
    out = LOG2
    for q in (theta, 1.0 - theta):
        if q > 0.0:
            out += q * math.log(q)
    return out


@dataclass(frozen=True)
class StopTimeHeuristics:
    """Approximate certificate cost for a distribution.

    ``M_*`` count informative rounds from the exact Bernoulli KL rate;
    ``N_*`` are total rounds from the small-gap closed forms.
    """

    M_run: float
    M_oth: float
    N_run: float
    N_oth: float


def stop_time_heuristics(p, epsilon: float) -> StopTimeHeuristics:
    p = as_distribution(p)
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    prof = mode_profile(p)
    pc, pj = p[prof.c_star], p[prof.j_star]
    log_inv = -math.log(epsilon)
    if log_inv == 0.0:
        return StopTimeHeuristics(0.0, 0.0, 0.0, 0.0)

    def ratio(num: float, den: float) -> float:
        return num / den if den > 0 else math.inf

    theta = pc / (pc + pj)
    lam = pc / (1.0 - pj) if pj < 1.0 else 1.0
    m_run = ratio(log_inv, kl_bernoulli_half(theta))
    m_oth = ratio(log_inv, kl_bernoulli_half(min(lam, 1.0))) if lam > 0.5 else math.inf
    n_run = ratio(2.0 * (pc + pj) * log_inv, (pc - pj) ** 2)
    n_oth = ratio(2.0 * (1.0 - pj) * log_inv, (2.0 * pc + pj - 1.0) ** 2) if 2 * pc + pj > 1 else math.inf
    return StopTimeHeuristics(m_run, m_oth, n_run, n_oth)


# -- snapshots ----------------------------------------------------------------


def _label_to_json(label):
    if label is None or isinstance(label, (str, int, float, bool)):
        return label
    raise TypeError(f"label {label!r} is not JSON serialisable")


def state_to_json(state: CertificateState) -> str:
    cfg = state.config
    doc = {
        "format": "mvcert.certificate_state",
        "version": SNAPSHOT_VERSION,
        "config": {
            "epsilon": cfg.epsilon,
            "budget": cfg.budget,
            "m": cfg.m,
            "prior": prior_to_dict(cfg.prior),
            "labels": None if cfg.labels is None else [_label_to_json(x) for x in cfg.labels],
        },
        "tally": [[_label_to_json(lab), n] for lab, n in sorted(state.tally.counts.items(), key=lambda kv: label_key(kv[0]))],
        "counts": {"s": state.counts.s, "f": list(state.counts.f), "o": state.counts.o},
        "log_e_run": list(state.log_e_run),
        "log_e_oth": state.log_e_oth,
        "round": state.round,
    }
    return json.dumps(doc, sort_keys=True)


def state_from_json(text: str) -> CertificateState:
    doc = json.loads(text)
    if doc.get("format") != "mvcert.certificate_state":
        raise ValueError("not a certificate state snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {doc.get('version')!r}")
    c = doc["config"]
    cfg = CertificateConfig(
        epsilon=c["epsilon"],
        budget=c["budget"],
        m=c["m"],
        prior=prior_from_dict(c["prior"]),
        labels=None if c["labels"] is None else tuple(c["labels"]),
    )
    counts = doc["counts"]
    return CertificateState(
        config=cfg,
        tally=Tally({lab: n for lab, n in doc["tally"]}),
        counts=RecursiveCounts(counts["s"], tuple(counts["f"]), counts["o"]),
        log_e_run=tuple(float(x) for x in doc["log_e_run"]),
        log_e_oth=float(doc["log_e_oth"]),
        round=doc["round"],
    )
