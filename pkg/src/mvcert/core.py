"""Shared domain types: categorical distributions, tallies, mode statistics."""

from __future__ import annotations

import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SUM_TOL = 1e-12
RENORM_TOL = 1e-9

#: Returned as the SNR of a distribution with all mass on one label.
SNR_INF = math.inf


def label_key(label: Hashable) -> tuple:
    """Total order used for every deterministic tie-break.

    Numbers sort before strings, strings sort lexicographically, and
    placeholders sort after every real label.
    """
    if isinstance(label, Placeholder):
        return (2, label.index)
    if isinstance(label, (int, float, np.integer, np.floating)) and not isinstance(label, bool):
        return (0, float(label), "")
    return (1, 0.0, str(label))


@dataclass(frozen=True)
class Placeholder:
    """A never-observed label used to pad top-m slots.

    No vote ever equals a placeholder, so the e-processes attached to it
    cannot move.
    """

    index: int

    def __repr__(self) -> str:
        return f"<placeholder {self.index}>"


@dataclass(frozen=True)
class CategoricalDistribution:
    """Probability vector over ``k >= 2`` labels indexed ``0..k-1``."""

    probs: tuple[float, ...]

    def __init__(self, probs: Iterable[float]):
        arr = [float(x) for x in probs]
        if len(arr) < 2:
            raise ValueError(f"need at least 2 categories, got {len(arr)}")
        if any(not math.isfinite(x) or x < 0 for x in arr):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(arr)
        err = abs(total - 1.0)
        if err > RENORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if err > SUM_TOL:
            arr = [x / total for x in arr]
        object.__setattr__(self, "probs", tuple(arr))

    @property
    def k(self) -> int:
        return len(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, j: int) -> float:
        return self.probs[j]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def as_distribution(p: CategoricalDistribution | Sequence[float] | np.ndarray) -> CategoricalDistribution:
    if isinstance(p, CategoricalDistribution):
        return p
    return CategoricalDistribution(p)


@dataclass(frozen=True)
class ModeProfile:
    """Mode, runner-up and margin statistics of a distribution.

    ``rivals`` lists every label other than the mode, and ``sigma_sq[i]`` is
    the variance of the margin variable ``1{X=c*} - 1{X=rivals[i]}``.
    """

    c_star: int
    j_star: int
    delta: float
    rivals: tuple[int, ...]
    sigma_sq: tuple[float, ...]
    snr: float

    @property
    def sigma_sq_runner(self) -> float:
        return self.sigma_sq[self.rivals.index(self.j_star)]


def margin_variance(p_c: float, p_j: float) -> float:
    return p_c + p_j - (p_c - p_j) ** 2


def snr_from_margin(p_c: float, p_j: float) -> float:
    delta = p_c - p_j
    denom = 2.0 * p_c - delta - delta * delta
    if denom <= 0.0:
        return SNR_INF
    return delta * delta / denom


def ranked_indices(values: Sequence[float]) -> list[int]:
    """Indices sorted by value descending, lowest index first on ties."""
    return sorted(range(len(values)), key=lambda j: (-values[j], j))


def mode_profile(p) -> ModeProfile:
    p = as_distribution(p)
    order = ranked_indices(p.probs)
    c, j = order[0], order[1]
    p_c = p[c]
    rivals = tuple(i for i in range(p.k) if i != c)
    sigma_sq = tuple(margin_variance(p_c, p[i]) for i in rivals)
    return ModeProfile(
        c_star=c,
        j_star=j,
        delta=p_c - p[j],
        rivals=rivals,
        sigma_sq=sigma_sq,
        snr=snr_from_margin(p_c, p[j]),
    )


@dataclass(frozen=True)
class Tally:
    """Immutable label -> count map."""

    counts: Mapping[Hashable, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for label, c in dict(self.counts).items():
            c = int(c)
            if c < 0:
                raise ValueError(f"negative count for {label!r}")
            if c:
                clean[label] = c
        object.__setattr__(self, "counts", clean)

    @classmethod
    def from_votes(cls, votes: Iterable[Hashable]) -> Tally:
        counts: dict[Hashable, int] = {}
        for v in votes:
            counts[v] = counts.get(v, 0) + 1
        return cls(counts)

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, label: Hashable) -> int:
        return self.counts.get(label, 0)

    def add(self, label: Hashable) -> Tally:
        counts = dict(self.counts)
        counts[label] = counts.get(label, 0) + 1
        return Tally(counts)

    def ranked(self) -> list[Hashable]:
        return sorted(self.counts, key=lambda lab: (-self.counts[lab], label_key(lab)))

    def leader(self, labels: Sequence[Hashable] | None = None) -> Hashable:
        return leader_and_runners(self, 2, labels)[0]


def leader_and_runners(t: Tally, m: int, labels: Sequence[Hashable] | None = None) -> list[Hashable]:
    """Leader followed by the ``m - 1`` strongest runner-ups.

    When fewer than ``m`` labels have been observed the remaining slots are
    filled with zero-count labels: the lowest unseen members of ``labels``
    when a label universe is declared, otherwise :class:`Placeholder` values.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    ranked = t.ranked()
    if len(ranked) >= m:
        return ranked[:m]
    out = list(ranked)
    if labels is not None:
        seen = set(out)
        for lab in sorted(labels, key=label_key):
            if len(out) == m:
                break
            if lab not in seen:
                out.append(lab)
    i = 0
    while len(out) < m:
        out.append(Placeholder(i))
        i += 1
    return out


@dataclass(frozen=True)
class CertificateConfig:
    """Parameters of one certificate run.

    ``labels`` optionally declares the label universe; it only affects how
    empty top-m slots are filled before enough labels have been observed.
    """

    epsilon: float = 0.1
    budget: int = 64
    m: int = 2
    prior: Any = None
    labels: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if int(self.budget) < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if int(self.m) < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.prior is None:
            from .mmc import TruncatedBeta

            object.__setattr__(self, "prior", TruncatedBeta())
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
