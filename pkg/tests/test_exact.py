import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings

from mvcert.exact import (
    InstanceTooLarge,
    dp_table,
    exact_error_dp,
    exact_error_enumeration,
)

from .conftest import distributions, random_distribution


def brute_force_sequences(p, n):
    """Sum over all k**n ordered vote sequences."""
    c = int(np.argmax(p))
    total = 0.0
    for seq in itertools.product(range(len(p)), repeat=n):
        cnt = Counter(seq)
        if cnt[c] <= max((cnt[j] for j in range(len(p)) if j != c), default=0):
            total += math.prod(p[v] for v in seq)
    return total


@pytest.mark.parametrize("fn", [exact_error_enumeration, exact_error_dp])
class TestKnownValues:
    def test_three_labels_two_votes(self, fn):
        assert fn([0.5, 0.3, 0.2], 2) == pytest.approx(0.75, abs=1e-12)

    def test_binary_three_votes(self, fn):
        assert fn([0.6, 0.4], 3) == pytest.approx(0.4**3 + 3 * 0.6 * 0.4**2, abs=1e-12)

    def test_dirac_never_errs(self, fn):
        assert fn([1.0, 0.0], 5) == 0.0

    def test_single_vote(self, fn):
        assert fn([0.38, 0.35, 0.27], 1) == pytest.approx(0.62, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(distributions(max_k=3))
def test_matches_sequence_brute_force(p):
    for n in range(1, 6):
        ref = brute_force_sequences(p, n)
        assert exact_error_enumeration(p, n) == pytest.approx(ref, abs=1e-12)
        assert exact_error_dp(p, n) == pytest.approx(ref, abs=1e-12)


def test_dp_equals_enumeration_random(rng):
    for _ in range(30):
        k = int(rng.integers(2, 5))
        p = random_distribution(rng, k)
        for n in range(1, 9):
            assert abs(exact_error_dp(p, n) - exact_error_enumeration(p, n)) <= 1e-10


def test_dp_table_conserves_probability(rng):
    for k in (2, 3, 4):
        p = random_distribution(rng, k)
        n = 12
        final = dp_table(p, n)[:, :, n]
        mass = np.exp(final[np.isfinite(final)] + math.lgamma(n + 1)).sum()
        assert mass == pytest.approx(1.0, abs=1e-9)


def test_dp_reachable_states(rng):
    p = random_distribution(rng, 3)
    table = dp_table(p, 6)
    t, m, s = np.nonzero(np.isfinite(table))
    assert np.all(t + m <= s)


def test_binary_majority_decreases_along_odd_n():
    for pc in (0.55, 0.6, 0.75, 0.9):
        vals = [exact_error_dp([pc, 1 - pc], n) for n in range(1, 40, 2)]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_error_vanishes_with_n():
    assert exact_error_dp([0.6, 0.4], 51) < exact_error_dp([0.6, 0.4], 11)


def test_enumeration_guard():
    with pytest.raises(InstanceTooLarge, match="too large"):
        exact_error_enumeration(np.full(10, 0.1), 60)


def test_rejects_nonpositive_n():
    with pytest.raises(ValueError):
        exact_error_dp([0.6, 0.4], 0)
