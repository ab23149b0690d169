import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvcert.batch import run_batch
from mvcert.core import CertificateConfig
from mvcert.mmc import (
    PRIOR_PRESETS,
    BudgetExhausted,
    PointRatio,
    PointShared,
    RecursiveCounts,
    TruncatedBeta,
    VoteStreamError,
    check_stop,
    crosses,
    eps_hat,
    initial_state,
    kl_bernoulli_half,
    plugin_parameters,
    prior_from_dict,
    prior_to_dict,
    run_certificate,
    state_from_json,
    state_to_json,
    step,
    stop_time_heuristics,
)
from mvcert.sim import sweep_distribution
from mvcert.special import log_upper_half_beta


def beta_upper_half_exact(a: int, b: int) -> Fraction:
    """Integral of t^(a-1)(1-t)^(b-1) over [1/2, 1] for integer shapes, by binomial expansion."""
    total = Fraction(0)
    for j in range(b):
        coef = math.comb(b - 1, j) * (-1) ** j
        e = a + j
        total += Fraction(coef, e) * (1 - Fraction(1, 2**e))
    return total


def cfg(prior=None, m=2, labels=(0, 1), epsilon=0.1, budget=64):
    return CertificateConfig(epsilon, budget, m, prior or TruncatedBeta(1.0, 1.0), labels)


def feed(config, votes):
    state = initial_state(config)
    for v in votes:
        state = step(state, v)
    return state


class TestHandTraces:
    def test_laplace_trace_matches_closed_forms(self):
        state = feed(cfg(), [0, 0, 1])
        b = beta_upper_half_exact
        closed_run = 8 * b(3, 2) / b(1, 1)
        closed_oth = 4 * b(3, 1) / b(1, 1)
        assert closed_run == Fraction(11, 12)
        assert closed_oth == Fraction(7, 3)
        assert state.e_run[0] == pytest.approx(11 / 12, rel=1e-12)
        assert state.e_oth == pytest.approx(7 / 3, rel=1e-12)

    def test_laplace_trace_per_round_ratios(self):
        config = cfg()
        state = initial_state(config)
        ratios = []
        for v in [0, 0, 1]:
            nxt = step(state, v)
            ratios.append(math.exp(nxt.log_e_run[0] - state.log_e_run[0]))
            state = nxt
        assert ratios == pytest.approx([1.5, 14 / 9, 11 / 28], rel=1e-12)

    def test_point_shared_first_leader_vote(self):
        state = feed(cfg(PointShared()), [0])
        assert state.e_run[0] == pytest.approx(1.002, rel=1e-14)
        assert state.e_oth == pytest.approx(1.002, rel=1e-14)

    def test_point_ratio_first_leader_vote(self):
        state = feed(cfg(PointRatio()), [0])
        assert state.e_run[0] == pytest.approx(1.002, rel=1e-14)

    def test_plugin_parameters(self):
        thetas, lam = plugin_parameters(3, (1,), 0, PointShared())
        # smoothed cells 4/7, 2/7, 1/7
        assert thetas == pytest.approx([4 / 6])
        assert lam == pytest.approx(4 / 5)


class TestClosedForm:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.sampled_from([(0.5, 0.5), (1.0, 1.0), (2.0, 0.7)]), st.integers(2, 4))
    def test_product_of_ratios(self, seed, shapes, k):
        rng = random.Random(seed)
        a, b = shapes
        length = rng.randint(1, 200)
        votes = [rng.randrange(k) for _ in range(length)]
        state = feed(cfg(TruncatedBeta(a, b), labels=tuple(range(k)), budget=length), votes)
        c = state.counts
        base = log_upper_half_beta(a, b)
        run = (c.s + c.f[0]) * math.log(2) + log_upper_half_beta(a + c.s, b + c.f[0]) - base
        oth = (c.s + c.o) * math.log(2) + log_upper_half_beta(a + c.s, b + c.o) - base
        assert state.log_e_run[0] == pytest.approx(run, abs=1e-10)
        assert state.log_e_oth == pytest.approx(oth, abs=1e-10)


class TestStateInvariants:
    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.integers(0, 5), min_size=1, max_size=60),
        st.sampled_from(sorted(PRIOR_PRESETS)),
        st.integers(2, 4),
        st.booleans(),
    )
    def test_counts_conserved_and_predictable(self, votes, prior_name, m, declare):
        config = CertificateConfig(0.1, 100, m, PRIOR_PRESETS[prior_name](), tuple(range(6)) if declare else None)
        state = initial_state(config)
        for v in votes:
            top = state.top()
            # whichever vote arrives, the classification uses the same pre-vote top
            for probe in range(6):
                nxt = step(state, probe)
                c0, c1 = state.counts, nxt.counts
                if probe == top[0]:
                    assert c1.s == c0.s + 1
                elif probe in top[1:]:
                    i = top.index(probe) - 1
                    assert c1.f[i] == c0.f[i] + 1
                else:
                    assert c1.o == c0.o + 1
            state = step(state, v)
            c = state.counts
            assert c.s + sum(c.f) + c.o == state.round
            assert all(math.isfinite(x) for x in (*state.log_e_run, state.log_e_oth))

    def test_budget_exhausted(self):
        state = feed(cfg(budget=2), [0, 1])
        with pytest.raises(BudgetExhausted):
            step(state, 0)


class TestCheckStop:
    def _state(self, run, oth, epsilon=0.1):
        s = initial_state(cfg(epsilon=epsilon))
        return s.__class__(config=s.config, log_e_run=(run,), log_e_oth=oth)

    def test_examples(self):
        assert check_stop(self._state(math.log(20), math.log(20)), 0.1)
        assert not check_stop(self._state(math.log(20), math.log(5)), 0.1)
        assert check_stop(self._state(math.log(2.5), math.log(2.5)), 0.4)

    def test_every_process_must_cross(self):
        assert not crosses([5.0, 5.0, 1.0], 0.1)
        assert crosses([5.0, 5.0, 2.31], 0.1)


class TestRunCertificate:
    @pytest.mark.parametrize("prior,expected", [(TruncatedBeta(1.0, 1.0), 5), (TruncatedBeta(0.5, 0.5), None)])
    def test_dirac_source(self, prior, expected):
        out = run_certificate([0] * 64, cfg(prior))
        assert out.stopped and out.winner == 0
        # first n with 2^n U(a + n, b) / U(a, b) >= 10
        n = next(n for n in range(1, 65) if n * math.log(2) + log_upper_half_beta(prior.a + n, prior.b) - log_upper_half_beta(prior.a, prior.b) >= math.log(10))
        assert out.rounds_used == n
        if expected is not None:
            assert n == expected
            assert math.exp(out.final_log_e_oth) == pytest.approx(63 / 6, rel=1e-12)

    def test_dirac_without_declared_labels(self):
        # the first vote hits neither placeholder slot and stays an "other" hit
        out = run_certificate([0] * 64, cfg(labels=None))
        base = log_upper_half_beta(1.0, 1.0)

        def log_oth(n):
            return n * math.log(2) + log_upper_half_beta(1.0 + n - 1, 2.0) - base

        n = next(n for n in range(2, 65) if log_oth(n) >= math.log(10))
        assert out.stopped and out.winner == 0 and out.rounds_used == n == 9
        assert out.final_log_e_oth == pytest.approx(log_oth(9), abs=1e-12)

    def test_single_vote_budget_one(self):
        out = run_certificate([0], cfg(epsilon=0.9, budget=1))
        assert out.stopped and out.rounds_used == 1
        out = run_certificate([1], cfg(epsilon=0.9, budget=1))
        assert not out.stopped

    def test_empty_source(self):
        out = run_certificate([], cfg())
        assert out.decision == "abstained" and out.rounds_used == 0 and out.winner is None
        assert out.eps_hat == 0.5

    def test_budget_exhaustion(self):
        out = run_certificate([0, 1] * 50, cfg(budget=10))
        assert out.decision == "abstained" and out.rounds_used == 10

    def test_failing_source(self):
        def source():
            yield 0
            yield 0
            raise VoteStreamError("backend down")

        out = run_certificate(source(), cfg())
        assert out.decision == "abstained" and out.rounds_used == 2
        assert out.error == "backend down"

    def test_stop_implies_threshold(self):
        rng = random.Random(3)
        for _ in range(50):
            votes = [0 if rng.random() < 0.7 else rng.randrange(1, 3) for _ in range(200)]
            out = run_certificate(votes, cfg(labels=(0, 1, 2), budget=200))
            if out.stopped:
                assert min(*out.final_log_e_run, out.final_log_e_oth) >= math.log(10) - 1e-12

    def test_resume_from_snapshot(self):
        rng = random.Random(5)
        votes = [rng.choice("aab c") for _ in range(80)]
        config = CertificateConfig(0.05, 80, 3, TruncatedBeta(), ("a", "b", "c", " "))
        full = run_certificate(votes, config)
        state = feed(config, votes[:7])
        resumed = run_certificate(votes[7:], config, state=state_from_json(state_to_json(state)))
        assert resumed.rounds_used == full.rounds_used
        assert resumed.final_log_e_run == pytest.approx(full.final_log_e_run, abs=1e-12)

    def test_as_dict_large_evalues(self):
        out = run_certificate([0] * 2000, cfg(epsilon=5e-324, budget=2000))
        d = out.as_dict()
        assert d["log_e_oth"] > 709 and d["e_oth"] is None


class TestSnapshot:
    @pytest.mark.parametrize("prior", [TruncatedBeta(0.5, 0.5), PointShared(), PointRatio(alpha_o=2.0, clip=1e-4)])
    def test_round_trip(self, prior):
        rng = random.Random(11)
        state = feed(cfg(prior, m=3, labels=None, budget=100), [rng.choice(["x", "y", 3, "z"]) for _ in range(40)])
        back = state_from_json(state_to_json(state))
        assert back.counts == state.counts and back.tally == state.tally and back.round == state.round
        assert back.config == state.config
        assert back.log_e_run == pytest.approx(state.log_e_run, abs=1e-12)
        assert back.log_e_oth == pytest.approx(state.log_e_oth, abs=1e-12)
        assert state_to_json(back) == state_to_json(state)

    def test_rejects_foreign_documents(self):
        with pytest.raises(ValueError):
            state_from_json('{"format": "other"}')
        doc = state_to_json(initial_state(cfg())).replace('"version": 1', '"version": 99')
        with pytest.raises(ValueError):
            state_from_json(doc)

    @pytest.mark.parametrize("name", sorted(PRIOR_PRESETS))
    def test_prior_dict_round_trip(self, name):
        prior = PRIOR_PRESETS[name]()
        assert prior_from_dict(prior_to_dict(prior)) == prior


class TestPriorValidation:
    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            TruncatedBeta(0.0, 1.0)
        with pytest.raises(ValueError):
            PointShared(clip=0.01)
        with pytest.raises(ValueError):
            PointRatio(alpha_a=0.0)


class TestEpsHat:
    def test_examples(self):
        assert eps_hat(RecursiveCounts(3, (1,), 0)) == pytest.approx(0.8125, rel=1e-14)
        assert eps_hat(RecursiveCounts(0, (0,), 0)) == pytest.approx(0.5, rel=1e-14)
        assert eps_hat(RecursiveCounts(10, (10,), 0)) == pytest.approx(0.5, rel=1e-14)

    def test_worst_runner_for_m_above_two(self):
        assert eps_hat(RecursiveCounts(3, (0, 1), 0)) == pytest.approx(0.8125, rel=1e-14)

    @given(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200))
    def test_range_and_monotone_in_s(self, s, f, o):
        a = eps_hat(RecursiveCounts(s, (f,), o))
        b = eps_hat(RecursiveCounts(s + 1, (f,), o))
        assert 0.0 <= a <= 1.0
        assert b >= a - 1e-15


class TestHeuristics:
    def test_examples(self):
        h = stop_time_heuristics([0.5, 0.3, 0.2], 0.1)
        assert h.N_run == pytest.approx(2 * 0.8 / 0.04 * math.log(10), rel=1e-12)
        assert h.N_run == pytest.approx(92.1, abs=0.05)
        theta = 0.625
        kl = theta * math.log(2 * theta) + (1 - theta) * math.log(2 * (1 - theta))
        assert h.M_run == pytest.approx(math.log(10) / kl, rel=1e-12)
        assert h.M_run == pytest.approx(72.9, abs=0.05)

    def test_epsilon_one(self):
        h = stop_time_heuristics([0.5, 0.3, 0.2], 1.0)
        assert (h.M_run, h.M_oth, h.N_run, h.N_oth) == (0.0, 0.0, 0.0, 0.0)

    def test_kl(self):
        assert kl_bernoulli_half(0.5) == pytest.approx(0.0, abs=1e-16)
        assert kl_bernoulli_half(1.0) == pytest.approx(math.log(2))


class TestBoundaryNull:
    # two equiprobable labels: every informative round is a fair coin
    NULL = (0.5, 0.5)

    @pytest.mark.parametrize("prior", [TruncatedBeta(0.5, 0.5), TruncatedBeta(1.0, 1.0), PointRatio()])
    def test_e_run_mean_is_one(self, prior):
        config = CertificateConfig(0.1, 40, 2, prior, (0, 1))
        res = run_batch(self.NULL, config, 100_000, 2024, stop=False, record_rounds=(10, 40))
        for n in (10, 40):
            e = np.exp(res.recorded_log_e_run[n])
            se = e.std(ddof=1) / math.sqrt(len(e))
            assert abs(e.mean() - 1.0) <= 3 * se, (n, e.mean(), se)

    def test_time_uniform_validity(self):
        config = CertificateConfig(0.05, 1000, 2, TruncatedBeta(0.5, 0.5), (0, 1))
        res = run_batch(self.NULL, config, 20_000, 77, stop=False)
        for eps in (0.05, 0.1, 0.4):
            frac = float(np.mean(res.max_log_e_run >= -math.log(eps) - 1e-12))
            se = math.sqrt(eps * (1 - eps) / res.trials)
            assert frac <= eps + 3 * se, (eps, frac)

    def test_uniform_source_abstains(self):
        config = CertificateConfig(0.1, 64, 2, TruncatedBeta(1.0, 1.0), (0, 1))
        res = run_batch(self.NULL, config, 10_000, 9)
        assert np.mean(~res.stopped) >= 0.90


@pytest.mark.parametrize("delta", [0.1, 0.2, 0.4])
def test_stopping_correctness_k26(delta):
    eps = 0.1
    config = CertificateConfig(eps, 400, 2, TruncatedBeta(0.5, 0.5), tuple(range(26)))
    res = run_batch(sweep_distribution(26, delta), config, 4000, 31)
    stopped = res.stopped
    assert stopped.sum() > 100
    acc = float(np.mean(res.winner[stopped] == 0))
    se = math.sqrt(max(acc * (1 - acc), 1e-12) / stopped.sum())
    assert acc >= 1 - eps - 3 * se
