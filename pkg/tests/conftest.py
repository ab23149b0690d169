import numpy as np
import pytest
from hypothesis import strategies as st


def random_distribution(rng, k, floor=0.0):
    p = rng.dirichlet(np.ones(k))
    if floor:
        p = floor + (1.0 - k * floor) * p
    return p / p.sum()


@st.composite
def distributions(draw, min_k=2, max_k=4, unique_mode=False, floor=0.0):
    k = draw(st.integers(min_k, max_k))
    w = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    p = np.asarray(w) / sum(w)
    if floor:
        p = floor + (1.0 - k * floor) * p
    if unique_mode:
        top = np.sort(p)[::-1]
        if top[0] - top[1] < 1e-3:
            p = p.copy()
            p[int(np.argmax(p))] += 0.01
    return tuple(float(x) for x in p / p.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def binary_snr_local_maxima(p_lead, beta, points=2_000_001):
    """Interior local maxima of SNR(q) - beta KL(q || p) for k = 2, by grid scan.

    ``x`` is the leader mass; with ``d = 2x - 1`` the SNR is ``d^2 / (1 - d^2)``.
    """
    x = np.linspace(p_lead, 1.0 - 1e-9, points)
    d = 2.0 * x - 1.0
    kl = x * np.log(x / p_lead) + (1.0 - x) * np.log((1.0 - x) / (1.0 - p_lead))
    f = d * d / (1.0 - d * d) - beta * kl
    df = np.diff(f)
    idx = np.where((df[:-1] > 0) & (df[1:] <= 0))[0]
    return [float(x[i + 1]) for i in idx]


# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {num:>2}. {title}: {detail}")
