"""Seeded Monte Carlo studies: error curves against bounds, stopping-time sweeps.

Output tables are written with fixed headers and ``repr`` float formatting,
so a repeated run with the same seed produces byte-identical CSV files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bounds
from .batch import run_batch, trial_seed
from .core import CertificateConfig, as_distribution, mode_profile
from .exact import exact_error_dp
from .mmc import PriorSpec, TruncatedBeta, prior_from_dict, prior_to_dict

MC_CHUNK = 1 << 16
DP_LIMIT = 200
SEED_MIX = "seed_i = splitmix64(master_seed XOR splitmix64(i)); votes from PCG64(seed_i) by inverse CDF"
SEED_MIX_BOUNDS = "seed_n = splitmix64(master_seed XOR splitmix64(n)); counts from PCG64(seed_n).multinomial"

BOUND_HEADER = (
    "n", "mc", "mc_stderr", "exact_dp", "hoeffding", "bernstein",
    "chernoff", "clt", "clt_refined", "bahadur_rao",
)
SWEEP_HEADER = (
    "delta", "p_leader", "p_runner", "trials", "stopped", "abstain_rate",
    "median", "q1", "q3", "mean_stop", "winner_error_rate", "winner_error_stderr",
)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    trials: int


def mc_error_prob(p, n: int, trials: int, seed: int) -> MCEstimate:
    """Fraction of sampled elections whose plurality is not the mode (ties count as errors)."""
    p = as_distribution(p)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    c = mode_profile(p).c_star
    probs = p.as_array()
    rng = np.random.Generator(np.random.PCG64(seed))
    errors = 0
    done = 0
    while done < trials:
        size = min(MC_CHUNK, trials - done)
        counts = rng.multinomial(n, probs, size=size)
        lead = counts[:, c].copy()
        counts[:, c] = -1
        errors += int(np.count_nonzero(lead <= counts.max(axis=1)))
        done += size
    est = errors / trials
    return MCEstimate(est, math.sqrt(est * (1.0 - est) / trials), trials)


def bound_comparison(p, n_grid, trials: int, seed: int) -> list[dict]:
    """One row per ``n``: Monte Carlo error, exact value and every bound.

    Each ``n`` uses its own stream seeded from ``(seed, n)``. ``exact_dp`` is
    ``None`` above the DP size limit, and bound columns are ``None`` when the
    mode is not unique.
    """
    p = as_distribution(p)
    unique = mode_profile(p).delta > 0
    rows = []
    for n in n_grid:
        n = int(n)
        mc = mc_error_prob(p, n, trials, _stream_seed(seed, n))
        row = {"n": n, "mc": mc.estimate, "mc_stderr": mc.stderr}
        row["exact_dp"] = exact_error_dp(p, n) if n <= DP_LIMIT else None
        if unique:
            rep = bounds.bound_report(p, n)
            row.update(
                hoeffding=rep.hoeffding,
                bernstein=rep.bernstein,
                chernoff=rep.chernoff_markov,
                clt=rep.clt,
                clt_refined=rep.clt_refined,
                bahadur_rao=rep.bahadur_rao,
            )
        else:
            row.update({k: None for k in BOUND_HEADER[4:]})
        rows.append(row)
    return rows


def _stream_seed(seed: int, index: int) -> int:
    return trial_seed(seed, index)


# -- stopping-time sweeps -----------------------------------------------------


def sweep_distribution(k: int, delta: float, tail_fraction: float = 0.2) -> np.ndarray:
    """Leader ``r + delta``, runner-up ``r``, uniform tail over the other labels.

    The tail holds ``tail_fraction * (1 - delta)`` of the mass, so
    ``r = (1 - delta)(1 - tail_fraction)/2``. With ``k = 2`` there is no tail.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if k == 2:
        tail_fraction = 0.0
    if not 0.0 <= tail_fraction < 1.0:
        raise ValueError("tail_fraction must lie in [0, 1)")
    runner = (1.0 - delta) * (1.0 - tail_fraction) / 2.0
    p = np.empty(k)
    p[0] = runner + delta
    p[1] = runner
    if k > 2:
        each = (1.0 - delta) * tail_fraction / (k - 2)
        if each > runner:
            raise ValueError("tail labels would outweigh the runner-up; lower tail_fraction")
        p[2:] = each
    return p / p.sum()


@dataclass(frozen=True)
class SweepConfig:
    k: int = 26
    deltas: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    tail_fraction: float = 0.2
    epsilon: float = 0.1
    budget: int = 64
    m: int = 2
    prior: PriorSpec = field(default_factory=TruncatedBeta)
    trials: int = 2000
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(not 0.0 <= d < 1.0 for d in self.deltas):
            raise ValueError("deltas must lie in [0, 1)")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def certificate_config(self) -> CertificateConfig:
        return CertificateConfig(self.epsilon, self.budget, self.m, self.prior, tuple(range(self.k)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deltas"] = list(self.deltas)
        d["prior"] = prior_to_dict(self.prior)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SweepConfig:
        d = dict(d)
        if isinstance(d.get("prior"), dict):
            d["prior"] = prior_from_dict(d["prior"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**d)


def _quantiles(x: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return float(med), float(q1), float(q3)


def mmc_sweep(cfg: SweepConfig) -> list[dict]:
    """Stopping statistics per ``delta``.

    Abstaining trials count as using the whole budget in the quantiles and
    the mean. The winner error rate is over stopped trials only (``None`` if
    none stopped). The label-0 leader is the true mode in every trial.
    Trial ``i`` at grid point ``g`` uses trial index ``g * trials + i``.
    """
    cc = cfg.certificate_config()
    rows = []
    for g, delta in enumerate(cfg.deltas):
        p = sweep_distribution(cfg.k, delta, cfg.tail_fraction)
        res = run_batch(p, cc, cfg.trials, cfg.master_seed, first_trial=g * cfg.trials)
        med, q1, q3 = _quantiles(res.rounds)
        n_stop = int(res.stopped.sum())
        if n_stop:
            err = float(np.mean(res.winner[res.stopped] != 0))
            err_se = math.sqrt(err * (1.0 - err) / n_stop)
        else:
            err = err_se = None
        rows.append({
            "delta": delta,
            "p_leader": float(p[0]),
            "p_runner": float(p[1]),
            "trials": cfg.trials,
            "stopped": n_stop,
            "abstain_rate": 1.0 - n_stop / cfg.trials,
            "median": med,
            "q1": q1,
            "q3": q3,
            "mean_stop": float(np.mean(res.rounds)),
            "winner_error_rate": err,
            "winner_error_stderr": err_se,
        })
    return rows


# -- output -------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(h)) for h in header])
    return buf.getvalue()


@dataclass(frozen=True)
class BoundsStudyConfig:
    p: tuple[float, ...] = (0.38, 0.35, 0.27)
    n_grid: tuple[int, ...] = (10, 20, 50, 100, 200)
    trials: int = 100_000
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "n_grid", tuple(int(x) for x in self.n_grid))
        as_distribution(self.p)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def to_dict(self) -> dict:
        return {"p": list(self.p), "n_grid": list(self.n_grid), "trials": self.trials, "master_seed": self.master_seed}

    @classmethod
    def from_dict(cls, d: dict) -> BoundsStudyConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bounds config keys: {sorted(unknown)}")
        return cls(**d)


def write_study(kind: str, config, out_dir: str | Path) -> tuple[Path, Path]:
    """Run a study and write ``<kind>.csv`` plus ``<kind>.meta.json`` to ``out_dir``."""
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "bounds":
        rows = bound_comparison(config.p, config.n_grid, config.trials, config.master_seed)
        header = BOUND_HEADER
        extra = {"dp_limit": DP_LIMIT, "ties": "count as errors", "seeding": SEED_MIX_BOUNDS}
    elif kind == "mmc":
        rows = mmc_sweep(config)
        header = SWEEP_HEADER
        extra = {
            "family": "leader = r + delta, runner-up = r, remaining tail_fraction*(1-delta) "
                      "spread uniformly over the other k-2 labels, r = (1-delta)(1-tail_fraction)/2",
            "abstained_trials": "counted at the full budget in quantiles and mean",
            "seeding": SEED_MIX,
        }
    else:
        raise ValueError(f"unknown study kind {kind!r}")
    csv_path = out / f"{kind}.csv"
    meta_path = out / f"{kind}.meta.json"
    csv_path.write_text(rows_to_csv(rows, header), encoding="utf-8")
    meta = {
        "study": kind,
        "version": __version__,
        "config": config.to_dict(),
        "columns": list(header),
        **extra,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, meta_path
