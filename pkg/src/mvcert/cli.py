"""``mvcert`` command line.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure. Payloads go
to stdout, one-line diagnostics to stderr. Floats print with 12 significant
digits in text and CSV output; JSON carries full precision and a ``schema``
id naming a file under ``mvcert/schemas``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import bounds, exact, mmc, sim, tilt
from .core import CertificateConfig, as_distribution, mode_profile
from .ingest import HttpSampler, open_source

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def _schema(name: str) -> str:
    return f"mvcert.{name}/{SCHEMA_VERSION}"


def _clean(obj):
    # JSON has no infinities; non-finite floats become null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit_json(name: str, payload: dict) -> None:
    print(json.dumps(_clean({"schema": _schema(name), **payload}), sort_keys=True, allow_nan=False))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r[h]) for h in header])
    return buf.getvalue()


def _probs(text: str):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"--probs must be comma-separated numbers, got {text!r}") from None
    return as_distribution(vals)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# -- subcommands ---------------------------------------------------------------


def cmd_exact(a) -> int:
    p = _probs(a.probs)
    fn = exact.exact_error_dp if a.method == "dp" else exact.exact_error_enumeration
    value = fn(p, a.n)
    if a.format == "json":
        _emit_json("exact", {"probs": list(p.probs), "n": a.n, "method": a.method, "error_probability": value})
    else:
        print(fmt(value))
    return 0


def cmd_bounds(a) -> int:
    rep = bounds.bound_report(_probs(a.probs), a.n).as_dict()
    if a.format == "json":
        _emit_json("bounds", rep)
    else:
        sys.stdout.write(_csv([rep], list(rep)))
    return 0


def cmd_samplesize(a) -> int:
    n = bounds.hoeffding_sample_size(a.delta, a.k, a.epsilon)
    if a.format == "json":
        _emit_json("samplesize", {"delta": a.delta, "k": a.k, "epsilon": a.epsilon, "n": n})
    else:
        print(n)
    return 0


def cmd_certify(a) -> int:
    prior = mmc.PRIOR_PRESETS[a.prior]()
    labels = [x.strip() for x in a.labels.split(",")] if a.labels else None
    config = CertificateConfig(a.epsilon, a.budget, a.m, prior, labels)
    source = open_source(a.source, max_samples=a.budget)
    try:
        out = mmc.run_certificate(source, config)
    finally:
        if isinstance(source, HttpSampler):
            source.close()
    _emit_json("certify", {
        "epsilon": a.epsilon,
        "budget": a.budget,
        "m": a.m,
        "prior": mmc.prior_to_dict(prior),
        **out.as_dict(),
    })
    if out.error:
        print(f"error: vote source failed: {out.error}", file=sys.stderr)
        return 2
    return 0


def cmd_simulate(a) -> int:
    try:
        raw = json.loads(Path(a.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {a.config}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    raw["master_seed"] = a.seed
    cls = sim.SweepConfig if a.study == "mmc" else sim.BoundsStudyConfig
    try:
        config = cls.from_dict(raw)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"malformed config: {exc}") from None
    csv_path, meta_path = sim.write_study(a.study, config, a.out)
    print(csv_path)
    print(meta_path)
    return 0


def cmd_tilt(a) -> int:
    p = _probs(a.probs)
    grid = _floats(a.kappa_grid) if a.kappa_grid else []
    if a.mode == "ttrl":
        c_hat = mode_profile(p).c_star if a.c_hat is None else a.c_hat
        params = tilt.TiltParams.for_tilt(a.beta)
        q = tilt.ttrl_tilt(p, c_hat, a.beta)
        curve = tilt.snr_curve_tilt(p, c_hat, grid)
    else:
        params = tilt.TiltParams.for_temper(a.beta)
        q = tilt.temper(p, params.kappa)
        curve = [mode_profile(tilt.temper(p, k)).snr for k in grid]
    snr_q = mode_profile(q).snr
    if a.format == "json":
        _emit_json("tilt", {
            "mode": a.mode,
            "beta": params.beta,
            "kappa": params.kappa,
            "p": list(p.probs),
            "q": list(q.probs),
            "snr_p": mode_profile(p).snr,
            "snr_q": snr_q,
            "curve": [{"kappa": k, "snr": s} for k, s in zip(grid, curve)],
        })
        return 0
    rows = [{"label": j, "p": p[j], "q": q[j]} for j in range(p.k)]
    sys.stdout.write(_csv(rows, ("label", "p", "q")))
    if grid:
        sys.stdout.write("\n")
        sys.stdout.write(_csv([{"kappa": k, "snr": s} for k, s in zip(grid, curve)], ("kappa", "snr")))
    return 0


def cmd_reward(a) -> int:
    answers = [x.strip() for x in a.answers.split(",")]
    sample = tilt.RewardSample(answers)
    labels = sorted(set(answers)) if not a.labels else [x.strip() for x in a.labels.split(",")]
    overflow = False
    if a.kind == "snr":
        r = tilt.snr_reward(sample, cap=a.cap)
        value, overflow = r.value, r.overflow
    elif a.alpha is not None:
        value = tilt.entropy_reward_dirichlet(sample, a.alpha, labels)
    else:
        value = tilt.entropy_reward(sample)
    adv = tilt.loo_advantages(sample, a.kind, cap=a.cap, alpha=a.alpha, labels=labels)
    if a.grpo:
        adv = tilt.grpo_center(adv)
    if a.format == "json":
        _emit_json("reward", {
            "kind": a.kind,
            "answers": answers,
            "reward": value,
            "overflow": overflow,
            "grpo": a.grpo,
            "advantages": adv,
        })
        return 0
    print(fmt(value))
    print(",".join(fmt(x) for x in adv))
    if overflow:
        print(f"note: reward capped at {fmt(a.cap)} (unanimous sample)", file=sys.stderr)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mvcert", description="Majority-vote error certificates.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("exact", help="exact majority-vote error probability")
    s.add_argument("--probs", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--method", choices=("dp", "enum"), default="dp")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("bounds", help="all bounds and approximations at one n")
    s.add_argument("--probs", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("samplesize", help="Hoeffding sample size for a target error")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(func=cmd_samplesize)

    s = sub.add_parser("certify", help="run the sequential certificate on a vote source")
    s.add_argument("--source", required=True, help="memory:a,b,a | jsonl:<path> | http:<config.json>")
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--budget", type=int, default=64)
    s.add_argument("--prior", choices=sorted(mmc.PRIOR_PRESETS), default="jeffreys")
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--labels", help="declared label universe, comma-separated")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="seeded Monte Carlo studies")
    s.add_argument("study", choices=("bounds", "mmc"))
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=_seed, required=True, help="64-bit master seed (overrides the config)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("tilt", help="exponential tilt or tempering of a distribution")
    s.add_argument("--probs", required=True)
    s.add_argument("--mode", choices=("ttrl", "temper"), required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--c-hat", type=int, default=None)
    s.add_argument("--kappa-grid", default=None)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_tilt)

    s = sub.add_parser("reward", help="label-free group reward and leave-one-out advantages")
    s.add_argument("--answers", required=True)
    s.add_argument("--kind", choices=("snr", "entropy"), required=True)
    s.add_argument("--grpo", action="store_true")
    s.add_argument("--cap", type=float, default=tilt.SNR_CAP)
    s.add_argument("--alpha", type=float, default=None, help="Dirichlet smoothing for the entropy reward")
    s.add_argument("--labels", default=None, help="label universe for the smoothed entropy reward")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(func=cmd_reward)
    return ap


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return v


def _version() -> str:
    from . import __version__

    return __version__


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
