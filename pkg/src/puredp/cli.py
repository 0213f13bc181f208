"""Command-line runner: parameter derivation, seeded experiments, verification and figure data.

Exit status is 0 on success, 1 on invalid input and 2 when a verification
check fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import dist, relagg, summation, utest, verify
from .dist import Pmf
from .errors import ParameterError, ResourceError, StructuralError
from .model import Attack, ideal_aggregator

SEED_ENV = "PUREDP_SEED"
EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

SUM_COLUMNS = ["trial", "true_sum", "estimate", "abs_error"]
UT_COLUMNS = ["trial", "n", "Z_prime", "ell", "verdict"]
FIGURE_COLUMNS = ["point", "mass_black", "mass_red"]


class UsageError(Exception):
    """Bad flags or config; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---- output ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % float(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _write_text(text: str, path: Optional[str]) -> None:
    """Write atomically so a failed run leaves no partial file."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_results(records: Sequence[dict], path: Optional[str], fmt: str = "csv",
                 columns: Optional[Sequence[str]] = None) -> None:
    """CSV (header plus one row per record, 9 significant digits) or a JSON array."""
    if fmt == "json":
        _write_text(json.dumps(_jsonable(list(records)), indent=2) + "\n", path)
        return
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty record list")
        columns = list(records[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        if set(rec) != set(columns):
            raise ValueError(f"record keys {sorted(rec)} do not match columns {list(columns)}")
        w.writerow([_fmt(rec[c]) for c in columns])
    _write_text(buf.getvalue(), path)


def _summary(args, line: str) -> None:
    stream = sys.stderr if getattr(args, "out", None) in (None, "-") else sys.stdout
    print(line, file=stream)


# ---- validation helpers ------------------------------------------------------

def _need(args, name: str, ok: Callable[[Any], bool], what: str) -> None:
    v = getattr(args, name, None)
    flag = "--" + name.replace("_", "-")
    if v is None:
        raise UsageError(f"{flag} is required")
    if not ok(v):
        raise UsageError(f"{flag}={v!r}: must be {what}")


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _check_seed(args) -> None:
    _need(args, "seed", lambda v: _is_int(v) and v >= 0, "a non-negative integer")


def _check_trials(args) -> None:
    _need(args, "trials", lambda v: _is_int(v) and v >= 1, "a positive integer")
    _need(args, "workers", lambda v: _is_int(v) and v >= 1, "a positive integer")


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(trials / max(1, workers)))
    return [(s, min(trials, s + size)) for s in range(0, trials, size)]


# ---- params ----------------------------------------------------------------

def _check_sum_flags(args) -> None:
    _need(args, "eps", lambda v: 0 < v <= 1, "in (0, 1]")
    _need(args, "q", lambda v: 0 < v < 1, "in (0, 1)")
    _need(args, "n", lambda v: _is_int(v) and v >= 2 and v % 2 == 0, "an even integer >= 2")


def _check_relagg_flags(args, n_name="n") -> None:
    _need(args, "m", lambda v: _is_int(v) and v >= 2, "an integer >= 2")
    _need(args, n_name, lambda v: _is_int(v) and v >= 1, "a positive integer")
    _need(args, "eps_hat", lambda v: 0 < v < 1, "in (0, 1)")
    _need(args, "q_hat", lambda v: 0 < v < 1, "in (0, 1)")


def _check_ut_flags(args) -> None:
    _need(args, "d", lambda v: _is_int(v) and v >= 2, "an integer >= 2")
    _need(args, "alpha", lambda v: 0 < v < 1, "in (0, 1)")
    _need(args, "eps", lambda v: 0 < v <= 1, "in (0, 1]")
    _need(args, "kappa", lambda v: v > 0, "positive")
    if args.cap_N is not None and not args.cap_N > 0:
        raise UsageError(f"--cap-N={args.cap_N!r}: must be positive")
    if args.N is not None and not args.N > 0:
        raise UsageError(f"--N={args.N!r}: must be positive")


def _ut_params(args):
    if args.mode == "final":
        fp = utest.select_params_final(args.d, args.alpha, args.eps, args.kappa, args.N, args.cap_N)
        return fp.inner, fp.d
    return utest.select_params_ut(args.d, args.alpha, args.eps, args.kappa, args.N, args.cap_N), None


def cmd_params(args) -> int:
    if args.protocol == "sum":
        _check_sum_flags(args)
        out = asdict(summation.select_params_sum(args.eps, args.q, args.n))
    elif args.protocol == "relagg":
        _check_relagg_flags(args)
        pr = relagg.select_params(args.m, args.n, args.eps_hat, args.q_hat)
        out = {**asdict(pr), "msg_len": pr.msg_len}
    else:
        _check_ut_flags(args)
        inner, final_d = _ut_params(args)
        out = asdict(inner)
        if final_d is not None:
            out = {"d_original": final_d, "dhat": inner.d, **out}
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in out.items())
    if args.out:
        _write_text(json.dumps(_jsonable(out), indent=2) + "\n", args.out)
    sys.stdout.write(text)
    return EXIT_OK


# ---- sum-experiment ----------------------------------------------------------

def _sum_intermediary(params: summation.SumParams, aggregator: str, eps_hat: float, q_hat: float):
    if aggregator == "ideal":
        return ideal_aggregator
    rp = relagg.select_params(params.m, params.n, eps_hat, q_hat)
    return relagg.RelaxedAggregator(rp)


def _sum_attack(params: summation.SumParams, aggregator: str, corrupt: Optional[int]) -> Attack:
    if aggregator != "relagg-with-attack":
        return Attack.none()
    k = params.n // 2 if corrupt is None else corrupt
    return Attack.dropout(range(k))


def _sum_chunk(params, aggregator, eps_hat, q_hat, corrupt, seed, start, stop, dump):
    inter = _sum_intermediary(params, aggregator, eps_hat, q_hat)
    attack = _sum_attack(params, aggregator, corrupt)
    rows, transcripts = [], []
    for rec, tr in summation.experiment(params, stop - start, seed, inter, attack, stream_base=start):
        rows.append(rec)
        if dump:
            transcripts.append(json.dumps(_jsonable(tr.to_json()), sort_keys=True))
    return rows, transcripts


def cmd_sum_experiment(args) -> int:
    _check_sum_flags(args)
    _check_trials(args)
    _check_seed(args)
    if args.aggregator != "ideal":
        _need(args, "eps_hat", lambda v: 0 < v < 1, "in (0, 1)")
        _need(args, "q_hat", lambda v: 0 < v < 1, "in (0, 1)")
    if args.corrupt is not None and not (_is_int(args.corrupt) and 0 <= args.corrupt <= args.n // 2):
        raise UsageError(f"--corrupt={args.corrupt!r}: must be an integer in [0, n/2]")
    params = summation.select_params_sum(args.eps, args.q, args.n)
    jobs = [(params, args.aggregator, args.eps_hat, args.q_hat, args.corrupt, args.seed, a, b,
             bool(args.dump_transcripts)) for a, b in _chunks(args.trials, args.workers)]
    results = _pool_map(_sum_chunk, jobs, args.workers)
    records = [r for rows, _ in results for r in rows]
    emit_results(records, args.out, "csv", SUM_COLUMNS)
    if args.dump_transcripts:
        _write_text("".join(t + "\n" for _, ts in results for t in ts), args.dump_transcripts)
    bound = params.error_bound
    within = sum(r["abs_error"] <= bound for r in records)
    mean_err = float(np.mean([r["abs_error"] for r in records]))
    _summary(args, f"sum-experiment: {len(records)} trials, mean |error| {mean_err:.6g}, "
                   f"{within}/{len(records)} within {bound:.6g}")
    return EXIT_OK


# ---- ut-experiment -----------------------------------------------------------

def _parse_dist(text: str, d: int) -> Pmf:
    if text == "uniform":
        return utest.uniform_pmf(d)
    if text.startswith("half-bump:"):
        try:
            a = float(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"--dist={text!r}: half-bump needs a numeric alpha")
        try:
            return utest.half_bump(d, a)
        except ParameterError as e:
            raise UsageError(f"--dist={text!r}: {e}")
    if text.startswith("file:"):
        path = text.split(":", 1)[1]
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"--dist={text!r}: {e}")
        try:
            if raw and isinstance(raw[0], dict):
                pmf = Pmf.from_dict({int(e["point"]): float(e["probability"]) for e in raw})
            else:
                pmf = Pmf(1, [float(v) for v in raw])
        except (TypeError, KeyError, ValueError, IndexError) as e:
            raise UsageError(f"--dist={text!r}: not a pmf over [1, d]: {e}")
        if pmf.lo < 1 or pmf.hi > d:
            raise UsageError(f"--dist={text!r}: support must lie in [1, {d}]")
        return pmf
    raise UsageError(f"--dist={text!r}: expected uniform, half-bump:<alpha> or file:<path>")


def _ut_intermediary(params: utest.UTestParams, aggregator: str, eps_hat: float, q_hat: float):
    if aggregator == "ideal":
        return ideal_aggregator
    return relagg.RelaxedAggregator(relagg.select_params(params.m, params.n_surrogate, eps_hat, q_hat))


def _ut_chunk(params, pmf, aggregator, eps_hat, q_hat, final_d, seed, start, stop):
    inter = _ut_intermediary(params, aggregator, eps_hat, q_hat)
    return list(utest.experiment(params, pmf, stop - start, seed, inter,
                                 final_d=final_d, stream_base=start))


def cmd_ut_experiment(args) -> int:
    _check_ut_flags(args)
    _check_trials(args)
    _check_seed(args)
    pmf = _parse_dist(args.dist, args.d)
    params, final_d = _ut_params(args)
    jobs = [(params, pmf, args.aggregator, args.eps_hat, args.q_hat, final_d, args.seed, a, b)
            for a, b in _chunks(args.trials, args.workers)]
    records = [r for chunk in _pool_map(_ut_chunk, jobs, args.workers) for r in chunk]
    emit_results(records, args.out, "csv", UT_COLUMNS)
    rejected = sum(r["verdict"] == utest.NOT_UNIFORM for r in records)
    _summary(args, f"ut-experiment ({args.mode}, d={params.d}, N={params.N:.6g}): "
                   f"{rejected}/{len(records)} not-uniform, ell={params.ell:.6g}")
    return EXIT_OK


# ---- verification ------------------------------------------------------------

def relagg_suite(trials: int, seed: int, eps_hat: float = 0.4, q_hat: float = 0.1) -> list[dict]:
    """Security, hybrid, corruption and correctness checks for the relaxed aggregator."""
    out = []
    for m in (2, 3):
        pr = relagg.select_params(m, 2, eps_hat, q_hat)
        worst, a, b = relagg.worst_pair_llr(pr)
        bound = eps_hat / 2
        out.append({"check": "pair-security", "m": m, "n": 2, "t": pr.t, "worst_llr": worst,
                    "pair": [list(a), list(b)], "bound": bound, "passed": worst <= bound + 1e-9})
        naive = relagg.exact_llr_pair([0, 0], [1, m - 1], pr, p=0.0)
        out.append({"check": "naive-unbounded", "m": m, "llr": naive, "passed": math.isinf(naive)})
    pr3 = relagg.select_params(2, 3, eps_hat, q_hat)
    worst = max(relagg.hybrid_llr(x, pr3) for x in np.ndindex(2, 2, 2))
    out.append({"check": "hybrid", "m": 2, "n": 3, "t": pr3.t, "worst_llr": worst,
                "bound": eps_hat, "passed": worst <= eps_hat + 1e-9})
    pr = relagg.select_params(2, 2, eps_hat, q_hat)
    base = relagg.exact_llr_pair([0, 0], [1, 1], pr)
    shifted = relagg.corrupt_shift_llr([0, 0], [1, 1], 17, pr)
    out.append({"check": "corrupt-shift", "llr": base, "shifted_llr": shifted,
                "passed": abs(base - shifted) <= 1e-12})
    pc = relagg.select_params(3, 4, eps_hat, q_hat)
    rate = relagg.miscount_rate(pc, trials, seed)
    bound = q_hat + 3 * math.sqrt(q_hat / trials)
    out.append({"check": "correctness", "m": 3, "n": 4, "trials": trials, "miscount_rate": rate,
                "bound": bound, "passed": rate <= bound})
    return out


def cmd_relagg_verify(args) -> int:
    _check_seed(args)
    _need(args, "trials", lambda v: _is_int(v) and v >= 1, "a positive integer")
    report = relagg_suite(args.trials, args.seed)
    _write_text(json.dumps(_jsonable(report), indent=2) + "\n", args.out)
    failed = [r["check"] for r in report if not r["passed"]]
    _summary(args, f"relagg-verify: {len(report) - len(failed)}/{len(report)} passed"
                   + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAILED if failed else EXIT_OK


def cmd_verify(args) -> int:
    reports = verify.run_all()
    _write_text(json.dumps(_jsonable([r.to_json() for r in reports]), indent=2) + "\n", args.out)
    failed = [r.to_json()["claim"] for r in reports if not r.passed]
    _summary(args, f"verify: {len(reports) - len(failed)}/{len(reports)} passed"
                   + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAILED if failed else EXIT_OK


# ---- figure1 -----------------------------------------------------------------

def figure1_records(m: int, n: int, eps_hat: float, q_hat: float) -> list[dict]:
    """Masses of ``D_0 * D_0`` (black) and ``D_1 * D_{m-1}`` (red) on their joint support."""
    pr = relagg.select_params(m, n, eps_hat, q_hat)
    black = dist.convolve(dist.pmf_Dx(0, m, pr.t, pr.lam), dist.pmf_Dx(0, m, pr.t, pr.lam))
    red = dist.convolve(dist.pmf_Dx(1, m, pr.t, pr.lam), dist.pmf_Dx(m - 1, m, pr.t, pr.lam))
    lo, hi = min(black.lo, red.lo), max(black.hi, red.hi)
    a, b = black.on(lo, hi), red.on(lo, hi)
    return [{"point": lo + i, "mass_black": float(a[i]), "mass_red": float(b[i])}
            for i in range(a.size) if a[i] > 0 or b[i] > 0]


def cmd_figure1(args) -> int:
    _check_relagg_flags(args)
    records = figure1_records(args.m, args.n, args.eps_hat, args.q_hat)
    emit_results(records, args.out, args.format, FIGURE_COLUMNS)
    _summary(args, f"figure1: {len(records)} support points for m={args.m}")
    return EXIT_OK


# ---- parser ------------------------------------------------------------------

def _default_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r}: must be an integer")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="puredp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of flag values; explicit flags win")
        sp.set_defaults(func=func)
        return sp

    def seed(sp):
        sp.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV} or 0")

    sp = add("params", cmd_params, "print derived protocol parameters")
    sp.add_argument("--protocol", choices=["sum", "relagg", "utest"], default="sum")
    for flag, typ in [("--eps", float), ("--q", float), ("--n", int), ("--m", int),
                      ("--eps-hat", float), ("--q-hat", float), ("--d", int), ("--alpha", float),
                      ("--kappa", float), ("--cap-N", float), ("--N", float)]:
        sp.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    sp.add_argument("--mode", choices=["prelim", "final"], default="prelim")
    sp.add_argument("--out", help="also write the values as JSON here")
    sp.set_defaults(kappa=1.0)

    sp = add("sum-experiment", cmd_sum_experiment, "accuracy trials of the bounded-sum protocol")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--q", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--trials", type=int, default=100)
    seed(sp)
    sp.add_argument("--aggregator", choices=["ideal", "relagg", "relagg-with-attack"], default="ideal")
    sp.add_argument("--eps-hat", type=float, default=0.4)
    sp.add_argument("--q-hat", type=float, default=0.1)
    sp.add_argument("--corrupt", type=int,
                    help="users 0..k-1 drop out under relagg-with-attack (default n/2)")
    sp.add_argument("--dump-transcripts", metavar="PATH", help="JSON lines, one transcript per trial")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default="-")

    sp = add("ut-experiment", cmd_ut_experiment, "verdict trials of the uniformity tester")
    sp.add_argument("--d", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--dist", default="uniform")
    sp.add_argument("--mode", choices=["prelim", "final"], default="prelim")
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--cap-N", type=float, dest="cap_N")
    sp.add_argument("--N", type=float, dest="N", help="expected sample size (default N*, capped)")
    sp.add_argument("--aggregator", choices=["ideal", "relagg"], default="ideal")
    sp.add_argument("--eps-hat", type=float, default=0.4)
    sp.add_argument("--q-hat", type=float, default=0.1)
    seed(sp)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default="-")

    sp = add("relagg-verify", cmd_relagg_verify, "exact security and sampled correctness checks")
    sp.add_argument("--trials", type=int, default=10000)
    seed(sp)
    sp.add_argument("--out", default="-")

    sp = add("verify", cmd_verify, "exact inequality checks on the default grid")
    sp.add_argument("--out", default="-")

    sp = add("figure1", cmd_figure1, "the two convolution pmfs as plot-ready data")
    sp.add_argument("--m", type=int, default=4)
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--eps-hat", type=float, default=0.4)
    sp.add_argument("--q-hat", type=float, default=0.1)
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    sp.add_argument("--out", default="-")
    return p


def _explicit_dests(sp: argparse.ArgumentParser, argv: Sequence[str]) -> set[str]:
    flags = {}
    for action in sp._actions:
        for opt in action.option_strings:
            flags[opt] = action.dest
    seen = set()
    for tok in argv:
        key = tok.split("=", 1)[0]
        if key in flags:
            seen.add(flags[key])
    return seen


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(
            ["params", "sum-experiment", "ut-experiment", "relagg-verify", "verify", "figure1"]))
    sp = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"--config={args.config!r}: {e}")
        if not isinstance(cfg, dict):
            raise UsageError(f"--config={args.config!r}: must hold a JSON object")
        explicit = _explicit_dests(sp, argv)
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if not hasattr(args, dest) or dest in ("func", "config", "command"):
                raise UsageError(f"--config: unknown key {key!r} for {args.command}")
            if dest not in explicit:
                setattr(args, dest, value)
    if hasattr(args, "seed") and args.seed is None:
        args.seed = _default_seed()
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ParameterError, StructuralError, ResourceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
