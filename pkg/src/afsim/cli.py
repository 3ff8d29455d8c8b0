"""Command-line front end: ``afsim run|sweep|analytic|validate``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import analytic
from .config import ConfigError, load_scenario, set_path, validate
from .core import classify_provisioning
from .report import fmt, write_run
from .sim import run_scenario

OUT_ENV = "AFSIM_OUT_DIR"
DEFAULT_OUT = "afsim-out"

log = logging.getLogger("afsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# ---------------------------------------------------------------- validate / run


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario)
    print(f"ok: {args.scenario}")
    print(f"flows: {len(cfg.flows)}  duration: {cfg.duration:g} s  seed: {cfg.seed}")
    regime = classify_provisioning([f.target_rate for f in cfg.flows], cfg.as_capacity)
    print(f"regime: {regime.value}")
    print(f"defaulted fields ({len(cfg.defaulted)}):")
    for key in cfg.defaulted:
        print(f"  {key}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    out = _out_dir(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc.strerror}") from None
    result = run_scenario(cfg, seed)
    for path in write_run(out, result, cfg, seed):
        print(path)
    print(f"regime={result.regime} fairness={fmt(result.fairness)}")
    return 0


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ["seed", "flow_id", "target_bps", "achieved_bps", "attainment", "excess_bps",
                 "deficit_bps", "green_dropped", "red_dropped", "red_loss_rate", "rtt_mean_s",
                 "regime", "fairness_index"]


def parse_values(text: str) -> list[Any]:
    """``a,b,c`` (JSON scalars) or ``start:stop:count`` (inclusive linspace)."""
    if ":" in text and "," not in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad range {text!r}: expected start:stop:count")
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"bad range {text!r}") from None
        if n < 1:
            raise UsageError(f"bad range {text!r}: count must be >= 1")
        return [lo if n == 1 else lo + (hi - lo) * i / (n - 1) for i in range(n)]
    values = []
    for token in text.split(","):
        token = token.strip()
        try:
            values.append(json.loads(token))
        except json.JSONDecodeError:
            values.append(token)
    return values


def parse_vary(items: Sequence[str]) -> list[tuple[str, list[Any]]]:
    out = []
    for item in items:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--vary expects key=values, got {item!r}")
        out.append((key, parse_values(text)))
    return out


def _sweep_point(job: tuple[dict, int]) -> list[list[Any]]:
    doc, seed = job
    result = run_scenario(validate(doc), seed)
    return [[seed, f.flow_id, f.target, f.achieved, f.attainment, f.excess, f.deficit, f.green_dropped,
             f.red_dropped, f.red_loss_rate, f.rtt_mean, result.regime, result.fairness]
            for f in result.flows]


def sweep(doc: dict, vary: list[tuple[str, list[Any]]], seeds: list[int], jobs: int = 1) -> str:
    """Run the cross product of varied values x seeds; return the aggregated CSV."""
    keys = [k for k, _ in vary]
    points = []
    for combo in itertools.product(*(v for _, v in vary)):
        point = copy.deepcopy(doc)
        for key, value in zip(keys, combo):
            set_path(point, key, value)
        validate(point)  # fail before any run starts
        points.append((combo, point))
    jobs_list = [(point, seed) for _, point in points for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, jobs_list))
    else:
        results = [_sweep_point(j) for j in jobs_list]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys + SWEEP_COLUMNS)
    combos = [combo for combo, _ in points for _ in seeds]
    for combo, rows in zip(combos, results):
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in (*combo, *row)])
    return buf.getvalue()


def cmd_sweep(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    cfg = load_scenario(path)
    doc = json.loads(path.read_text())
    vary = parse_vary(args.vary)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    base = cfg.seed if args.seed is None else args.seed
    text = sweep(doc, vary, [base + i for i in range(args.seeds)], args.jobs)
    out = _out_dir(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        target = out / "sweep.csv"
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc.strerror}") from None
    print(target)
    return 0


# ---------------------------------------------------------------- analytic


def _bps(x: float) -> str:
    return f"{x:.6g} bit/s ({x / 1e6:.6g} Mb/s)"


def cmd_analytic(args: argparse.Namespace) -> int:
    m = args.model
    try:
        if m == "mathis":
            print(_bps(analytic.mathis_rate(args.mss, args.rtt, args.p)))
        elif m == "dovrolis":
            print(_bps(analytic.dovrolis_bound(args.k, args.rtt, args.p)))
        elif m == "padhye":
            params = analytic.PadhyeParams(args.p, args.wmax, args.rtt, args.rto, args.mss, args.b)
            branch = "W(p)" if analytic.padhye_W(args.p, args.b) < args.wmax else "W_max"
            print(f"{_bps(analytic.padhye_rate(params))} [branch {branch}]")
        elif m == "invert":
            inv = analytic.invert_padhye(args.target, args.wmax, args.rtt, args.rto, args.mss, args.b)
            print(f"p = {inv.p:.9g}" + (" (saturated at 1)" if inv.saturated else ""))
        elif m == "ineffective":
            verdict = analytic.marker_ineffective(args.target, args.rtt, args.p_out, args.mss)
            thr = analytic.ineffectiveness_threshold(args.rtt, args.p_out)
            seg = args.target / (8.0 * args.mss)
            print(f"{'true' if verdict else 'false'} (target {seg:.6g} segments/s, threshold {thr:.6g} segments/s)")
        elif m == "yeom":
            print(_bps(analytic.yeom_rate(analytic.YeomParams(args.m, args.k, args.rtt, args.p))))
        elif m == "epsilon":
            print(_bps(analytic.yeom_epsilon(args.k, args.rtt, args.p)))
        elif m == "drop-ratio":
            print(f"d1/d2 = {analytic.proportional_drop_ratio(args.r1, args.r2):.9g}")
        elif m == "provisioning":
            print(classify_provisioning(args.targets, args.capacity).value)
    except ValueError as exc:
        raise UsageError(f"analytic {m}: {exc}") from None
    return 0


def _analytic_parsers(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("analytic", help="evaluate a closed-form model")
    models = p.add_subparsers(dest="model", required=True, parser_class=_Parser)

    def add(name: str, help_: str, *flags: tuple[str, type, Any]) -> None:
        mp = models.add_parser(name, help=help_)
        for flag, typ, default in flags:
            kwargs: dict[str, Any] = {"type": typ}
            if default is None:
                kwargs["required"] = True
            else:
                kwargs["default"] = default
            if typ is list:
                kwargs = {"type": float, "nargs": "+", "required": True}
            mp.add_argument(flag, **kwargs)

    add("mathis", "sqrt(3/2)*MSS/(RTT*sqrt(p))", ("--mss", float, None), ("--rtt", float, None), ("--p", float, None))
    add("dovrolis", "proportional-differentiation bound", ("--k", float, None), ("--rtt", float, None), ("--p", float, None))
    add("padhye", "full Reno model with timeouts", ("--p", float, None), ("--wmax", float, None),
        ("--rtt", float, None), ("--rto", float, None), ("--mss", float, None), ("--b", int, 2))
    add("invert", "loss probability giving a target rate", ("--target", float, None), ("--wmax", float, None),
        ("--rtt", float, None), ("--rto", float, None), ("--mss", float, None), ("--b", int, 2))
    add("ineffective", "token bucket ineffectiveness test", ("--target", float, None), ("--rtt", float, None),
        ("--p-out", float, None), ("--mss", float, None))
    add("yeom", "adaptive-marker throughput model", ("--m", float, None), ("--k", float, None),
        ("--rtt", float, None), ("--p", float, None))
    add("epsilon", "elastic term of the adaptive-marker model", ("--k", float, None), ("--rtt", float, None),
        ("--p", float, None))
    add("drop-ratio", "d1/d2 for target rates r1, r2", ("--r1", float, None), ("--r2", float, None))
    add("provisioning", "classify sum of targets vs capacity", ("--targets", list, None), ("--capacity", float, None))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afsim", description="DiffServ AF conditioner simulator and TCP model calculator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("scenario")
    p.add_argument("--vary", action="append", required=True, metavar="KEY=VALUES",
                   help="dotted key and values, e.g. flows.*.access_delay=0.01,0.02 or aqm.wq=0.001:0.004:4")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, help="first seed (default: scenario seed)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("validate", help="parse and report a scenario without running it")
    p.add_argument("scenario")

    _analytic_parsers(sub)
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "analytic": cmd_analytic, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"afsim: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"afsim: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
