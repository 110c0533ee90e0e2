"""``fusion`` command line: plan, table, run, game, claim1, variance, serve."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .adversary import Selection, TargetedCorruption, closed_form, estimate_win_prob
from .backend import serve_dealer, serve_server
from .combinatorics import GameParams, verify_cheat_bound_grid
from .datamix import load_csv
from .fixedpoint import decode
from .model import load_model
from .planner import InfeasiblePlanError, estimate_T_variance, parameter_table, search_params
from .protocol import BACKENDS, make_backend, run_protocol
from .rng import as_rng
from .verify import DEFAULT_DELTA

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_ERROR, EXIT_ABORT = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("fusion")

# run options that may also come from --config; flags win
RUN_DEFAULTS = {
    "model": None,
    "queries": None,
    "publics": None,
    "lambda": 40,
    "beta": 100,
    "delta": DEFAULT_DELTA,
    "backend": "oracle",
    "adversary": "honest",
    "seed": 0,
    "out": None,
    "dealer_addr": None,
    "server_addr": None,
}


class CLIError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _b_range(text: str):
    lo, sep, hi = text.partition("..")
    try:
        return range(int(lo), int(hi if sep else lo) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_config(path) -> dict:
    raw = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        doc = tomllib.loads(raw.decode())
    else:
        doc = json.loads(raw)
    doc = doc.get("run", doc)
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _resolve_run_options(args) -> dict:
    file_opts = load_config(args.config) if args.config else {}
    unknown = set(file_opts) - set(RUN_DEFAULTS)
    if unknown:
        raise CLIError(f"unknown config keys: {', '.join(sorted(unknown))}")
    opts = {}
    for key, default in RUN_DEFAULTS.items():
        flag = getattr(args, "lam" if key == "lambda" else key)
        opts[key] = flag if flag is not None else file_opts.get(key, default)
    for key in ("model", "queries", "publics"):
        if opts[key] is None:
            raise CLIError(f"--{key} is required (flag or config file)")
    return opts


# subcommands ---------------------------------------------------------------


def cmd_plan(args) -> int:
    plan = search_params(args.queries, args.lam, args.beta, exact=args.exact)
    _emit(plan.as_dict(exact=args.exact))
    return EXIT_OK


def cmd_table(args) -> int:
    rows = parameter_table(args.lam, args.beta, args.b_range)
    for r in rows:
        r["log2_R"] = None if r["R"] is None else r["R"].bit_length() - 1
    _emit(rows)
    if args.check:
        expected = json.loads(Path(args.check).read_text())
        want = {(e["B"], e["R"], e["T"]) for e in expected}
        got = {(r["B"], r["R"], r["T"]) for r in rows}
        if want != got:
            for row in sorted(got - want, key=str):
                log.error("unexpected row B=%s R=%s T=%s", *row)
            for row in sorted(want - got, key=str):
                log.error("missing row B=%s R=%s T=%s", *row)
            return EXIT_ABORT
    return EXIT_OK


def cmd_run(args) -> int:
    o = _resolve_run_options(args)
    model = load_model(o["model"])
    queries = load_csv(o["queries"], model.scale_bits).features
    Xp, yp = load_csv(o["publics"], model.scale_bits).labeled()
    backend = o["backend"]
    if backend not in BACKENDS:
        raise CLIError(f"unknown backend {backend!r}; choose from {', '.join(BACKENDS)}")
    if backend == "two-party:tcp" and bool(o["dealer_addr"]) != bool(o["server_addr"]):
        raise CLIError("give both --dealer-addr and --server-addr, or neither")
    be = make_backend(backend, as_rng(o["seed"]).child("backend"), o["dealer_addr"], o["server_addr"])
    report = run_protocol(
        model,
        queries,
        Xp,
        yp,
        lam=int(o["lambda"]),
        beta_pub=int(o["beta"]),
        delta=float(o["delta"]),
        backend=be,
        adversary=o["adversary"],
        seed=o["seed"],
        timestamp=not args.no_timestamp,
    )
    report.backend = backend
    text = report.to_json()
    if o["out"]:
        Path(o["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("verdict: %s", report.verification.verdict)
    return EXIT_OK if report.accepted else EXIT_ABORT


def cmd_game(args) -> int:
    params = GameParams(args.R, args.B, args.T, args.i)
    strategy = TargetedCorruption(args.i, Selection(args.selection))
    est, se = estimate_win_prob(strategy, params, args.trials, args.seed)
    exact = closed_form(params, args.i)
    _emit({
        "estimate": est,
        "std_error": se,
        "closed_form": float(exact),
        "closed_form_exact": str(exact),
        "trials": args.trials,
        "seed": args.seed,
        "R": args.R, "B": args.B, "T": args.T, "i": args.i,
        "selection": args.selection,
    })
    return EXIT_OK


def cmd_claim1(args) -> int:
    found = verify_cheat_bound_grid(args.max_R, args.max_B, args.max_T)
    bound = [c for c in found if c.check == "bound"]
    inter = [c for c in found if c.check == "intermediate"]

    def rows(cs):
        return [
            {"R": c.R, "B": c.B, "T": c.T, "i": c.i, "lhs": str(c.lhs), "rhs": str(c.rhs)}
            for c in cs[: args.limit]
        ]

    _emit({
        "grid": {"max_R": args.max_R, "max_B": args.max_B, "max_T": args.max_T},
        "pass": not found,
        "bound_pass": not bound,
        "intermediate_pass": not inter,
        "bound_counterexamples": len(bound),
        "intermediate_counterexamples": len(inter),
        "examples": {"bound": rows(bound), "intermediate": rows(inter)},
    })
    return EXIT_OK if not found else EXIT_ABORT


def cmd_variance(args) -> int:
    model = load_model(args.model)
    X, y = load_csv(args.pool, model.scale_bits).labeled()
    rows = estimate_T_variance(model, decode(X, model.scale_bits), y, args.T_list, args.groups, args.seed)
    _emit([r.as_dict() for r in rows])
    return EXIT_OK


def cmd_serve(args) -> int:
    if args.role == "dealer":
        n = serve_dealer(args.addr, args.seed, args.timeout)
    else:
        if not (args.model and args.dealer_addr):
            raise CLIError("serve server needs --model and --dealer-addr")
        n = serve_server(args.addr, args.dealer_addr, load_model(args.model), args.seed, args.timeout)
    log.info("%s served a batch of %d samples", args.role, n)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusion", description="Mix-and-check batched secure inference toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("plan", help="cheapest secure (B, T) for R queries")
    s.add_argument("--queries", type=int, required=True, help="number of query samples R")
    s.add_argument("--lambda", dest="lam", type=int, default=40)
    s.add_argument("--beta", type=int, default=100, help="minimum number of public samples")
    s.add_argument("--exact", action="store_true", help="verify and print the bound as an exact rational")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("table", help="least power-of-two R selecting each B")
    s.add_argument("--lambda", dest="lam", type=int, default=40)
    s.add_argument("--beta", type=int, default=100)
    s.add_argument("--b-range", type=_b_range, default=_b_range("3..8"))
    s.add_argument("--check", metavar="FILE", help="JSON list of expected {B, R, T} rows")
    s.set_defaults(func=cmd_table)

    s = sub.add_parser("run", help="one end-to-end batched run")
    s.add_argument("--config", help="TOML or JSON file with run options")
    s.add_argument("--model")
    s.add_argument("--queries")
    s.add_argument("--publics")
    s.add_argument("--lambda", dest="lam", type=int)
    s.add_argument("--beta", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--backend", help="|".join(BACKENDS))
    s.add_argument("--adversary", help="honest | lowq:PATH | corrupt:I | noise:P")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--dealer-addr")
    s.add_argument("--server-addr")
    s.add_argument("--no-timestamp", action="store_true", help="omit wall-clock time for reproducible output")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("game", help="Monte-Carlo cheating game")
    s.add_argument("--R", type=int, required=True)
    s.add_argument("--B", type=int, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--i", type=int, default=1)
    s.add_argument("--trials", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--selection", choices=[v.value for v in Selection], default="random")
    s.set_defaults(func=cmd_game)

    s = sub.add_parser("claim1", help="exhaustive exact check of the cheating bound")
    s.add_argument("--max-R", type=int, required=True)
    s.add_argument("--max-B", type=int, required=True)
    s.add_argument("--max-T", type=int, required=True)
    s.add_argument("--limit", type=int, default=20, help="counterexamples to print per check")
    s.set_defaults(func=cmd_claim1)

    s = sub.add_parser("variance", help="variance of public-sample accuracy per T")
    s.add_argument("--model", required=True)
    s.add_argument("--pool", required=True, help="labelled CSV")
    s.add_argument("--T-list", dest="T_list", type=_int_list, required=True)
    s.add_argument("--groups", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_variance)

    s = sub.add_parser("serve", help="run a dealer or server endpoint for one TCP batch")
    s.add_argument("role", choices=["dealer", "server"])
    s.add_argument("--addr", required=True, help="host:port to listen on")
    s.add_argument("--dealer-addr")
    s.add_argument("--model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timeout", type=float, default=600.0)
    s.set_defaults(func=cmd_serve)
    return p


def _setup_logging() -> None:
    level = os.environ.get("FUSION_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, InfeasiblePlanError, ValueError, TypeError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
