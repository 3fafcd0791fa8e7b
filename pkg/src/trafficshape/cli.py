"""Command line entry point: generate, learn, run, evaluate, sweep.

Exit codes: 0 success, 2 bad configuration or input, 3 infeasible run under
``--strict``, 4 I/O failure. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from trafficshape.engine import LEARNING, learning_window, load_decisions, run_pipeline, save_decisions
from trafficshape.errors import InvalidInputError
from trafficshape.evaluation import (
    evaluate_run,
    resolve_nu,
    sweep_epsilon,
    sweep_sample_size,
    sweep_tradeoff,
)
from trafficshape.lp_dual import (
    ConstraintSpec,
    SampledLpConfig,
    load_prices,
    prices_from_json,
    save_prices,
    solve_sampled_dual,
)
from trafficshape.matching import MATCHERS
from trafficshape.traffic import GeneratorConfig, calibrate_targets, generate_stream, load_stream, save_stream

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

INFEASIBILITY_FLAGS = ("likely_infeasible", "hindsight_likely_infeasible", "constraint_violated")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "usage", f"{self.prog}: {message}")


# -- argument helpers -------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _nu(text: str):
    if text in ("feasibility", "objective"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("nu must be a number, 'feasibility' or 'objective'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("nu must be positive")
    return value


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_IO, "io", f"input file not found: {path}")
    return p


def _out_path(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise CliError(EXIT_IO, "io", f"output directory does not exist: {p.parent}")
    return p


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _infeasible(flags) -> bool:
    return any(f in INFEASIBILITY_FLAGS for f in flags)


def _lp_config(args, epsilon: float) -> SampledLpConfig:
    nu = None if args.nu is None else resolve_nu(args.nu, epsilon)
    return SampledLpConfig(epsilon=epsilon, nu=nu, max_iters=args.max_iters, tolerance=args.tolerance)


def _load_inputs(args) -> tuple[list, ConstraintSpec]:
    stream_path, spec_path = _need_file(args.stream), _need_file(args.spec)
    spec = ConstraintSpec.load(spec_path)
    sessions = load_stream(stream_path)
    if args.n is not None:
        spec = dataclasses.replace(spec, horizon=args.n)
    return sessions, spec


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = GeneratorConfig.load(_need_file(args.config)) if args.config else GeneratorConfig()
    overrides = {k: getattr(args, k) for k in ("n", "m", "seed") if getattr(args, k) is not None}
    if "m" in overrides and not args.config:
        overrides["curve"] = None
    cfg = dataclasses.replace(cfg, **overrides)
    out = _out_path(args.out)
    spec_out = _out_path(args.spec_out)
    sessions = generate_stream(cfg)
    spec = calibrate_targets(cfg)
    save_stream(out, sessions)
    spec.save(spec_out)
    if args.curve_out:
        cfg.ref_curve.to_csv(_out_path(args.curve_out))
    if args.config_out:
        _out_path(args.config_out).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    _emit({"sessions": len(sessions), "m": cfg.m, "targets": dict(zip(spec.names, spec.targets))})
    return EXIT_OK


def cmd_learn(args) -> int:
    sessions, spec = _load_inputs(args)
    out = _out_path(args.out)
    window = learning_window(spec.horizon, args.epsilon)
    if len(sessions) < window:
        raise InvalidInputError(f"stream has {len(sessions)} sessions, learning needs {window}")
    report = solve_sampled_dual(sessions[:window], spec, _lp_config(args, args.epsilon))
    save_prices(out, report, spec.names)
    _emit({"prices": dict(zip(spec.names, report.prices.lam)), "gap": report.gap,
           "iterations": report.iterations, "flags": report.flags, "sessions_used": window})
    return EXIT_INFEASIBLE if args.strict and _infeasible(report.flags) else EXIT_OK


def cmd_run(args) -> int:
    sessions, spec = _load_inputs(args)
    prices, learned_flags = None, []
    if args.prices:
        obj = json.loads(_need_file(args.prices).read_text())
        prices = prices_from_json(obj, spec.names)
        learned_flags = list(obj.get("metadata", {}).get("flags", []))
    out = _out_path(args.out)
    cfg = _lp_config(args, args.epsilon)
    decisions, engine = run_pipeline(sessions, spec, args.epsilon, nu=cfg.nu,
                                     matcher=args.matcher, prices=prices, lp_config=cfg)
    save_decisions(out, decisions)
    st = engine.state
    st.flags.extend(f for f in learned_flags if f not in st.flags)
    _emit({"sessions": st.sessions_seen, "learning_sessions": st.window,
           "reward": st.cumulative_reward, "delivered": st.cumulative_delivered.tolist(),
           "prices": dict(zip(spec.names, engine.prices.lam)) if engine.prices else None,
           "flags": st.flags})
    return EXIT_INFEASIBLE if args.strict and _infeasible(st.flags) else EXIT_OK


def cmd_evaluate(args) -> int:
    sessions, spec = _load_inputs(args)
    decisions = load_decisions(_need_file(args.log))
    prices = load_prices(_need_file(args.prices), spec.names) if args.prices else None
    out = _out_path(args.out)
    sessions = sessions[:spec.horizon]
    learning = sum(d.phase == LEARNING for d in decisions)
    report = evaluate_run(decisions, sessions, spec, prices=prices,
                          credit_learning_phase=args.credit_learning_phase,
                          lp_config=SampledLpConfig(max_iters=args.max_iters, tolerance=args.tolerance),
                          config={"n": len(sessions), "learning_sessions": learning})
    report.save(out)
    _emit({"competitive_ratio": report.competitive_ratio,
           "online_performance_ratio": report.online_performance_ratio,
           "delivery_ratio": dict(zip(spec.names, report.delivery_ratio)), "flags": report.flags})
    return EXIT_INFEASIBLE if args.strict and _infeasible(report.flags) else EXIT_OK


def _trial_seeds(args) -> list:
    if args.seeds is not None:
        return args.seeds
    if args.trials == 0:
        return [None]
    root = np.random.SeedSequence(args.seed)
    return [int(child.generate_state(1)[0]) for child in root.spawn(args.trials)]


def cmd_sweep(args) -> int:
    sessions, spec = _load_inputs(args)
    out = _out_path(args.out)
    lp = SampledLpConfig(max_iters=args.max_iters, tolerance=args.tolerance)
    seeds = _trial_seeds(args)
    if args.kind == "epsilon":
        grid = args.grid or [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
        result = sweep_epsilon(sessions, spec, grid, nu_rule=args.nu if args.nu is not None else 1.05,
                               seeds=seeds, matcher=args.matcher, lp_config=lp,
                               credit_learning_phase=args.credit_learning_phase, jobs=args.jobs)
        flags = [f for p in result.points for f in p.report.flags]
    elif args.kind == "sample-size":
        grid = [int(g) for g in args.grid] if args.grid else \
            sorted({max(1, int(round(f * spec.horizon))) for f in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0)})
        nu = 1.0 if args.nu is None else resolve_nu(args.nu, 1.0)
        result = sweep_sample_size(sessions, spec, grid, seeds=seeds, nu=nu, lp_config=lp, jobs=args.jobs)
        flags = ["likely_infeasible" for p in result.points if p.metrics["infeasible"]]
    else:
        grid = args.grid or [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 5.0]
        result = sweep_tradeoff(sessions, spec, grid, constraint=args.constraint, lp_config=lp, jobs=args.jobs)
        flags = ["likely_infeasible" for p in result.points if p.metrics["infeasible"]]
    result.write_csv(out)
    summary = {"axis": result.axis, "points": len(result.points), "extras": result.extras,
               "infeasible_points": len(flags)}
    if args.report_out:
        _out_path(args.report_out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit(summary)
    return EXIT_INFEASIBLE if args.strict and _infeasible(flags) else EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stream", required=True, help="session stream (newline-delimited JSON)")
    p.add_argument("--spec", required=True, help="constraint spec JSON (targets, horizon, names)")
    p.add_argument("--n", type=int, help="override the horizon n declared in the constraint file")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=5000, help="dual solver iteration limit (default 5000)")
    p.add_argument("--tolerance", type=float, default=1e-9, help="relative duality-gap stop (default 1e-9)")


def _add_strict(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strict", action="store_true", help="exit 3 when the run is flagged infeasible")


def _add_nu(p: argparse.ArgumentParser, default_help: str) -> None:
    p.add_argument("--nu", type=_nu, default=None,
                   help=f"safety factor: a number, 'feasibility' (1+4eps) or 'objective' (1-eps); {default_help}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trafficshape", description="Online constrained ranking with learned shadow prices.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic session stream and calibrated targets")
    p.add_argument("--config", help="generator config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output stream path")
    p.add_argument("--spec-out", required=True, help="output constraint spec path")
    p.add_argument("--curve-out", help="optional CSV of the position curve")
    p.add_argument("--config-out", help="optional echo of the effective generator config")
    p.add_argument("--n", type=int, help="number of sessions")
    p.add_argument("--m", type=int, help="documents per session (default curve resized)")
    p.add_argument("--seed", type=int, help="generator seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("learn", help="solve the sampled dual on the first ceil(eps*n) sessions")
    _add_inputs(p)
    p.add_argument("--epsilon", type=float, required=True, help="learning fraction in (0, 1]")
    _add_nu(p, "default 1+4eps")
    p.add_argument("--out", required=True, help="output prices JSON")
    _add_solver(p)
    _add_strict(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("run", help="serve the stream: identity while learning, priced matchings after")
    _add_inputs(p)
    p.add_argument("--epsilon", type=float, required=True, help="learning fraction in (0, 1]")
    _add_nu(p, "default 1+4eps")
    p.add_argument("--prices", help="prices JSON from 'learn' (skips the in-line solve)")
    p.add_argument("--matcher", choices=MATCHERS, default="hungarian", help="serving matcher (default hungarian)")
    p.add_argument("--out", required=True, help="output decision log")
    _add_solver(p)
    _add_strict(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score a decision log against the hindsight LP")
    _add_inputs(p)
    p.add_argument("--log", required=True, help="decision log from 'run'")
    p.add_argument("--prices", help="prices JSON to echo in the report")
    p.add_argument("--credit-learning-phase", type=_on_off, default=False, metavar="{on,off}",
                   help="count learning-phase deliveries toward the targets (default off)")
    p.add_argument("--out", required=True, help="output report JSON")
    _add_solver(p)
    _add_strict(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="epsilon, sample-size or trade-off sweep to tidy CSV")
    p.add_argument("kind", choices=("epsilon", "sample-size", "tradeoff"))
    _add_inputs(p)
    p.add_argument("--grid", type=_float_list, help="comma-separated axis values")
    p.add_argument("--seeds", type=_int_list, help="comma-separated permutation seeds")
    p.add_argument("--trials", type=int, default=0,
                   help="number of random stream orders derived from --seed (0: stream order)")
    p.add_argument("--seed", type=int, default=0, help="root seed for derived trial seeds")
    _add_nu(p, "epsilon sweep default 1.05, sample-size default 1")
    p.add_argument("--matcher", choices=MATCHERS, default="auto", help="serving matcher (default auto)")
    p.add_argument("--credit-learning-phase", type=_on_off, default=False, metavar="{on,off}",
                   help="delivery ratio accounting (default off)")
    p.add_argument("--constraint", default="0", help="trade-off constraint name or index")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--report-out", help="optional JSON summary with sweep extras")
    _add_solver(p)
    _add_strict(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _validate(args) -> None:
    eps = getattr(args, "epsilon", None)
    if eps is not None and not 0 < eps <= 1:
        raise InvalidInputError(f"--epsilon must lie in (0, 1], got {eps}")
    if getattr(args, "n", None) is not None and args.n < 1:
        raise InvalidInputError("--n must be >= 1")
    if getattr(args, "jobs", 1) < 1 or getattr(args, "trials", 0) < 0:
        raise InvalidInputError("--jobs must be >= 1 and --trials >= 0")
    if getattr(args, "kind", None) == "tradeoff" and args.constraint.isdigit():
        args.constraint = int(args.constraint)
    if getattr(args, "kind", None) == "epsilon" and args.grid and any(not 0 < e <= 1 for e in args.grid):
        raise InvalidInputError("epsilon grid values must lie in (0, 1]")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        return args.func(args)
    except CliError as exc:
        err = exc
    except InvalidInputError as exc:
        err = CliError(EXIT_CONFIG, type(exc).__name__, str(exc))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        err = CliError(EXIT_CONFIG, type(exc).__name__, str(exc))
    except OSError as exc:
        err = CliError(EXIT_IO, "io", str(exc))
    payload = {"error": err.kind, "message": err.message, "exit_code": err.code}
    print(json.dumps(payload), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
