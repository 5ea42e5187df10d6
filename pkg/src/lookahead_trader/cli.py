"""Command-line front end.

Subcommands: simulate, value, ce, verify, dual-oracle, kernels-dump.
Parameters come from an optional JSON config file (field names identical to
ModelParams) with CLI flags overriding file values. Exit codes: 0 success,
1 configuration error, 2 I/O error, 3 numeric error or failed verification.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytics, dual_oracle, market_sim, policy, verify
from .kernels import KernelSet
from .market_sim import GridError, lookahead_steps
from .params import ModelParams, PARAM_FIELDS, REFERENCE_PARAMS

EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


@dataclass
class RunConfig:
    params: ModelParams
    n_paths: int = 1000
    n_steps: int = 500
    seed: int = 0
    out_dir: Path = Path(".")
    workers: int = 1

    def __post_init__(self):
        lookahead_steps(self.params, self.n_steps)


_PARAM_FLAGS = {
    "s0": "--s0", "mu": "--mu", "sigma": "--sigma",
    "lambda_impact": "--lambda-impact", "alpha": "--alpha",
    "horizon_T": "--horizon", "lookahead_delta": "--delta", "phi0": "--phi0",
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file with ModelParams fields")
    for name, flag in _PARAM_FLAGS.items():
        parser.add_argument(flag, dest=name, type=float, default=None)
    parser.add_argument("--n-paths", type=int, default=None)
    parser.add_argument("--n-steps", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", type=str, default=".")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel workers (wall time only; output "
                             "bytes are identical for any value)")


def _build_config(args, default_n_paths=1000, default_n_steps=500) -> RunConfig:
    fields = REFERENCE_PARAMS.to_dict()
    run_fields = {"n_paths": default_n_paths, "n_steps": default_n_steps,
                  "seed": 0}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        for key, value in data.items():
            if key in PARAM_FIELDS:
                fields[key] = value
            elif key in run_fields:
                run_fields[key] = value
            else:
                raise ValueError(f"unknown config field {key!r}")
    for name in PARAM_FIELDS:
        override = getattr(args, name, None)
        if override is not None:
            fields[name] = override
    for name in run_fields:
        override = getattr(args, name.replace("-", "_"), None)
        if override is not None:
            run_fields[name] = override
    return RunConfig(params=ModelParams.from_dict(fields),
                     n_paths=run_fields["n_paths"],
                     n_steps=run_fields["n_steps"], seed=run_fields["seed"],
                     out_dir=Path(args.out_dir), workers=args.workers)


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_simulate(args) -> int:
    config = _build_config(args, default_n_paths=1)
    params = config.params
    ens = market_sim.simulate(params, config.n_paths, config.n_steps,
                              config.seed)
    out = config.out_dir

    rows = ["path,k,t,S"]
    for i in range(ens.n_paths):
        rows.extend(f"{i},{k},{ens.times[k]:.10g},{ens.prices[i, k]:.12g}"
                    for k in range(ens.n_steps + 1))
    _write_text(out / "paths.csv", "\n".join(rows) + "\n")

    trace_rows = ["policy,path," + market_sim.StrategyTrace.CSV_HEADER]
    for pol in policy.POLICIES:
        for i in range(ens.n_paths):
            trace = policy.run_policy(ens.prices[i], params, pol)
            trace_rows.extend(f"{pol},{i},{row}"
                              for row in trace.to_csv_rows())
    _write_text(out / "traces.csv", "\n".join(trace_rows) + "\n")

    meta = {
        "params": params.to_dict(),
        "seed": config.seed,
        "n_paths": config.n_paths,
        "n_steps": config.n_steps,
        "dt": params.horizon_T / config.n_steps,
        "lookahead_steps": ens.lookahead_window_steps(),
        "merton_position": params.merton_position(),
        "policies": list(policy.POLICIES),
    }
    _write_text(out / "meta.json", json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out / 'paths.csv'}, {out / 'traces.csv'}, "
          f"{out / 'meta.json'}")
    return 0


def cmd_value(args) -> int:
    config = _build_config(args, default_n_paths=20000)
    report = analytics.value_report(config.params, config.n_paths,
                                    config.n_steps, config.seed,
                                    workers=config.workers)
    payload = json.dumps(report.to_dict(), indent=2)
    print(payload)
    if args.out:
        _write_text(Path(args.out), payload + "\n")
    if args.compare:
        rows = analytics.policy_comparison(config.params, config.n_paths,
                                           config.n_steps, config.seed,
                                           workers=config.workers)
        lines = ["policy,mean,std_error,certainty_equivalent"]
        lines += [f"{r['policy']},{r['mean']:.12g},{r['std_error']:.12g},"
                  f"{r['certainty_equivalent']:.12g}" for r in rows]
        _write_text(Path(args.compare), "\n".join(lines) + "\n")
    if not math.isfinite(report.primal_closed_form):
        return EXIT_NUMERIC
    return 0


def cmd_ce(args) -> int:
    config = _build_config(args)
    params = config.params
    deltas = np.linspace(0.0, args.delta_max, args.delta_points)
    rows = ["delta,certainty_equivalent"]
    for d in deltas:
        p = ModelParams(**{**params.to_dict(), "lookahead_delta": float(d)})
        rows.append(f"{d:.10g},{analytics.certainty_equivalent(p):.12g}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if args.out:
        _write_text(Path(args.out), text)
    return 0


def cmd_verify(args) -> int:
    results = verify.run_suite(full=args.full, workers=args.workers)
    payload = {
        "suite": "full" if args.full else "fast",
        "checks": [r.to_dict() for r in results],
        "all_passed": all(r.passed for r in results),
    }
    text = json.dumps(payload, indent=2, default=float)
    print(text)
    if args.out:
        _write_text(Path(args.out), text + "\n")
    return 0 if payload["all_passed"] else EXIT_NUMERIC


def cmd_dual_oracle(args) -> int:
    config = _build_config(args)
    red = config.params.reduce()
    closed = analytics.dual_value(config.params)
    m_values = tuple(int(x) for x in args.m_ladder.split(","))
    ladder = dual_oracle.oracle_ladder(red, m_values, closed)
    final = ladder["rungs"][-1]
    payload = {
        "m": final["m"],
        "value": final["value"],
        "closed_form": closed,
        "abs_err": final["abs_err"],
        "observed_order": ladder["observed_order"],
        "rungs": ladder["rungs"],
    }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        _write_text(Path(args.out), text + "\n")
    return 0


def cmd_kernels_dump(args) -> int:
    config = _build_config(args)
    params = config.params
    kern = KernelSet.from_params(params)
    times = np.linspace(0.0, params.horizon_T, args.grid_points)
    rows = ["t,s,l_hat,k_hat,residual"]
    for i, t in enumerate(times):
        for s in times[:i + 1]:
            t_f, s_f = float(t), float(s)
            rows.append(f"{t_f:.10g},{s_f:.10g},{kern.l_hat(t_f, s_f):.12g},"
                        f"{kern.k_hat(t_f, s_f):.12g},"
                        f"{kern.resolvent_residual(t_f, s_f):.6g}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if args.out:
        _write_text(Path(args.out), text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lookahead-trader",
                     description="Optimal trading with a peek-ahead price "
                                 "window under quadratic impact costs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate paths and policy traces")
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("value", help="closed-form and MC value report")
    _add_common(p_val)
    p_val.add_argument("--out", type=str, default=None)
    p_val.add_argument("--compare", type=str, default=None,
                       help="also write a per-policy comparison CSV here")
    p_val.set_defaults(func=cmd_value)

    p_ce = sub.add_parser("ce", help="certainty-equivalent table over delta")
    _add_common(p_ce)
    p_ce.add_argument("--delta-max", type=float, default=2.0)
    p_ce.add_argument("--delta-points", type=int, default=9)
    p_ce.add_argument("--out", type=str, default=None)
    p_ce.set_defaults(func=cmd_ce)

    p_ver = sub.add_parser("verify", help="run the verification battery")
    _add_common(p_ver)
    p_ver.add_argument("--full", action="store_true",
                       help="include the Monte Carlo criteria")
    p_ver.add_argument("--out", type=str, default=None)
    p_ver.set_defaults(func=cmd_verify)

    p_do = sub.add_parser("dual-oracle",
                          help="discretized dual-value convergence ladder")
    _add_common(p_do)
    p_do.add_argument("--m-ladder", type=str, default="64,128,256,512,1024")
    p_do.add_argument("--out", type=str, default=None)
    p_do.set_defaults(func=cmd_dual_oracle)

    p_kd = sub.add_parser("kernels-dump",
                          help="dump kernel tables on a triangular grid")
    _add_common(p_kd)
    p_kd.add_argument("--grid-points", type=int, default=12)
    p_kd.add_argument("--out", type=str, default=None)
    p_kd.set_defaults(func=cmd_kernels_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, GridError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
