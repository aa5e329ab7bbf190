"""Command line entry point ``enkf-rare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig, crude_monte_carlo, emit_fig1_data, run_batch
from .lsf import get_problem
from .theory import TheoryScenario, integrate_particle_flow, limit_mean, predicted_moments

# CLI flag -> ExperimentConfig field
_RUN_FLAGS = {
    "problem": "problem", "J": "J", "delta_target": "delta_target", "family": "family",
    "K": "K", "alpha": "alpha", "adaptive_K": "adaptive_K", "trials": "trials",
    "seed": "base_seed", "out": "out", "reference_pf": "reference_pf", "n_is": "n_is",
    "workers": "workers",
}


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="enkf-rare", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="batch of seeded estimation trials")
    r.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    r.add_argument("--problem")
    r.add_argument("--J", type=int)
    r.add_argument("--delta-target", type=float)
    r.add_argument("--family", choices=("GM", "vMFNM"))
    r.add_argument("--K", type=int)
    loc = r.add_mutually_exclusive_group()
    loc.add_argument("--local", action="store_true", help="fixed-kernel localisation")
    loc.add_argument("--adaptive-K", type=int, help="adaptive localisation with this many clusters")
    loc.add_argument("--global", dest="global_", action="store_true", help="no localisation")
    r.add_argument("--alpha", type=float)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--reference-pf", type=float)
    r.add_argument("--n-is", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.add_argument("--deterministic", action="store_true", help="sequential, bit-reproducible")

    t = sub.add_parser("theory", help="mean-field particle flow for G(u) = u_1 - b")
    t.add_argument("--b", type=float, default=-2.0)
    t.add_argument("--d", type=int, default=2)
    t.add_argument("--J", type=int, default=100_000)
    t.add_argument("--dt", type=float, default=1e-3)
    t.add_argument("--times", type=_float_list, default=[0.5, 1.0, 2.0, 5.0])
    t.add_argument("--mode", choices=("no-failure-init", "with-failure-init"),
                   default="no-failure-init")
    t.add_argument("--dt-growth", action="store_true", help="step dt*(1+t) for long horizons")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="trajectory CSV path (stdout if omitted)")

    c = sub.add_parser("curves", help="smooth indicator approximations as CSV")
    c.add_argument("--sigma", type=_float_list, default=[1.0, 0.5, 0.1])
    c.add_argument("--g-min", type=float, default=-2.0)
    c.add_argument("--g-max", type=float, default=2.0)
    c.add_argument("--n", type=int, default=201)
    c.add_argument("--out")

    m = sub.add_parser("mc", help="crude Monte Carlo reference estimate")
    m.add_argument("--problem", required=True)
    m.add_argument("--n", type=int, default=1_000_000)
    m.add_argument("--seed", type=int, default=0)
    return p


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def config_from_args(args) -> ExperimentConfig:
    overrides = {field: getattr(args, flag) for flag, field in _RUN_FLAGS.items()}
    if args.local:
        overrides["localization"] = "local"
    elif args.adaptive_K:
        overrides["localization"] = "adaptive"
    elif args.global_:
        overrides["localization"] = "global"
    if args.deterministic:
        overrides["deterministic"] = True
    if args.config:
        return ExperimentConfig.from_json(args.config, overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_run(args) -> int:
    res = run_batch(config_from_args(args))
    out = res.summary()
    out["paths"] = res.paths
    print(json.dumps(out, indent=2, sort_keys=True))
    return 1 if res.n_errors == len(res.rows) else 0


def cmd_theory(args) -> int:
    scen = TheoryScenario(args.b, args.d, args.J, max(args.times), args.dt)
    traj = integrate_particle_flow(scen, args.mode, np.random.default_rng(args.seed),
                                   times=args.times, dt_growth=args.dt_growth)
    _emit(traj.to_csv(), args.out)
    if args.out:
        if args.mode == "no-failure-init":
            m1, c11 = predicted_moments(args.b, traj.times)
            gap = float(max(np.abs(traj.means[:, 0] - m1).max(), np.abs(traj.covs[:, 0, 0] - c11).max()))
            print(f"max deviation from closed form: {gap:.3e}")
        else:
            lim = limit_mean(args.b)[0]
            print(f"m1(t_end) = {traj.means[-1, 0]:.6f}, large-time limit {lim:.6f}")
    return 0


def cmd_curves(args) -> int:
    _emit(emit_fig1_data(args.sigma, np.linspace(args.g_min, args.g_max, args.n)), args.out)
    return 0


def cmd_mc(args) -> int:
    lsf = get_problem(args.problem)
    p, se = crude_monte_carlo(lsf, args.n, np.random.default_rng(args.seed))
    print(json.dumps({"problem": args.problem, "n": args.n, "pf": p, "se": se,
                      "reference_pf": lsf.reference_pf}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "theory": cmd_theory, "curves": cmd_curves, "mc": cmd_mc}
    try:
        return handler[args.command](args)
    except (ValueError, KeyError) as exc:
        print(f"enkf-rare: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
