"""Command-line entry point.

Exit codes: 0 success, 1 experiment failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .config import (ENV_CONFIG_DIR, KEYS, Config, ConfigError, default_config_path,
                     help_text, load_scenario)
from .experiments import SweepSpec, Sweeper, run_scenario, write_envelope
from .lip import InputDomainError, LipParams, error_table_csv, integration_error_table
from .selfcheck import run_checks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("arto")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path,
                        help=f"config file (default: ${ENV_CONFIG_DIR}/default.cfg, "
                             "else the packaged default)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--clock", choices=("virtual", "wall"), help="overrides clock.mode")
    common.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config overrides (one flag per config key)")
    for k, (_, _, h) in KEYS.items():
        keys.add_argument(f"--{k}", dest=f"key:{k}", metavar="VALUE", help=h)

    p = _Parser(prog="arto", description="Footstep planning experiments on the LIP model.",
                epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run one scenario and write its trace",
                       epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--scenario", type=Path, required=True, help="scenario file")
    r.add_argument("--name", default="trace", help="trace file stem")
    for name, what in (("sweep-push", "maximum push force"),
                       ("sweep-vel", "maximum reference velocity change")):
        s = sub.add_parser(name, parents=[common], help=f"polar sweep of the {what}",
                           epilog=help_text(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--planners", help="comma separated subset (overrides sweep.planners)")
        s.add_argument("--angles", type=int, help="overrides sweep.n_angles")
    e = sub.add_parser("integrator-error", parents=[common],
                       help="integrator error against the exact solution")
    e.add_argument("--offset", type=float, default=0.001, help="initial CoM offset (m)")
    e.add_argument("--span", type=float, default=1.0, help="integration horizon (s)")
    e.add_argument("--resolution", type=float, default=0.01, help="sampling interval (s)")
    e.add_argument("--height", type=float, default=0.6, help="CoM height for the study (m)")
    c = sub.add_parser("check", parents=[common], help="gradient and integrator self-checks")
    c.add_argument("--samples", type=int, default=100, help="random plans for the gradient check")
    return p


def resolve_config(args) -> Config:
    path = args.config if args.config is not None else default_config_path()
    cfg = Config.load(path)
    for k in KEYS:
        v = getattr(args, f"key:{k}", None)
        if v is not None:
            cfg.set(k, v)
    if args.clock is not None:
        cfg.set("clock.mode", args.clock)
    return cfg


def _sweep_spec(cfg: Config, kind: str, args) -> SweepSpec:
    push = kind == "push"
    planners = cfg["sweep.planners"]
    if getattr(args, "planners", None):
        planners = tuple(p.strip() for p in args.planners.split(",") if p.strip())
    n = args.angles if getattr(args, "angles", None) else cfg["sweep.n_angles"]
    return SweepSpec(kind=kind, planners=planners, n_angles=n, lower=0.0,
                     upper=cfg["sweep.push_upper"] if push else cfg["sweep.vel_upper"],
                     resolution=cfg["sweep.push_resolution"] if push else cfg["sweep.vel_resolution"],
                     trials=cfg["sweep.trials"], window=cfg["sweep.window"],
                     settle=cfg["sweep.settle"], phase=cfg["sweep.phase"],
                     threshold=cfg["sweep.threshold"], push_duration=cfg["sweep.push_duration"],
                     half_width=cfg["gait.half_width"], step_time=cfg["gait.step_time"])


def cmd_run(cfg: Config, args) -> int:
    spec = load_scenario(args.scenario)
    tr = run_scenario(spec, cfg, args.out, args.name)
    msg = f"{spec.planner}: {len(tr.steps)} steps in {tr.final_time:.3f} s"
    if tr.fallen:
        msg += f", fell at {tr.fall_time:.3f} s ({tr.fall_reason})"
    if tr.failure:
        msg += f", aborted: {tr.failure}"
    print(msg)
    if (tr.fallen or tr.failure) and spec.must_pass:
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(cfg: Config, args, kind: str) -> int:
    spec = _sweep_spec(cfg, kind, args)
    sw = Sweeper(spec, cfg.problem(), cfg.clock(), **cfg.scenario_kw())
    env = sw.sweep()
    title = "maximum push force" if kind == "push" else "maximum velocity change"
    csv_path, svg_path = write_envelope(env, args.out, title)
    with open(Path(args.out) / "sweep_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["planner", "angle_rad", "magnitude", "passed"])
        for planner, a, m, ok in sw.log:
            w.writerow([planner, repr(a), repr(m), int(ok)])
    failed = False
    for planner, pts in env.points.items():
        vals = " ".join(f"{p.magnitude:g}{'*' if p.flag else ''}" for p in pts)
        print(f"{planner:>8} [{env.units}]: {vals}")
        failed |= any(p.flag == "lower_fails" for p in pts)
    print(f"wrote {csv_path} and {svg_path}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_integrator(cfg: Config, args) -> int:
    params = LipParams(cfg["lip.g"], args.height)
    rows = integration_error_table(params, args.offset, args.span, args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "integrator_error.csv"
    path.write_text(error_table_csv(rows))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_check(cfg: Config, args) -> int:
    results = run_checks(cfg.problem(), cfg["seed"], n_grad=args.samples)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        # build everything once so bad values surface as configuration errors
        cfg.problem(), cfg.clock(), cfg.scenario_kw()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"arto: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(cfg, args)
        if args.command == "sweep-push":
            return cmd_sweep(cfg, args, "push")
        if args.command == "sweep-vel":
            return cmd_sweep(cfg, args, "velocity")
        if args.command == "integrator-error":
            return cmd_integrator(cfg, args)
        return cmd_check(cfg, args)
    except (ConfigError, InputDomainError, OSError) as exc:
        print(f"arto: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
