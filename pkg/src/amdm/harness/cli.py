"""Command-line entry point: ``amdm {run,validate-config,list-experiments,self-test}``."""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile

import numpy as np

from .config import KINDS, ConfigError, bundled_configs, load_config
from .experiments import run_experiment


def _resolve(path: str):
    known = bundled_configs()
    return known[path] if path in known else path


def _cmd_run(args) -> int:
    cfg = load_config(_resolve(args.config))
    cfg = cfg.with_overrides(seed=args.seed, output=args.out)
    report = run_experiment(cfg, cfg.output, workers=args.workers, fmt=args.format)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g}  ({c.threshold})")
    print(f"wrote {len(report.files)} file(s) to {cfg.output}")
    return 0 if report.passed else 1


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(_resolve(args.config))
    except (ConfigError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: kind={cfg.kind} trials={cfg.trials} models={len(cfg.models)}")
    return 0


def _cmd_list(args) -> int:
    print("experiment kinds:")
    for k in KINDS:
        print(f"  {k}")
    print("bundled configs:")
    for name, path in bundled_configs().items():
        print(f"  {name}  ({path})")
    return 0


def self_test() -> list[tuple[str, bool]]:
    """Fast internal consistency battery; returns ``(name, passed)`` pairs."""
    from ..aggregate import deviation_optimize, slerp
    from ..schedule import build_linear_schedule
    from ..theory import concentration_lower_bound, moment_closed_form, moment_ode_integrate

    rng = np.random.default_rng(0)
    out = []
    a = rng.standard_normal(64)
    b = rng.standard_normal(64)
    b *= np.linalg.norm(a) / np.linalg.norm(b)
    s = slerp(a, b, 0.3)
    out.append(("slerp keeps norm", abs(np.linalg.norm(s) / np.linalg.norm(a) - 1) < 1e-9))
    mu = rng.standard_normal(64)
    z = mu + 3 * rng.standard_normal(64)
    d = deviation_optimize(z, mu, 0.5)
    out.append(("deviation step is exact",
                abs(np.linalg.norm(d - mu) - (np.linalg.norm(z - mu) - 0.5)) < 1e-12))
    sch = build_linear_schedule()
    out.append(("terminal level is near the prior", sch.terminal_is_prior()))
    rk = moment_ode_integrate([1.0], [0.0], 0.5, 1e-3, sch)
    cf = moment_closed_form([1.0], [0.0], 0.5, sch)
    out.append(("RK4 matches closed form", abs(rk.m[0] - cf.m[0]) < 1e-6))
    x = rng.standard_normal((2000, 256))
    frac = np.mean(np.abs(np.linalg.norm(x, axis=1) - 16.0) <= 0.1 * 16.0)
    out.append(("concentration bound holds", frac >= concentration_lower_bound(256, 0.1)))
    with tempfile.TemporaryDirectory() as tmp:
        from .csvio import write_rows

        p1 = write_rows(f"{tmp}/a.csv", ["x"], [[0.1 + 0.2]])
        out.append(("csv float format", p1.read_text(encoding="utf-8") == "x\n0.3\n"))
    return out


def _cmd_self_test(args) -> int:
    results = self_test()
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(ok for _, ok in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amdm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True, help="YAML path or bundled config name")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, default=None, help="base seed override")
    run.add_argument("--workers", type=int, default=1, help="worker processes")
    run.add_argument("--format", choices=("csv", "csv+svg"), default="csv+svg")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate-config", help="parse and validate a config")
    val.add_argument("--config", required=True)
    val.set_defaults(func=_cmd_validate)

    sub.add_parser("list-experiments", help="list kinds and bundled configs").set_defaults(
        func=_cmd_list)
    sub.add_parser("self-test", help="run a fast internal check battery").set_defaults(
        func=_cmd_self_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
