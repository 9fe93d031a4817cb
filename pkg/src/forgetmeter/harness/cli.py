"""Command line entry point: ``forgetmeter run|sweep|verdicts|dqn|plot``.

Exit codes: 0 success, 1 bad configuration, 2 runtime failure, 3 the
verdict suite disagreed with the expected verdicts.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

from ..errors import PreconditionError
from . import config as cfgmod
from .outputs import emit_outputs, replot
from .runner import run_dqn, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERDICT = 0, 1, 2, 3

log = logging.getLogger("forgetmeter")


def _csv_numbers(text: str, cast=float) -> list:
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise PreconditionError(f"cannot parse {text!r} as a comma-separated list") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forgetmeter", description="Measure the propensity to forget of learners.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one experiment, one seed")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--no-measure", action="store_true", help="train without forgetting estimates")
    run.add_argument("--panels", action="store_true", help="decision-grid panels (two-moons settings)")

    sw = sub.add_parser("sweep", help="one numeric config field over several values")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, help="dotted field, e.g. learner.momentum")
    sw.add_argument("--values", required=True)
    sw.add_argument("--seeds", default="0")
    sw.add_argument("--out", required=True)

    vd = sub.add_parser("verdicts", help="thought-experiment verdict suite")
    vd.add_argument("--out", required=True)
    vd.add_argument("--seeds", default="0,1,2,3")
    vd.add_argument("--particles", type=int, default=1000)

    dq = sub.add_parser("dqn", help="DQN runs with an instability report")
    dq.add_argument("--config", required=True)
    dq.add_argument("--seeds", default="0")
    dq.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="redraw plots from an output directory")
    pl.add_argument("--from", dest="src", required=True)
    return p


def _verdicts(args) -> int:
    from ..scenarios import run_verdict_suite
    from .runner import RunRecord

    rows = run_verdict_suite(seeds=_csv_numbers(args.seeds, int), num_particles=args.particles)
    records = []
    for r in rows:
        rec = RunRecord(f"scenario{r.number}-{r.name}-s{r.seed}", r.seed, "verdict", "")
        for k, g in sorted(r.gammas.items()):
            rec.add(f"gamma_k{k}", k, g)
        records.append(rec)
        print(f"{r.number:>2} {r.name:<28} seed {r.seed}  expected {r.expected:<11} got {r.verdict:<11} "
              f"{'PASS' if r.passed else 'FAIL'}")
    emit_outputs(records, args.out, verdicts=[asdict(r) for r in rows])
    return EXIT_OK if all(r.passed for r in rows) else EXIT_VERDICT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "verdicts":
            return _verdicts(args)
        if args.command == "plot":
            for name, path in replot(args.src).items():
                print(f"{name}: {path}")
            return EXIT_OK
        cfg = cfgmod.load(args.config)
        if args.command == "run":
            rec = run_experiment(cfg, args.seed, measure=not args.no_measure, panels=args.panels)
            emit_outputs([rec], args.out, config=cfg)
            if not rec.complete:
                print(f"run failed: {rec.error}", file=sys.stderr)
                return EXIT_RUNTIME
        elif args.command == "sweep":
            res = run_sweep(cfg, args.axis, _csv_numbers(args.values), _csv_numbers(args.seeds, int))
            emit_outputs(res.records, args.out, config=cfg, sweep=res)
            for row in res.table:
                print(f"{args.axis}={row['value']:<8} gamma_bar {row['gamma_bar']:.4g} +- {row['gamma_bar_std']:.2g}  "
                      f"efficiency {row['efficiency']:.4g} +- {row['efficiency_std']:.2g}  (n={row['n']})")
        elif args.command == "dqn":
            records, report = run_dqn(cfg, _csv_numbers(args.seeds, int))
            emit_outputs(records, args.out, config=cfg, extra={"instability_cv": report})
            for seed, cv in report.items():
                print(f"seed {seed}: gamma coefficient of variation {cv:.3f}")
            if not all(r.complete for r in records):
                return EXIT_RUNTIME
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command != "plot" else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
