"""Command line entry point ``pekarlab``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from pekarlab.effective import PekarDivergence, pekar_minimize
from pekarlab.harness import (
    ExperimentConfig,
    InsufficientData,
    fit_report,
    records_to_csv,
    run_experiment,
    run_sweep,
)
from pekarlab.model import BudgetError, ConfigError, ElectronState, build_mode_grid
from pekarlab.units import convert, read_descriptor
from pekarlab.verifier import run_all

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_CHECK = 4


def _load(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return ExperimentConfig.from_text(text)


def _emit(text: str, out: str | None, name: str):
    if out is None:
        sys.stdout.write(text)
        return
    target = Path(out)
    if target.suffix == "":
        target.mkdir(parents=True, exist_ok=True)
        target = target / name
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)


def cmd_simulate(args) -> int:
    exp = _load(args.config)
    records = run_sweep(
        exp.model,
        [exp.model.alpha],
        exp.t_grid,
        initial=exp.initial,
        sigma=exp.sigma,
        dressing=exp.dressing,
        record_timing=exp.record_timing,
    )
    _emit(records_to_csv(records), args.out, "records.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = _load(args.config)
    records = run_experiment(exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(records))
    try:
        report = fit_report(records, fit_alpha=exp.fit_alpha, prefactor=exp.envelope_prefactor)
    except InsufficientData as exc:
        print(f"fit skipped: {exc}", file=sys.stderr)
        return EXIT_CHECK if args.check else EXIT_OK
    (out / "fit.json").write_text(report.to_json())
    print(
        f"slope={report.alpha_scaling_slope:.4f} C={report.growth_C:.4f} c={report.growth_c:.4g} "
        f"rel_rms={report.rel_rms:.4f} envelope_ok={report.envelope_ok}"
    )
    if args.check:
        ok = (
            exp.slope_min <= report.alpha_scaling_slope <= exp.slope_max
            and report.rel_rms <= exp.max_rel_rms
            and report.envelope_ok
        )
        if not ok:
            print("acceptance check failed", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


def cmd_verify(args) -> int:
    exp = _load(args.config)
    table = run_all(exp.model, samples=exp.samples, sigma=exp.sigma)
    _emit(table.to_csv(), args.out, "verdicts.csv")
    bad = [r.check_id for r in table.rows if not r.as_expected]
    if bad:
        print(f"unexpected verdicts: {', '.join(bad)}", file=sys.stderr)
        if args.check:
            return EXIT_CHECK
    return EXIT_OK


def cmd_pekar(args) -> int:
    exp = _load(args.config)
    grid = build_mode_grid(exp.model)
    init = ElectronState.gaussian(grid, exp.sigma)
    try:
        result = pekar_minimize(grid, init)
    except PekarDivergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECK
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("iter", "energy", "grad_norm", "step"))
    for row in result.trace:
        writer.writerow((row.iter, repr(row.energy), repr(row.grad_norm), repr(row.step)))
    _emit(buf.getvalue(), args.out, "pekar_trace.csv")
    print(f"energy={result.energy!r} converged={result.converged}", file=sys.stderr)
    if args.check and not result.converged:
        return EXIT_CHECK
    return EXIT_OK


def cmd_units(args) -> int:
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.input}: {exc.strerror}") from None
    _emit(convert(read_descriptor(text)).to_text(), args.out, "units.txt")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pekarlab", description="Strong-coupling polaron laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="deviation records for one alpha")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="file or directory (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="alpha/t sweep with envelope fit")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--check", action="store_true", help="exit 4 unless the fit meets the configured bounds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="operator-inequality verdict table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="file or directory (default: stdout)")
    p.add_argument("--check", action="store_true", help="exit 4 on any unexpected verdict")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pekar", help="minimize the Pekar functional")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="trace file or directory (default: stdout)")
    p.add_argument("--check", action="store_true", help="exit 4 unless the minimizer converged")
    p.set_defaults(func=cmd_pekar)

    p = sub.add_parser("units", help="convert a unit descriptor to the other frame")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="file (default: stdout)")
    p.set_defaults(func=cmd_units)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
