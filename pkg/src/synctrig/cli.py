"""Command-line front end.

Subcommands: ``calibrate``, ``run``, ``sweep``, ``topology``. CSV files go
to ``--out``, else ``$SYNCTRIG_OUTPUT_DIR``, else the working directory.

Exit codes: 0 success, 1 usage or scenario error, 2 calibration failure,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from . import harness
from .calibration import cluster_stats, find_stable_region, write_taps_csv
from .errors import CalibrationError, ConfigurationError, InsufficientDataError, InvariantViolation
from .scenario import ScenarioError, load_scenario
from .topology import max_supported_awgs, resources_for_qubits
from .trigger import SKEW_BOUND, measure_skew, skew_summary, validate_reset_budget, write_run_csv

OUTPUT_ENV = "SYNCTRIG_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_CALIBRATION, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="synctrig", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="scenario TOML file")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        return p

    p = scenario_cmd("calibrate", "run the self-adaptive tap scan and commit a tap")
    p.add_argument("--full-scale", action="store_true", help="50,000 probe pulses per tap")
    p = scenario_cmd("run", "calibrate, then play the trigger schedule to all slaves")
    p.add_argument("--uncalibrated", action="store_true", help="skip calibration; chain stays at tap 0")
    p.add_argument("--full-scale", action="store_true", help="50,000 probe pulses per tap")
    p = scenario_cmd("sweep", "per-tap metastability probability")
    p.add_argument("--long", action="store_true",
                   help="10^6 probe pulses at 800 ns per tap (slow)")

    p = sub.add_parser("topology", help="fan-out capacity and qubit resource arithmetic")
    p.add_argument("--fanout", type=_positive_int, help="outputs per fan-out device")
    p.add_argument("--levels", type=_non_negative_int, help="buffer stages below the root")
    p.add_argument("--qubits", type=_positive_int, help="number of qubits")
    return parser


def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, writer, *payload) -> None:
    buf = io.StringIO()
    writer(*payload, buf)
    path.write_bytes(buf.getvalue().encode("ascii"))


def _print_calibration(result) -> None:
    r = result.region
    print(f"stable_region: {r.start_tap}-{r.end_tap} ({r.length} taps)")
    print(f"committed_tap: {result.committed_tap}")
    print(f"committed_delay_fs: {result.chain.delay_at(result.committed_tap)}")
    print(f"flagged_taps: {int(result.scan.error_flags.sum())}")


def _load(args):
    scenario = load_scenario(args.scenario)
    if getattr(args, "full_scale", False):
        scenario = harness.full_scale(scenario)
    return scenario


def cmd_calibrate(args) -> int:
    session = harness.Session.open(_load(args))
    out = _out_dir(args)
    try:
        result = harness.calibrate(session)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    _write(out / "taps.csv", write_taps_csv, result.scan)
    _print_calibration(result)
    print("self_adapt_complete: yes")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args)
    session = harness.Session.open(scenario)
    out = _out_dir(args)
    warning = validate_reset_budget(scenario.trigger)
    if warning:
        print(f"warning: {warning}", file=sys.stderr)
    try:
        calibration, report = harness.run(session, uncalibrated=args.uncalibrated)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    if calibration is not None:
        _write(out / "taps.csv", write_taps_csv, calibration.scan)
        _print_calibration(calibration)
    else:
        print("calibration: bypassed (--uncalibrated), tap 0")
    _write(out / "run.csv", write_run_csv, report)

    print(f"awgs: {len(report.traces)}")
    print(f"pulses: {len(report.schedule)}")
    summary_rows = []
    try:
        max_skew, per_pulse = measure_skew(report)
    except InsufficientDataError as exc:
        print(f"skew: insufficient data ({exc})")
    else:
        stats = skew_summary(per_pulse)
        verdict = "yes" if max_skew <= SKEW_BOUND else "no"
        print(f"max_skew_fs: {max_skew}")
        print(f"max_skew <= 25 ps: {verdict}")
        for key in ("p50_fs", "p90_fs", "p99_fs"):
            print(f"skew_{key}: {stats[key]}")
        print(f"skew_within_25ps_fraction: {stats['within_bound_fraction']:.6f}")
        summary_rows = [(k, v if isinstance(v, int) else f"{v:.6f}") for k, v in stats.items()]
    total = sum(report.metastable_events.values())
    print(f"metastable_events: {total}")
    for awg in sorted(report.metastable_events):
        print(f"  awg {awg}: metastable={report.metastable_events[awg]} "
              f"jitter_flag={int(report.jitter_flags[awg])}")
    flagged = [awg for awg, f in sorted(report.jitter_flags.items()) if f]
    print(f"jitter_flags: {', '.join(map(str, flagged)) if flagged else 'none'}")

    def write_summary(rows, buf):
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("statistic", "value"))
        w.writerows(rows)
        w.writerow(("metastable_events", total))
        w.writerow(("jitter_flagged_awgs", len(flagged)))

    _write(out / "run_summary.csv", write_summary, summary_rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    session = harness.Session.open(_load(args))
    out = _out_dir(args)
    scan = harness.sweep(session, long_mode=args.long)

    def write_sweep(scan, buf):
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("tap", "total_delay_fs", "error_count", "intervals", "metastable_probability"))
        for tap in range(len(scan)):
            w.writerow((tap, int(scan.total_delays[tap]), int(scan.error_counts[tap]),
                        scan.intervals_per_tap, f"{scan.probabilities[tap]:.6f}"))

    _write(out / "sweep.csv", write_sweep, scan)
    stats = cluster_stats(scan)
    print(f"clusters: {len(stats.clusters)}")
    for (start, end), width in zip(stats.clusters, stats.widths):
        print(f"  taps {start}-{end} width {width}")
    if stats.spacings:
        print("cluster_spacing_taps: " + ", ".join(f"{s:g}" for s in stats.spacings))
    if stats.clusters:
        step = session.scenario.chain.step_per_modification
        print(f"mean_cluster_width_taps: {stats.mean_width:g}")
        print(f"window_estimate_fs: {round(stats.mean_width * step)}")
    try:
        region = find_stable_region(scan)
        print(f"stable_region: {region.start_tap}-{region.end_tap}")
    except CalibrationError:
        print("stable_region: none")
    return EXIT_OK


def cmd_topology(args) -> int:
    if args.qubits is None and args.fanout is None and args.levels is None:
        raise UsageError("give --fanout/--levels and/or --qubits")
    if (args.fanout is None) != (args.levels is None):
        raise UsageError("--fanout and --levels go together")
    if args.fanout is not None:
        print(f"fanout_width: {args.fanout}")
        print(f"fanout_levels: {args.levels}")
        print(f"max_supported_awgs: {max_supported_awgs(args.fanout, args.levels)}")
    if args.qubits is not None:
        awgs, adcs = resources_for_qubits(args.qubits)
        print(f"qubits: {args.qubits}")
        print(f"awgs: {awgs}")
        print(f"adcs: {adcs}")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "sweep": cmd_sweep, "topology": cmd_topology}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"synctrig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, ConfigurationError) as exc:
        print(f"synctrig: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"synctrig: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
