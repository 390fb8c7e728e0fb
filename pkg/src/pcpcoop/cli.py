"""Command-line entry point: ``pcpcoop {settle,forecast,simulate,analyze,synth}``.

Exit status is 0 on success, 1 for invalid arguments or values and 2 for
unusable input data. Files are written atomically, so a failed run never
leaves a partial output behind. Every command prints a one-line summary on
standard output; when a CSV is streamed to standard output instead of a
file, the summary goes to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import analysis, forecast, simulation
from ._io import atomic_write_bytes, csv_bytes
from .exceptions import DataError, ParseError, PcpError, SettlementInconsistencyError, ValidationError
from .market_data import (
    DEFAULT_START,
    ScenarioConfig,
    aggregate_load,
    format_timestamp,
    load_profiles_table,
    synth_loads,
    synth_prices,
    write_price_csv,
    write_profiles_csv,
)
from .settlement import HourOutcome, settle

log = logging.getLogger("pcpcoop")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DATA = 2

SETTLE_SCHEMA = """scenario file (JSON):
  {"p_d": 30, "p_r": 20,
   "consumers": [{"id": "a", "l_e": 30, "l_r": 40}, ...]}
output CSV: consumer_id,case,l_e,l_r,payment"""

FORECAST_SCHEMA = """input: loads CSV with header timestamp,consumer_id,load_mwh (long format,
one row per consumer-hour, gap-free). The cooperative aggregate is forecast
unless --consumer picks one profile.
output CSV: timestamp,actual,predicted"""

SIMULATE_SCHEMA = """config file (INI), section [scenario], keys:
  num_consumers, horizon_hours, num_rounds, mape_range (low, high), rng_seed,
  balance_tolerance, deviation_tolerance, num_buckets, warmup_hours,
  forecast_window, mean_da, rt_sigma, load_noise, prices_path, loads_path,
  write_samples
Flags override the file; the file overrides built-in defaults.
outputs in --out:
  summary.csv      bucket,scheme,median,std,p5,p25,p75,p95,mape,count
  confidence.csv   day,bucket,mean_rho  (bucket 'all' is the population mean)
  samples.csv.gz   scheme,bucket,relative_price  (with --samples)"""

ANALYZE_SCHEMA = """output CSV by mode:
  sweep     x,y,value,stderr  x = individual deviation (MWh), y = real-time minus
            day-ahead price, value = relative price; stderr is 0
  truthful  x,value,stderr    x = announcement bias of consumer 0 (MWh)
  biased    x,y,value,stderr  x = expected aggregate deviation, y = expected
            individual deviation (MWh)
  dominant  x,value,stderr    x = confidence of consumer 0"""

SYNTH_SCHEMA = """outputs in --out:
  prices.csv  timestamp,day_ahead,real_time
  loads.csv   timestamp,consumer_id,load_mwh
With --config the generator uses the scenario's seed and settings, so the
files hold the same data a synthetic 'simulate' run uses."""


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> Parser:
    parser = Parser(prog="pcpcoop", description="Predictive cooperative electricity procurement toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only errors on standard error")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("settle", help="settle one hour for a set of consumers",
                       epilog=SETTLE_SCHEMA, formatter_class=fmt)
    p.add_argument("scenario", help="JSON scenario file")
    p.add_argument("--out", help="CSV output file (default: standard output)")
    p.add_argument("--decimals", type=int, default=2, help="decimals for loads and payments (default 2)")
    p.add_argument("--tolerance", type=float, default=1e-9, help="deviation sign tolerance in MWh")

    p = sub.add_parser("forecast", help="walk-forward load forecast and its MAPE",
                       epilog=FORECAST_SCHEMA, formatter_class=fmt)
    p.add_argument("loads", help="loads CSV")
    p.add_argument("--lead", type=int, choices=(12, 24, 36), default=24, help="forecast lead in hours")
    p.add_argument("--mode", choices=("dynamic", "fixed"), default="dynamic",
                   help="re-fit parameters daily (dynamic) or keep the first fit (fixed)")
    p.add_argument("--window", type=int, default=forecast.REFIT_WINDOW, help="fitting window in hours")
    p.add_argument("--consumer", help="forecast one consumer instead of the aggregate")
    p.add_argument("--out", help="CSV output file (default: standard output)")

    p = sub.add_parser("simulate", help="multi-round cooperative versus real-time pricing simulation",
                       epilog=SIMULATE_SCHEMA, formatter_class=fmt)
    p.add_argument("--config", help="INI scenario file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--consumers", type=int, dest="num_consumers", help="number of consumers")
    p.add_argument("--hours", type=int, dest="horizon_hours", help="reported horizon in hours (whole days)")
    p.add_argument("--rounds", type=int, dest="num_rounds", help="number of rounds")
    p.add_argument("--seed", type=int, dest="rng_seed", help="master random seed")
    p.add_argument("--buckets", type=int, dest="num_buckets", help="number of MAPE buckets")
    p.add_argument("--mape-range", type=_floats, dest="mape_range", metavar="LOW,HIGH",
                   help="announcement MAPE range")
    p.add_argument("--warmup", type=int, dest="warmup_hours", help="forecaster warm-up hours")
    p.add_argument("--prices", dest="prices_path", help="prices CSV (with --loads)")
    p.add_argument("--loads", dest="loads_path", help="loads CSV (with --prices)")
    p.add_argument("--samples", action="store_const", const=True, dest="write_samples",
                   help="also write samples.csv.gz")

    p = sub.add_parser("analyze", help="price sweeps and Monte Carlo incentive checks",
                       epilog=ANALYZE_SCHEMA, formatter_class=fmt)
    p.add_argument("mode", choices=("sweep", "truthful", "biased", "dominant"))
    p.add_argument("--out", help="CSV output file (default: standard output)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--draws", type=int, default=100_000, help="Monte Carlo draws per grid point")
    p.add_argument("--consumers", type=int, default=20, help="population size")
    p.add_argument("--mean-load", type=float, default=10.0, help="mean load per consumer (MWh)")
    p.add_argument("--load-mape", type=float, default=0.05, help="load noise as mean absolute relative error")
    p.add_argument("--forecast-sd", type=float, default=0.0, help="relative sd of the cooperative forecast")
    p.add_argument("--rho", type=float, default=0.5, help="confidence of consumer 0")
    p.add_argument("--others-rho", type=float, default=0.5, help="confidence of the other consumers")
    p.add_argument("--others-bias", type=float, default=None,
                   help="relative announcement bias of the others (default 0, 0.1 for dominant)")
    p.add_argument("--p-d", type=float, default=30.0, help="day-ahead price ($/MWh)")
    p.add_argument("--price-sd", type=float, default=5.0, help="real-time price sd ($/MWh)")
    p.add_argument("--grid", type=_floats, help="x grid (comma-separated, write --grid=-1,0,1 for negatives); mode-specific default")
    p.add_argument("--grid-y", type=_floats, help="y grid for biased mode")
    p.add_argument("--aggregate", type=float, default=0.0,
                   help="sweep: aggregate deviation when consumer 0 is on its bid (MWh)")
    p.add_argument("--rpd", type=_floats, default=[10.0, 0.0, -10.0],
                   help="sweep: real-time minus day-ahead price scenarios")
    p.add_argument("--target-se", type=float, help="warn when a standard error exceeds this")

    p = sub.add_parser("synth", help="write synthetic prices and loads",
                       epilog=SYNTH_SCHEMA, formatter_class=fmt)
    p.add_argument("--config", help="INI scenario file supplying defaults")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--consumers", type=int, help="number of consumers (default 100)")
    p.add_argument("--hours", type=int, help="total hours (default: warm-up plus horizon of the scenario)")
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--mean-da", type=float, help="mean day-ahead price (default 30)")
    p.add_argument("--rt-sigma", type=float, help="real-time price noise sd (default 5)")
    p.add_argument("--noise", type=float, help="relative hourly load noise (default 0.05)")
    p.add_argument("--start", default=str(DEFAULT_START), help="first timestamp (default %(default)s)")
    return parser


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _emit_csv(header, rows, out: str | None) -> bool:
    """Write a CSV to ``out`` atomically or to standard output. Returns True if a file was written."""
    payload = csv_bytes(header, rows)
    if out:
        atomic_write_bytes(out, payload)
        return True
    sys.stdout.write(payload.decode("utf-8"))
    sys.stdout.flush()
    return False


def _summary(line: str, to_file: bool) -> None:
    print(line, file=sys.stdout if to_file else sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def read_settle_scenario(path) -> tuple[list[str], HourOutcome]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    try:
        consumers = doc["consumers"]
        ids = [str(c.get("id", k)) for k, c in enumerate(consumers)]
        le = [float(c["l_e"]) for c in consumers]
        lr = [float(c["l_r"]) for c in consumers]
        outcome = HourOutcome(le, lr, float(doc["p_d"]), float(doc["p_r"]))
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc.args[0]!r}") from None
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: malformed scenario ({exc})") from None
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: consumer ids must be unique")
    return ids, outcome


def cmd_settle(args) -> int:
    ids, outcome = read_settle_scenario(args.scenario)
    result = settle(outcome, args.tolerance)
    d = args.decimals
    rows = [
        (cid, label, f"{le:.{d}f}", f"{lr:.{d}f}", f"{pay:.{d}f}")
        for cid, label, le, lr, pay in zip(ids, result.case_labels, outcome.effective,
                                           outcome.realtime, result.individual)
    ]
    to_file = _emit_csv(("consumer_id", "case", "l_e", "l_r", "payment"), rows, args.out)
    _summary(
        f"total={result.total_payment:.{d}f} sum={result.individual.sum():.{d}f} "
        f"aggregate_deviation={result.aggregate_deviation:.{d}f} consumers={len(ids)}",
        to_file,
    )
    return EXIT_OK


def cmd_forecast(args) -> int:
    stamps, profiles = load_profiles_table(args.loads)
    if args.consumer is None:
        y = aggregate_load(profiles)
    else:
        match = [p for p in profiles if p.consumer_id == args.consumer]
        if not match:
            raise ValidationError(f"consumer {args.consumer!r} is not in {args.loads}")
        y = match[0].loads
    hod = (stamps - stamps.astype("datetime64[D]")).astype(int)
    targets, preds = forecast.rolling_forecast(y, hod, args.lead, args.mode, args.window)
    actual = y[targets]
    rows = ((format_timestamp(stamps[t]), f"{a:.6f}", f"{p:.6f}") for t, a, p in zip(targets, actual, preds))
    to_file = _emit_csv(("timestamp", "actual", "predicted"), rows, args.out)
    _summary(f"MAPE={forecast.mape(actual, preds):.6f} lead={args.lead} mode={args.mode} "
             f"points={len(targets)}", to_file)
    return EXIT_OK


SCENARIO_FLAGS = ("num_consumers", "horizon_hours", "num_rounds", "rng_seed", "num_buckets", "mape_range",
                  "warmup_hours", "prices_path", "loads_path", "write_samples")


def scenario_from_args(args) -> ScenarioConfig:
    overrides = {k: getattr(args, k, None) for k in SCENARIO_FLAGS}
    if overrides.get("mape_range") is not None:
        if len(overrides["mape_range"]) != 2:
            raise ValidationError("--mape-range takes exactly two numbers")
        overrides["mape_range"] = tuple(overrides["mape_range"])
    if args.config:
        return ScenarioConfig.from_file(args.config, **overrides)
    return ScenarioConfig().replace(**overrides)


def cmd_simulate(args) -> int:
    config = scenario_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    report = simulation.run_scenario(config)
    simulation.write_report(report, args.out)
    better = sum(report.row("PCP", b).std < report.row("RTP", b).std for b in range(len(report.bucket_mape)))
    pcp_med = np.median([report.row("PCP", b).median for b in range(len(report.bucket_mape))])
    rtp_med = np.median([report.row("RTP", b).median for b in range(len(report.bucket_mape))])
    print(f"buckets={len(report.bucket_mape)} samples={report.total_samples} "
          f"pcp_median={pcp_med:.4f} rtp_median={rtp_med:.4f} "
          f"pcp_std_below_rtp={better}/{len(report.bucket_mape)} forecast_mape={report.forecast_mape:.4f}")
    return EXIT_OK


def _population(args, others_bias_default: float) -> analysis.PopulationSpec:
    bias = others_bias_default if args.others_bias is None else args.others_bias
    return analysis.PopulationSpec(
        num_consumers=args.consumers, mean_load=args.mean_load, load_mape=args.load_mape,
        forecast_sd=args.forecast_sd, consumer_rho=args.rho, others_rho=args.others_rho,
        others_bias=bias, p_d=args.p_d, price_sd=args.price_sd,
    )


def cmd_analyze(args) -> int:
    fmt = "{:.6f}".format
    if args.mode == "sweep":
        grid = args.grid or list(analysis.default_sweep().individual_deviation)
        spec = analysis.SweepSpec((args.aggregate,), grid, tuple(args.rpd),
                                  base_effective=args.mean_load, p_d=args.p_d)
        curves = analysis.price_deviation_sweep(spec)
        rows, skipped, jumps = [], 0, 0
        for c in curves:
            skipped += int(c.skipped.sum())
            jumps += len(analysis.reducer_to_contributor_jumps(c))
            rows += [(fmt(x), fmt(c.rpd), fmt(v), fmt(0.0))
                     for x, v, s in zip(c.delta, c.relative_price, c.skipped) if not s]
        to_file = _emit_csv(("x", "y", "value", "stderr"), rows, args.out)
        _summary(f"curves={len(curves)} points={len(rows)} skipped={skipped} "
                 f"reducer_contributor_jumps={jumps}", to_file)
        return EXIT_OK

    if args.mode == "truthful":
        pop = _population(args, 0.0)
        grid = args.grid or analysis.bias_grid(pop)
        res = analysis.expected_price_mc(grid, pop, args.draws, args.seed, args.target_se)
        verdict = analysis.truthful_contract(res)
    elif args.mode == "dominant":
        pop = _population(args, 0.1)
        grid = args.grid or [0.0, 0.25, 0.5, 0.75, 1.0]
        res = analysis.dominant_strategy_check(grid, pop, args.draws, args.seed, args.target_se)
        verdict = analysis.dominant_contract(res)
    else:
        pop = _population(args, 0.0)
        xs = args.grid or [-5.0, 0.0, 5.0]
        ys = args.grid_y or [-2.0, -1.0, 0.0, 1.0, 2.0]
        surf = analysis.biased_coop_mc(xs, ys, pop, args.draws, args.seed, args.target_se)
        rows = [(fmt(a), fmt(d), fmt(surf.value[i, j]), fmt(surf.stderr[i, j]))
                for i, a in enumerate(surf.aggregate) for j, d in enumerate(surf.individual)]
        to_file = _emit_csv(("x", "y", "value", "stderr"), rows, args.out)
        verdict = analysis.feedback_contract(surf)
        _summary(f"points={len(rows)} draws={args.draws} feedback_ordering="
                 + ",".join(f"{a:g}:{'pass' if ok else 'fail'}" for a, ok in verdict.items()), to_file)
        return EXIT_OK

    rows = [(fmt(x), fmt(v), fmt(s)) for x, v, s in zip(res.x, res.value, res.stderr)]
    to_file = _emit_csv(("x", "value", "stderr"), rows, args.out)
    checks = " ".join(f"{k}={'pass' if ok else 'fail'}" for k, ok in verdict.items())
    _summary(f"points={len(rows)} draws={args.draws} argmin_x={res.x[res.argmin]:g} {checks}", to_file)
    return EXIT_OK


def cmd_synth(args) -> int:
    base = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    seed = base.rng_seed if args.seed is None else args.seed
    consumers = base.num_consumers if args.consumers is None else args.consumers
    hours = base.total_hours if args.hours is None else args.hours
    mean_da = base.mean_da if args.mean_da is None else args.mean_da
    rt_sigma = base.rt_sigma if args.rt_sigma is None else args.rt_sigma
    noise = base.load_noise if args.noise is None else args.noise
    try:
        start = np.datetime64(args.start, "h")
    except ValueError:
        raise ValidationError(f"--start: cannot parse {args.start!r}") from None
    prices = synth_prices(hours, mean_da, rt_sigma, seed=simulation.child_seed(seed, simulation.PRICE_TAG),
                          start=start)
    profiles = synth_loads(consumers, hours, seed=simulation.child_seed(seed, simulation.LOAD_TAG),
                           noise=noise, start=start)
    os.makedirs(args.out, exist_ok=True)
    write_price_csv(os.path.join(args.out, "prices.csv"), prices)
    write_profiles_csv(os.path.join(args.out, "loads.csv"), prices.timestamps, profiles)
    print(f"consumers={consumers} hours={hours} seed={seed} out={args.out}")
    return EXIT_OK


COMMANDS = {
    "settle": cmd_settle,
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, SettlementInconsistencyError, OSError) as exc:
        print(f"pcpcoop {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValidationError as exc:
        print(f"pcpcoop {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PcpError as exc:
        print(f"pcpcoop {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
