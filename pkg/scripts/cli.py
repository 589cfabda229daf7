#!/usr/bin/env python3
"""
Command-line front end for the customer-base analysis toolkit.

Subcommands:
  summarize       transaction log -> RFM table (or calibration/holdout table)
  fit-bgnbd       RFM table -> BG/NBD parameter document (JSON)
  fit-gg          RFM table -> Gamma-Gamma parameter document (JSON)
  predict         RFM table + both parameter documents -> per-customer predictions
  churn-timeline  one customer's P(alive) over time
  matrix          frequency x recency grid of P(alive) or expected purchases
  simulate        synthetic transaction log (+ latent truth table)
  evaluate        repeat-frequency histogram or calibration/holdout comparison

Usage:
  python -m scripts.cli simulate --n-customers 5000 --horizon 78 --output sim.csv
  python -m scripts.cli summarize --input sim.csv --observation-end 2022-06-20 --output rfm.csv
  python -m scripts.cli fit-bgnbd --rfm rfm.csv --output bgnbd.json
  python -m scripts.cli fit-gg --rfm rfm.csv --output gg.json
  python -m scripts.cli predict --rfm rfm.csv --bgnbd bgnbd.json --gg gg.json --horizon 30

Primary outputs go to --output (stdout when omitted); progress and the
resolved configuration go to stderr. Values from --config JSON are
overridden by flags given on the command line.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from scripts import __version__
from scripts.bgnbd import BgnbdParams, fit_bgnbd, frequency_recency_matrix
from scripts.clv import churn_timeline, predict_customers, segment_customers
from scripts.config import PipelineConfig, load_config_file, resolve_config, to_utc
from scripts.errors import ClvError, FormatError, InputError
from scripts.evaluate import calibration_holdout_eval, repeat_frequency_comparison
from scripts.gammagamma import GgParams, fit_gg
from scripts.ingest import (
    HOLDOUT_COLUMNS,
    calibration_holdout_summary,
    parse_transactions,
    purchase_days,
    read_holdout,
    read_rfm,
    summarize_rfm,
)
from scripts.numerics import OptimizerConfig
from scripts.simulate import SimulationConfig, format_transactions, simulate_customers, to_transaction_log


# Subcommand-specific defaults; PipelineConfig carries the shared ones.
OPTION_DEFAULTS = {
    "summarize": {},
    "fit-bgnbd": {"rfm": None, "simplex_scale": 0.1, "tolerance": 1e-8, "max_iterations": 10_000, "restarts": 1},
    "fit-gg": {"rfm": None, "simplex_scale": 0.1, "tolerance": 1e-8, "max_iterations": 10_000, "restarts": 1},
    "predict": {"rfm": None, "bgnbd": None, "gg": None, "segments": None},
    "churn-timeline": {"user_id": None, "bgnbd": None, "grid_step": 1.0, "as_of": None},
    "matrix": {
        "bgnbd": None, "mode": "p_alive", "max_frequency": 20, "max_recency": 60.0,
        "age": 60.0, "recency_step": 1.0, "matrix_horizon": 1.0,
    },
    "simulate": {
        "n_customers": 5000, "sim_horizon": 78.0, "r": 0.25, "alpha": 4.5, "a": 0.8, "b": 2.4,
        "p": None, "q": None, "gamma": None, "start": "2022-01-01", "acquisition_window": 0.0,
        "death_at_acquisition": False, "latent_output": None,
    },
    "evaluate": {
        "kind": "frequency", "rfm": None, "holdout": None, "bgnbd": None, "sim_horizon": None,
        "multiplier": 10, "max_bin": 7, "metrics_output": None,
    },
}


def log(message: str = "") -> None:
    print(message, file=sys.stderr)


# --- Argument parsing ---------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config', help='JSON file of option overrides (flags win)')
    p.add_argument('--output', help='Primary output path (default: stdout)')
    p.add_argument('--format', choices=['text', 'json'], help='Output format (default: text)')
    p.add_argument('--seed', type=int, help='Random seed (default: 42)')
    p.add_argument('--time-unit-days', dest='time_unit_days', type=float,
                   help='Length of one model time unit in days (default: 1)')
    p.add_argument('--stamp', action='store_true', default=None,
                   help='Embed a UTC timestamp in the run metadata')


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument('--input', help='Transaction log (delimiter-separated text with header)')
    p.add_argument('--delimiter', help='Field delimiter (default: ,)')
    p.add_argument('--user-col', dest='user_col', help='Column holding user ids')
    p.add_argument('--txn-col', dest='txn_col', help='Column holding transaction ids')
    p.add_argument('--time-col', dest='time_col', help='Column holding ISO-8601 timestamps')
    p.add_argument('--value-col', dest='value_col', help='Column holding transaction values')


def _add_optimizer(p: argparse.ArgumentParser) -> None:
    p.add_argument('--rfm', help='RFM table written by `summarize`')
    p.add_argument('--penalizer', type=float, help='L2 penalty on log-parameters (default: 0)')
    p.add_argument('--tolerance', type=float, help='Simplex stopping tolerance (default: 1e-8)')
    p.add_argument('--max-iterations', dest='max_iterations', type=int, help='Iteration budget (default: 10000)')
    p.add_argument('--restarts', type=int, help='Simplex restarts from the best point (default: 1)')
    p.add_argument('--simplex-scale', dest='simplex_scale', type=float, help='Initial simplex edge (default: 0.1)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='clv', description="BG/NBD + Gamma-Gamma customer-base analysis")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('summarize', help='Transaction log -> RFM table')
    _add_common(p)
    _add_input(p)
    p.add_argument('--observation-end', dest='observation_end', help='End of observation (ISO-8601)')
    p.add_argument('--calibration-end', dest='calibration_end',
                   help='End of calibration; emits a calibration/holdout table instead')

    for name in ('fit-bgnbd', 'fit-gg'):
        p = sub.add_parser(name, help=f'Fit the {"BG/NBD" if name == "fit-bgnbd" else "Gamma-Gamma"} model')
        _add_common(p)
        _add_optimizer(p)
        if name == 'fit-gg':
            p.add_argument('--correlation-threshold', dest='correlation_threshold', type=float,
                           help='Warn when |corr(frequency, monetary)| exceeds this (default: 0.1)')

    p = sub.add_parser('predict', help='Per-customer P(alive), expected transactions and CLV')
    _add_common(p)
    p.add_argument('--rfm', help='RFM table written by `summarize`')
    p.add_argument('--bgnbd', help='BG/NBD parameter document')
    p.add_argument('--gg', help='Gamma-Gamma parameter document')
    p.add_argument('--horizon', type=float, help='Prediction horizon in time units (default: 30)')
    p.add_argument('--discount-rate', dest='discount_rate', type=float, help='Discount rate per time unit (default: 0)')
    p.add_argument('--segments', type=int, help='Append a CLV quantile segment column with this many groups')

    p = sub.add_parser('churn-timeline', help="One customer's P(alive) over time")
    _add_common(p)
    _add_input(p)
    p.add_argument('--user-id', dest='user_id', help='Customer to trace')
    p.add_argument('--bgnbd', help='BG/NBD parameter document')
    p.add_argument('--grid-step', dest='grid_step', type=float, help='Grid spacing in time units (default: 1)')
    p.add_argument('--as-of', dest='as_of', help='Timeline end (ISO-8601; default: --observation-end or last purchase)')
    p.add_argument('--observation-end', dest='observation_end', help='End of observation (ISO-8601)')

    p = sub.add_parser('matrix', help='Frequency x recency grid')
    _add_common(p)
    p.add_argument('--bgnbd', help='BG/NBD parameter document')
    p.add_argument('--mode', choices=['p_alive', 'expected_purchases'])
    p.add_argument('--max-frequency', dest='max_frequency', type=int)
    p.add_argument('--max-recency', dest='max_recency', type=float)
    p.add_argument('--age', type=float, help='Customer age T for every cell')
    p.add_argument('--recency-step', dest='recency_step', type=float)
    p.add_argument('--horizon', dest='matrix_horizon', type=float,
                   help='Expected-purchases horizon in time units (default: 1)')

    p = sub.add_parser('simulate', help='Synthetic transaction log')
    _add_common(p)
    p.add_argument('--n-customers', dest='n_customers', type=int)
    p.add_argument('--horizon', dest='sim_horizon', type=float, help='Observation length T in time units')
    for name in ('r', 'alpha', 'a', 'b'):
        p.add_argument(f'--{name}', type=float, help=f'BG/NBD {name}')
    p.add_argument('--p', type=float, help='Gamma-Gamma p (spend is simulated when p, q, gamma are all given)')
    p.add_argument('--q', type=float, help='Gamma-Gamma q')
    p.add_argument('--gamma', type=float, help='Gamma-Gamma gamma')
    p.add_argument('--start', help='Calendar date of time 0 (default: 2022-01-01)')
    p.add_argument('--acquisition-window', dest='acquisition_window', type=float,
                   help='Spread first purchases uniformly over this many time units (default: 0)')
    p.add_argument('--death-at-acquisition', dest='death_at_acquisition', action='store_true', default=None,
                   help='Allow dropout right after the first purchase too')
    p.add_argument('--latent-output', dest='latent_output', help='Write the latent (lambda, p) table here')

    p = sub.add_parser('evaluate', help='Model validation')
    _add_common(p)
    p.add_argument('--kind', choices=['frequency', 'holdout'])
    p.add_argument('--rfm', help='RFM table (kind=frequency)')
    p.add_argument('--holdout', help='Calibration/holdout table (kind=holdout)')
    p.add_argument('--bgnbd', help='BG/NBD parameter document')
    p.add_argument('--horizon', dest='sim_horizon', type=float,
                   help='Simulated observation length (kind=frequency; default: max T)')
    p.add_argument('--multiplier', type=int, help='Simulated population multiplier (default: 10)')
    p.add_argument('--max-bin', dest='max_bin', type=int, help='Last frequency bin, shown as "N+" (default: 7)')
    p.add_argument('--metrics-output', dest='metrics_output', help='Write holdout metrics JSON here')
    return parser


def resolve(args: argparse.Namespace):
    """Merge defaults < --config file < explicit flags."""
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ('command', 'config')}
    columns = {
        key: flags.pop(flag)
        for key, flag in (('user_id', 'user_col'), ('transaction_id', 'txn_col'),
                          ('timestamp', 'time_col'), ('value', 'value_col'))
        if flag in flags
    }
    if columns:
        flags['columns'] = columns
    file_values = load_config_file(args.config) if args.config else {}

    config = resolve_config(file_values, flags)
    options = dict(OPTION_DEFAULTS[args.command])
    for source in (file_values, flags):
        options.update({k: v for k, v in source.items() if k in options and v is not None})
    return config, options


# --- Output helpers -----------------------------------------------------------

def write_text(text: str, output) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def write_table(frame: pd.DataFrame, output, fmt: str, index: bool = False) -> None:
    if fmt == "json":
        if index:
            text = frame.to_json(orient="split", double_precision=15) + "\n"
        else:
            text = frame.to_json(orient="records", lines=True, double_precision=15)
            text = text if text.endswith("\n") else text + "\n"
    else:
        text = frame.to_csv(index=index, na_rep="", lineterminator="\n")
    write_text(text, output)


def write_json(doc, output) -> None:
    write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", output)


def write_metadata(command: str, config: PipelineConfig, options: dict, summary: dict) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "config": config.to_dict(),
        "options": options,
        "summary": summary,
    }
    if config.stamp:
        meta["timestamp"] = pd.Timestamp.now(tz="UTC").isoformat()
    text = json.dumps(meta, indent=2, sort_keys=True, default=str)
    if config.output:
        Path(f"{config.output}.meta.json").write_text(text + "\n", encoding="utf-8")
    else:
        log(text)


def _require(options: dict, *names: str) -> None:
    missing = [n for n in names if not options.get(n)]
    if missing:
        raise InputError(f"Missing required option(s): {', '.join('--' + n.replace('_', '-') for n in missing)}")


def _read_document(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not a JSON parameter document: {exc}") from exc


def _load_bgnbd(path) -> BgnbdParams:
    return BgnbdParams.from_dict(_read_document(path))


def _load_gg(path) -> GgParams:
    return GgParams.from_dict(_read_document(path))


def _optimizer(options: dict) -> OptimizerConfig:
    return OptimizerConfig(
        initial_simplex_scale=float(options["simplex_scale"]),
        tolerance=float(options["tolerance"]),
        max_iterations=int(options["max_iterations"]),
        restarts=int(options["restarts"]),
    )


def _read_log(config: PipelineConfig):
    if not config.input:
        raise InputError("Missing required option: --input")
    log_ = parse_transactions(config.input, config.columns, config.delimiter)
    log(f"Parsed {len(log_)} transactions ({log_.n_rejected} rejected rows)")
    for row in log_.rejected.itertuples(index=False):
        log(f"  [REJECTED] line {row.line}: {row.reason}")
    return log_


# --- Subcommands --------------------------------------------------------------

def cmd_summarize(config: PipelineConfig, options: dict) -> dict:
    log_ = _read_log(config)
    unit = config.time_unit()
    if config.observation_end:
        observation_end = to_utc(config.observation_end)
    elif len(log_):
        observation_end = log_.frame["timestamp"].max()
    else:
        observation_end = pd.Timestamp.now(tz="UTC")

    summary = {"n_transactions": len(log_), "n_rejected": log_.n_rejected}
    if config.calibration_end:
        split = calibration_holdout_summary(log_, config.calibration_end, observation_end, unit)
        write_table(split.rows[HOLDOUT_COLUMNS], config.output, config.format)
        summary.update(n_customers=len(split.rows), n_excluded=split.n_excluded,
                       duration_holdout=split.duration_holdout)
        log(f"Calibration/holdout rows: {len(split.rows)} (excluded {split.n_excluded})")
    else:
        rfm = summarize_rfm(log_, observation_end, unit)
        write_table(rfm, config.output, config.format)
        summary.update(n_customers=len(rfm))
        log(f"RFM rows: {len(rfm)}")
    return summary


def cmd_fit_bgnbd(config: PipelineConfig, options: dict) -> dict:
    _require(options, "rfm")
    rfm = read_rfm(options["rfm"])
    log(f"Fitting BG/NBD on {len(rfm)} customers...")
    params = fit_bgnbd(rfm, _optimizer(options), config.penalizer)
    write_json(params.to_dict(), config.output)
    log(params.coefficient_table().to_string(index=False))
    return {"n_customers": params.n_customers, "log_likelihood": params.log_likelihood}


def cmd_fit_gg(config: PipelineConfig, options: dict) -> dict:
    _require(options, "rfm")
    rfm = read_rfm(options["rfm"])
    log(f"Fitting Gamma-Gamma on the repeat customers of {len(rfm)}...")
    params = fit_gg(rfm, _optimizer(options), config.correlation_threshold, config.penalizer)
    write_json(params.to_dict(), config.output)
    log(params.coefficient_table().to_string(index=False))
    return {"n_customers": params.n_customers, "correlation": params.fit_config.get("correlation")}


def cmd_predict(config: PipelineConfig, options: dict) -> dict:
    _require(options, "rfm", "bgnbd", "gg")
    rfm = read_rfm(options["rfm"])
    predictions, provenance = predict_customers(
        _load_bgnbd(options["bgnbd"]), _load_gg(options["gg"]), rfm, config.horizon, config.discount_rate
    )
    if options.get("segments"):
        predictions = segment_customers(predictions, int(options["segments"]))
    write_table(predictions, config.output, config.format)
    log(f"Predicted {len(predictions)} customers; spend sources: {provenance}")
    return {"n_customers": len(predictions), "value_sources": provenance}


def cmd_churn_timeline(config: PipelineConfig, options: dict) -> dict:
    _require(options, "user_id", "bgnbd")
    log_ = _read_log(config)
    unit = config.time_unit()
    times, origin = purchase_days(log_, options["user_id"], unit)
    as_of_raw = options.get("as_of") or config.observation_end
    as_of = float((to_utc(as_of_raw) - origin) / unit) if as_of_raw else float(times[-1])
    timeline = churn_timeline(_load_bgnbd(options["bgnbd"]), times, float(options["grid_step"]), as_of)
    write_table(timeline, config.output, config.format)
    return {"n_points": len(timeline), "n_purchases": int(timeline["is_purchase"].sum()),
            "origin": origin.isoformat()}


def cmd_matrix(config: PipelineConfig, options: dict) -> dict:
    _require(options, "bgnbd")
    grid = frequency_recency_matrix(
        _load_bgnbd(options["bgnbd"]),
        int(options["max_frequency"]),
        float(options["max_recency"]),
        float(options["age"]),
        mode=options["mode"],
        horizon_t=float(options["matrix_horizon"]),
        recency_step=float(options["recency_step"]),
    )
    write_table(grid, config.output, config.format, index=True)
    return {"shape": list(grid.shape), "mode": options["mode"]}


def cmd_simulate(config: PipelineConfig, options: dict) -> dict:
    sim_config = SimulationConfig(
        n_customers=int(options["n_customers"]),
        horizon_T=float(options["sim_horizon"]),
        r=float(options["r"]), alpha=float(options["alpha"]),
        a=float(options["a"]), b=float(options["b"]),
        p_shape=options["p"], q_shape=options["q"], gamma_scale=options["gamma"],
        seed=int(config.seed),
        acquisition_window=float(options["acquisition_window"]),
        death_at_acquisition=bool(options["death_at_acquisition"]),
    )
    log(f"Simulating {sim_config.n_customers} customers over {sim_config.horizon_T} time units...")
    result = simulate_customers(sim_config, progress=True)
    transactions = to_transaction_log(result, options["start"], config.time_unit())
    write_table(format_transactions(transactions), config.output, config.format)
    if options.get("latent_output"):
        write_table(result.latent, options["latent_output"], config.format)
    observation_end = to_utc(options["start"]) + sim_config.horizon_T * config.time_unit()
    return {"n_transactions": len(transactions), "observation_end": observation_end.isoformat()}


def cmd_evaluate(config: PipelineConfig, options: dict) -> dict:
    _require(options, "bgnbd")
    params = _load_bgnbd(options["bgnbd"])
    if options["kind"] == "frequency":
        _require(options, "rfm")
        rfm = read_rfm(options["rfm"])
        horizon = options.get("sim_horizon") or float(rfm["T"].max())
        table = repeat_frequency_comparison(
            rfm, params, float(horizon), seed=int(config.seed),
            n_sim_multiplier=int(options["multiplier"]), max_bin=int(options["max_bin"]),
        )
        write_table(table, config.output, config.format)
        return {"n_customers": len(rfm), "sim_horizon": float(horizon)}

    _require(options, "holdout")
    rows = read_holdout(options["holdout"])
    result = calibration_holdout_eval(rows, params)
    metrics = result.metrics.to_dict()
    if config.format == "json":
        write_json({"groups": result.groups.to_dict(orient="records"), "metrics": metrics}, config.output)
    else:
        write_table(result.groups, config.output, config.format)
    if options.get("metrics_output"):
        write_json(metrics, options["metrics_output"])
    log(f"Holdout metrics: {metrics}")
    return {"metrics": metrics}


COMMANDS = {
    "summarize": cmd_summarize,
    "fit-bgnbd": cmd_fit_bgnbd,
    "fit-gg": cmd_fit_gg,
    "predict": cmd_predict,
    "churn-timeline": cmd_churn_timeline,
    "matrix": cmd_matrix,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def run_cli(argv=None) -> int:
    """Run one subcommand; 0 on success, 1 on domain failures, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        config, options = resolve(args)
        log("=" * 70)
        log(f"clv {args.command}")
        log("=" * 70)
        summary = COMMANDS[args.command](config, options)
        write_metadata(args.command, config, options, summary)
    except ClvError as exc:
        log(f"error [{exc.category}]: {exc}")
        return 1
    except OSError as exc:
        log(f"error [io]: {exc}")
        return 1
    return 0


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == '__main__':
    main()
