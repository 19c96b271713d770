"""Command-line entry point: ``slicerisk {simulate,estimate,oracle,bench,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import SWEEP_AXES, BenchConfig, run_benchmark, sensitivity_sweep, summarize, sweep_csv
from .estimate import PipelineConfig, PipelineError, empirical_risk, run_pipeline
from .queue import LifecycleTrace
from .simulate import ObservationSet, ScenarioSpec, observe, random_scenario, true_overload_risk

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURES = 2

log = logging.getLogger("slicerisk")


def _read_json(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


def _grid(text: str | None, r_max: float) -> np.ndarray:
    if text is None:
        return np.linspace(0.5 * r_max, 1.5 * r_max, 41)
    lo, hi, steps = text.split(",")
    return np.linspace(float(lo), float(hi), int(steps))


def _load_scenario(path, rng) -> ScenarioSpec:
    if path is None:
        return random_scenario(rng)
    return ScenarioSpec.from_json(Path(path).read_text())


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    scen_rng, obs_rng = rng.spawn(2)
    spec = _load_scenario(args.scenario, scen_rng)
    obs = observe(spec, args.n_obs, args.horizon, obs_rng)
    out = Path(args.out)
    _write(out, "scenario.json", spec.to_json())
    _write(out, "loads.csv", obs.loads_to_csv())
    _write(out, "trace.csv", obs.trace.to_csv())
    return EXIT_OK


def cmd_estimate(args) -> int:
    obs_dir = Path(args.obs) if args.obs else None
    loads_path = Path(args.loads) if args.loads else obs_dir / "loads.csv"
    trace_path = Path(args.trace) if args.trace else obs_dir / "trace.csv"
    obs = ObservationSet(LifecycleTrace.from_csv(trace_path.read_text()),
                         ObservationSet.loads_from_csv(loads_path.read_text()))
    config = PipelineConfig.from_dict(_read_json(args.config))
    n_max = args.n_max if args.n_max is not None else obs.trace.n_max
    thresholds = _grid(args.thresholds, args.r_max)
    model, curve = run_pipeline(obs, n_max, thresholds, config, np.random.default_rng(args.seed),
                                workers=args.threads)
    out = Path(args.out)
    _write(out, "model.json", model.to_json())
    _write(out, "risk.csv", curve.to_csv("p_overload_estimated"))
    _write(out, "risk_empirical.csv",
           empirical_risk(model, thresholds).to_csv("p_overload_empirical"))
    return EXIT_OK


def cmd_oracle(args) -> int:
    spec = ScenarioSpec.from_json(Path(args.scenario).read_text())
    thresholds = _grid(args.thresholds, spec.r_max)
    curve = true_overload_risk(spec, thresholds, args.mc_samples,
                               np.random.default_rng(args.seed), workers=args.threads)
    _write(Path(args.out), "true_risk.csv", curve.to_csv("p_overload"))
    return EXIT_OK


def _bench_config(args) -> BenchConfig:
    data = _read_json(args.config)
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
    return BenchConfig.from_dict(data)


def cmd_bench(args) -> int:
    config = _bench_config(args)
    result = run_benchmark(config, threads=args.threads)
    out = Path(args.out)
    _write(out, "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out, "trials.csv", result.trials_csv())
    _write(out, "risks.csv", result.risks_csv())
    _write(out, "summary.json", result.summary_json())
    _write(out, "histogram.csv", result.histogram_csv())
    if result.too_many_failures:
        log.error("%d of %d trials failed", result.summary["n_failed"], config.trials)
        return EXIT_FAILURES
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _bench_config(args)
    values = [float(v) for v in args.values.split(",")]
    cells = sensitivity_sweep(config, args.axis, values, threads=args.threads)
    out = Path(args.out)
    _write(out, "sweep.csv", sweep_csv(args.axis, cells))
    summaries = {f"{v!r}": summarize(r.trials) for v, r in cells}
    _write(out, "sweep_summary.json",
           json.dumps({"axis": args.axis, "cells": summaries}, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicerisk", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", default=".")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; affects speed only")

    p = sub.add_parser("simulate", help="scenario + seed -> observation files")
    common(p)
    p.add_argument("--scenario", "--config", dest="scenario",
                   help="scenario JSON; a random default scenario if omitted")
    p.add_argument("--n-obs", type=int, default=5000)
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="observations -> model JSON + risk CSV")
    common(p)
    p.add_argument("--obs", help="directory holding loads.csv and trace.csv")
    p.add_argument("--loads")
    p.add_argument("--trace")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--r-max", type=float, default=5.0)
    p.add_argument("--thresholds", help="lo,hi,steps")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="scenario JSON -> true risk CSV")
    common(p)
    p.add_argument("--scenario", "--config", dest="scenario", required=True)
    p.add_argument("--mc-samples", type=int, default=1_000_000)
    p.add_argument("--thresholds", help="lo,hi,steps")
    p.set_defaults(func=cmd_oracle)

    for name, func in (("bench", cmd_bench), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help="randomized benchmark" if name == "bench"
                           else "one-axis sensitivity sweep")
        common(p, seed_default=None)
        p.add_argument("--config", help="bench config JSON")
        p.add_argument("--trials", type=int, default=None)
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, required=True)
            p.add_argument("--values", required=True, help="comma-separated axis values")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except PipelineError as exc:
        log.error("estimation failed at stage %s: %s", exc.stage, exc.__cause__)
        return EXIT_INVALID
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
