#!/usr/bin/env python3
"""Command line for the simulator.

    python hamanet.py run scenarios/table4.scn --seed 7 --out report.yaml --trace trace.txt
    python hamanet.py compare scenarios/table4.scn --seed 7 --messages 20
    python hamanet.py validate scenarios/fig4.scn
    python hamanet.py sweep scenarios/ftp.scn --seeds 1..20 --out sweep.csv

Exit codes: 0 success, 1 I/O error, 2 invalid scenario, 3 strict-mode failure.
"""

import argparse
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

from dotenv import load_dotenv

from errors import ParseError, ScenarioInvalid, ValidationError
from services import compare_overhead
from sim_engine import MODES, run as run_simulation
from utils.report_writer import (
    render_comparison,
    render_report,
    render_trace,
    sweep_frame,
    write_sweep_csv,
    write_text,
)
from utils.scenario_loader import RunConfig, Scenario, dump_scenario, load_scenario

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("HAMANET_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("hamanet")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_STRICT = 3


def parse_seed_range(text: str):
    """'3' -> [3]; '1..20' -> [1, ..., 20] (inclusive)."""
    if ".." in text:
        low, high = text.split("..", 1)
        low, high = int(low), int(high)
        if high < low:
            raise argparse.ArgumentTypeError(f"empty seed range '{text}'")
        return list(range(low, high + 1))
    return [int(text)]


def _emit(text: str, path):
    if path:
        write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_run(config: RunConfig, scenario: Scenario) -> int:
    metrics, trace = run_simulation(scenario, config.seed, config.mode)
    _emit(render_report(metrics, scenario.name, config.seed, config.mode), config.report_path)
    if config.trace_path:
        write_text(config.trace_path, render_trace(trace))
    if config.strict:
        if metrics.step_failures:
            logger.error(f"{len(metrics.step_failures)} step(s) failed")
            return EXIT_STRICT
        if not metrics.conservation_holds():
            logger.error(
                f"Conservation broken: {metrics.delivered} delivered + {metrics.data_dropped} dropped "
                f"+ {metrics.in_flight} in flight != {metrics.data_sent} sent"
            )
            return EXIT_STRICT
    return EXIT_OK


def cmd_compare(config: RunConfig, scenario: Scenario) -> int:
    report = compare_overhead(scenario, config.seed, config.messages)
    _emit(render_comparison(report, scenario.name, config.seed), config.report_path)
    return EXIT_OK


def cmd_validate(scenario: Scenario, emit: bool) -> int:
    if emit:
        sys.stdout.write(dump_scenario(scenario))
    else:
        print(
            f"ok: {scenario.name} ({len(scenario.topology.nodes)} nodes, "
            f"{len(scenario.topology.edges)} edges, {len(scenario.steps)} steps)"
        )
    return EXIT_OK


def _sweep_one(path: str, seed: int, mode: str):
    metrics, _ = run_simulation(load_scenario(path), seed, mode)
    return seed, metrics.counters()


def cmd_sweep(path: str, seeds, mode: str, out) -> int:
    workers = int(os.getenv("HAMANET_WORKERS", "0") or 0) or (os.cpu_count() or 1)
    logger.info(f"Sweeping {len(seeds)} seeds with {workers} worker(s)")
    if workers == 1:
        results = [_sweep_one(path, seed, mode) for seed in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, [path] * len(seeds), seeds, [mode] * len(seeds)))
    if out:
        write_sweep_csv(out, results)
    else:
        sweep_frame(results).to_csv(sys.stdout, index=False)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamanet", description="HAMANET community protocol simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("scenario")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--mode", choices=MODES, default="hamanet")
    run_p.add_argument("--out", help="report path (stdout when omitted)")
    run_p.add_argument("--trace", help="trace path")
    run_p.add_argument("--strict", action="store_true", help="exit 3 on step failures or broken conservation")

    compare_p = sub.add_parser("compare", help="hamanet against the flooding baseline")
    compare_p.add_argument("scenario")
    compare_p.add_argument("--seed", type=int, default=0)
    compare_p.add_argument("--messages", type=int, default=0, help="scan k = 1..MESSAGES for the crossover")
    compare_p.add_argument("--out")

    validate_p = sub.add_parser("validate", help="check a scenario file")
    validate_p.add_argument("scenario")
    validate_p.add_argument("--emit", action="store_true", help="print the canonical form")

    sweep_p = sub.add_parser("sweep", help="run many seeds in parallel")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument("--seeds", type=parse_seed_range, default=[0], help="N or A..B")
    sweep_p.add_argument("--mode", choices=MODES, default="hamanet")
    sweep_p.add_argument("--out", help="CSV path (stdout when omitted)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "validate":
            return cmd_validate(scenario, args.emit)
        if args.command == "sweep":
            return cmd_sweep(args.scenario, args.seeds, args.mode, args.out)
        if args.command == "compare":
            config = RunConfig(seed=args.seed, mode="compare", report_path=args.out, messages=args.messages)
            return cmd_compare(config, scenario)
        config = RunConfig(
            seed=args.seed,
            mode=args.mode,
            report_path=args.out,
            trace_path=args.trace,
            strict=args.strict,
        )
        return cmd_run(config, scenario)
    except ParseError as e:
        print(f"{args.scenario}: parse error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as e:
        for path, message in e.issues:
            print(f"{args.scenario}: {path or '<root>'}: {message}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioInvalid as e:
        print(f"{args.scenario}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        logger.error(f"I/O error: {e}")
        logger.debug(traceback.format_exc())
        print(f"{args.scenario}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
