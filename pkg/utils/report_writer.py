"""Report, trace and sweep output."""

import logging
import os
from typing import Dict, Iterable, List, Tuple

import pandas as pd
from jinja2 import Environment, FileSystemLoader

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("report_writer")

TEMPLATE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REPORT_TEMPLATE = "report_template.txt"
COMPARE_TEMPLATE = "compare_template.txt"

_env = Environment(
    loader=FileSystemLoader(TEMPLATE_DIR),
    keep_trailing_newline=True,
    autoescape=False,
)


def _counter_rows(metrics) -> List[Tuple[str, int]]:
    # nested counters get their own sections
    return sorted(
        (key, value)
        for key, value in metrics.counters().items()
        if not key.startswith(("control_tx.", "dropped."))
    )


def render_report(metrics, scenario_name: str, seed: int, mode: str) -> str:
    template = _env.get_template(REPORT_TEMPLATE)
    return template.render(
        scenario=scenario_name,
        seed=seed,
        mode=mode,
        metrics=metrics,
        counters=_counter_rows(metrics),
        conservation=metrics.conservation_holds(),
        formation=sorted(
            metrics.community_formation_times.items(),
            key=lambda item: (len(item[0]), item[0]),
        ),
    )


def render_comparison(report, scenario_name: str, seed: int) -> str:
    template = _env.get_template(COMPARE_TEMPLATE)
    return template.render(
        scenario=scenario_name,
        seed=seed,
        report=report,
        hamanet=sorted(report.hamanet.counters().items()),
        baseline=sorted(report.baseline.counters().items()),
    )


def render_trace(trace: Iterable[str]) -> str:
    return "".join(f"{line}\n" for line in trace)


def write_text(path: str, text: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="\n") as file:
        file.write(text)
    logger.info(f"Wrote {path}")


def sweep_frame(results: List[Tuple[int, Dict]]) -> pd.DataFrame:
    """One row per seed; counters a run never touched are 0."""
    rows = [{"seed": seed, **counters} for seed, counters in sorted(results, key=lambda r: r[0])]
    df = pd.DataFrame(rows)
    if df.empty:
        return pd.DataFrame(columns=["seed"])
    columns = ["seed"] + sorted(c for c in df.columns if c != "seed")
    return df[columns].fillna(0).astype({c: "int64" for c in columns if c != "seed"})


def write_sweep_csv(path: str, results: List[Tuple[int, Dict]]) -> pd.DataFrame:
    df = sweep_frame(results)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"Wrote sweep summary for {len(df)} seeds to {path}")
    return df
