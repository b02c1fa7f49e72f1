import os
import sys

import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from sim_engine import Simulator  # noqa: E402
from utils.scenario_loader import SCENARIO_DIR, load_scenario, scenario_from_dict  # noqa: E402

# FreeSpace + TSMA: one unit per hop, no loss, no contention, so first
# arrivals follow breadth-first order.
PROBE_CULTURE = {
    "name": "Probe",
    "label": "Probe service",
    "slots": {
        "PHYSICAL": "FreeSpace",
        "MAC": "TSMA",
        "ROUTING": "DSR",
        "TRANSPORT": "UDP-abstract",
        "APPLICATION": "CBR",
    },
}


@pytest.fixture
def scenario_path():
    def _path(name):
        return os.path.join(SCENARIO_DIR, f"{name}.scn")

    return _path


@pytest.fixture
def load(scenario_path):
    def _load(name):
        return load_scenario(scenario_path(name))

    return _load


@pytest.fixture
def table4(load):
    return load("table4")


@pytest.fixture
def run_sim():
    """Run a scenario and hand back the finished Simulator."""

    def _run(scenario, seed=0, mode="hamanet"):
        sim = Simulator(scenario, seed, mode)
        sim.run()
        return sim

    return _run


@pytest.fixture
def build_scenario():
    def _build(**sections):
        raw = {"name": "inline", "catalog": "builtin"}
        raw.update(sections)
        return scenario_from_dict(raw)

    return _build


@pytest.fixture
def graph_scenario(build_scenario):
    """Scenario over a networkx graph with nodes 0..n-1, labelled N1..Nn.

    Node `si` starts the culture at t=0; every other node listed in
    `interested` (default: all) joins.
    """

    def _build(graph, culture="Probe", interested=None, si=0, params=None, steps=()):
        n = graph.number_of_nodes()
        interested = set(range(n)) if interested is None else set(interested)
        nodes = []
        for i in range(n):
            node = {"label": f"N{i + 1}"}
            if i in interested and i != si:
                node["interests"] = [culture]
            nodes.append(node)
        sections = {
            "topology": {
                "nodes": nodes,
                "edges": [[f"N{u + 1}", f"N{v + 1}"] for u, v in sorted(graph.edges())],
            },
            "params": {"join_window": 40, "end_time": 200, **(params or {})},
            "steps": [{"at": 0, "op": "start_service", "node": f"N{si + 1}", "culture": culture}]
            + list(steps),
        }
        if culture == "Probe":
            sections["cultures"] = [PROBE_CULTURE]
            sections["link_defaults"] = {"physical": "FreeSpace", "mac": "TSMA"}
        return build_scenario(**sections)

    return _build
