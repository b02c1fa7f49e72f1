"""Scenario files: parsing, validation and canonical re-emission.

A scenario is a YAML document (see README, "Scenario files"). Times are given
in simulation units and stored as integer ticks. Validation is total: every
problem is collected with its field path before anything is raised.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import yaml

from errors import HamanetError, ParseError, ValidationError
from model_core import TICKS_PER_UNIT, mint_cid
from service_fabric import (
    ArtDef,
    ArtRegistry,
    CultureDef,
    Layer,
    art_from_dict,
    culture_from_dict,
    load_catalog,
)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("scenario_loader")

SCENARIO_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios"
)

STEP_FIELDS = {
    "start_service": ("node", "culture"),
    "late_join": ("node", "cid"),
    "send": ("src", "dst", "cid", "op_code"),
    "ftp_request": ("src", "dst", "cid", "file"),
    "remove_edge": ("a", "b"),
    "add_edge": ("a", "b"),
    "set_loss": ("a", "b", "loss"),
    "snapshot": (),
}
BEHAVIORS = ("UNDECLARED_OP", "BOGUS_RREP", "SELFISH")
LINK_DETECTION = ("immediate", "hello")
TIME_PARAMS = (
    "join_window",
    "t_rreq",
    "hello_interval",
    "watchdog_timeout",
    "retransmit_timeout",
    "end_time",
)


@dataclass(frozen=True)
class Params:
    join_window: int = 10 * TICKS_PER_UNIT
    t_rreq: int = 20 * TICKS_PER_UNIT
    rreq_retries: int = 0
    hello_interval: int = 5 * TICKS_PER_UNIT
    hello_enabled: bool = False
    link_detection: str = "immediate"
    queue_limit: int = 64
    watchdog_timeout: int = 5 * TICKS_PER_UNIT
    chunk_size: Optional[int] = None
    window: Optional[int] = None
    retransmit_limit: Optional[int] = None
    retransmit_timeout: Optional[int] = None
    end_time: int = 1000 * TICKS_PER_UNIT


@dataclass(frozen=True)
class NodeSpec:
    label: str
    attributes: frozenset = frozenset()
    interests: Tuple[str, ...] = ()
    position: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class EdgeSpec:
    a: str
    b: str
    loss: Optional[float] = None
    delay: Optional[float] = None


@dataclass(frozen=True)
class TopologySpec:
    nodes: Tuple[NodeSpec, ...] = ()
    edges: Tuple[EdgeSpec, ...] = ()
    radius: Optional[float] = None


@dataclass(frozen=True)
class Step:
    at: int
    op: str
    args: Tuple[Tuple[str, Any], ...] = ()

    def get(self, key, default=None):
        for name, value in self.args:
            if name == key:
                return value
        return default


@dataclass(frozen=True)
class AdversarySpec:
    node: str
    behavior: str
    rate: float = 1.0
    start: int = 0
    count: int = 0
    op_code: str = "DNS_QUERY"


@dataclass(frozen=True)
class Workload:
    src: str
    dst: str
    cid: str
    op_code: str
    payload_bytes: int = 0
    start: int = 0
    interval: int = TICKS_PER_UNIT
    count: int = 0

    def send_times(self):
        return [self.start + i * self.interval for i in range(self.count)]


@dataclass(frozen=True)
class FileSpec:
    node: str
    name: str
    size: Optional[int] = None
    content_seed: int = 0
    path: Optional[str] = None


@dataclass(frozen=True)
class LinkDefaults:
    physical: str = "FreeSpace"
    mac: str = "CSMA"


@dataclass
class Scenario:
    name: str
    description: str = ""
    params: Params = field(default_factory=Params)
    catalog: Optional[str] = None
    arts: Tuple[ArtDef, ...] = ()
    cultures: Tuple[CultureDef, ...] = ()
    topology: TopologySpec = field(default_factory=TopologySpec)
    link_defaults: LinkDefaults = field(default_factory=LinkDefaults)
    files: Tuple[FileSpec, ...] = ()
    steps: Tuple[Step, ...] = ()
    adversaries: Tuple[AdversarySpec, ...] = ()
    workload: Optional[Workload] = None
    source: Optional[str] = field(default=None, compare=False)

    def node_labels(self) -> List[str]:
        return [node.label for node in self.topology.nodes]

    def node_spec(self, label) -> Optional[NodeSpec]:
        for node in self.topology.nodes:
            if node.label == label:
                return node
        return None

    def ordered_steps(self) -> List[Step]:
        return [step for _, step in sorted(enumerate(self.steps), key=lambda p: (p[1].at, p[0]))]

    def predicted_cids(self) -> Dict[str, str]:
        """CID label -> culture name, in the order start steps will mint them."""
        registry = self.registry()
        predicted = {}
        for step in self.ordered_steps():
            if step.op != "start_service":
                continue
            node = self.node_spec(step.get("node"))
            culture = registry.cultures.get(step.get("culture"))
            if node is None or culture is None:
                continue
            if not culture.requires <= node.attributes:
                continue
            predicted[mint_cid(len(predicted) + 1).label] = culture.name
        return predicted

    def registry(self) -> ArtRegistry:
        return build_scenario_registry(self)

    def with_workload_count(self, count: int) -> "Scenario":
        if self.workload is None:
            return self
        return replace(self, workload=replace(self.workload, count=count))

    def without_hello(self) -> "Scenario":
        return replace(self, params=replace(self.params, hello_enabled=False))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "hamanet"
    report_path: Optional[str] = None
    trace_path: Optional[str] = None
    strict: bool = False
    messages: int = 0

    def __post_init__(self):
        if self.mode not in ("hamanet", "baseline", "compare"):
            raise ValueError(f"unknown mode '{self.mode}'")


def build_scenario_registry(scenario: Scenario) -> ArtRegistry:
    registry = ArtRegistry()
    if scenario.catalog == "builtin":
        catalog = load_catalog()
        for art in catalog["arts"]:
            registry.register_art(art_from_dict(art))
        for culture in catalog["cultures"]:
            registry.register_culture(culture_from_dict(culture))
    for art in scenario.arts:
        registry.register_art(art)
    for culture in scenario.cultures:
        registry.register_culture(culture)
    return registry


def to_ticks(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValueError(f"expected a time in units, got {value!r}")
    ticks = Fraction(str(value)) * TICKS_PER_UNIT
    if ticks.denominator != 1 or ticks < 0:
        raise ValueError(f"time {value!r} is negative or finer than one tick")
    return int(ticks)


def from_ticks(ticks: int):
    if ticks % TICKS_PER_UNIT == 0:
        return ticks // TICKS_PER_UNIT
    return float(Fraction(ticks, TICKS_PER_UNIT))


class _Collector:
    def __init__(self):
        self.issues: List[Tuple[str, str]] = []

    def add(self, path, message):
        self.issues.append((path, message))

    def time(self, value, path, default=None):
        if value is None:
            return default
        try:
            return to_ticks(value)
        except (ValueError, ArithmeticError) as e:
            self.add(path, str(e))
            return default

    def count(self, value, path, default=0):
        if value is None:
            return default
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            self.add(path, "expected a non-negative integer")
            return default
        return value

    def loss(self, value, path):
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 <= value <= 1:
            self.add(path, "loss must lie in [0, 1]")
            return None
        return value

    def delay(self, value, path):
        """Per-edge delay in units; must come to at least one tick."""
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.add(path, "delay must be a number of units")
            return None
        ticks = self.time(value, path)
        if ticks is None:
            return None
        if ticks < 1:
            self.add(path, "delay must be at least one tick")
            return None
        return value

    def mapping(self, value, path):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.add(path, "expected a mapping")
            return {}
        return value

    def sequence(self, value, path):
        if value is None:
            return []
        if not isinstance(value, list):
            self.add(path, "expected a list")
            return []
        return value


def _parse_params(raw, issues: _Collector) -> Params:
    raw = issues.mapping(raw, "params")
    defaults = Params()
    values = {}
    for key, value in raw.items():
        path = f"params.{key}"
        if not hasattr(defaults, key):
            issues.add(path, "unknown parameter")
        elif key in TIME_PARAMS:
            values[key] = issues.time(value, path, getattr(defaults, key))
        elif key == "hello_enabled":
            if not isinstance(value, bool):
                issues.add(path, "expected true or false")
            else:
                values[key] = value
        elif key == "link_detection":
            if value not in LINK_DETECTION:
                issues.add(path, f"expected one of {list(LINK_DETECTION)}")
            else:
                values[key] = value
        elif not isinstance(value, int) or isinstance(value, bool) or value < 0:
            issues.add(path, "expected a non-negative integer")
        else:
            values[key] = value
    params = replace(defaults, **values)
    for key in ("join_window", "t_rreq", "hello_interval", "watchdog_timeout"):
        if getattr(params, key) <= 0:
            issues.add(f"params.{key}", "must be positive")
    if params.queue_limit < 1:
        issues.add("params.queue_limit", "must be at least 1")
    if params.chunk_size is not None and params.chunk_size < 1:
        issues.add("params.chunk_size", "must be positive")
    return params


def _parse_nodes(raw, issues: _Collector) -> Tuple[NodeSpec, ...]:
    nodes = []
    seen = set()
    for i, item in enumerate(issues.sequence(raw, "topology.nodes")):
        path = f"topology.nodes[{i}]"
        if isinstance(item, str):
            item = {"label": item}
        if not isinstance(item, dict) or not item.get("label"):
            issues.add(path, "a node needs a label")
            continue
        label = str(item["label"])
        if "-" in label or " " in label:
            issues.add(f"{path}.label", f"label '{label}' may not contain '-' or spaces")
        if label in seen:
            issues.add(f"{path}.label", f"duplicate label '{label}'")
        seen.add(label)
        attributes = set(str(a) for a in issues.sequence(item.get("attributes"), f"{path}.attributes"))
        if item.get("gateway"):
            attributes.add("gateway")
        position = item.get("position")
        if position is not None:
            if (
                not isinstance(position, list)
                or len(position) != 2
                or not all(isinstance(c, (int, float)) for c in position)
            ):
                issues.add(f"{path}.position", "expected [x, y]")
                position = None
            else:
                position = (float(position[0]), float(position[1]))
        interests = tuple(sorted(str(c) for c in issues.sequence(item.get("interests"), f"{path}.interests")))
        nodes.append(NodeSpec(label, frozenset(attributes), interests, position))
    return tuple(nodes)


def _parse_edges(raw, labels: List[str], issues: _Collector) -> Tuple[EdgeSpec, ...]:
    order = {label: i for i, label in enumerate(labels)}
    edges = {}
    for i, item in enumerate(issues.sequence(raw, "topology.edges")):
        path = f"topology.edges[{i}]"
        loss = delay = None
        if isinstance(item, str):
            item = item.split("-")
        if isinstance(item, list) and len(item) == 2:
            a, b = str(item[0]), str(item[1])
        elif isinstance(item, dict) and "a" in item and "b" in item:
            a, b = str(item["a"]), str(item["b"])
            loss, delay = item.get("loss"), item.get("delay")
        else:
            issues.add(path, "expected [a, b], 'a-b' or {a, b, loss, delay}")
            continue
        if a not in order or b not in order:
            issues.add(path, f"edge {a}-{b} references an unknown node")
            continue
        if a == b:
            issues.add(path, f"self-edge on {a}")
            continue
        loss = issues.loss(loss, f"{path}.loss")
        delay = issues.delay(delay, f"{path}.delay")
        if order[a] > order[b]:
            a, b = b, a
        if (a, b) in edges:
            issues.add(path, f"duplicate edge {a}-{b}")
            continue
        edges[(a, b)] = EdgeSpec(a, b, loss, delay)
    return tuple(edges[key] for key in sorted(edges, key=lambda k: (order[k[0]], order[k[1]])))


def _parse_definitions(raw, kind, parser, issues: _Collector):
    items = []
    for i, item in enumerate(issues.sequence(raw, kind)):
        try:
            items.append(parser(item))
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            issues.add(f"{kind}[{i}]", f"invalid definition: {e}")
    return tuple(items)


def _parse_steps(raw, issues: _Collector) -> Tuple[Step, ...]:
    steps = []
    for i, item in enumerate(issues.sequence(raw, "steps")):
        path = f"steps[{i}]"
        if not isinstance(item, dict):
            issues.add(path, "expected a mapping")
            continue
        op = item.get("op")
        if op not in STEP_FIELDS:
            issues.add(f"{path}.op", f"unknown step '{op}'")
            continue
        at = issues.time(item.get("at", 0), f"{path}.at", 0)
        missing = [name for name in STEP_FIELDS[op] if item.get(name) is None]
        for name in missing:
            issues.add(f"{path}.{name}", f"'{op}' needs '{name}'")
        args = tuple(sorted((str(k), v) for k, v in item.items() if k not in ("at", "op")))
        steps.append(Step(at, op, args))
    return tuple(steps)


def _parse_adversaries(raw, issues: _Collector) -> Tuple[AdversarySpec, ...]:
    adversaries = []
    for i, item in enumerate(issues.sequence(raw, "adversaries")):
        path = f"adversaries[{i}]"
        item = issues.mapping(item, path)
        behavior = str(item.get("behavior", "")).upper()
        if behavior not in BEHAVIORS:
            issues.add(f"{path}.behavior", f"expected one of {list(BEHAVIORS)}")
            continue
        rate = item.get("rate", 1.0)
        if not isinstance(rate, (int, float)) or rate <= 0:
            issues.add(f"{path}.rate", "rate must be positive")
            rate = 1.0
        count = issues.count(item.get("count"), f"{path}.count")
        adversaries.append(
            AdversarySpec(
                node=str(item.get("node")),
                behavior=behavior,
                rate=float(rate),
                start=issues.time(item.get("start", 0), f"{path}.start", 0),
                count=count,
                op_code=str(item.get("op_code", "DNS_QUERY")),
            )
        )
    return tuple(adversaries)


def _parse_workload(raw, issues: _Collector) -> Optional[Workload]:
    if raw is None:
        return None
    raw = issues.mapping(raw, "workload")
    for name in ("src", "dst", "cid", "op_code"):
        if raw.get(name) is None:
            issues.add(f"workload.{name}", f"workload needs '{name}'")
    if any(raw.get(name) is None for name in ("src", "dst", "cid", "op_code")):
        return None
    interval = issues.time(raw.get("interval", 1), "workload.interval", TICKS_PER_UNIT)
    if interval <= 0:
        issues.add("workload.interval", "interval must be positive")
    return Workload(
        src=str(raw["src"]),
        dst=str(raw["dst"]),
        cid=str(raw["cid"]),
        op_code=str(raw["op_code"]),
        payload_bytes=issues.count(raw.get("payload_bytes"), "workload.payload_bytes"),
        start=issues.time(raw.get("start", 0), "workload.start", 0),
        interval=interval,
        count=issues.count(raw.get("count"), "workload.count"),
    )


def _parse_files(raw, issues: _Collector) -> Tuple[FileSpec, ...]:
    files = []
    for i, item in enumerate(issues.sequence(raw, "files")):
        path = f"files[{i}]"
        item = issues.mapping(item, path)
        if not item.get("node") or not item.get("name"):
            issues.add(path, "a file needs 'node' and 'name'")
            continue
        size = item.get("size")
        if item.get("path") is None and (not isinstance(size, int) or size < 0):
            issues.add(f"{path}.size", "give a non-negative size or a path")
            continue
        files.append(
            FileSpec(
                node=str(item["node"]),
                name=str(item["name"]),
                size=size,
                content_seed=issues.count(item.get("content_seed"), f"{path}.content_seed"),
                path=item.get("path"),
            )
        )
    return tuple(files)


def _cross_check(scenario: Scenario, issues: _Collector):
    labels = set(scenario.node_labels())
    try:
        registry = scenario.registry()
    except HamanetError as e:
        issues.add("cultures", f"{type(e).__name__}: {e}")
        return
    for layer_name, art_name in (("PHYSICAL", scenario.link_defaults.physical), ("MAC", scenario.link_defaults.mac)):
        art = registry.arts.get(art_name)
        if art is not None and art.layer is not Layer(layer_name):
            issues.add(f"link_defaults.{layer_name.lower()}", f"'{art_name}' is not a {layer_name} art")
    for name, art in registry.arts.items():
        if art.layer is Layer.PHYSICAL and round(art.param("delay", 1) * TICKS_PER_UNIT) < 1:
            issues.add("arts", f"physical art '{name}' needs a delay of at least one tick")
    for i, node in enumerate(scenario.topology.nodes):
        for culture in node.interests:
            if culture not in registry.cultures:
                issues.add(f"topology.nodes[{i}].interests", f"unregistered culture '{culture}'")
    if scenario.topology.radius is not None:
        for i, node in enumerate(scenario.topology.nodes):
            if node.position is None:
                issues.add(f"topology.nodes[{i}].position", "geometric topology needs every position")

    predicted = scenario.predicted_cids()
    files = {(f.node, f.name) for f in scenario.files}
    for i, spec in enumerate(scenario.files):
        if spec.node not in labels:
            issues.add(f"files[{i}].node", f"unknown node '{spec.node}'")

    def check_node(value, path):
        if value is not None and str(value) not in labels:
            issues.add(path, f"unknown node '{value}'")

    def check_cid(value, path, op_code=None):
        culture = predicted.get(str(value))
        if culture is None:
            issues.add(path, f"community '{value}' is never started")
        elif op_code is not None and op_code not in registry.accepted_ops(culture):
            issues.add(path, f"culture '{culture}' does not declare op '{op_code}'")

    for i, step in enumerate(scenario.steps):
        path = f"steps[{i}]"
        if step.at > scenario.params.end_time:
            issues.add(f"{path}.at", "step lies after end_time")
        for key in ("node", "src", "dst", "a", "b"):
            check_node(step.get(key), f"{path}.{key}")
        if step.op == "start_service" and step.get("culture") not in registry.cultures:
            issues.add(f"{path}.culture", f"unregistered culture '{step.get('culture')}'")
        if step.op == "late_join" and step.get("cid") is not None:
            check_cid(step.get("cid"), f"{path}.cid")
        if step.op == "send" and step.get("cid") is not None:
            check_cid(step.get("cid"), f"{path}.cid", str(step.get("op_code")))
        if step.op == "ftp_request" and step.get("cid") is not None:
            check_cid(step.get("cid"), f"{path}.cid", "FILE_REQ")
            if (str(step.get("dst")), str(step.get("file"))) not in files:
                issues.add(f"{path}.file", f"no file '{step.get('file')}' on {step.get('dst')}")
        if step.op == "send":
            issues.count(step.get("payload_bytes"), f"{path}.payload_bytes")
        if step.op in ("add_edge", "remove_edge", "set_loss") and str(step.get("a")) == str(step.get("b")):
            issues.add(path, f"self-edge on {step.get('a')}")
        if step.op == "add_edge":
            issues.loss(step.get("loss"), f"{path}.loss")
            issues.delay(step.get("delay"), f"{path}.delay")
        if step.op == "set_loss":
            issues.loss(step.get("loss"), f"{path}.loss")

    profiled = set()
    for i, adversary in enumerate(scenario.adversaries):
        check_node(adversary.node, f"adversaries[{i}].node")
        if adversary.node in profiled:
            issues.add(f"adversaries[{i}].node", f"'{adversary.node}' already has a profile")
        profiled.add(adversary.node)
        node = scenario.node_spec(adversary.node)
        if node is not None and node.interests:
            issues.add(f"adversaries[{i}].node", "adversary nodes may not declare interests")

    workload = scenario.workload
    if workload is not None:
        check_node(workload.src, "workload.src")
        check_node(workload.dst, "workload.dst")
        check_cid(workload.cid, "workload.cid", workload.op_code)
        if workload.start + max(workload.count - 1, 0) * workload.interval > scenario.params.end_time:
            issues.add("workload", "workload runs past end_time")


def scenario_from_dict(raw, source=None) -> Scenario:
    """Build and validate a Scenario; raises ValidationError listing every issue."""
    issues = _Collector()
    if not isinstance(raw, dict):
        raise ValidationError([("", "a scenario must be a mapping")])
    known = {
        "name", "description", "params", "catalog", "arts", "cultures",
        "topology", "link_defaults", "files", "steps", "adversaries", "workload",
    }
    for key in raw:
        if key not in known:
            issues.add(str(key), "unknown section")
    topology_raw = issues.mapping(raw.get("topology"), "topology")
    nodes = _parse_nodes(topology_raw.get("nodes"), issues)
    radius = topology_raw.get("radius")
    if radius is not None and (not isinstance(radius, (int, float)) or radius <= 0):
        issues.add("topology.radius", "radius must be positive")
        radius = None
    topology = TopologySpec(
        nodes=nodes,
        edges=_parse_edges(topology_raw.get("edges"), [n.label for n in nodes], issues),
        radius=float(radius) if radius is not None else None,
    )
    catalog = raw.get("catalog")
    if catalog not in (None, "builtin"):
        issues.add("catalog", "only 'builtin' is supported")
        catalog = None
    link_raw = issues.mapping(raw.get("link_defaults"), "link_defaults")
    scenario = Scenario(
        name=str(raw.get("name") or (os.path.splitext(os.path.basename(source))[0] if source else "scenario")),
        description=str(raw.get("description") or ""),
        params=_parse_params(raw.get("params"), issues),
        catalog=catalog,
        arts=_parse_definitions(raw.get("arts"), "arts", art_from_dict, issues),
        cultures=_parse_definitions(raw.get("cultures"), "cultures", culture_from_dict, issues),
        topology=topology,
        link_defaults=LinkDefaults(
            physical=str(link_raw.get("physical", "FreeSpace")),
            mac=str(link_raw.get("mac", "CSMA")),
        ),
        files=_parse_files(raw.get("files"), issues),
        steps=_parse_steps(raw.get("steps"), issues),
        adversaries=_parse_adversaries(raw.get("adversaries"), issues),
        workload=_parse_workload(raw.get("workload"), issues),
        source=source,
    )
    if not issues.issues:
        _cross_check(scenario, issues)
    if issues.issues:
        for path, message in issues.issues:
            logger.error(f"Scenario {scenario.name}: {path}: {message}")
        raise ValidationError(issues.issues)
    return scenario


def parse_scenario_text(text: str, source=None) -> Scenario:
    if not text or not text.strip():
        raise ParseError("scenario file is empty", line=1)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ParseError(str(e), line=mark.line + 1 if mark else None) from None
    if raw is None:
        raise ParseError("scenario file holds no document", line=1)
    return scenario_from_dict(raw, source=source)


def load_scenario(path: str) -> Scenario:
    logger.info(f"Loading scenario from {path}")
    with open(path, "r") as file:
        text = file.read()
    scenario = parse_scenario_text(text, source=path)
    logger.info(
        f"Scenario {scenario.name}: {len(scenario.topology.nodes)} nodes, "
        f"{len(scenario.topology.edges)} edges, {len(scenario.steps)} steps"
    )
    return scenario


def _art_to_dict(art: ArtDef) -> Dict:
    data = {"name": art.name, "layer": art.layer.value}
    if art.op_codes:
        data["op_codes"] = sorted(art.op_codes)
    if art.params:
        data["params"] = dict(sorted(art.params.items()))
    if art.need_tag.value != "NONE":
        data["need_tag"] = art.need_tag.value
    return data


def _culture_to_dict(culture: CultureDef) -> Dict:
    data = {
        "name": culture.name,
        "label": culture.label,
        "slots": {layer.value: culture.slots[layer] for layer in Layer if layer in culture.slots},
    }
    if culture.requires:
        data["requires"] = sorted(culture.requires)
    return data


def scenario_to_dict(scenario: Scenario) -> Dict:
    defaults = Params()
    params = {}
    for key in Params.__dataclass_fields__:
        value = getattr(scenario.params, key)
        if value == getattr(defaults, key):
            continue
        params[key] = from_ticks(value) if key in TIME_PARAMS and value is not None else value
    nodes = []
    for node in scenario.topology.nodes:
        item = {"label": node.label}
        if node.attributes:
            item["attributes"] = sorted(node.attributes)
        if node.interests:
            item["interests"] = list(node.interests)
        if node.position is not None:
            item["position"] = list(node.position)
        nodes.append(item)
    edges = []
    for edge in scenario.topology.edges:
        if edge.loss is None and edge.delay is None:
            edges.append([edge.a, edge.b])
        else:
            item = {"a": edge.a, "b": edge.b}
            if edge.loss is not None:
                item["loss"] = edge.loss
            if edge.delay is not None:
                item["delay"] = edge.delay
            edges.append(item)
    topology = {"nodes": nodes, "edges": edges}
    if scenario.topology.radius is not None:
        topology["radius"] = scenario.topology.radius
    data = {
        "name": scenario.name,
        "description": scenario.description,
        "params": params,
        "arts": [_art_to_dict(a) for a in scenario.arts],
        "cultures": [_culture_to_dict(c) for c in scenario.cultures],
        "topology": topology,
        "link_defaults": {"physical": scenario.link_defaults.physical, "mac": scenario.link_defaults.mac},
        "files": [
            {k: v for k, v in vars(f).items() if v is not None} for f in scenario.files
        ],
        "steps": [
            dict([("at", from_ticks(s.at)), ("op", s.op)] + list(s.args)) for s in scenario.steps
        ],
        "adversaries": [
            {
                "node": a.node,
                "behavior": a.behavior,
                "rate": a.rate,
                "start": from_ticks(a.start),
                "count": a.count,
                "op_code": a.op_code,
            }
            for a in scenario.adversaries
        ],
    }
    if scenario.catalog:
        data["catalog"] = scenario.catalog
    if scenario.workload is not None:
        w = scenario.workload
        data["workload"] = {
            "src": w.src,
            "dst": w.dst,
            "cid": w.cid,
            "op_code": w.op_code,
            "payload_bytes": w.payload_bytes,
            "start": from_ticks(w.start),
            "interval": from_ticks(w.interval),
            "count": w.count,
        }
    return data


def dump_scenario(scenario: Scenario) -> str:
    """Canonical text form: sorted keys, block style."""
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=True, default_flow_style=False)


def list_scenarios(directory: str = SCENARIO_DIR) -> List[str]:
    return sorted(name for name in os.listdir(directory) if name.endswith(".scn"))
