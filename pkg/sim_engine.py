"""Deterministic discrete-event engine.

One Simulator owns the event queue, the topology, the link model and every
piece of protocol state for a single run. Time is integer ticks
(TICKS_PER_UNIT per scenario unit) and the queue pops in (time, seq) order.

All randomness comes from one random.Random(seed). Per event the draws happen
in this order: link loss, then MAC contention for each copy transmitted, then
adversary timing if the event is an adversary tick.
"""

from __future__ import annotations

import heapq
import logging
import os
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import networkx as nx
from dotenv import load_dotenv

from community_protocol import CommunityProtocol
from errors import LOST, HamanetError
from model_core import (
    BROADCAST,
    TICKS_PER_UNIT,
    CommunityId,
    MachineId,
    NodeId,
    PacketEnvelope,
    PacketKind,
    Path,
    digest_lines,
)
from routing import Router
from service_fabric import Layer, MachineDirectory
from services import FileTransferService, FloodingBaseline
from utils.scenario_loader import AdversarySpec, Scenario, Step, TopologySpec

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("HAMANET_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("sim_engine")

MODES = ("hamanet", "baseline")
# Steps that shape the environment run in both modes.
ENVIRONMENT_STEPS = ("remove_edge", "add_edge", "set_loss", "snapshot")


class Topology:
    """Undirected graph of NodeIds. Edge data may override loss and delay."""

    def __init__(self, nodes: List[NodeId], attributes: Dict[NodeId, frozenset], graph: nx.Graph):
        self.nodes = nodes
        self.attributes = attributes
        self.graph = graph
        self.by_label = {node.label: node for node in nodes}

    @classmethod
    def from_spec(cls, spec: TopologySpec) -> "Topology":
        nodes = [NodeId(i, n.label) for i, n in enumerate(spec.nodes)]
        by_label = {node.label: node for node in nodes}
        graph = nx.Graph()
        graph.add_nodes_from(nodes)
        if spec.radius is not None:
            positions = {node: spec.nodes[node.index].position for node in nodes}
            geometric = nx.random_geometric_graph(nodes, spec.radius, pos=positions)
            graph.add_edges_from(geometric.edges())
        for edge in spec.edges:
            data = {}
            if edge.loss is not None:
                data["loss"] = float(edge.loss)
            if edge.delay is not None:
                data["delay"] = int(round(edge.delay * TICKS_PER_UNIT))
            graph.add_edge(by_label[edge.a], by_label[edge.b], **data)
        attributes = {node: spec.nodes[node.index].attributes for node in nodes}
        return cls(nodes, attributes, graph)

    def node(self, label: str) -> NodeId:
        return self.by_label[label]

    def adjacent(self, a: NodeId, b: NodeId) -> bool:
        return self.graph.has_edge(a, b)

    def neighbors(self, node: NodeId) -> List[NodeId]:
        return sorted(self.graph.neighbors(node))

    def add_edge(self, a: NodeId, b: NodeId, loss=None, delay=None):
        data = {}
        if loss is not None:
            data["loss"] = float(loss)
        if delay is not None:
            data["delay"] = int(round(delay * TICKS_PER_UNIT))
        self.graph.add_edge(a, b, **data)

    def remove_edge(self, a: NodeId, b: NodeId) -> bool:
        if not self.graph.has_edge(a, b):
            return False
        self.graph.remove_edge(a, b)
        return True

    def set_loss(self, a: NodeId, b: NodeId, loss: float) -> bool:
        if not self.graph.has_edge(a, b):
            return False
        self.graph.edges[a, b]["loss"] = float(loss)
        return True

    def edge_overrides(self, a: NodeId, b: NodeId) -> Dict:
        return self.graph.edges[a, b]

    def is_walk(self, path: Path) -> bool:
        return path.is_walk(self.adjacent)

    def shortest_hops(self, a: NodeId, b: NodeId) -> Optional[int]:
        try:
            return nx.shortest_path_length(self.graph, a, b)
        except nx.NetworkXNoPath:
            return None


@dataclass(frozen=True)
class LinkModel:
    delay: int
    loss: float = 0.0
    contention: int = 0

    @classmethod
    def from_arts(cls, physical, mac) -> "LinkModel":
        return cls(
            delay=int(round(physical.param("delay", 1) * TICKS_PER_UNIT)),
            loss=float(physical.param("loss", 0.0)),
            contention=int(round(mac.param("contention", 0) * TICKS_PER_UNIT)),
        )

    def with_overrides(self, overrides: Dict) -> "LinkModel":
        if not overrides:
            return self
        return LinkModel(
            delay=overrides.get("delay", self.delay),
            loss=overrides.get("loss", self.loss),
            contention=self.contention,
        )

    def draw(self, rng: random.Random) -> Optional[int]:
        """Delay of one copy in ticks, or None when the copy is lost."""
        if self.loss > 0 and rng.random() < self.loss:
            return None
        extra = rng.randrange(self.contention) if self.contention > 0 else 0
        return self.delay + extra


DEFAULT_LINK = LinkModel(delay=TICKS_PER_UNIT)


class EventKind(Enum):
    DELIVER = "DELIVER"
    TIMER = "TIMER"
    SCENARIO = "SCENARIO"


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    action: Callable[[], None] = field(compare=False)
    label: str = field(default="", compare=False)


class Behavior(Enum):
    UNDECLARED_OP = "UNDECLARED_OP"
    BOGUS_RREP = "BOGUS_RREP"
    SELFISH = "SELFISH"


@dataclass(frozen=True)
class AdversaryProfile:
    node: NodeId
    behavior: Behavior
    rate: float = 1.0
    start: int = 0
    count: int = 0
    op_code: str = "DNS_QUERY"

    @classmethod
    def from_spec(cls, spec: AdversarySpec, topology: Topology) -> "AdversaryProfile":
        return cls(
            node=topology.node(spec.node),
            behavior=Behavior(spec.behavior),
            rate=spec.rate,
            start=spec.start,
            count=spec.count,
            op_code=spec.op_code,
        )

    @property
    def interval(self) -> int:
        return max(1, int(TICKS_PER_UNIT / self.rate))


@dataclass
class MetricsReport:
    broadcast_tx: int = 0
    unicast_tx: int = 0
    control_tx: Dict[str, int] = field(default_factory=dict)
    data_tx: int = 0
    delivered: int = 0
    dropped: Dict[str, int] = field(default_factory=dict)
    rejected_ops: int = 0
    bytes_delivered: int = 0
    community_formation_times: Dict[str, int] = field(default_factory=dict)
    data_sent: int = 0
    data_dropped: int = 0
    in_flight: int = 0
    duplicates_suppressed: int = 0
    step_failures: List[str] = field(default_factory=list)
    snapshots: List[Tuple[int, str]] = field(default_factory=list)
    sessions: List[Dict] = field(default_factory=list)
    society: List[str] = field(default_factory=list)
    tables: List[Dict] = field(default_factory=list)
    end_time: int = 0
    events: int = 0

    @property
    def total_tx(self) -> int:
        return self.broadcast_tx + self.unicast_tx

    def count_drop(self, reason: str):
        self.dropped[reason] = self.dropped.get(reason, 0) + 1

    def conservation_holds(self) -> bool:
        return self.delivered + self.data_dropped + self.in_flight == self.data_sent

    def counters(self) -> Dict:
        """Flat numeric view, one column per counter (used for sweeps)."""
        flat = {
            "broadcast_tx": self.broadcast_tx,
            "unicast_tx": self.unicast_tx,
            "total_tx": self.total_tx,
            "data_tx": self.data_tx,
            "data_sent": self.data_sent,
            "delivered": self.delivered,
            "data_dropped": self.data_dropped,
            "in_flight": self.in_flight,
            "rejected_ops": self.rejected_ops,
            "bytes_delivered": self.bytes_delivered,
            "duplicates_suppressed": self.duplicates_suppressed,
            "step_failures": len(self.step_failures),
        }
        for kind, count in self.control_tx.items():
            flat[f"control_tx.{kind}"] = count
        for reason, count in self.dropped.items():
            flat[f"dropped.{reason}"] = count
        return flat

    def as_dict(self) -> Dict:
        return {
            "broadcast_tx": self.broadcast_tx,
            "unicast_tx": self.unicast_tx,
            "total_tx": self.total_tx,
            "control_tx": dict(sorted(self.control_tx.items())),
            "data_tx": self.data_tx,
            "data_sent": self.data_sent,
            "delivered": self.delivered,
            "data_dropped": self.data_dropped,
            "in_flight": self.in_flight,
            "dropped": dict(sorted(self.dropped.items())),
            "rejected_ops": self.rejected_ops,
            "bytes_delivered": self.bytes_delivered,
            "duplicates_suppressed": self.duplicates_suppressed,
            "community_formation_times": dict(self.community_formation_times),
            "step_failures": list(self.step_failures),
            "snapshots": [{"t": t, "digest": d} for t, d in self.snapshots],
            "sessions": list(self.sessions),
            "society": list(self.society),
            "tables": list(self.tables),
            "end_time": self.end_time,
            "events": self.events,
        }


class Simulator:
    def __init__(self, scenario: Scenario, seed: int = 0, mode: str = "hamanet"):
        if mode not in MODES:
            raise ValueError(f"unknown mode '{mode}'")
        self.scenario = scenario
        self.params = scenario.params
        self.seed = seed
        self.mode = mode
        self.rng = random.Random(seed)
        self.registry = scenario.registry()
        self.machines = MachineDirectory(self.registry)
        self.topology = Topology.from_spec(scenario.topology)
        self.metrics = MetricsReport()
        self.trace: List[str] = []
        self.now = 0
        self.queue: List[Event] = []
        self._seq = 0
        self._packet_ids = 0
        self._seen: Dict[NodeId, set] = {}
        self._settling: Dict[Tuple[NodeId, int], List[PacketEnvelope]] = {}
        self._outcomes: Dict[tuple, Optional[str]] = {}
        self._watchdogs: Dict[tuple, bool] = {}
        self._links: Dict[str, LinkModel] = {}
        self._adversaries: Dict[NodeId, AdversaryProfile] = {}

        self.protocol = CommunityProtocol(self)
        self.router = Router(self)
        self.files = FileTransferService(self)
        self.baseline = FloodingBaseline(self)

    # ------------------------------------------------------------------ queue

    def schedule(self, at: int, kind: EventKind, action: Callable[[], None], label: str = ""):
        if at < self.now:
            raise ValueError(f"cannot schedule {label or kind.value} at {at} before now={self.now}")
        self._seq += 1
        heapq.heappush(self.queue, Event(at, self._seq, kind, action, label))

    def after(self, delay: int, action: Callable[[], None], label: str = ""):
        self.schedule(self.now + delay, EventKind.TIMER, action, label)

    def next_packet_id(self) -> int:
        self._packet_ids += 1
        return self._packet_ids

    # ------------------------------------------------------------------ trace

    def trace_event(self, node: NodeId, ev: str, pkt: Optional[PacketEnvelope] = None, **extra):
        line = f"t={self.now} node={node.label} ev={ev} pkt={pkt.packet_id if pkt else '-'}"
        if pkt is not None and pkt.cid is not None and "cid" not in extra:
            line += f" cid={pkt.cid.label}"
        for key, value in extra.items():
            line += f" {key}={value}"
        self.trace.append(line)
        logger.debug(line)

    # ----------------------------------------------------------- accounting

    def _count_tx(self, pkt: PacketEnvelope, broadcast: bool):
        if broadcast:
            self.metrics.broadcast_tx += 1
        else:
            self.metrics.unicast_tx += 1
        if pkt.kind is PacketKind.DATA:
            self.metrics.data_tx += 1
        else:
            kind = pkt.kind.value
            self.metrics.control_tx[kind] = self.metrics.control_tx.get(kind, 0) + 1

    def data_sent(self, pkt: PacketEnvelope):
        self.metrics.data_sent += 1
        if pkt.data_key in self._outcomes:
            logger.warning(f"Data key {pkt.data_key} reused by packet {pkt.packet_id}")
        self._outcomes[pkt.data_key] = None

    def _close_data(self, pkt: PacketEnvelope, outcome: str) -> bool:
        key = pkt.data_key
        if key not in self._outcomes or self._outcomes[key] is not None:
            return False
        self._outcomes[key] = outcome
        return True

    def data_outcome(self, pkt: PacketEnvelope) -> Optional[str]:
        return self._outcomes.get(pkt.data_key)

    def record_drop(self, reason: str, node: NodeId, pkt: Optional[PacketEnvelope] = None, **extra):
        self.metrics.count_drop(reason)
        self.trace_event(node, "DROP", pkt, reason=reason, **extra)
        inner = pkt.body if pkt is not None and pkt.kind is PacketKind.FRIEND else pkt
        if inner is not None and inner.kind is PacketKind.DATA:
            if self._close_data(inner, reason):
                self.metrics.data_dropped += 1

    def record_delivery(self, pkt: PacketEnvelope) -> bool:
        if not self._close_data(pkt, "delivered"):
            self.metrics.duplicates_suppressed += 1
            return False
        self.metrics.delivered += 1
        self.metrics.bytes_delivered += pkt.payload_bytes
        return True

    # ------------------------------------------------------------ link layer

    def link_for(self, pkt: PacketEnvelope, a: NodeId, b: NodeId) -> LinkModel:
        culture_name = self.protocol.culture_of(pkt.cid) if pkt.cid is not None else None
        key = culture_name or ""
        if key not in self._links:
            if culture_name is not None:
                physical = self.registry.art_in_slot(culture_name, Layer.PHYSICAL)
                mac = self.registry.art_in_slot(culture_name, Layer.MAC)
            else:
                physical = self.registry.arts.get(self.scenario.link_defaults.physical)
                mac = self.registry.arts.get(self.scenario.link_defaults.mac)
            if physical is None or mac is None:
                self._links[key] = DEFAULT_LINK
            else:
                self._links[key] = LinkModel.from_arts(physical, mac)
        return self._links[key].with_overrides(self.topology.edge_overrides(a, b))

    def transmit(self, pkt: PacketEnvelope, a: NodeId, b: NodeId) -> bool:
        """Send one copy over edge (a, b); False when the copy is lost."""
        delay = self.link_for(pkt, a, b).draw(self.rng)
        if delay is None:
            self.metrics.count_drop(LOST)
            self.trace_event(b, "DROP", pkt, reason=LOST, frm=a.label)
            if not pkt.is_broadcast:
                inner = pkt.body if pkt.kind is PacketKind.FRIEND else pkt
                if inner.kind is PacketKind.DATA and self._close_data(inner, LOST):
                    self.metrics.data_dropped += 1
            return False
        self.schedule(self.now + delay, EventKind.DELIVER, lambda: self._arrive(pkt, b), "deliver")
        return True

    def broadcast(self, node: NodeId, pkt: PacketEnvelope):
        self._count_tx(pkt, broadcast=True)
        self.trace_event(node, f"{pkt.kind.value}_TX", pkt, to=BROADCAST)
        for neighbor in self.topology.neighbors(node):
            self.transmit(pkt, node, neighbor)

    def unicast(self, node: NodeId, next_node: NodeId, pkt: PacketEnvelope) -> bool:
        if not self.topology.adjacent(node, next_node):
            return False
        self._count_tx(pkt, broadcast=False)
        self.trace_event(node, f"{pkt.kind.value}_TX", pkt, to=next_node.label)
        self.transmit(pkt, node, next_node)
        return True

    def first_visit(self, node: NodeId, packet_id: int) -> bool:
        seen = self._seen.setdefault(node, set())
        if packet_id in seen:
            return False
        seen.add(packet_id)
        return True

    def originate_flood(self, node: NodeId, pkt: PacketEnvelope):
        self._seen.setdefault(node, set()).add(pkt.packet_id)
        self.broadcast(node, pkt)

    def rebroadcast(self, node: NodeId, pkt: PacketEnvelope):
        if self.is_selfish(node):
            self.trace_event(node, "SELFISH", pkt)
            return
        self.broadcast(node, pkt)

    def forward(self, node: NodeId, pkt: PacketEnvelope) -> bool:
        """Move a source-routed packet one hop along pkt.route."""
        next_node = pkt.route.next_hop(node)
        if next_node is None:
            return False
        if node != pkt.src and self.is_selfish(node):
            self.trace_event(node, "SELFISH", pkt)
            return False
        if pkt.kind is PacketKind.DATA:
            self.overheard(node, pkt)
        if not self.topology.adjacent(node, next_node):
            self.router.on_forward_failure(node, next_node, pkt)
            return False
        if pkt.kind is PacketKind.DATA and next_node != pkt.route.end:
            self._arm_watchdog(node, next_node, pkt)
        return self.unicast(node, next_node, pkt)

    # ------------------------------------------------------------- receiving

    def _arrive(self, pkt: PacketEnvelope, node: NodeId):
        if node in pkt.hop_trace:
            # echo of a broadcast back to a node it already crossed
            self.metrics.duplicates_suppressed += 1
            return
        pkt = pkt.forwarded_to(node)
        if pkt.is_broadcast and pkt.kind is not PacketKind.HELLO:
            self._settle_arrival(node, pkt)
        else:
            self._dispatch(node, pkt)

    def _settle_arrival(self, node: NodeId, pkt: PacketEnvelope):
        key = (node, pkt.packet_id)
        if key in self._settling:
            self._settling[key].append(pkt)
            return
        seen = self._seen.setdefault(node, set())
        if pkt.packet_id in seen:
            self.metrics.duplicates_suppressed += 1
            self.trace_event(node, "DUP", pkt, frm=pkt.hop_trace[-2].label)
            return
        seen.add(pkt.packet_id)
        self._settling[key] = [pkt]
        self.schedule(self.now, EventKind.TIMER, lambda: self._settle(key), "settle")

    def _settle(self, key):
        node, _ = key
        candidates = self._settling.pop(key)
        # same-tick copies: the lower sender index becomes the parent
        chosen = min(candidates, key=lambda p: p.hop_trace[-2].index)
        for other in candidates:
            if other is not chosen:
                self.metrics.duplicates_suppressed += 1
                self.trace_event(node, "DUP", other, frm=other.hop_trace[-2].label)
        self._dispatch(node, chosen)

    def _dispatch(self, node: NodeId, pkt: PacketEnvelope):
        if pkt.route is not None and node != pkt.route.end:
            self.forward(node, pkt)
            return
        if pkt.kind is not PacketKind.DATA:
            self.trace_event(node, f"{pkt.kind.value}_RX", pkt, frm=pkt.hop_trace[-2].label)
        handlers = {
            PacketKind.MCSTART: self.protocol.handle_mcstart,
            PacketKind.MCJOIN: self.protocol.on_mcjoin,
            PacketKind.TABLE: self.protocol.handle_table,
            PacketKind.RREQ: self.router.handle_rreq,
            PacketKind.RREP: self.router.on_rrep,
            PacketKind.RERR: self.router.handle_rerr,
            PacketKind.HELLO: self.router.handle_hello,
            PacketKind.FRIEND: self.router.handle_friend,
            PacketKind.DATA: self.baseline.handle_flood if pkt.is_broadcast else self.router.deliver_data,
        }
        try:
            handlers[pkt.kind](node, pkt)
        except HamanetError as e:
            logger.debug(f"{type(e).__name__} at {node.label}: {e}")
            self.record_drop(e.reason, node, pkt)

    # -------------------------------------------------------------- watchdog

    def _arm_watchdog(self, node: NodeId, next_node: NodeId, pkt: PacketEnvelope):
        key = (pkt.data_key, next_node)
        self._watchdogs[key] = True
        self.after(
            self.params.watchdog_timeout,
            lambda: self._watchdog_expired(node, next_node, pkt, key),
            "watchdog",
        )

    def overheard(self, node: NodeId, pkt: PacketEnvelope):
        self._watchdogs.pop((pkt.data_key, node), None)

    def _watchdog_expired(self, node, next_node, pkt, key):
        if not self._watchdogs.pop(key, False):
            return
        if self.data_outcome(pkt) is not None:
            return
        self.trace_event(node, "WATCHDOG", pkt, suspect=next_node.label)
        self.router.on_delivery_timeout(node, pkt)

    # ----------------------------------------------------------- adversaries

    def is_adversary(self, node: NodeId) -> bool:
        return node in self._adversaries

    def is_selfish(self, node: NodeId) -> bool:
        profile = self._adversaries.get(node)
        return (
            profile is not None
            and profile.behavior is Behavior.SELFISH
            and self.now >= profile.start
        )

    def is_bogus_responder(self, node: NodeId) -> bool:
        profile = self._adversaries.get(node)
        return profile is not None and profile.behavior is Behavior.BOGUS_RREP and self.now >= profile.start

    def inject_adversary(self, profile: AdversaryProfile):
        if profile.node in self._adversaries:
            raise ValueError(f"{profile.node.label} already has an adversary profile")
        self._adversaries[profile.node] = profile
        logger.info(
            f"Adversary {profile.behavior.value} on {profile.node.label} "
            f"(rate {profile.rate}, count {profile.count})"
        )
        if profile.behavior is Behavior.SELFISH or profile.count == 0:
            return
        self.schedule(
            profile.start,
            EventKind.TIMER,
            lambda: self._adversary_tick(profile, 0),
            "adversary",
        )

    def _adversary_tick(self, profile: AdversaryProfile, index: int):
        if profile.behavior is Behavior.UNDECLARED_OP:
            self._send_undeclared(profile, index)
        else:
            self.router.send_bogus_reply(profile.node, index)
        if index + 1 < profile.count:
            jitter = self.rng.randrange(profile.interval)
            at = profile.start + (index + 1) * profile.interval + jitter
            self.schedule(max(at, self.now), EventKind.TIMER, lambda: self._adversary_tick(profile, index + 1), "adversary")

    def _send_undeclared(self, profile: AdversaryProfile, index: int):
        node = profile.node
        targets = [
            machine
            for neighbor in self.topology.neighbors(node)
            for machine in self.machines.machines_on(neighbor)
            if machine.cid is not None
        ]
        if not targets:
            self.trace_event(node, "ADV_IDLE")
            return
        target = targets[index % len(targets)]
        pkt = PacketEnvelope(
            packet_id=self.next_packet_id(),
            kind=PacketKind.DATA,
            src=node,
            dst=target.node,
            op_code=profile.op_code,
            cid=target.cid,
            origin_machine=MachineId(node, 0),
            seq=index,
            route=Path((node, target.node)),
        )
        self.data_sent(pkt)
        self.forward(node, pkt)

    # ----------------------------------------------------------------- steps

    def _schedule_step(self, step: Step):
        self.schedule(step.at, EventKind.SCENARIO, lambda: self._execute_step(step), step.op)

    def _execute_step(self, step: Step):
        try:
            getattr(self, f"_step_{step.op}")(step)
        except HamanetError as e:
            self._step_failed(step, f"{type(e).__name__}: {e}")

    def _step_failed(self, step: Step, message: str):
        self.metrics.step_failures.append(f"t={self.now} {step.op}: {message}")
        node_label = step.get("node") or step.get("src") or step.get("a")
        node = self.topology.by_label.get(str(node_label)) if node_label else None
        self.trace.append(
            f"t={self.now} node={node.label if node else '-'} ev=STEP_FAIL pkt=- op={step.op}"
        )
        logger.warning(f"Step {step.op} at t={self.now} failed: {message}")

    def _node(self, step: Step, key: str) -> NodeId:
        return self.topology.node(str(step.get(key)))

    def _step_start_service(self, step: Step):
        self.protocol.start_service(self._node(step, "node"), str(step.get("culture")))

    def _step_late_join(self, step: Step):
        self.protocol.late_join(self._node(step, "node"), CommunityId(str(step.get("cid"))))

    def _member_pair(self, step: Step):
        cid = CommunityId(str(step.get("cid")))
        src = self.router.member_machine(self._node(step, "src"), cid)
        dst = self.router.member_machine(self._node(step, "dst"), cid)
        return src, dst

    def _step_send(self, step: Step):
        if self.mode == "baseline":
            self.baseline.flood_send(
                self._node(step, "src"), step.get("payload_bytes", 0), self._node(step, "dst")
            )
            return
        src, dst = self._member_pair(step)
        self.router.send_data(
            src, dst.mid, str(step.get("op_code")), payload_bytes=step.get("payload_bytes", 0)
        )

    def _step_ftp_request(self, step: Step):
        src, dst = self._member_pair(step)
        self.files.ftp_request(src.mid, dst.mid, str(step.get("file")))

    def _step_remove_edge(self, step: Step):
        a, b = self._node(step, "a"), self._node(step, "b")
        if not self.topology.remove_edge(a, b):
            self._step_failed(step, f"no edge {a.label}-{b.label}")
            return
        self.trace_event(a, "EDGE_DEL", peer=b.label)
        if self.mode == "hamanet" and self.params.link_detection == "immediate":
            self.router.link_break(a, b)

    def _step_add_edge(self, step: Step):
        a, b = self._node(step, "a"), self._node(step, "b")
        self.topology.add_edge(a, b, step.get("loss"), step.get("delay"))
        self.trace_event(a, "EDGE_ADD", peer=b.label)

    def _step_set_loss(self, step: Step):
        a, b = self._node(step, "a"), self._node(step, "b")
        if not self.topology.set_loss(a, b, step.get("loss")):
            self._step_failed(step, f"no edge {a.label}-{b.label}")

    def _step_snapshot(self, step: Step):
        digest = self.snapshot()
        self.metrics.snapshots.append((self.now, digest))
        self.trace.append(f"t={self.now} node=- ev=SNAPSHOT pkt=- digest={digest}")

    def _workload_send(self, index: int):
        workload = self.scenario.workload
        step = Step(self.now, "send", (("op_code", workload.op_code),))
        try:
            src_node = self.topology.node(workload.src)
            dst_node = self.topology.node(workload.dst)
            if self.mode == "baseline":
                self.baseline.flood_send(src_node, workload.payload_bytes, dst_node)
                return
            cid = CommunityId(workload.cid)
            src = self.router.member_machine(src_node, cid)
            dst = self.router.member_machine(dst_node, cid)
            self.router.send_data(src, dst.mid, workload.op_code, payload_bytes=workload.payload_bytes)
        except HamanetError as e:
            self._step_failed(step, f"workload #{index}: {type(e).__name__}: {e}")

    # ------------------------------------------------------------------- run

    def _setup(self):
        for step in self.scenario.ordered_steps():
            if self.mode == "baseline":
                mirrored = step.op == "send" and bool(step.get("mirror", False))
                if step.op not in ENVIRONMENT_STEPS and not mirrored:
                    continue
            self._schedule_step(step)
        if self.scenario.workload is not None:
            for index, at in enumerate(self.scenario.workload.send_times()):
                self.schedule(at, EventKind.SCENARIO, lambda i=index: self._workload_send(i), "workload")
        if self.mode != "hamanet":
            return
        for spec in self.scenario.adversaries:
            self.inject_adversary(AdversaryProfile.from_spec(spec, self.topology))
        if self.params.hello_enabled:
            for node in self.topology.nodes:
                self.schedule(0, EventKind.TIMER, lambda n=node: self.router.hello_tick(n), "hello")

    def run(self) -> Tuple[MetricsReport, List[str]]:
        logger.info(
            f"Running {self.scenario.name} in {self.mode} mode with seed {self.seed} "
            f"({len(self.topology.nodes)} nodes)"
        )
        self._setup()
        while self.queue:
            if self.queue[0].time > self.params.end_time:
                break
            event = heapq.heappop(self.queue)
            self.now = event.time
            self.metrics.events += 1
            event.action()
        self._finalize()
        logger.info(
            f"Finished {self.scenario.name} ({self.mode}) at t={self.now}: "
            f"{self.metrics.total_tx} transmissions, {self.metrics.delivered}/{self.metrics.data_sent} delivered"
        )
        return self.metrics, self.trace

    def _finalize(self):
        m = self.metrics
        m.end_time = self.now
        m.in_flight = sum(1 for outcome in self._outcomes.values() if outcome is None)
        m.society = self.protocol.society.lines()
        m.tables = [
            {"owner": owner.label, "cid": cid.label, "rows": table.lines()}
            for owner, cid, table in self.protocol.all_tables()
        ]
        m.sessions = self.files.session_summaries()

    # -------------------------------------------------------------- snapshot

    def snapshot_lines(self) -> List[str]:
        lines = ["society"] + self.protocol.society.lines()
        for owner, cid, table in self.protocol.all_tables():
            lines.append(f"table {owner.label} {cid.label}")
            lines.extend(table.lines())
        for node in self.topology.nodes:
            known = ",".join(n.label for n in self.router.known_neighbors(node))
            lines.append(f"neighbors {node.label} {known}")
        return lines

    def snapshot(self) -> str:
        """Digest of every table and neighbor set at the current time."""
        return digest_lines(self.snapshot_lines())


def run(scenario: Scenario, seed: int = 0, mode: str = "hamanet") -> Tuple[MetricsReport, List[str]]:
    return Simulator(scenario, seed, mode).run()