"""Intra-community delivery.

DATA is source-routed along community-table paths. A miss at a member with
valid rows launches an RREQ flood and queues the packet; a member with an
empty table, or a relay whose next hop vanished, falls back to the friend
relay, which wraps the packet so non-members can carry it to a member.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Deque, Dict, FrozenSet, List, Optional, Set, Tuple, Union

from errors import (
    BOGUS_REPLY,
    DELIVERY_TIMEOUT,
    LINK_BROKEN,
    NO_ROUTE,
    NOT_MEMBER,
    OP_REJECTED,
    QUEUE_OVERFLOW,
    STALE_REPLY,
    NoFriendAvailable,
    NotAMember,
    OpRejected,
)
from model_core import (
    BROADCAST,
    CommunityId,
    MachineId,
    NodeId,
    PacketEnvelope,
    PacketKind,
    Path,
    splice_paths,
)
from service_fabric import MachineInstance, accepts

if TYPE_CHECKING:
    from sim_engine import Simulator

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("routing")

ANY_MEMBER = "ANY_MEMBER"
# rreq ids used by fabricated replies; real ids never get this high
BOGUS_RREQ_BASE = 1_000_000


@dataclass(frozen=True)
class RouteRequest:
    rreq_id: int
    cid: CommunityId
    origin: NodeId
    origin_machine: MachineId
    target: Union[MachineId, str] = ANY_MEMBER


@dataclass(frozen=True)
class RouteReply:
    rreq_id: int
    responder: MachineId
    table_snapshot: Tuple[Tuple[MachineId, Path], ...] = ()


@dataclass(frozen=True)
class RouteError:
    cid: CommunityId
    a: NodeId
    b: NodeId


@dataclass(frozen=True)
class HelloBeacon:
    cids: FrozenSet[CommunityId] = frozenset()
    # communities the sender has a member neighbor in
    near: FrozenSet[CommunityId] = frozenset()


@dataclass
class NeighborSet:
    owner: NodeId
    neighbors: Set[NodeId] = field(default_factory=set)
    last_hello: Dict[NodeId, int] = field(default_factory=dict)
    advertised: Dict[NodeId, HelloBeacon] = field(default_factory=dict)

    def heard(self, node: NodeId, at: int, beacon: HelloBeacon):
        self.neighbors.add(node)
        self.last_hello[node] = at
        self.advertised[node] = beacon

    def forget(self, node: NodeId):
        self.neighbors.discard(node)
        self.last_hello.pop(node, None)
        self.advertised.pop(node, None)

    def expired(self, now: int, interval: int) -> List[NodeId]:
        return sorted(n for n in self.neighbors if now - self.last_hello[n] > 2 * interval)


@dataclass
class PendingRequest:
    rreq_id: int
    origin: NodeId
    origin_machine: MachineId
    cid: CommunityId
    target: Union[MachineId, str]
    retries_left: int
    satisfied: bool = False
    closed: bool = False


@dataclass
class QueuedSend:
    target: MachineId
    pkt: PacketEnvelope


class Router:
    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.neighbor_sets: Dict[NodeId, NeighborSet] = {}
        self.pending: Dict[Tuple[NodeId, int], PendingRequest] = {}
        self.active: Dict[tuple, PendingRequest] = {}
        self.queues: Dict[Tuple[NodeId, CommunityId], Deque[QueuedSend]] = {}
        self._rreq_ids: Dict[NodeId, int] = {}
        self._data_seqs: Dict[MachineId, int] = {}

    @property
    def protocol(self):
        return self.sim.protocol

    # ------------------------------------------------------------ lookups

    def member_machine(self, node: NodeId, cid: CommunityId) -> MachineInstance:
        machine = self.sim.machines.machine_in(node, cid)
        if machine is None or not self.protocol.is_member(node, cid):
            raise NotAMember(f"{node.label} is not a member of {cid}")
        return machine

    def lookup_path(self, node: NodeId, cid: CommunityId, dest: MachineId) -> Optional[Path]:
        table = self.protocol.table_of(node, cid)
        if table is None:
            raise NotAMember(f"{node.label} is not a member of {cid}")
        return table.path_to(dest)

    def known_neighbors(self, node: NodeId) -> List[NodeId]:
        if self.sim.params.hello_enabled and self.sim.mode == "hamanet":
            nset = self.neighbor_sets.get(node)
            return sorted(nset.neighbors) if nset else []
        return self.sim.topology.neighbors(node)

    def neighbor_view(self, node: NodeId, exclude: Set[NodeId]) -> List[Tuple[NodeId, FrozenSet, FrozenSet]]:
        """(neighbor, its communities, communities it has a member neighbor in)."""
        view = []
        if self.sim.params.hello_enabled and self.sim.mode == "hamanet":
            nset = self.neighbor_sets.get(node)
            for neighbor in sorted(nset.neighbors) if nset else []:
                beacon = nset.advertised[neighbor]
                view.append((neighbor, beacon.cids, beacon.near))
            return view
        topology = self.sim.topology
        for neighbor in topology.neighbors(node):
            near = set()
            for two_hop in topology.neighbors(neighbor):
                if two_hop != node and two_hop not in exclude:
                    near.update(self.protocol.member_cids(two_hop))
            view.append((neighbor, frozenset(self.protocol.member_cids(neighbor)), frozenset(near)))
        return view

    # ------------------------------------------------------------ sending

    def send_data(
        self,
        src: MachineInstance,
        dest: MachineId,
        op_code: str,
        payload: bytes = b"",
        payload_bytes: Optional[int] = None,
        body=None,
    ) -> PacketEnvelope:
        table = self.protocol.table_of(src.node, src.cid) if src.cid else None
        if table is None:
            raise NotAMember(f"{src.mid} is not in a formed community")
        if not accepts(src, op_code):
            raise OpRejected(f"{src.culture} does not declare {op_code}")
        seq = self._data_seqs.get(src.mid, 0)
        self._data_seqs[src.mid] = seq + 1
        pkt = PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=PacketKind.DATA,
            src=src.node,
            dst=dest.node,
            op_code=op_code,
            cid=src.cid,
            origin_machine=src.mid,
            payload_bytes=len(payload) if payload_bytes is None else payload_bytes,
            payload=payload,
            seq=seq,
            body=body,
        )
        self.sim.data_sent(pkt)
        if dest.node == src.node:
            self.deliver_data(src.node, pkt)
        else:
            self._route_or_repair(src.node, dest, pkt)
        return pkt

    def _route_or_repair(self, node: NodeId, dest: MachineId, pkt: PacketEnvelope):
        table = self.protocol.table_of(node, pkt.cid)
        path = table.path_to(dest)
        if path is not None:
            self.sim.forward(node, replace(pkt, route=path))
        elif len(table) == 0:
            self.send_friend_packet(node, pkt)
        elif self._enqueue(node, dest, pkt):
            self.request_route(node, pkt.cid, dest)

    def _enqueue(self, node: NodeId, dest: MachineId, pkt: PacketEnvelope) -> bool:
        queue = self.queues.setdefault((node, pkt.cid), deque())
        if len(queue) >= self.sim.params.queue_limit:
            self.sim.record_drop(QUEUE_OVERFLOW, node, pkt)
            return False
        queue.append(QueuedSend(dest, pkt))
        return True

    def _flush(self, node: NodeId, cid: CommunityId):
        queue = self.queues.get((node, cid))
        if not queue:
            return
        table = self.protocol.table_of(node, cid)
        waiting = deque()
        while queue:
            item = queue.popleft()
            path = table.path_to(item.target)
            if path is None:
                waiting.append(item)
            else:
                self.sim.forward(node, replace(item.pkt, route=path))
        self.queues[(node, cid)] = waiting

    def deliver_data(self, node: NodeId, pkt: PacketEnvelope):
        machine = self.sim.machines.machine_in(node, pkt.cid) if pkt.cid else None
        if machine is None:
            self.sim.record_drop(NOT_MEMBER, node, pkt)
            return
        if not accepts(machine, pkt.op_code):
            self.sim.metrics.rejected_ops += 1
            self.sim.trace_event(node, "REJECT", pkt, op=pkt.op_code, mid=machine.mid.label)
            self.sim.record_drop(OP_REJECTED, node, pkt)
            return
        if not self.sim.record_delivery(pkt):
            return
        self.sim.trace_event(
            node,
            "DATA_RX",
            pkt,
            cid=pkt.cid.label,
            mid=machine.mid.label,
            mcid=machine.cid.label,
            op=pkt.op_code,
        )
        self.sim.files.on_data(machine, pkt)

    def on_delivery_timeout(self, node: NodeId, pkt: PacketEnvelope):
        self.sim.record_drop(DELIVERY_TIMEOUT, node, pkt)

    # ------------------------------------------------------------ RREQ / RREP

    def request_route(self, node: NodeId, cid: CommunityId, target=ANY_MEMBER) -> Optional[PendingRequest]:
        key = (node, cid, target)
        if key in self.active:
            return self.active[key]
        own = self.member_machine(node, cid)
        return self._launch(node, own.mid, cid, target, self.sim.params.rreq_retries)

    def _launch(self, node, origin_machine, cid, target, retries_left) -> PendingRequest:
        rreq_id = self._rreq_ids.get(node, 0) + 1
        self._rreq_ids[node] = rreq_id
        pending = PendingRequest(rreq_id, node, origin_machine, cid, target, retries_left)
        self.pending[(node, rreq_id)] = pending
        self.active[(node, cid, target)] = pending
        pkt = PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=PacketKind.RREQ,
            src=node,
            dst=BROADCAST,
            cid=cid,
            origin_machine=origin_machine,
            body=RouteRequest(rreq_id, cid, node, origin_machine, target),
        )
        self.sim.originate_flood(node, pkt)
        self.sim.after(self.sim.params.t_rreq, lambda: self._rreq_timeout(pending), "rreq_timeout")
        return pending

    def _rreq_timeout(self, pending: PendingRequest):
        pending.closed = True
        key = (pending.origin, pending.cid, pending.target)
        if self.active.get(key) is pending:
            del self.active[key]
        if pending.satisfied:
            return
        if pending.retries_left > 0:
            self._launch(
                pending.origin, pending.origin_machine, pending.cid, pending.target, pending.retries_left - 1
            )
            return
        self.sim.trace_event(pending.origin, "RREQ_TIMEOUT", rreq=pending.rreq_id)
        queue = self.queues.get((pending.origin, pending.cid), deque())
        kept = deque()
        for item in queue:
            if pending.target == ANY_MEMBER or item.target == pending.target:
                self.sim.record_drop(DELIVERY_TIMEOUT, pending.origin, item.pkt)
            else:
                kept.append(item)
        self.queues[(pending.origin, pending.cid)] = kept

    def handle_rreq(self, node: NodeId, pkt: PacketEnvelope):
        request: RouteRequest = pkt.body
        if self.sim.is_bogus_responder(node):
            self._bogus_reply(node, pkt)
            return
        table = self.protocol.table_of(node, request.cid)
        if table is not None:
            table.offer_row(request.origin_machine, pkt.trace_path().reversed())
            target = request.target
            if target == ANY_MEMBER or target.node == node or table.path_to(target) is not None:
                own = self.sim.machines.machine_in(node, request.cid)
                route = pkt.trace_path().reversed()
                reply = PacketEnvelope(
                    packet_id=self.sim.next_packet_id(),
                    kind=PacketKind.RREP,
                    src=node,
                    dst=request.origin,
                    cid=request.cid,
                    origin_machine=own.mid,
                    route=route,
                    body=RouteReply(
                        request.rreq_id,
                        own.mid,
                        tuple((mid, row.path) for mid, row in table.sorted_rows()),
                    ),
                )
                self.sim.forward(node, reply)
                return
        # non-members, and members that cannot answer, relay the flood once
        self.sim.rebroadcast(node, pkt)

    def on_rrep(self, node: NodeId, pkt: PacketEnvelope):
        self.handle_rrep(node, pkt.body, pkt)

    def handle_rrep(self, origin: NodeId, rrep: RouteReply, pkt: PacketEnvelope):
        pending = self.pending.get((origin, rrep.rreq_id))
        if pending is None or pending.closed:
            self.sim.record_drop(STALE_REPLY, origin, pkt, rreq=rrep.rreq_id)
            return
        travel = pkt.trace_path().reversed()
        roster = self.protocol.roster_of(origin, pending.cid)
        if rrep.responder not in roster or travel.end != rrep.responder.node:
            self.sim.record_drop(BOGUS_REPLY, origin, pkt, responder=rrep.responder.label)
            return
        table = self.protocol.table_of(origin, pending.cid)
        table.offer_row(rrep.responder, travel)
        for mid, path in rrep.table_snapshot:
            if mid.node == origin or path.start != travel.end:
                continue
            table.offer_row(mid, splice_paths(travel, path))
        if pending.satisfied:
            return
        if pending.target == ANY_MEMBER or table.path_to(pending.target) is not None:
            pending.satisfied = True
            self._flush(origin, pending.cid)

    def _bogus_reply(self, node: NodeId, pkt: PacketEnvelope):
        request: RouteRequest = pkt.body
        fabricated = tuple(
            (m.mid, Path((node, m.node)))
            for m in self.sim.machines.all_machines()
            if m.cid == request.cid and m.node != node
        )
        reply = PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=PacketKind.RREP,
            src=node,
            dst=request.origin,
            cid=request.cid,
            route=pkt.trace_path().reversed(),
            body=RouteReply(request.rreq_id, MachineId(node, 0), fabricated),
        )
        self.sim.trace_event(node, "BOGUS", reply, rreq=request.rreq_id)
        self.sim.forward(node, reply)

    def send_bogus_reply(self, node: NodeId, index: int):
        """Unsolicited reply with an rreq_id nobody issued, sent to each member neighbor."""
        for neighbor in self.sim.topology.neighbors(node):
            cids = self.protocol.member_cids(neighbor)
            if not cids:
                continue
            reply = PacketEnvelope(
                packet_id=self.sim.next_packet_id(),
                kind=PacketKind.RREP,
                src=node,
                dst=neighbor,
                cid=cids[0],
                route=Path((node, neighbor)),
                body=RouteReply(
                    BOGUS_RREQ_BASE + index,
                    MachineId(node, 0),
                    ((MachineId(node, 0), Path((neighbor, node))),),
                ),
            )
            self.sim.trace_event(node, "BOGUS", reply, rreq=BOGUS_RREQ_BASE + index)
            self.sim.forward(node, reply)

    # ------------------------------------------------------------ link breaks

    def link_break(self, a: NodeId, b: NodeId):
        for x, y in ((a, b), (b, a)):
            self._endpoint_break(x, y)

    def _endpoint_break(self, x: NodeId, y: NodeId) -> Set[NodeId]:
        """Invalidate x's rows over (x, y) and RERR every origin x can still reach."""
        self.sim.trace_event(x, "LINK_BREAK", peer=y.label)
        nset = self.neighbor_sets.get(x)
        if nset is not None:
            nset.forget(y)
        notified = set()
        for cid in self.protocol.member_cids(x):
            table = self.protocol.table_of(x, cid)
            table.invalidate_edge(x, y)
            roster = self.protocol.roster_of(x, cid)
            for origin in affected_members(roster, x, y):
                path = table.path_to(origin)
                if path is None:
                    continue
                self._send_rerr(x, cid, x, y, path)
                notified.add(origin.node)
        return notified

    def _send_rerr(self, node: NodeId, cid: CommunityId, a: NodeId, b: NodeId, route: Path):
        pkt = PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=PacketKind.RERR,
            src=node,
            dst=route.end,
            cid=cid,
            route=route,
            body=RouteError(cid, a, b),
        )
        self.sim.forward(node, pkt)

    def handle_rerr(self, node: NodeId, pkt: PacketEnvelope):
        error: RouteError = pkt.body
        table = self.protocol.table_of(node, error.cid)
        if table is not None:
            table.invalidate_edge(error.a, error.b)

    def on_forward_failure(self, node: NodeId, next_node: NodeId, pkt: PacketEnvelope):
        notified = self._endpoint_break(node, next_node)
        if pkt.kind is not PacketKind.DATA:
            self.sim.record_drop(LINK_BROKEN, node, pkt, peer=next_node.label)
            return
        if node == pkt.src:
            dest = self.sim.machines.machine_in(pkt.dst, pkt.cid)
            if dest is None or not self.protocol.is_member(node, pkt.cid):
                self.sim.record_drop(NO_ROUTE, node, pkt)
                return
            self._route_or_repair(node, dest.mid, replace(pkt, route=None))
            return
        if pkt.src not in notified:
            self._send_rerr(node, pkt.cid, node, next_node, pkt.trace_path().reversed())
        self.send_friend_packet(node, pkt)

    # ------------------------------------------------------------ friend relay

    def _choose_friend(self, node: NodeId, cid: CommunityId, exclude: Set[NodeId]) -> Optional[NodeId]:
        view = [entry for entry in self.neighbor_view(node, exclude) if entry[0] not in exclude]
        for neighbor, cids, _ in view:
            if cid in cids:
                return neighbor
        for neighbor, _, near in view:
            if cid in near:
                return neighbor
        return None

    def send_friend_packet(self, node: NodeId, inner: PacketEnvelope):
        self.sim.overheard(node, inner)
        try:
            self._relay_wrapper(node, inner, None)
        except NoFriendAvailable as e:
            logger.debug(str(e))
            self.sim.record_drop(e.reason, node, inner)

    def _relay_wrapper(self, node: NodeId, inner: PacketEnvelope, wrapper: Optional[PacketEnvelope]):
        exclude = set(inner.hop_trace) | {node}
        if wrapper is not None:
            exclude |= set(wrapper.hop_trace)
        choice = self._choose_friend(node, inner.cid, exclude)
        if wrapper is None:
            wrapper = PacketEnvelope(
                packet_id=self.sim.next_packet_id(),
                kind=PacketKind.FRIEND,
                src=node,
                dst=BROADCAST,
                cid=inner.cid,
                origin_machine=inner.origin_machine,
                body=inner,
            )
        if choice is not None:
            if not self.sim.unicast(node, choice, replace(wrapper, dst=choice)):
                self.sim.record_drop(LINK_BROKEN, node, wrapper, peer=choice.label)
            return
        if wrapper.is_broadcast and wrapper.src != node:
            self.sim.rebroadcast(node, wrapper)
            return
        if not any(n not in exclude for n in self.known_neighbors(node)):
            raise NoFriendAvailable(f"{node.label} has no neighbor to relay {inner.packet_id}")
        self.sim.originate_flood(node, replace(wrapper, dst=BROADCAST))

    def handle_friend(self, node: NodeId, wrapper: PacketEnvelope):
        inner: PacketEnvelope = wrapper.body
        if not wrapper.is_broadcast and not self.sim.first_visit(node, wrapper.packet_id):
            self.sim.metrics.duplicates_suppressed += 1
            return
        if node in inner.hop_trace:
            # the wrapped packet already crossed this node
            self.sim.metrics.duplicates_suppressed += 1
            return
        if self.protocol.is_member(node, inner.cid):
            self._unwrap(node, inner)
            return
        if self.sim.is_selfish(node):
            self.sim.trace_event(node, "SELFISH", wrapper)
            return
        try:
            self._relay_wrapper(node, inner, wrapper)
        except NoFriendAvailable as e:
            logger.debug(str(e))
            self.sim.record_drop(e.reason, node, wrapper)

    def _unwrap(self, node: NodeId, inner: PacketEnvelope):
        self.sim.trace_event(node, "UNWRAP", inner)
        if inner.dst == node:
            self.deliver_data(node, inner)
            return
        table = self.protocol.table_of(node, inner.cid)
        target = table.find_node(inner.dst)
        path = table.path_to(target) if target is not None else None
        if path is None:
            self.sim.record_drop(NO_ROUTE, node, inner)
            return
        leg = replace(
            inner,
            packet_id=self.sim.next_packet_id(),
            src=node,
            hop_trace=(node,),
            route=path,
        )
        self.sim.forward(node, leg)

    # ------------------------------------------------------------ HELLO

    def hello_tick(self, node: NodeId):
        sim = self.sim
        interval = sim.params.hello_interval
        nset = self.neighbor_sets.setdefault(node, NeighborSet(node))
        for neighbor in nset.expired(sim.now, interval):
            nset.forget(neighbor)
            sim.trace_event(node, "HELLO_EXPIRE", peer=neighbor.label)
            if sim.params.link_detection == "hello":
                self._endpoint_break(node, neighbor)
        near = set()
        for beacon in nset.advertised.values():
            near |= beacon.cids
        pkt = PacketEnvelope(
            packet_id=sim.next_packet_id(),
            kind=PacketKind.HELLO,
            src=node,
            dst=BROADCAST,
            body=HelloBeacon(frozenset(self.protocol.member_cids(node)), frozenset(near)),
        )
        sim.broadcast(node, pkt)
        if sim.now + interval <= sim.params.end_time:
            sim.after(interval, lambda: self.hello_tick(node), "hello")

    def handle_hello(self, node: NodeId, pkt: PacketEnvelope):
        nset = self.neighbor_sets.setdefault(node, NeighborSet(node))
        nset.heard(pkt.src, self.sim.now, pkt.body)


def affected_members(roster: Dict[MachineId, Path], a: NodeId, b: NodeId) -> List[MachineId]:
    """Members (other than the endpoints) whose rebased paths cross edge (a, b)."""
    affected = []
    for member in sorted(roster, key=lambda m: m.sort_key):
        if member.node in (a, b):
            continue
        back = roster[member].reversed()
        for other, si_path in roster.items():
            if other == member:
                continue
            if splice_paths(back, si_path).uses_edge(a, b):
                affected.append(member)
                break
    return affected
