"""Community lifecycle: MCSTART flood, MCJOIN, table construction and dissemination.

The Service Initiator (SI) floods MCSTART, collects MCJOINs for the join
window, then registers the community in the society table and sends every
member the roster with SI-relative paths. Members rebase those paths onto
themselves: path(a -> b) = splice(reverse(path(SI -> a)), path(SI -> b)).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Tuple

from errors import (
    LINK_BROKEN,
    UNREACHABLE_MEMBER,
    DUPLICATE_REPLY,
    DuplicatePending,
    NoSuchCommunity,
    NotAMember,
    PrerequisiteUnmet,
    UnknownCommunity,
)
from model_core import (
    BROADCAST,
    CommunityId,
    CommunityTable,
    MachineCulture,
    MachineId,
    NodeId,
    PacketEnvelope,
    PacketKind,
    Path,
    SocietyTable,
    mint_cid,
    splice_paths,
)
from service_fabric import MachineInstance

if TYPE_CHECKING:
    from sim_engine import Simulator

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("community_protocol")


@dataclass(frozen=True)
class ServiceAnnouncement:
    culture_name: str


@dataclass(frozen=True)
class JoinRequest:
    culture_name: str
    late: bool = False
    confirm: bool = False


@dataclass(frozen=True)
class TableDissemination:
    si: MachineId
    roster: Tuple[Tuple[MachineId, Path], ...]
    children: Tuple[Tuple[NodeId, Tuple[NodeId, ...]], ...]

    def children_of(self, node: NodeId) -> Tuple[NodeId, ...]:
        for parent, kids in self.children:
            if parent == node:
                return kids
        return ()


@dataclass(frozen=True)
class JoinReply:
    responder: MachineId
    roster: Tuple[Tuple[MachineId, Path], ...]
    rows: Tuple[Tuple[MachineId, Path], ...]
    path: Path  # responder -> joiner
    admitted: bool = False


@dataclass(frozen=True)
class MemberUpdate:
    joiner: MachineId
    si_path: Path
    via: Path  # responder -> joiner


@dataclass
class ServiceInitiator:
    node: NodeId
    cid: CommunityId
    culture: MachineCulture
    machine: MachineInstance
    join_deadline: int
    started_at: int
    joiners: Dict[MachineId, Path] = field(default_factory=dict)


@dataclass
class CommunityState:
    cid: CommunityId
    culture: MachineCulture
    si: ServiceInitiator
    members: Dict[MachineId, MachineInstance] = field(default_factory=dict)
    tables: Dict[NodeId, CommunityTable] = field(default_factory=dict)
    rosters: Dict[NodeId, Dict[MachineId, Path]] = field(default_factory=dict)
    formed_at: Optional[int] = None

    @property
    def formed(self) -> bool:
        return self.formed_at is not None

    def is_member(self, node: NodeId) -> bool:
        return node in self.tables


def society_lookup(st: SocietyTable, cid: CommunityId) -> Optional[MachineCulture]:
    """Culture registered for cid, or None when the society has no such row."""
    return st.lookup(cid)


def rebase_table(owner: MachineId, cid: CommunityId, roster: Dict[MachineId, Path]) -> CommunityTable:
    table = CommunityTable(owner.node, cid)
    back = roster[owner].reversed()
    for mid, si_path in roster.items():
        if mid == owner:
            continue
        table.set_row(mid, splice_paths(back, si_path))
    return table


class CommunityProtocol:
    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.society = SocietyTable()
        self.communities: Dict[CommunityId, CommunityState] = {}
        self.pending_joins: Dict[Tuple[NodeId, CommunityId], MachineId] = {}
        self.offers: Dict[Tuple[NodeId, MachineId], Path] = {}
        self._minted = 0

    # ----------------------------------------------------------- queries

    def culture_of(self, cid: CommunityId) -> Optional[str]:
        community = self.communities.get(cid)
        return community.culture.culture_name if community else None

    def table_of(self, node: NodeId, cid: CommunityId) -> Optional[CommunityTable]:
        community = self.communities.get(cid)
        return community.tables.get(node) if community else None

    def roster_of(self, node: NodeId, cid: CommunityId) -> Dict[MachineId, Path]:
        community = self.communities.get(cid)
        if community is None:
            return {}
        return community.rosters.get(node, {})

    def is_member(self, node: NodeId, cid: CommunityId) -> bool:
        community = self.communities.get(cid)
        return community is not None and community.is_member(node)

    def member_cids(self, node: NodeId) -> List[CommunityId]:
        return sorted(
            (cid for cid, c in self.communities.items() if c.is_member(node)),
            key=lambda cid: cid.sort_key,
        )

    def all_tables(self) -> Iterator[Tuple[NodeId, CommunityId, CommunityTable]]:
        for cid in sorted(self.communities, key=lambda c: c.sort_key):
            community = self.communities[cid]
            for owner in sorted(community.tables):
                yield owner, cid, community.tables[owner]

    def _community(self, cid: CommunityId) -> CommunityState:
        community = self.communities.get(cid)
        if community is None:
            raise UnknownCommunity(f"no community {cid}")
        return community

    def _interested(self, node: NodeId, culture_name: str) -> bool:
        if self.sim.is_adversary(node):
            return False
        spec = self.sim.scenario.node_spec(node.label)
        return spec is not None and culture_name in spec.interests

    def _packet(self, kind: PacketKind, src: NodeId, dst, cid, origin, body, route=None):
        return PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=kind,
            src=src,
            dst=dst,
            cid=cid,
            origin_machine=origin,
            route=route,
            body=body,
        )

    # ----------------------------------------------------------- start

    def start_service(self, node: NodeId, culture_name: str) -> CommunityId:
        culture = self.sim.registry.culture(culture_name)
        missing = culture.requires - self.sim.topology.attributes.get(node, frozenset())
        if missing:
            raise PrerequisiteUnmet(
                f"{node.label} lacks {sorted(missing)} needed by {culture_name}"
            )
        machine = self.sim.machines.instantiate_machine(culture_name, node)
        self._minted += 1
        cid = mint_cid(self._minted)
        machine.bind(cid)
        now = self.sim.now
        si = ServiceInitiator(
            node=node,
            cid=cid,
            culture=machine.culture,
            machine=machine,
            join_deadline=now + self.sim.params.join_window,
            started_at=now,
        )
        self.communities[cid] = CommunityState(
            cid=cid, culture=machine.culture, si=si, members={machine.mid: machine}
        )
        pkt = self._packet(
            PacketKind.MCSTART, node, BROADCAST, cid, machine.mid, ServiceAnnouncement(culture_name)
        )
        self.sim.trace_event(node, "START", pkt, cid=cid.label, culture=culture_name)
        self.sim.originate_flood(node, pkt)
        self.sim.after(self.sim.params.join_window, lambda: self._close_window(cid), "join_window")
        logger.info(f"{node.label} started {culture.label} as {cid} at t={now}")
        return cid

    def handle_mcstart(self, node: NodeId, pkt: PacketEnvelope):
        announcement: ServiceAnnouncement = pkt.body
        if (
            self._interested(node, announcement.culture_name)
            and self.sim.machines.machine_in(node, pkt.cid) is None
        ):
            self._send_join(node, pkt)
        # interested or not, every node forwards the announcement once
        self.sim.rebroadcast(node, pkt)

    def _send_join(self, node: NodeId, pkt: PacketEnvelope):
        try:
            machine = self.sim.machines.instantiate_machine(pkt.body.culture_name, node)
        except DuplicatePending as e:
            logger.debug(f"{node.label} skips join of {pkt.cid}: {e}")
            return
        machine.bind(pkt.cid)
        route = pkt.trace_path().reversed()
        join = self._packet(
            PacketKind.MCJOIN,
            node,
            route.end,
            pkt.cid,
            machine.mid,
            JoinRequest(pkt.body.culture_name),
            route=route,
        )
        self.sim.forward(node, join)

    # ----------------------------------------------------------- joins

    def on_mcjoin(self, node: NodeId, pkt: PacketEnvelope):
        if pkt.is_broadcast:
            self._answer_join_flood(node, pkt)
            return
        community = self._community(pkt.cid)
        if pkt.body.confirm:
            self._confirm_join(node, community, pkt)
            return
        if community.si.node != node:
            raise UnknownCommunity(f"{node.label} did not start {pkt.cid}")
        self.handle_mcjoin(community.si, pkt)

    def handle_mcjoin(self, si: ServiceInitiator, pkt: PacketEnvelope):
        if pkt.cid != si.cid:
            raise UnknownCommunity(f"{si.node.label} did not mint {pkt.cid}")
        community = self.communities[si.cid]
        path = pkt.trace_path().reversed()
        if not community.formed:
            si.joiners[pkt.origin_machine] = path
            return
        # joined after the window closed
        self._admit(community, si.node, pkt.origin_machine, path, notify_joiner=True)

    def _close_window(self, cid: CommunityId):
        community = self.communities[cid]
        si = community.si
        table = CommunityTable(si.node, cid)
        roster = {si.machine.mid: Path((si.node,))}
        for mid in sorted(si.joiners, key=lambda m: m.sort_key):
            path = si.joiners[mid]
            machine = self.sim.machines.find(mid)
            if not self.sim.topology.is_walk(path):
                self.sim.record_drop(UNREACHABLE_MEMBER, si.node, member=mid.label)
                if machine is not None:
                    self.sim.machines.discard(machine)
                continue
            table.set_row(mid, path)
            roster[mid] = path
            community.members[mid] = machine
        community.tables[si.node] = table
        community.rosters[si.node] = roster
        community.formed_at = self.sim.now
        self.society.register(cid, community.culture)
        self.sim.metrics.community_formation_times[cid.label] = self.sim.now - si.started_at
        self.sim.trace_event(si.node, "FORMED", cid=cid.label, members=len(roster))
        logger.info(f"Community {cid} ({community.culture.label}) formed with {len(roster)} members")
        self.disseminate_tables(community)

    def disseminate_tables(self, community: CommunityState):
        """Multicast the roster down the tree formed by the SI's member paths."""
        si = community.si
        roster = community.rosters[si.node]
        children: Dict[NodeId, List[NodeId]] = {}
        parent_of: Dict[NodeId, NodeId] = {}
        for mid in sorted(roster, key=lambda m: m.sort_key):
            for a, b in roster[mid].edges():
                if b in parent_of:
                    continue
                parent_of[b] = a
                children.setdefault(a, []).append(b)
        if not children:
            return
        body = TableDissemination(
            si=si.machine.mid,
            roster=tuple(sorted(roster.items(), key=lambda item: item[0].sort_key)),
            children=tuple((parent, tuple(kids)) for parent, kids in children.items()),
        )
        pkt = self._packet(PacketKind.TABLE, si.node, BROADCAST, community.cid, si.machine.mid, body)
        self._fan_out(si.node, pkt)

    def _fan_out(self, node: NodeId, pkt: PacketEnvelope):
        for child in pkt.body.children_of(node):
            copy = replace(pkt, dst=child)
            if not self.sim.unicast(node, child, copy):
                self.sim.record_drop(LINK_BROKEN, node, copy, peer=child.label)

    # ----------------------------------------------------------- tables

    def handle_table(self, node: NodeId, pkt: PacketEnvelope):
        body = pkt.body
        if isinstance(body, TableDissemination):
            self._install_disseminated(node, pkt)
            if self.sim.is_selfish(node):
                self.sim.trace_event(node, "SELFISH", pkt)
                return
            self._fan_out(node, pkt)
        elif isinstance(body, JoinReply):
            self._adopt_reply(node, pkt)
        elif isinstance(body, MemberUpdate):
            self._apply_update(node, pkt)

    def _install_disseminated(self, node: NodeId, pkt: PacketEnvelope):
        community = self._community(pkt.cid)
        machine = self.sim.machines.machine_in(node, pkt.cid)
        roster = dict(pkt.body.roster)
        if machine is None or machine.mid not in roster or community.is_member(node):
            return
        community.tables[node] = rebase_table(machine.mid, pkt.cid, roster)
        community.rosters[node] = roster
        self.sim.trace_event(node, "JOINED", pkt, cid=pkt.cid.label, rows=len(roster) - 1)

    def late_join(self, node: NodeId, cid: CommunityId):
        if cid not in self.society:
            raise NoSuchCommunity(f"{cid} is not in the society table")
        community = self.communities[cid]
        if self.sim.machines.machine_in(node, cid) is not None:
            return
        machine = self.sim.machines.instantiate_machine(community.culture.culture_name, node)
        machine.bind(cid)
        self.pending_joins[(node, cid)] = machine.mid
        pkt = self._packet(
            PacketKind.MCJOIN,
            node,
            BROADCAST,
            cid,
            machine.mid,
            JoinRequest(community.culture.culture_name, late=True),
        )
        self.sim.originate_flood(node, pkt)

    def _answer_join_flood(self, node: NodeId, pkt: PacketEnvelope):
        community = self.communities.get(pkt.cid)
        if community is None or not community.is_member(node):
            self.sim.rebroadcast(node, pkt)
            return
        own = self.sim.machines.machine_in(node, pkt.cid)
        path = pkt.trace_path().reversed()
        key = (node, pkt.origin_machine)
        self.offers[key] = path
        self.sim.after(2 * self.sim.params.join_window, lambda: self._expire_offer(key, path), "offer_expiry")
        self._send_reply(community, node, own.mid, path, admitted=False)

    def _expire_offer(self, key: Tuple[NodeId, MachineId], path: Path):
        # offers the joiner never confirmed
        if self.offers.get(key) is path:
            del self.offers[key]
            self.sim.trace_event(key[0], "OFFER_EXPIRED", member=key[1].label)

    def _send_reply(self, community: CommunityState, node: NodeId, own: MachineId, path: Path, admitted: bool):
        table = community.tables[node]
        body = JoinReply(
            responder=own,
            roster=tuple(sorted(community.rosters[node].items(), key=lambda item: item[0].sort_key)),
            rows=tuple((mid, row.path) for mid, row in table.sorted_rows()),
            path=path,
            admitted=admitted,
        )
        reply = self._packet(PacketKind.TABLE, node, path.end, community.cid, own, body, route=path)
        self.sim.forward(node, reply)

    def _adopt_reply(self, node: NodeId, pkt: PacketEnvelope):
        reply: JoinReply = pkt.body
        community = self._community(pkt.cid)
        machine = self.sim.machines.machine_in(node, pkt.cid)
        if machine is None:
            raise NotAMember(f"{node.label} has no machine in {pkt.cid}")
        if community.is_member(node):
            self.sim.record_drop(DUPLICATE_REPLY, node, pkt)
            return
        back = reply.path.reversed()
        table = CommunityTable(node, pkt.cid)
        table.set_row(reply.responder, back)
        for mid, path in reply.rows:
            if mid.node != node:
                table.offer_row(mid, splice_paths(back, path))
        roster = dict(reply.roster)
        roster[machine.mid] = splice_paths(roster[reply.responder], reply.path)
        community.tables[node] = table
        community.rosters[node] = roster
        community.members[machine.mid] = machine
        self.sim.trace_event(node, "JOINED", pkt, cid=pkt.cid.label, rows=len(table))
        if self.pending_joins.pop((node, pkt.cid), None) is not None and not reply.admitted:
            confirm = self._packet(
                PacketKind.MCJOIN,
                node,
                back.end,
                pkt.cid,
                machine.mid,
                JoinRequest(community.culture.culture_name, late=True, confirm=True),
                route=back,
            )
            self.sim.forward(node, confirm)

    def _confirm_join(self, node: NodeId, community: CommunityState, pkt: PacketEnvelope):
        path = self.offers.pop((node, pkt.origin_machine), None)
        if path is None or not community.is_member(node):
            raise UnknownCommunity(f"{node.label} made no offer to {pkt.origin_machine}")
        self._admit(community, node, pkt.origin_machine, path, notify_joiner=False)

    def _admit(self, community: CommunityState, node: NodeId, joiner: MachineId, path: Path, notify_joiner: bool):
        """Add joiner at node and tell every other member it knows a path to."""
        table = community.tables[node]
        roster = community.rosters[node]
        own = self.sim.machines.machine_in(node, community.cid)
        table.offer_row(joiner, path)
        joiner_si = splice_paths(roster[own.mid], path)
        roster[joiner] = joiner_si
        community.members[joiner] = self.sim.machines.find(joiner)
        self.sim.trace_event(node, "ADMIT", cid=community.cid.label, member=joiner.label)
        if notify_joiner:
            self._send_reply(community, node, own.mid, path, admitted=True)
        for mid, row in table.sorted_rows():
            if mid == joiner:
                continue
            update = self._packet(
                PacketKind.TABLE,
                node,
                mid.node,
                community.cid,
                own.mid,
                MemberUpdate(joiner=joiner, si_path=joiner_si, via=path),
                route=row.path,
            )
            self.sim.forward(node, update)

    def _apply_update(self, node: NodeId, pkt: PacketEnvelope):
        update: MemberUpdate = pkt.body
        community = self._community(pkt.cid)
        table = community.tables.get(node)
        if table is None:
            raise NotAMember(f"{node.label} holds no table for {pkt.cid}")
        if update.joiner.node == node:
            return
        back = pkt.trace_path().reversed()
        table.offer_row(update.joiner, splice_paths(back, update.via))
        community.rosters[node][update.joiner] = update.si_path
