"""Shared vocabulary of the simulator: identifiers, paths, packets and tables.

Paths are source routes written as dash-separated node labels ("N1-N2-N4").
Tables are the only mutable values here and are only touched by the event loop.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from errors import MalformedPath

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("model_core")

# Simulation time is integer ticks; scenario files speak in units.
TICKS_PER_UNIT = 1000


@dataclass(frozen=True, order=True)
class NodeId:
    index: int
    label: str

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class CommunityId:
    label: str

    @property
    def sort_key(self):
        digits = self.label[1:]
        if self.label[:1] == "C" and digits.isdigit():
            return (int(digits), self.label)
        return (float("inf"), self.label)

    def __str__(self):
        return self.label


def mint_cid(counter: int) -> CommunityId:
    return CommunityId(f"C{counter}")


@dataclass(frozen=True)
class MachineId:
    node: NodeId
    ordinal: int

    @property
    def label(self):
        return f"{self.node.label}.{self.ordinal}"

    @property
    def sort_key(self):
        return (self.node.index, self.ordinal)

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class MachineCulture:
    culture_name: str
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.culture_name)

    def __str__(self):
        return self.label


class Destination(Enum):
    BROADCAST = "*"

    def __str__(self):
        return self.value


BROADCAST = Destination.BROADCAST


@dataclass(frozen=True)
class Path:
    hops: Tuple[NodeId, ...]

    def __post_init__(self):
        if not self.hops:
            raise MalformedPath("a path needs at least one hop")
        if len(set(self.hops)) != len(self.hops):
            raise MalformedPath(f"repeated hop in {format_path(self)}")

    @property
    def start(self) -> NodeId:
        return self.hops[0]

    @property
    def end(self) -> NodeId:
        return self.hops[-1]

    @property
    def hop_count(self) -> int:
        return len(self.hops) - 1

    def reversed(self) -> "Path":
        return Path(tuple(reversed(self.hops)))

    def edges(self) -> Iterator[Tuple[NodeId, NodeId]]:
        return zip(self.hops, self.hops[1:])

    def uses_edge(self, a: NodeId, b: NodeId) -> bool:
        return any({x, y} == {a, b} for x, y in self.edges())

    def next_hop(self, node: NodeId) -> Optional[NodeId]:
        position = self.hops.index(node)
        if position + 1 < len(self.hops):
            return self.hops[position + 1]
        return None

    def is_walk(self, adjacent) -> bool:
        """True when every consecutive pair satisfies adjacent(a, b)."""
        return all(adjacent(a, b) for a, b in self.edges())

    @property
    def rank(self):
        # shorter first, then lower labels
        return (self.hop_count, tuple(h.index for h in self.hops))

    def __str__(self):
        return format_path(self)


def parse_path(text: str, known: Mapping[str, NodeId]) -> Path:
    """Parse "N1-N2-N4" against the labels of a scenario."""
    if not text or not text.strip():
        raise MalformedPath("empty path")
    hops = []
    for label in text.strip().split("-"):
        if label not in known:
            raise MalformedPath(f"unknown node label '{label}' in '{text}'")
        hops.append(known[label])
    return Path(tuple(hops))


def format_path(path: Path) -> str:
    return "-".join(hop.label for hop in path.hops)


def splice_paths(first: Path, second: Path) -> Path:
    """Join first (ending at x) with second (starting at x) and cut out loops.

    A hop seen twice truncates the walk back to its first occurrence, so the
    common stretch through the joint disappears.
    """
    if first.end != second.start:
        raise MalformedPath(
            f"cannot splice {format_path(first)} with {format_path(second)}"
        )
    hops: List[NodeId] = []
    for hop in first.hops + second.hops[1:]:
        if hop in hops:
            del hops[hops.index(hop) + 1 :]
        else:
            hops.append(hop)
    return Path(tuple(hops))


class PacketKind(Enum):
    MCSTART = "MCSTART"
    MCJOIN = "MCJOIN"
    RREQ = "RREQ"
    RREP = "RREP"
    RERR = "RERR"
    HELLO = "HELLO"
    FRIEND = "FRIEND"
    DATA = "DATA"
    TABLE = "TABLE"

    def __str__(self):
        return self.value


NEEDS_CID = {PacketKind.MCSTART, PacketKind.MCJOIN, PacketKind.RREQ}


@dataclass(frozen=True)
class PacketEnvelope:
    packet_id: int
    kind: PacketKind
    src: NodeId
    dst: Any  # NodeId or BROADCAST
    op_code: str = ""
    cid: Optional[CommunityId] = None
    origin_machine: Optional[MachineId] = None
    hop_trace: Tuple[NodeId, ...] = ()
    payload_bytes: int = 0
    payload: bytes = b""
    seq: Optional[int] = None
    route: Optional[Path] = None
    body: Any = field(default=None, compare=False)

    def __post_init__(self):
        if not self.hop_trace:
            object.__setattr__(self, "hop_trace", (self.src,))
        if self.hop_trace[0] != self.src:
            raise ValueError(f"packet {self.packet_id}: hop trace must start at src")
        if len(set(self.hop_trace)) != len(self.hop_trace):
            raise ValueError(f"packet {self.packet_id}: hop trace revisits a node")
        if self.kind in NEEDS_CID and self.cid is None:
            raise ValueError(f"{self.kind} packet {self.packet_id} carries no cid")
        if self.kind is PacketKind.DATA and self.dst is not BROADCAST:
            if self.cid is None or self.origin_machine is None or self.seq is None:
                raise ValueError(
                    f"DATA packet {self.packet_id} needs cid, origin_machine and seq"
                )
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be non-negative")

    @property
    def is_broadcast(self) -> bool:
        return self.dst is BROADCAST

    @property
    def last_hop(self) -> NodeId:
        return self.hop_trace[-1]

    @property
    def data_key(self):
        """Identity of a DATA unit across relay legs."""
        if self.origin_machine is not None:
            return (self.origin_machine, self.seq)
        return ("flood", self.src, self.seq)

    def forwarded_to(self, node: NodeId) -> "PacketEnvelope":
        if node in self.hop_trace:
            raise ValueError(
                f"packet {self.packet_id} would revisit {node.label}"
            )
        return replace(self, hop_trace=self.hop_trace + (node,))

    def trace_path(self) -> Path:
        return Path(self.hop_trace)


@dataclass(frozen=True)
class TableRow:
    cid: CommunityId
    path: Path


class CommunityTable:
    """Per-member table: MID -> (CID, PATH), one CID per table."""

    def __init__(self, owner: NodeId, cid: CommunityId):
        self.owner = owner
        self.cid = cid
        self.rows: Dict[MachineId, TableRow] = {}

    def set_row(self, mid: MachineId, path: Path):
        if mid.node == self.owner:
            raise ValueError(f"{self.owner.label} cannot hold a row for itself")
        if path.start != self.owner:
            raise MalformedPath(
                f"path {format_path(path)} does not start at {self.owner.label}"
            )
        if path.end != mid.node:
            raise MalformedPath(
                f"path {format_path(path)} does not end at {mid.node.label}"
            )
        self.rows[mid] = TableRow(self.cid, path)

    def offer_row(self, mid: MachineId, path: Path) -> bool:
        """Install path unless an equal or better one is already stored."""
        current = self.rows.get(mid)
        if current is not None and current.path.rank <= path.rank:
            return False
        self.set_row(mid, path)
        return True

    def path_to(self, mid: MachineId) -> Optional[Path]:
        row = self.rows.get(mid)
        return row.path if row else None

    def find_node(self, node: NodeId) -> Optional[MachineId]:
        for mid in self.rows:
            if mid.node == node:
                return mid
        return None

    def remove(self, mid: MachineId):
        self.rows.pop(mid, None)

    def invalidate_edge(self, a: NodeId, b: NodeId) -> List[MachineId]:
        broken = [mid for mid, row in self.rows.items() if row.path.uses_edge(a, b)]
        for mid in broken:
            del self.rows[mid]
        return sorted(broken, key=lambda m: m.sort_key)

    def sorted_rows(self) -> List[Tuple[MachineId, TableRow]]:
        return sorted(self.rows.items(), key=lambda item: item[0].sort_key)

    def lines(self) -> List[str]:
        return [
            f"{mid.node.label} {row.cid.label} {format_path(row.path)}"
            for mid, row in self.sorted_rows()
        ]

    def __len__(self):
        return len(self.rows)

    def __contains__(self, mid):
        return mid in self.rows


class SocietyTable:
    """Network-wide registry CID -> Machine Culture."""

    def __init__(self):
        self.rows: Dict[CommunityId, MachineCulture] = {}

    def register(self, cid: CommunityId, culture: MachineCulture):
        self.rows[cid] = culture

    def lookup(self, cid: CommunityId) -> Optional[MachineCulture]:
        return self.rows.get(cid)

    def sorted_rows(self) -> List[Tuple[CommunityId, MachineCulture]]:
        return sorted(self.rows.items(), key=lambda item: item[0].sort_key)

    def lines(self) -> List[str]:
        return [f"{cid.label} {culture.label}" for cid, culture in self.sorted_rows()]

    def __len__(self):
        return len(self.rows)

    def __contains__(self, cid):
        return cid in self.rows


def digest_lines(lines: Iterable[str]) -> str:
    return hashlib.sha256("".join(f"{line}\n" for line in lines).encode()).hexdigest()


def table_digest(table) -> str:
    """sha256 over the canonically ordered rows of either table kind."""
    return digest_lines(table.lines())
