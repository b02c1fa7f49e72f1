"""Application services riding on communities.

File transfer: FILE_REQ, then a sliding window of FILE_CHUNKs each acked with
a FILE_ACK, retransmitted after the transport timeout up to the transport
retransmit limit. The flooding baseline broadcasts every payload network-wide
and is the comparator for the overhead measurements.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Set, Tuple

from errors import HamanetError, NoSuchFile, NotAMember, OpRejected, TransferFailed
from model_core import BROADCAST, TICKS_PER_UNIT, MachineId, NodeId, PacketEnvelope, PacketKind
from service_fabric import Layer, MachineInstance, accepts

if TYPE_CHECKING:
    from sim_engine import MetricsReport, Simulator
    from utils.scenario_loader import FileSpec, Scenario

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("services")


def load_content(spec: "FileSpec") -> bytes:
    if spec.path is not None:
        with open(spec.path, "rb") as file:
            return file.read()
    return random.Random(spec.content_seed).randbytes(spec.size)


@dataclass(frozen=True)
class FileObject:
    name: str
    content: bytes
    chunk_size: int = 1024

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")

    @property
    def total_chunks(self) -> int:
        # an empty file still travels as one empty chunk
        return max(1, math.ceil(len(self.content) / self.chunk_size))

    def chunk(self, seq: int) -> bytes:
        return self.content[seq * self.chunk_size : (seq + 1) * self.chunk_size]

    def chunks(self) -> List[bytes]:
        return [self.chunk(seq) for seq in range(self.total_chunks)]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.content).hexdigest()


class SessionState(Enum):
    REQUESTED = "REQUESTED"
    STREAMING = "STREAMING"
    COMPLETE = "COMPLETE"
    FAILED = "FAILED"


@dataclass
class TransferSession:
    session_id: int
    src: MachineId
    dst: MachineId
    file_name: str
    total_chunks: int = 0
    acked: Set[int] = field(default_factory=set)
    state: SessionState = SessionState.REQUESTED
    received: Dict[int, bytes] = field(default_factory=dict)
    handed_up: List[int] = field(default_factory=list)
    retransmissions: int = 0
    started_at: int = 0
    finished_at: Optional[int] = None
    failure: str = ""
    origin_digest: str = ""
    received_digest: str = ""

    @property
    def finished(self) -> bool:
        return self.state in (SessionState.COMPLETE, SessionState.FAILED)

    @property
    def next_expected(self) -> int:
        return len(self.handed_up)

    def reassembled(self) -> bytes:
        return b"".join(self.received[seq] for seq in self.handed_up)

    def summary(self) -> Dict:
        return {
            "session": self.session_id,
            "src": self.src.label,
            "dst": self.dst.label,
            "file": self.file_name,
            "state": self.state.value,
            "chunks": self.total_chunks,
            "acked": len(self.acked),
            "retransmissions": self.retransmissions,
            "digest_match": bool(self.origin_digest) and self.origin_digest == self.received_digest,
            "failure": self.failure,
        }


@dataclass(frozen=True)
class FtpHeader:
    session_id: int
    file_name: str = ""
    seq: Optional[int] = None


@dataclass(frozen=True)
class TransportParams:
    chunk_size: int
    window: int
    retransmit_limit: int
    retransmit_timeout: int


@dataclass
class _ServerState:
    session: TransferSession
    machine: MachineInstance
    requester: MachineId
    file: FileObject
    transport: TransportParams
    next_seq: int = 0
    attempts: Dict[int, int] = field(default_factory=dict)
    outstanding: Set[int] = field(default_factory=set)


class FileTransferService:
    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.contents: Dict[Tuple[str, str], bytes] = {}
        self.sessions: Dict[int, TransferSession] = {}
        self._servers: Dict[int, _ServerState] = {}
        self._request_attempts: Dict[int, int] = {}
        for spec in sim.scenario.files:
            self.contents[(spec.node, spec.name)] = load_content(spec)

    def transport(self, machine: MachineInstance) -> TransportParams:
        art = self.sim.registry.art_in_slot(machine.culture.culture_name, Layer.TRANSPORT)
        params = self.sim.params

        def pick(override, key, default):
            return override if override is not None else art.param(key, default)

        timeout = params.retransmit_timeout
        if timeout is None:
            timeout = int(round(art.param("retransmit_timeout", 10) * TICKS_PER_UNIT))
        return TransportParams(
            chunk_size=int(pick(params.chunk_size, "chunk_size", 1024)),
            window=max(1, int(pick(params.window, "window", 4))),
            retransmit_limit=int(pick(params.retransmit_limit, "retransmit_limit", 8)),
            retransmit_timeout=timeout,
        )

    def ftp_request(self, src: MachineId, dst: MachineId, file_name: str) -> TransferSession:
        requester = self.sim.machines.find(src)
        server = self.sim.machines.find(dst)
        if requester is None or server is None or requester.cid is None or requester.cid != server.cid:
            raise NotAMember(f"{src} and {dst} do not share a community")
        if not accepts(requester, "FILE_REQ") or not accepts(server, "FILE_CHUNK"):
            raise OpRejected(f"{requester.culture} carries no file transfer art")
        if (dst.node.label, file_name) not in self.contents:
            raise NoSuchFile(f"{dst.node.label} holds no file '{file_name}'")
        session = TransferSession(
            session_id=len(self.sessions) + 1,
            src=src,
            dst=dst,
            file_name=file_name,
            started_at=self.sim.now,
        )
        self.sessions[session.session_id] = session
        self._request_attempts[session.session_id] = 0
        logger.info(f"FTP session {session.session_id}: {src} requests '{file_name}' from {dst}")
        self._send_request(session, requester)
        return session

    def _send_request(self, session: TransferSession, requester: MachineInstance):
        attempt = self._request_attempts[session.session_id]
        header = FtpHeader(session.session_id, session.file_name)
        if not self._send(session, requester, session.dst, "FILE_REQ", session.file_name.encode(), header):
            return
        rto = self.transport(requester).retransmit_timeout
        self.sim.after(rto, lambda: self._request_timeout(session, requester, attempt), "ftp_req")

    def _request_timeout(self, session: TransferSession, requester: MachineInstance, attempt: int):
        if session.state is not SessionState.REQUESTED or self._request_attempts[session.session_id] != attempt:
            return
        if attempt >= self.transport(requester).retransmit_limit:
            self._fail(session, TransferFailed(f"FILE_REQ unanswered after {attempt + 1} attempts"))
            return
        self._request_attempts[session.session_id] = attempt + 1
        session.retransmissions += 1
        self._send_request(session, requester)

    def _send(self, session, machine, dest: MachineId, op_code: str, payload: bytes, header: FtpHeader) -> bool:
        try:
            self.sim.router.send_data(machine, dest, op_code, payload=payload, body=header)
            return True
        except HamanetError as e:
            self._fail(session, TransferFailed(f"{op_code} could not be sent: {e}"))
            return False

    def on_data(self, machine: MachineInstance, pkt: PacketEnvelope):
        header = pkt.body
        if not isinstance(header, FtpHeader):
            return
        session = self.sessions.get(header.session_id)
        if session is None or session.finished:
            return
        if pkt.op_code == "FILE_REQ":
            self._serve(machine, pkt, session)
        elif pkt.op_code == "FILE_CHUNK":
            self._receive_chunk(machine, pkt, session)
        elif pkt.op_code == "FILE_ACK":
            self._receive_ack(pkt, session)

    def _serve(self, machine: MachineInstance, pkt: PacketEnvelope, session: TransferSession):
        if session.session_id in self._servers:
            return
        content = self.contents.get((machine.node.label, session.file_name))
        if content is None:
            self._fail(session, NoSuchFile(f"{machine.node.label} holds no file '{session.file_name}'"))
            return
        transport = self.transport(machine)
        file = FileObject(session.file_name, content, transport.chunk_size)
        session.total_chunks = file.total_chunks
        session.origin_digest = file.digest
        server = _ServerState(session, machine, pkt.origin_machine, file, transport)
        self._servers[session.session_id] = server
        self._fill_window(server)

    def _fill_window(self, server: _ServerState):
        while len(server.outstanding) < server.transport.window and server.next_seq < server.file.total_chunks:
            seq = server.next_seq
            server.next_seq += 1
            server.outstanding.add(seq)
            server.attempts[seq] = 0
            self._send_chunk(server, seq)

    def _send_chunk(self, server: _ServerState, seq: int):
        session = server.session
        attempt = server.attempts[seq]
        header = FtpHeader(session.session_id, session.file_name, seq)
        if not self._send(session, server.machine, server.requester, "FILE_CHUNK", server.file.chunk(seq), header):
            return
        self.sim.after(
            server.transport.retransmit_timeout,
            lambda: self._chunk_timeout(server, seq, attempt),
            "ftp_chunk",
        )

    def _chunk_timeout(self, server: _ServerState, seq: int, attempt: int):
        session = server.session
        if session.finished or seq not in server.outstanding or server.attempts[seq] != attempt:
            return
        if attempt >= server.transport.retransmit_limit:
            self._fail(session, TransferFailed(f"chunk {seq} unacked after {attempt + 1} attempts"))
            return
        server.attempts[seq] = attempt + 1
        session.retransmissions += 1
        self._send_chunk(server, seq)

    def _receive_chunk(self, machine: MachineInstance, pkt: PacketEnvelope, session: TransferSession):
        seq = pkt.body.seq
        if session.state is SessionState.REQUESTED:
            session.state = SessionState.STREAMING
        if seq not in session.received:
            session.received[seq] = pkt.payload
            # hand chunks up strictly in order; later ones wait in the buffer
            while session.next_expected in session.received:
                session.handed_up.append(session.next_expected)
        header = FtpHeader(session.session_id, session.file_name, seq)
        self._send(session, machine, pkt.origin_machine, "FILE_ACK", b"", header)

    def _receive_ack(self, pkt: PacketEnvelope, session: TransferSession):
        server = self._servers.get(session.session_id)
        seq = pkt.body.seq
        if server is None or seq not in server.outstanding:
            return
        server.outstanding.discard(seq)
        session.acked.add(seq)
        if len(session.acked) == server.file.total_chunks:
            self._finish(session)
            return
        self._fill_window(server)

    def _finish(self, session: TransferSession):
        session.received_digest = hashlib.sha256(session.reassembled()).hexdigest()
        if session.acked == set(range(session.total_chunks)) and session.received_digest == session.origin_digest:
            session.state = SessionState.COMPLETE
            session.finished_at = self.sim.now
            self.sim.trace_event(
                session.src.node, "FTP_COMPLETE", session=session.session_id, chunks=session.total_chunks
            )
            logger.info(
                f"FTP session {session.session_id} complete: {session.total_chunks} chunks, "
                f"{session.retransmissions} retransmissions"
            )
            return
        self._fail(session, TransferFailed("reassembled content does not match the origin"))

    def _fail(self, session: TransferSession, error: HamanetError):
        if session.finished:
            return
        session.state = SessionState.FAILED
        session.failure = f"{type(error).__name__}: {error}"
        session.finished_at = self.sim.now
        self.sim.trace_event(session.src.node, "FTP_FAILED", session=session.session_id)
        logger.warning(f"FTP session {session.session_id} failed: {error}")

    def session_summaries(self) -> List[Dict]:
        return [self.sessions[sid].summary() for sid in sorted(self.sessions)]


@dataclass(frozen=True)
class FloodPayload:
    target: Optional[NodeId] = None


class FloodingBaseline:
    """Broadcast-everything comparator: every payload reaches the whole component."""

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.reached: Dict[int, Set[NodeId]] = {}
        self._seqs: Dict[NodeId, int] = {}

    def flood_send(self, src: NodeId, payload_bytes: int, dst: Optional[NodeId] = None) -> PacketEnvelope:
        seq = self._seqs.get(src, 0)
        self._seqs[src] = seq + 1
        pkt = PacketEnvelope(
            packet_id=self.sim.next_packet_id(),
            kind=PacketKind.DATA,
            src=src,
            dst=BROADCAST,
            payload_bytes=payload_bytes,
            seq=seq,
            body=FloodPayload(dst),
        )
        if dst is not None:
            self.sim.data_sent(pkt)
        self.reached[pkt.packet_id] = {src}
        self.sim.originate_flood(src, pkt)
        if dst == src:
            self.sim.record_delivery(pkt)
        return pkt

    def handle_flood(self, node: NodeId, pkt: PacketEnvelope):
        self.reached.setdefault(pkt.packet_id, set()).add(node)
        if pkt.body.target == node and self.sim.record_delivery(pkt):
            self.sim.trace_event(node, "DATA_RX", pkt, flood=pkt.src.label)
        self.sim.rebroadcast(node, pkt)


@dataclass
class ComparisonReport:
    hamanet: "MetricsReport"
    baseline: "MetricsReport"
    messages: int
    crossover: Optional[int] = None
    scan: List[Tuple[int, int, int]] = field(default_factory=list)

    @property
    def hamanet_wins(self) -> bool:
        return self.hamanet.total_tx < self.baseline.total_tx


def compare_overhead(scenario: "Scenario", seed: int = 0, k_max: int = 0) -> ComparisonReport:
    """Run the workload under both services, then scan k = 1..k_max for the crossover."""
    from sim_engine import run

    scenario = scenario.without_hello()
    hamanet, _ = run(scenario, seed, "hamanet")
    baseline, _ = run(scenario, seed, "baseline")
    messages = scenario.workload.count if scenario.workload else 0
    report = ComparisonReport(hamanet, baseline, messages)
    if scenario.workload is None:
        return report
    for k in range(1, k_max + 1):
        variant = scenario.with_workload_count(k)
        h, _ = run(variant, seed, "hamanet")
        b, _ = run(variant, seed, "baseline")
        report.scan.append((k, h.total_tx, b.total_tx))
        if h.total_tx < b.total_tx:
            report.crossover = k
            break
    logger.info(
        f"Compared {scenario.name}: hamanet {hamanet.total_tx} vs baseline {baseline.total_tx}, "
        f"crossover {report.crossover if report.crossover else 'unreached'}"
    )
    return report
