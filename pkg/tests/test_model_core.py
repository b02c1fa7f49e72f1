import hashlib

import pytest

from errors import MalformedPath
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
    digest_lines,
    format_path,
    mint_cid,
    parse_path,
    splice_paths,
    table_digest,
)

N1, N2, N3, N4, N5 = (NodeId(i, f"N{i + 1}") for i in range(5))
KNOWN = {n.label: n for n in (N1, N2, N3, N4, N5)}


def p(text):
    return parse_path(text, KNOWN)


def test_parse_and_format_path():
    path = p("N1-N2-N4")
    assert path.hops == (N1, N2, N4)
    assert path.start == N1 and path.end == N4
    assert path.hop_count == 2
    assert format_path(path) == "N1-N2-N4"
    assert str(path.reversed()) == "N4-N2-N1"


def test_single_hop_path_is_the_node_itself():
    assert p("N3").hop_count == 0


@pytest.mark.parametrize("text", ["", "   ", "N1-N9", "N1--N2"])
def test_parse_rejects_bad_text(text):
    with pytest.raises(MalformedPath):
        p(text)


def test_path_rejects_repeated_hop():
    with pytest.raises(MalformedPath):
        Path((N1, N2, N1))


def test_edges_and_next_hop():
    path = p("N1-N2-N4")
    assert list(path.edges()) == [(N1, N2), (N2, N4)]
    assert path.uses_edge(N4, N2)
    assert not path.uses_edge(N1, N4)
    assert path.next_hop(N1) == N2
    assert path.next_hop(N4) is None


def test_is_walk_checks_every_pair():
    edges = {frozenset((N1, N2)), frozenset((N2, N4))}

    def adjacent(a, b):
        return frozenset((a, b)) in edges

    assert p("N1-N2-N4").is_walk(adjacent)
    assert not p("N1-N3").is_walk(adjacent)


def test_splice_removes_the_stretch_through_the_joint():
    # N4 -> N1 then N1 -> N3 has nothing to cut
    assert str(splice_paths(p("N4-N2-N1"), p("N1-N3"))) == "N4-N2-N1-N3"
    # N4 -> N1 then N1 -> N2 walks back over N2
    assert str(splice_paths(p("N4-N2-N1"), p("N1-N2"))) == "N4-N2"
    assert str(splice_paths(p("N2-N1"), p("N1-N2-N4"))) == "N2-N4"


def test_splice_needs_matching_joint():
    with pytest.raises(MalformedPath):
        splice_paths(p("N1-N2"), p("N3-N4"))


def test_rank_prefers_shorter_then_lower_labels():
    assert p("N1-N3").rank < p("N1-N2-N3").rank
    assert p("N1-N2-N4").rank < p("N1-N3-N4").rank


def test_cid_and_machine_labels():
    assert mint_cid(3) == CommunityId("C3")
    assert sorted([CommunityId("C10"), CommunityId("C2")], key=lambda c: c.sort_key)[0].label == "C2"
    mid = MachineId(N2, 1)
    assert mid.label == "N2.1"
    assert MachineCulture("CultureF").label == "CultureF"


def test_table_rows_must_start_at_owner_and_end_at_member():
    table = CommunityTable(N1, CommunityId("C1"))
    with pytest.raises(MalformedPath):
        table.set_row(MachineId(N4, 0), p("N2-N4"))
    with pytest.raises(MalformedPath):
        table.set_row(MachineId(N4, 0), p("N1-N2"))
    with pytest.raises(ValueError):
        table.set_row(MachineId(N1, 0), p("N1"))


def test_table_lines_are_sorted_by_member():
    table = CommunityTable(N1, CommunityId("C1"))
    table.set_row(MachineId(N4, 0), p("N1-N2-N4"))
    table.set_row(MachineId(N2, 0), p("N1-N2"))
    table.set_row(MachineId(N3, 0), p("N1-N3"))
    assert table.lines() == ["N2 C1 N1-N2", "N3 C1 N1-N3", "N4 C1 N1-N2-N4"]
    assert table.find_node(N3) == MachineId(N3, 0)
    assert len(table) == 3


def test_offer_row_keeps_the_better_path():
    table = CommunityTable(N1, CommunityId("C1"))
    mid = MachineId(N4, 0)
    assert table.offer_row(mid, p("N1-N3-N5-N4"))
    assert table.offer_row(mid, p("N1-N2-N4"))
    assert not table.offer_row(mid, p("N1-N3-N4"))
    assert str(table.path_to(mid)) == "N1-N2-N4"


def test_invalidate_edge_removes_only_rows_through_it():
    table = CommunityTable(N1, CommunityId("C1"))
    table.set_row(MachineId(N2, 0), p("N1-N2"))
    table.set_row(MachineId(N4, 0), p("N1-N2-N4"))
    broken = table.invalidate_edge(N4, N2)
    assert broken == [MachineId(N4, 0)]
    assert table.lines() == ["N2 C1 N1-N2"]


def test_society_table_lines_and_lookup():
    society = SocietyTable()
    society.register(CommunityId("C2"), MachineCulture("Culture2"))
    society.register(CommunityId("C1"), MachineCulture("CultureF", "File service"))
    assert society.lines() == ["C1 File service", "C2 Culture2"]
    assert society.lookup(CommunityId("C1")).culture_name == "CultureF"
    assert society.lookup(CommunityId("C9")) is None


def test_digest_is_sha256_of_newline_terminated_lines():
    lines = ["N2 C1 N1-N2", "N3 C1 N1-N3"]
    expected = hashlib.sha256(b"N2 C1 N1-N2\nN3 C1 N1-N3\n").hexdigest()
    assert digest_lines(lines) == expected
    table = CommunityTable(N1, CommunityId("C1"))
    table.set_row(MachineId(N3, 0), p("N1-N3"))
    table.set_row(MachineId(N2, 0), p("N1-N2"))
    assert table_digest(table) == expected


def test_packet_hop_trace_starts_at_src():
    pkt = PacketEnvelope(1, PacketKind.MCSTART, N1, BROADCAST, cid=CommunityId("C1"))
    assert pkt.hop_trace == (N1,)
    assert pkt.is_broadcast
    moved = pkt.forwarded_to(N2)
    assert moved.trace_path() == p("N1-N2")
    with pytest.raises(ValueError):
        moved.forwarded_to(N1)


def test_packet_field_checks():
    with pytest.raises(ValueError):
        PacketEnvelope(1, PacketKind.RREQ, N1, BROADCAST)
    with pytest.raises(ValueError):
        PacketEnvelope(2, PacketKind.DATA, N1, N2, cid=CommunityId("C1"))
    with pytest.raises(ValueError):
        PacketEnvelope(3, PacketKind.HELLO, N1, BROADCAST, hop_trace=(N2,))
