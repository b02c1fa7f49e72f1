from collections import Counter
from dataclasses import replace

import networkx as nx

from model_core import CommunityId, MachineId, NodeId, PacketEnvelope, PacketKind, Path
from routing import PendingRequest, RouteReply, affected_members
from utils.scenario_loader import Step

N1, N2, N3, N4 = (NodeId(i, f"N{i + 1}") for i in range(4))
TABLE4_ROSTER = {
    MachineId(N1, 0): Path((N1,)),
    MachineId(N2, 0): Path((N1, N2)),
    MachineId(N3, 0): Path((N1, N3)),
    MachineId(N4, 0): Path((N1, N2, N4)),
}


def lines_with(trace, ev):
    return [line for line in trace if f" ev={ev} " in line]


def table_lines(sim, owner, cid="C1"):
    return sim.protocol.table_of(sim.topology.node(owner), CommunityId(cid)).lines()


def test_affected_members_cross_the_broken_edge():
    assert [m.label for m in affected_members(TABLE4_ROSTER, N2, N4)] == ["N1.0", "N3.0"]
    assert [m.label for m in affected_members(TABLE4_ROSTER, N1, N3)] == ["N2.0", "N4.0"]
    assert affected_members(TABLE4_ROSTER, N3, N4) == []


def test_repair_finds_the_new_path(load, run_sim):
    sim = run_sim(load("repair"), seed=1)
    metrics = sim.metrics
    assert metrics.control_tx["RERR"] == 3
    rreqs = lines_with(sim.trace, "RREQ_TX")
    assert sorted(line.split(" ")[1] for line in rreqs) == ["node=N1", "node=N2", "node=N3"]
    assert len({line.split(" ")[3] for line in rreqs}) == 1
    assert "N4 C1 N1-N3-N4" in table_lines(sim, "N1")
    assert metrics.delivered == 1
    assert metrics.conservation_holds()


def test_unrepairable_send_times_out(load, run_sim):
    scenario = load("repair")
    steps = tuple(s for s in scenario.steps if s.op != "add_edge")
    sim = run_sim(replace(scenario, steps=steps), seed=1)
    assert sim.metrics.delivered == 0
    assert sim.metrics.dropped == {"delivery_timeout": 1}
    assert len(lines_with(sim.trace, "RREQ_TIMEOUT")) == 1
    assert sim.metrics.in_flight == 0


def test_full_queue_drops_the_newcomer(load, run_sim):
    scenario = load("repair")
    send = next(s for s in scenario.steps if s.op == "send")
    steps = tuple(s for s in scenario.steps if s.op != "add_edge") + (replace(send, at=21000),)
    scenario = replace(scenario, steps=steps, params=replace(scenario.params, queue_limit=1))
    sim = run_sim(scenario, seed=2)
    assert sim.metrics.dropped == {"queue_overflow": 1, "delivery_timeout": 1}
    assert sim.metrics.data_sent == 2
    assert sim.metrics.conservation_holds()


def test_friend_relay_reaches_member_over_non_members(load, run_sim):
    sim = run_sim(load("friend"))
    metrics = sim.metrics
    assert metrics.delivered == 2
    # first send: N2 floods, N5 and N3 unicast; second: N1 and N2 flood, N5 and N3 unicast
    assert metrics.control_tx["FRIEND"] == 7
    assert metrics.control_tx["RERR"] == 1
    assert table_lines(sim, "N1") == []
    per_relay = Counter(
        (line.split(" ")[1], line.split(" ")[3])
        for line in lines_with(sim.trace, "FRIEND_TX")
        if line.split(" ")[1] in ("node=N2", "node=N3", "node=N5")
    )
    assert max(per_relay.values()) == 1
    assert len(lines_with(sim.trace, "UNWRAP")) == 2


def test_selfish_relay_trips_the_watchdog(build_scenario, run_sim):
    scenario = build_scenario(
        topology={
            "nodes": ["N1", "N2", {"label": "N3", "interests": ["CultureF"]}],
            "edges": ["N1-N2", "N2-N3"],
        },
        params={"end_time": 100},
        adversaries=[{"node": "N2", "behavior": "SELFISH", "start": 20}],
        steps=[
            {"at": 0, "op": "start_service", "node": "N1", "culture": "CultureF"},
            {"at": 30, "op": "send", "src": "N1", "dst": "N3", "cid": "C1", "op_code": "FILE_CHUNK"},
        ],
    )
    sim = run_sim(scenario, seed=3)
    watchdog = lines_with(sim.trace, "WATCHDOG")
    assert len(watchdog) == 1
    assert "node=N1" in watchdog[0] and "suspect=N2" in watchdog[0]
    assert sim.metrics.dropped == {"delivery_timeout": 1}
    assert sim.metrics.delivered == 0


def test_adversaries_change_no_table(load, run_sim):
    sim = run_sim(load("adversary"), seed=5)
    metrics = sim.metrics
    assert metrics.rejected_ops == 100
    assert metrics.dropped["op_rejected"] == 100
    assert len(lines_with(sim.trace, "REJECT")) == 100
    (t1, before), (t2, after), _ = metrics.snapshots
    assert (t1, t2) == (19000, 140000)
    assert before == after
    assert metrics.dropped["stale_reply"] == 5
    assert metrics.dropped["bogus_reply"] >= 1
    assert metrics.dropped["delivery_timeout"] == 1
    for table in metrics.tables:
        for row in table["rows"]:
            assert "X" not in row and "Y" not in row
    assert metrics.conservation_holds()


def test_send_to_self_is_delivered_without_transmitting(table4, run_sim):
    send = Step(20000, "send", (("cid", "C1"), ("dst", "N1"), ("op_code", "FILE_CHUNK"), ("src", "N1")))
    sim = run_sim(replace(table4, workload=None, steps=table4.steps + (send,)))
    assert sim.metrics.delivered == 1
    assert sim.metrics.data_tx == 0
    assert sim.metrics.conservation_holds()


def test_the_shorter_of_two_replies_is_kept(graph_scenario, run_sim):
    graph = nx.Graph([(0, 1), (1, 3), (0, 2), (2, 4), (4, 3)])
    sim = run_sim(graph_scenario(graph))
    n1, n2, n3, n4, n5 = (sim.topology.node(f"N{i}") for i in range(1, 6))
    cid = CommunityId("C1")
    target = MachineId(n4, 0)
    sim.protocol.table_of(n1, cid).remove(target)
    sim.router.pending[(n1, 99)] = PendingRequest(99, n1, MachineId(n1, 0), cid, target, retries_left=0)

    def reply(trace):
        pkt = PacketEnvelope(
            packet_id=sim.next_packet_id(),
            kind=PacketKind.RREP,
            src=n4,
            dst=n1,
            cid=cid,
            hop_trace=trace,
            body=RouteReply(99, target),
        )
        sim.router.handle_rrep(n1, pkt.body, pkt)

    reply((n4, n5, n3, n1))
    assert "N4 C1 N1-N3-N5-N4" in table_lines(sim, "N1")
    reply((n4, n2, n1))
    assert "N4 C1 N1-N2-N4" in table_lines(sim, "N1")
    reply((n4, n5, n3, n1))
    assert "N4 C1 N1-N2-N4" in table_lines(sim, "N1")
    assert "stale_reply" not in sim.metrics.dropped
    assert "bogus_reply" not in sim.metrics.dropped


def test_reply_after_the_request_timeout_is_stale(load, run_sim):
    scenario = load("repair")
    # RREQ leaves at t=20; the reply needs at least four hops to come back
    sim = run_sim(replace(scenario, params=replace(scenario.params, t_rreq=1000)), seed=1)
    assert sim.metrics.dropped == {"delivery_timeout": 1, "stale_reply": 1}
    assert len(lines_with(sim.trace, "RREQ_TIMEOUT")) == 1
    assert not any(line.startswith("N4 ") for line in table_lines(sim, "N1"))
    assert sim.metrics.delivered == 0
