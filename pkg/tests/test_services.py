import hashlib
from dataclasses import replace

import pytest

from errors import NoSuchFile
from model_core import CommunityId
from services import FileObject, SessionState, compare_overhead, load_content
from sim_engine import Simulator, run
from utils.scenario_loader import FileSpec


@pytest.fixture
def small_ftp(load):
    """The ftp scenario without link loss and with a five-chunk file."""
    scenario = load("ftp")
    return replace(
        scenario,
        steps=tuple(s for s in scenario.steps if s.op != "set_loss"),
        files=(FileSpec("N3", "data.bin", 5000, 1),),
    )


def test_file_object_chunks():
    file = FileObject("a.bin", b"x" * 2500, chunk_size=1024)
    assert file.total_chunks == 3
    assert [len(c) for c in file.chunks()] == [1024, 1024, 452]
    assert file.digest == hashlib.sha256(b"x" * 2500).hexdigest()


def test_empty_file_is_one_empty_chunk():
    file = FileObject("empty", b"")
    assert file.total_chunks == 1
    assert file.chunk(0) == b""


def test_chunk_size_must_be_positive():
    with pytest.raises(ValueError):
        FileObject("a.bin", b"abc", chunk_size=0)


def test_generated_content_is_seeded():
    spec = FileSpec("N3", "data.bin", 64, 42)
    assert load_content(spec) == load_content(spec)
    assert len(load_content(spec)) == 64
    assert load_content(replace(spec, content_seed=43)) != load_content(spec)


def test_lossless_transfer_completes(small_ftp, run_sim):
    sim = run_sim(small_ftp, seed=1)
    (session,) = sim.metrics.sessions
    assert session["state"] == "COMPLETE"
    assert session["chunks"] == 5
    assert session["acked"] == 5
    assert session["retransmissions"] == 0
    assert session["digest_match"]
    assert sum(" ev=FTP_COMPLETE " in line for line in sim.trace) == 1


def test_transport_parameters_come_from_the_culture(small_ftp):
    sim = Simulator(small_ftp)
    sim.run()
    machine = sim.machines.machine_in(sim.topology.node("N3"), CommunityId("C1"))
    transport = sim.files.transport(machine)
    assert transport.chunk_size == 1024
    assert transport.window == 4
    # the scenario raises the limit above the art's default of 8
    assert transport.retransmit_limit == 16
    assert transport.retransmit_timeout == 10000


def test_missing_file_fails_the_request(small_ftp, run_sim):
    request = next(s for s in small_ftp.steps if s.op == "ftp_request")
    args = tuple((k, "nothing.bin" if k == "file" else v) for k, v in request.args)
    steps = tuple(s for s in small_ftp.steps if s.op != "ftp_request") + (replace(request, args=args),)
    sim = run_sim(replace(small_ftp, steps=steps))
    assert len(sim.metrics.step_failures) == 1
    assert NoSuchFile.__name__ in sim.metrics.step_failures[0]
    assert sim.metrics.sessions == []


def test_lossy_transfer_retransmits(load, run_sim):
    sim = run_sim(load("ftp"), seed=3)
    (session,) = sim.files.sessions.values()
    assert session.finished
    if session.state is SessionState.COMPLETE:
        assert session.retransmissions > 0
        assert session.received_digest == session.origin_digest
    else:
        assert session.failure.startswith("TransferFailed")


def test_baseline_flood_reaches_the_component(table4):
    sim = Simulator(replace(table4, workload=replace(table4.workload, count=1)), mode="baseline")
    sim.run()
    (reached,) = sim.baseline.reached.values()
    assert sorted(n.label for n in reached) == ["N1", "N2", "N3", "N4"]
    assert sim.metrics.broadcast_tx == 4
    assert sim.metrics.delivered == 1


def test_baseline_flood_stays_in_the_senders_component(build_scenario):
    scenario = build_scenario(
        topology={
            "nodes": ["N1", {"label": "N2", "interests": ["CultureF"]}, "N3", "N4"],
            "edges": ["N1-N2", "N3-N4"],
        },
        params={"end_time": 50},
        steps=[{"at": 0, "op": "start_service", "node": "N1", "culture": "CultureF"}],
        workload={"src": "N1", "dst": "N2", "cid": "C1", "op_code": "FILE_CHUNK", "start": 20, "count": 1},
    )
    sim = Simulator(scenario, mode="baseline")
    sim.run()
    (reached,) = sim.baseline.reached.values()
    assert sorted(n.label for n in reached) == ["N1", "N2"]
    assert sim.metrics.broadcast_tx == 2
    assert sim.metrics.delivered == 1


def test_comparison_finds_the_crossover(table4):
    report = compare_overhead(table4, seed=7, k_max=10)
    assert report.messages == 10
    assert report.hamanet.total_tx == 31
    assert report.baseline.total_tx == 40
    assert report.hamanet_wins
    # 11 setup transmissions + 2 per message against 4 per message
    assert report.scan == [(k, 11 + 2 * k, 4 * k) for k in range(1, 7)]
    assert report.crossover == 6


def test_comparison_without_a_scan_is_unreached(table4):
    report = compare_overhead(table4, seed=7)
    assert report.crossover is None
    assert report.scan == []


def test_baseline_has_no_setup_cost(table4):
    metrics, _ = run(replace(table4, workload=None), mode="baseline")
    assert metrics.total_tx == 0
