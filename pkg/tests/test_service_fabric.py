import pytest

from errors import DuplicateArt, DuplicateCulture, DuplicatePending, LayerMismatch, MissingSlot, UnknownArt, UnknownCulture
from model_core import CommunityId, NodeId
from service_fabric import (
    ArtDef,
    ArtRegistry,
    CultureDef,
    Layer,
    MachineDirectory,
    NeedTag,
    accepts,
    build_registry,
    load_catalog,
)

SLOTS = {
    Layer.PHYSICAL: "Phy",
    Layer.MAC: "Mac",
    Layer.ROUTING: "Route",
    Layer.TRANSPORT: "Trans",
    Layer.APPLICATION: "App",
}


@pytest.fixture
def registry():
    reg = ArtRegistry()
    reg.register_art(ArtDef("Phy", Layer.PHYSICAL, params={"delay": 1}))
    reg.register_art(ArtDef("Mac", Layer.MAC))
    reg.register_art(ArtDef("Route", Layer.ROUTING))
    reg.register_art(ArtDef("Trans", Layer.TRANSPORT))
    reg.register_art(ArtDef("App", Layer.APPLICATION, op_codes={"PING", "PONG"}))
    reg.register_culture(CultureDef("Pinger", SLOTS, label="Ping service"))
    return reg


def test_duplicate_art_is_refused(registry):
    with pytest.raises(DuplicateArt):
        registry.register_art(ArtDef("Mac", Layer.MAC))


def test_duplicate_culture_is_refused(registry):
    with pytest.raises(DuplicateCulture):
        registry.register_culture(CultureDef("Pinger", SLOTS))


def test_culture_needs_every_slot(registry):
    slots = dict(SLOTS)
    del slots[Layer.TRANSPORT]
    with pytest.raises(MissingSlot):
        registry.register_culture(CultureDef("Partial", slots))


def test_culture_needs_known_arts(registry):
    with pytest.raises(UnknownArt):
        registry.register_culture(CultureDef("Ghost", {**SLOTS, Layer.MAC: "Nope"}))


def test_art_must_sit_in_its_own_layer(registry):
    with pytest.raises(LayerMismatch):
        registry.register_culture(CultureDef("Swapped", {**SLOTS, Layer.MAC: "Route"}))


def test_application_art_needs_op_codes():
    with pytest.raises(ValueError):
        ArtDef("Mute", Layer.APPLICATION)


def test_accepted_ops_and_machine_culture(registry):
    assert registry.accepted_ops("Pinger") == frozenset({"PING", "PONG"})
    culture = registry.machine_culture("Pinger")
    assert culture.culture_name == "Pinger" and culture.label == "Ping service"
    with pytest.raises(UnknownCulture):
        registry.culture("Missing")


def test_machines_get_sequential_ordinals(registry):
    machines = MachineDirectory(registry)
    node = NodeId(0, "N1")
    first = machines.instantiate_machine("Pinger", node)
    first.bind(CommunityId("C1"))
    second = machines.instantiate_machine("Pinger", node)
    assert (first.mid.label, second.mid.label) == ("N1.0", "N1.1")
    assert machines.machine_in(node, CommunityId("C1")) is first
    assert accepts(first, "PING")
    assert not accepts(first, "DNS_QUERY")


def test_only_one_unbound_machine_per_culture(registry):
    machines = MachineDirectory(registry)
    node = NodeId(0, "N1")
    machines.instantiate_machine("Pinger", node)
    with pytest.raises(DuplicatePending):
        machines.instantiate_machine("Pinger", node)


def test_discarded_ordinals_are_not_reused(registry):
    machines = MachineDirectory(registry)
    node = NodeId(0, "N1")
    first = machines.instantiate_machine("Pinger", node)
    machines.discard(first)
    assert machines.machines_on(node) == []
    assert machines.instantiate_machine("Pinger", node).mid.ordinal == 1


def test_builtin_catalog_registers_cleanly():
    catalog = load_catalog()
    registry = build_registry(catalog["arts"], catalog["cultures"])
    assert {"Culture1", "Culture2", "Culture3", "CultureF", "NameCulture"} <= set(registry.cultures)
    assert registry.culture("CultureF").label == "File service"
    assert registry.culture("NameCulture").requires == frozenset({"gateway"})
    assert "FILE_REQ" in registry.accepted_ops("CultureF")
    assert registry.arts["DSDV"].need_tag is NeedTag.ENERGY
    assert registry.art_in_slot("Culture1", Layer.APPLICATION).name == "FTP"
