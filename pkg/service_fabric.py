"""Art / Culture / Machine composition.

An Art is a capability unit sitting in one layer slot, a Culture picks exactly
one Art per slot, and a Machine is a Culture running on a node. A Machine only
accepts the operation codes its Culture's Arts declare.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Mapping, Optional

import yaml

from errors import (
    DuplicateArt,
    DuplicateCulture,
    DuplicatePending,
    LayerMismatch,
    MissingSlot,
    UnknownArt,
    UnknownCulture,
)
from model_core import CommunityId, MachineCulture, MachineId, NodeId

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("service_fabric")

CATALOG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "art_catalog.yaml")


class Layer(Enum):
    PHYSICAL = "PHYSICAL"
    MAC = "MAC"
    ROUTING = "ROUTING"
    TRANSPORT = "TRANSPORT"
    APPLICATION = "APPLICATION"


class NeedTag(Enum):
    """Human/device need an Art serves. Informational only."""

    ENERGY = "ENERGY"
    PRIVACY = "PRIVACY"
    SECURITY = "SECURITY"
    NONE = "NONE"


@dataclass(frozen=True)
class ArtDef:
    name: str
    layer: Layer
    op_codes: FrozenSet[str] = frozenset()
    params: Mapping[str, float] = field(default_factory=dict)
    need_tag: NeedTag = NeedTag.NONE

    def __post_init__(self):
        object.__setattr__(self, "op_codes", frozenset(self.op_codes))
        if self.layer is Layer.APPLICATION and not self.op_codes:
            raise ValueError(f"application art '{self.name}' declares no op codes")

    def param(self, key, default=0):
        return self.params.get(key, default)


@dataclass(frozen=True)
class CultureDef:
    name: str
    slots: Mapping[Layer, str]
    label: str = ""
    requires: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "requires", frozenset(self.requires))
        if not self.label:
            object.__setattr__(self, "label", self.name)


@dataclass
class MachineInstance:
    mid: MachineId
    culture: MachineCulture
    node: NodeId
    accepted_ops: FrozenSet[str]
    cid: Optional[CommunityId] = None
    state: Dict = field(default_factory=dict)

    def bind(self, cid: CommunityId):
        if self.cid is not None:
            raise ValueError(f"machine {self.mid} already belongs to {self.cid}")
        self.cid = cid

    def __str__(self):
        return f"M({self.culture.culture_name}, {self.mid})"


def accepts(machine: MachineInstance, op_code: str) -> bool:
    return op_code in machine.accepted_ops


class ArtRegistry:
    """Arts and Cultures known to one scenario; read-only once loading is done."""

    def __init__(self):
        self.arts: Dict[str, ArtDef] = {}
        self.cultures: Dict[str, CultureDef] = {}

    def register_art(self, art: ArtDef):
        if art.name in self.arts:
            raise DuplicateArt(f"art '{art.name}' is already registered")
        self.arts[art.name] = art
        logger.debug(f"Registered art {art.name} ({art.layer.value})")

    def register_culture(self, culture: CultureDef):
        if culture.name in self.cultures:
            raise DuplicateCulture(f"culture '{culture.name}' is already registered")
        missing = [layer.value for layer in Layer if layer not in culture.slots]
        if missing:
            raise MissingSlot(f"culture '{culture.name}' leaves {missing} empty")
        for layer in Layer:
            art_name = culture.slots[layer]
            art = self.arts.get(art_name)
            if art is None:
                raise UnknownArt(
                    f"culture '{culture.name}' references unknown art '{art_name}'"
                )
            if art.layer is not layer:
                raise LayerMismatch(
                    f"culture '{culture.name}' puts {art.layer.value} art "
                    f"'{art_name}' in the {layer.value} slot"
                )
        self.cultures[culture.name] = culture
        logger.debug(f"Registered culture {culture.name}")

    def culture(self, name: str) -> CultureDef:
        try:
            return self.cultures[name]
        except KeyError:
            raise UnknownCulture(f"culture '{name}' is not registered") from None

    def art_in_slot(self, culture_name: str, layer: Layer) -> ArtDef:
        return self.arts[self.culture(culture_name).slots[layer]]

    def machine_culture(self, name: str) -> MachineCulture:
        culture = self.culture(name)
        return MachineCulture(culture.name, culture.label)

    def accepted_ops(self, culture_name: str) -> FrozenSet[str]:
        culture = self.culture(culture_name)
        ops = set()
        for art_name in culture.slots.values():
            ops |= self.arts[art_name].op_codes
        return frozenset(ops)


class MachineDirectory:
    """Machines per node; owned by the event loop."""

    def __init__(self, registry: ArtRegistry):
        self.registry = registry
        self.by_node: Dict[NodeId, List[MachineInstance]] = {}

    def instantiate_machine(self, culture_name: str, node: NodeId) -> MachineInstance:
        culture = self.registry.machine_culture(culture_name)
        hosted = self.by_node.setdefault(node, [])
        for machine in self.machines_on(node):
            if machine.culture == culture and machine.cid is None:
                raise DuplicatePending(
                    f"{node.label} already has a {culture_name} machine waiting to join"
                )
        machine = MachineInstance(
            mid=MachineId(node, len(hosted)),
            culture=culture,
            node=node,
            accepted_ops=self.registry.accepted_ops(culture_name),
        )
        hosted.append(machine)
        logger.debug(f"Instantiated {machine} on {node.label}")
        return machine

    def discard(self, machine: MachineInstance):
        # ordinals are never reused
        hosted = self.by_node.get(machine.node, [])
        if machine in hosted:
            hosted[hosted.index(machine)] = None

    def machines_on(self, node: NodeId) -> List[MachineInstance]:
        return [m for m in self.by_node.get(node, []) if m is not None]

    def machine_in(self, node: NodeId, cid: CommunityId) -> Optional[MachineInstance]:
        for machine in self.machines_on(node):
            if machine.cid == cid:
                return machine
        return None

    def find(self, mid: MachineId) -> Optional[MachineInstance]:
        for machine in self.machines_on(mid.node):
            if machine.mid == mid:
                return machine
        return None

    def all_machines(self) -> List[MachineInstance]:
        machines = []
        for node in sorted(self.by_node):
            machines.extend(self.machines_on(node))
        return machines


def art_from_dict(data: Mapping) -> ArtDef:
    return ArtDef(
        name=str(data["name"]),
        layer=Layer(str(data["layer"]).upper()),
        op_codes=frozenset(str(op) for op in data.get("op_codes") or []),
        params={str(k): v for k, v in (data.get("params") or {}).items()},
        need_tag=NeedTag(str(data.get("need_tag") or "NONE").upper()),
    )


def culture_from_dict(data: Mapping) -> CultureDef:
    return CultureDef(
        name=str(data["name"]),
        slots={Layer(str(k).upper()): str(v) for k, v in (data.get("slots") or {}).items()},
        label=str(data.get("label") or ""),
        requires=frozenset(str(r) for r in data.get("requires") or []),
    )


def load_catalog(path: str = CATALOG_PATH) -> Dict[str, list]:
    """Read the built-in Arts and Cultures as raw dictionaries."""
    logger.info(f"Loading art catalog from {path}")
    with open(path, "r") as file:
        data = yaml.safe_load(file) or {}
    return {"arts": data.get("arts") or [], "cultures": data.get("cultures") or []}


def build_registry(arts: List[Mapping], cultures: List[Mapping]) -> ArtRegistry:
    registry = ArtRegistry()
    for art in arts:
        registry.register_art(art_from_dict(art))
    for culture in cultures:
        registry.register_culture(culture_from_dict(culture))
    logger.info(
        f"Registry ready with {len(registry.arts)} arts and {len(registry.cultures)} cultures"
    )
    return registry
