"""Domain types shared by the simulator: nodes, flows, packets, topology."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

NS_PER_S = 1_000_000_000

# RTP/UDP/IP plus CPN header, added to every payload on the wire.
HEADER_BYTES = 58


def to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def to_s(ns: int) -> float:
    return ns / NS_PER_S


def fmt_s(ns: int) -> str:
    """Render integer nanoseconds as seconds with 9 decimals, exactly."""
    sign = "-" if ns < 0 else ""
    whole, frac = divmod(abs(ns), NS_PER_S)
    return f"{sign}{whole}.{frac:09d}"


class QosGoal(str, enum.Enum):
    DELAY = "Delay"
    JITTER = "Jitter"

    @classmethod
    def parse(cls, text: str) -> "QosGoal":
        for goal in cls:
            if goal.value.lower() == str(text).lower():
                return goal
        raise ValueError(f"unknown QoS goal {text!r} (expected Delay or Jitter)")


class PacketKind(str, enum.Enum):
    SMART = "Smart"
    DUMB = "Dumb"
    ACK = "Ack"


class GeneratorKind(str, enum.Enum):
    VOICE_CBR = "VoiceCBR"
    UDP_BACKGROUND = "UdpBackground"

    @classmethod
    def parse(cls, text: str) -> "GeneratorKind":
        for kind in cls:
            if kind.value.lower() == str(text).lower():
                return kind
        raise ValueError(f"unknown generator kind {text!r}")


@dataclass(frozen=True, order=True)
class NodeId:
    id: int
    label: str

    def __str__(self) -> str:
        return self.label


class FlowKey(NamedTuple):
    src: int
    dst: int
    src_port: int
    dst_port: int

    def __str__(self) -> str:
        return f"{self.src}:{self.src_port}>{self.dst}:{self.dst_port}"


@dataclass(frozen=True)
class GeneratorSpec:
    kind: GeneratorKind
    rate_bps: float
    payload_bytes: int
    sp_ratio: int = 10

    @property
    def interval_s(self) -> float:
        return self.payload_bytes * 8 / self.rate_bps

    @classmethod
    def voice(cls, sp_ratio: int = 10) -> "GeneratorSpec":
        # 160 B G.711 frame + 12 B RTP header every 20 ms
        return cls(GeneratorKind.VOICE_CBR, 172 * 8 / 0.020, 172, sp_ratio)

    @classmethod
    def background(cls, rate_bps: float, payload_bytes: int = 1024, sp_ratio: int = 10) -> "GeneratorSpec":
        return cls(GeneratorKind.UDP_BACKGROUND, rate_bps, payload_bytes, sp_ratio)


@dataclass(frozen=True)
class FlowSpec:
    key: FlowKey
    goal: QosGoal
    generator: GeneratorSpec
    start_s: float = 0.0
    stop_s: float = float("inf")
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or str(self.key)


@dataclass(slots=True)
class CpnPacket:
    """One packet on the wire.

    ``route`` is the source route for dumb packets, the hops visited so far
    for smart packets, and the remaining reverse path for acks.
    ``hop_stamps`` holds ``(node, arrival_ns)`` pairs; for an ack it is the
    stamp list of the acknowledged packet.
    """

    kind: PacketKind
    flow: FlowKey
    seq: int
    goal: QosGoal
    route: list
    hop_stamps: list = field(default_factory=list)
    payload_bytes: int = 0
    created_at: int = 0
    # ack-only: kind of the acknowledged packet and its forward path
    acked_kind: PacketKind | None = None
    acked_path: tuple = ()
    hop_index: int = 0

    @property
    def wire_bytes(self) -> int:
        return self.payload_bytes + HEADER_BYTES


@dataclass(frozen=True)
class LinkSpec:
    a: int
    b: int
    bandwidth_bps: float
    propagation_s: float = 10e-6
    queue_capacity_packets: int = 100


class ScenarioError(ValueError):
    """Base class for scenario validation failures."""


class DuplicateNode(ScenarioError):
    pass


class DisconnectedGraph(ScenarioError):
    pass


class UnknownEndpoint(ScenarioError):
    pass


class BadRate(ScenarioError):
    pass


@dataclass(frozen=True)
class Topology:
    nodes: tuple
    links: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))

    def node(self, ref: int | str) -> NodeId:
        for n in self.nodes:
            if n.id == ref or n.label == ref:
                return n
        raise UnknownEndpoint(f"no node {ref!r} in topology")

    def directed_links(self) -> list[LinkSpec]:
        """Each undirected link expanded into its two directions."""
        out = []
        for link in self.links:
            out.append(link)
            out.append(LinkSpec(link.b, link.a, link.bandwidth_bps,
                                link.propagation_s, link.queue_capacity_packets))
        return out

    def neighbors(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for link in self.directed_links():
            adj[link.a].append(link.b)
        for v in adj.values():
            v.sort()
        return adj

    def scaled(self, factor: float) -> "Topology":
        links = [LinkSpec(l.a, l.b, l.bandwidth_bps * factor, l.propagation_s,
                          l.queue_capacity_packets) for l in self.links]
        return Topology(self.nodes, links)


TESTBED8_LABELS = ("CPN002", "CPN005", "CPN010", "CPN011",
                   "CPN014", "CPN020", "CPN025", "CPN026")
TESTBED8_EDGES = (
    (0, 1), (0, 2), (0, 3),      # CPN002 fan-out
    (1, 4), (2, 5), (3, 6),      # three disjoint middles
    (4, 7), (5, 7), (6, 7),      # CPN026 fan-in
    (1, 2), (2, 3), (4, 5), (5, 6),  # cross links
)


def testbed8(bandwidth_bps: float = 100e6, propagation_s: float = 10e-6,
             queue_capacity: int = 100) -> Topology:
    """Stand-in for the 8-node testbed.

    CPN002 and CPN026 sit 3 hops apart with three link-disjoint paths
    between them; the real adjacency of the testbed is not published.
    """
    nodes = [NodeId(i, label) for i, label in enumerate(TESTBED8_LABELS)]
    links = [LinkSpec(a, b, bandwidth_bps, propagation_s, queue_capacity)
             for a, b in TESTBED8_EDGES]
    return Topology(nodes, links)


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    flows: tuple

    def flow_by_label(self, label: str) -> FlowSpec:
        for f in self.flows:
            if f.label == label:
                return f
        raise KeyError(label)


def _connected(node_ids: Sequence[int], links: Iterable[LinkSpec]) -> bool:
    if not node_ids:
        return True
    adj: dict[int, set] = {n: set() for n in node_ids}
    for l in links:
        adj[l.a].add(l.b)
        adj[l.b].add(l.a)
    seen = {node_ids[0]}
    todo = deque([node_ids[0]])
    while todo:
        u = todo.popleft()
        for v in adj[u] - seen:
            seen.add(v)
            todo.append(v)
    return len(seen) == len(node_ids)


def validate_scenario(topology: Topology, flows: Iterable[FlowSpec]) -> Scenario:
    """Check every topology and flow invariant; raise on the first failure."""
    flows = tuple(flows)
    ids, labels = set(), set()
    for n in topology.nodes:
        if n.id in ids or n.id < 0:
            raise DuplicateNode(f"node id {n.id} is duplicated or negative")
        if n.label in labels:
            raise DuplicateNode(f"node label {n.label!r} is duplicated")
        ids.add(n.id)
        labels.add(n.label)

    for l in topology.links:
        name = f"link {l.a}-{l.b}"
        if l.a not in ids or l.b not in ids:
            raise UnknownEndpoint(f"{name} references a node not in the topology")
        if l.a == l.b:
            raise DisconnectedGraph(f"{name} is a self-link")
        if not l.bandwidth_bps > 0:
            raise BadRate(f"{name} has bandwidth {l.bandwidth_bps}")
        if l.queue_capacity_packets < 1:
            raise BadRate(f"{name} has queue capacity {l.queue_capacity_packets}")
        if l.propagation_s < 0:
            raise BadRate(f"{name} has negative propagation delay")
    pairs = [frozenset((l.a, l.b)) for l in topology.links]
    if len(set(pairs)) != len(pairs):
        raise DuplicateNode("a node pair is linked more than once")
    if not _connected([n.id for n in topology.nodes], topology.links):
        raise DisconnectedGraph("topology graph is not connected")

    for f in flows:
        k = f.key
        if k.src not in ids or k.dst not in ids:
            raise UnknownEndpoint(f"flow {f.label}: endpoint not in topology")
        if k.src == k.dst:
            raise UnknownEndpoint(f"flow {f.label}: source equals destination")
        for port in (k.src_port, k.dst_port):
            if not 0 <= port <= 65535:
                raise UnknownEndpoint(f"flow {f.label}: port {port} out of range")
        g = f.generator
        if not g.rate_bps > 0:
            raise BadRate(f"flow {f.label}: generator rate {g.rate_bps}")
        if g.payload_bytes < 1:
            raise BadRate(f"flow {f.label}: payload {g.payload_bytes} bytes")
        if g.sp_ratio < 1:
            raise BadRate(f"flow {f.label}: sp_ratio {g.sp_ratio}")
        if not f.stop_s > f.start_s:
            raise BadRate(f"flow {f.label}: stop {f.stop_s} <= start {f.start_s}")
    if len({f.label for f in flows}) != len(flows):
        raise UnknownEndpoint("flow labels must be unique")
    if len({f.key for f in flows}) != len(flows):
        raise UnknownEndpoint("two flows share the same address/port key")
    return Scenario(topology, flows)


def loop_erase(path: Sequence[int]) -> list[int]:
    """Chronological loop erasure: revisiting a node cuts the loop back out."""
    out: list[int] = []
    pos: dict[int, int] = {}
    for node in path:
        if node in pos:
            cut = pos[node]
            for dropped in out[cut + 1:]:
                del pos[dropped]
            del out[cut + 1:]
        else:
            pos[node] = len(out)
            out.append(node)
    return out
