"""Clock-tree and star-trigger distribution graphs.

A :class:`Topology` holds two overlaid trees on one node set:

* clock links from the single ``clock_root`` through fan-out buffers to
  every AWG (the root generator itself counts as one fan-out stage);
* trigger links from the master AWG through fan-out units to every slave,
  plus one ``trigger_return`` link from a leaf fan-out unit back to the
  master, used by calibration as a loopback.

Fan-out units are transparent repeaters with a fixed pass-through delay.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, TopologyError
from .timebase import (
    DEFAULT_CLOCK_PERIOD,
    NS,
    ClockDomain,
    Duration,
    JitterSpec,
    RngHandle,
    sample_jitter_array,
)

NODE_KINDS = ("clock_root", "fanout_unit", "master_awg", "slave_awg", "adc")
LINK_PURPOSES = ("clock", "trigger", "trigger_return")
AWG_KINDS = ("master_awg", "slave_awg")

DEFAULT_FANOUT_WIDTH = 28  # HMC7044 / HMC7043 output count
DEFAULT_TRIGGER_DELAY = 1 * NS

TRIGGER_PURPOSES = ("trigger", "trigger_return")


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    label: str = ""

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise TopologyError(f"unknown node kind {self.kind!r}")


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    nominal_delay: Duration
    jitter: JitterSpec = field(default_factory=JitterSpec)
    purpose: str = "trigger"

    def __post_init__(self):
        if self.purpose not in LINK_PURPOSES:
            raise TopologyError(f"unknown link purpose {self.purpose!r}")
        if self.nominal_delay < 0:
            raise TopologyError(f"link {self.src}->{self.dst} has negative delay")


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    fanout_width: int = DEFAULT_FANOUT_WIDTH
    fanout_delay: Duration = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        adjacency: dict[int, list[Link]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            if link.src not in adjacency or link.dst not in adjacency:
                raise TopologyError(f"link {link.src}->{link.dst} references an unknown node")
            adjacency[link.src].append(link)
        object.__setattr__(self, "_adjacency", adjacency)
        object.__setattr__(self, "_paths", {})
        self.validate()

    # -- structure -----------------------------------------------------

    def _only(self, kind: str) -> Node:
        found = [n for n in self.nodes if n.kind == kind]
        if len(found) != 1:
            raise TopologyError(f"expected exactly one {kind}, found {len(found)}")
        return found[0]

    @property
    def clock_root(self) -> int:
        return self._only("clock_root").id

    @property
    def master(self) -> int:
        return self._only("master_awg").id

    @property
    def slaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "slave_awg"]

    @property
    def awgs(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind in AWG_KINDS]

    def kind(self, node: int) -> str:
        return self.nodes[node].kind

    def out_links(self, node: int, purposes: Iterable[str] = LINK_PURPOSES) -> list[Link]:
        purposes = tuple(purposes)
        return [l for l in self._adjacency[node] if l.purpose in purposes]

    def validate(self) -> None:
        if tuple(n.id for n in self.nodes) != tuple(range(len(self.nodes))):
            raise TopologyError("node ids must be dense 0..N-1 in order")
        if self.fanout_width < 1:
            raise TopologyError("fanout_width must be >= 1")
        if self.fanout_delay < 0:
            raise TopologyError("fanout_delay must be >= 0")
        root, master = self.clock_root, self.master

        for node in self.nodes:
            if node.kind in ("fanout_unit", "clock_root"):
                degree = len(self._adjacency[node.id])
                if degree > self.fanout_width:
                    raise TopologyError(
                        f"node {node.id} has out-degree {degree} > fanout_width {self.fanout_width}"
                    )

        self._check_tree(("clock",), root, "clock")
        clocked = self._reachable(root, ("clock",))
        for awg in self.awgs:
            if awg not in clocked:
                raise TopologyError(f"AWG {awg} is not reachable from the clock root")

        self._check_tree(("trigger",), master, "trigger")
        triggered = self._reachable(master, ("trigger",))
        for slave in self.slaves:
            if slave not in triggered:
                raise TopologyError(f"slave {slave} is not reachable from the master via trigger links")
        returns = [l for l in self.links if l.purpose == "trigger_return"]
        for link in returns:
            if link.dst != master:
                raise TopologyError("trigger_return links must terminate at the master")
            if self.kind(link.src) != "fanout_unit" or link.src not in triggered:
                raise TopologyError("trigger_return must leave a fan-out unit fed by the master")

    def _check_tree(self, purposes: tuple[str, ...], root: int, name: str) -> None:
        indegree: dict[int, int] = {}
        for link in self.links:
            if link.purpose in purposes:
                indegree[link.dst] = indegree.get(link.dst, 0) + 1
        if indegree.get(root, 0):
            raise TopologyError(f"{name} root {root} has an incoming {name} link")
        multi = [n for n, d in indegree.items() if d > 1]
        if multi:
            raise TopologyError(f"{name} links do not form a tree (node {multi[0]} has several parents)")
        # in-degree <= 1 everywhere plus reachability from the root rules out cycles among reached nodes
        reached = self._reachable(root, purposes)
        orphans = [n for n in indegree if n not in reached]
        if orphans:
            raise TopologyError(f"{name} link into node {orphans[0]} is not connected to the root")

    def _reachable(self, start: int, purposes: tuple[str, ...]) -> set[int]:
        seen = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for link in self.out_links(node, purposes):
                if link.dst not in seen:
                    seen.add(link.dst)
                    queue.append(link.dst)
        return seen

    # -- paths ---------------------------------------------------------

    def find_path(self, src: int, dst: int, purposes: Sequence[str] = TRIGGER_PURPOSES) -> tuple[Link, ...]:
        """Links from ``src`` to ``dst``; ``src == dst`` asks for a loop."""
        key = (src, dst, tuple(purposes))
        cached = self._paths.get(key)
        if cached is not None:
            return cached
        parents: dict[int, Link] = {}
        queue = deque()
        for link in self.out_links(src, purposes):
            if link.dst not in parents:
                parents[link.dst] = link
                queue.append(link.dst)
        while queue and dst not in parents:
            node = queue.popleft()
            for link in self.out_links(node, purposes):
                if link.dst not in parents:
                    parents[link.dst] = link
                    queue.append(link.dst)
        if dst not in parents:
            raise TopologyError(f"no {'/'.join(purposes)} path from node {src} to node {dst}")
        path = []
        node = dst
        while True:
            link = parents[node]
            path.append(link)
            if link.src == src:
                break
            node = link.src
        path = tuple(reversed(path))
        self._paths[key] = path
        return path

    def path_pass_through(self, path: Sequence[Link]) -> Duration:
        hops = sum(1 for link in path[:-1] if self.kind(link.dst) == "fanout_unit")
        return hops * self.fanout_delay

    def nominal_delay(self, src: int, dst: int, purposes: Sequence[str] = TRIGGER_PURPOSES) -> Duration:
        path = self.find_path(src, dst, purposes)
        return sum(l.nominal_delay for l in path) + self.path_pass_through(path)


def propagation_delays(
    topo: Topology,
    src: int,
    dst: int,
    rng: RngHandle,
    n: int,
    purposes: Sequence[str] = TRIGGER_PURPOSES,
) -> np.ndarray:
    """``n`` independent path-delay draws (one jitter draw per link per event)."""
    path = topo.find_path(src, dst, purposes)
    total = np.full(n, sum(l.nominal_delay for l in path) + topo.path_pass_through(path), dtype=np.int64)
    for link in path:
        if not link.jitter.is_none:
            total += sample_jitter_array(link.jitter, rng, n)
    return total


def propagation_delay(
    topo: Topology,
    src: int,
    dst: int,
    rng: RngHandle,
    purposes: Sequence[str] = TRIGGER_PURPOSES,
) -> Duration:
    """Sum of nominal delay plus sampled jitter over the unique path."""
    return int(propagation_delays(topo, src, dst, rng, 1, purposes)[0])


def clock_domains(
    topo: Topology,
    rng: RngHandle | None = None,
    period: Duration = DEFAULT_CLOCK_PERIOD,
) -> dict[int, ClockDomain]:
    """Local sampling clock of every AWG, phased by its clock-tree delay.

    Clock-link jitter is drawn once (static skew), so pass the same handle
    to every consumer that must agree on the phases.
    """
    out = {}
    for awg in topo.awgs:
        path = topo.find_path(topo.clock_root, awg, ("clock",))
        jittered = any(not l.jitter.is_none for l in path)
        if jittered and rng is None:
            raise ConfigurationError("clock links carry jitter; an RngHandle is required")
        sub = rng.child("clock", awg) if jittered else None
        delay = int(propagation_delays(topo, topo.clock_root, awg, sub, 1, ("clock",))[0]) if jittered \
            else topo.nominal_delay(topo.clock_root, awg, ("clock",))
        out[awg] = ClockDomain.with_offset(period, delay)
    return out


def max_supported_awgs(fanout_width: int, fanout_levels: int) -> int:
    """Endpoints reachable by a full tree: the root generator plus ``fanout_levels`` buffer stages."""
    if fanout_width < 1:
        raise ConfigurationError("fanout_width must be >= 1")
    if fanout_levels < 0:
        raise ConfigurationError("fanout_levels must be >= 0")
    return fanout_width ** (fanout_levels + 1)


def resources_for_qubits(n_qubits: int) -> tuple[int, int]:
    """(AWGs, ADCs) for ``n_qubits`` with 4-channel AWGs and 2-channel ADCs."""
    if n_qubits < 1:
        raise ConfigurationError("n_qubits must be >= 1")
    return 4 * n_qubits, -(-n_qubits // 4)


def _stage_sizes(endpoints: int, width: int, top_capacity: int) -> list[int]:
    """Fan-out unit counts per level, deepest first, until ``top_capacity`` suffices."""
    sizes = []
    m = endpoints
    while m > top_capacity:
        m = math.ceil(m / width)
        sizes.append(m)
    return sizes


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.links: list[Link] = []

    def node(self, kind: str, label: str) -> int:
        self.nodes.append(Node(len(self.nodes), kind, label))
        return len(self.nodes) - 1

    def tree(self, top: int, endpoints: list[tuple[int, str]], width: int, top_capacity: int,
             prefix: str, purpose: str, delays, jitter: JitterSpec) -> None:
        """Balanced tree from ``top`` to every endpoint; all endpoints share one depth."""
        sizes = _stage_sizes(len(endpoints), width, top_capacity)
        parents = [top]
        for level, count in enumerate(reversed(sizes)):
            units = [self.node("fanout_unit", f"{prefix}-L{level}-{i}") for i in range(count)]
            for i, unit in enumerate(units):
                self.links.append(Link(parents[i // width], unit, next(delays), jitter, purpose))
            parents = units
        for i, (dst, link_purpose) in enumerate(endpoints):
            self.links.append(Link(parents[i // width], dst, next(delays), jitter, link_purpose))


def count_trigger_links(n_slaves: int, fanout_width: int = DEFAULT_FANOUT_WIDTH) -> int:
    """Number of entries a per-link delay list for :func:`build_star_topology` must have."""
    sizes = _stage_sizes(n_slaves + 1, fanout_width, 1)
    return 1 + (sum(sizes) - 1) + n_slaves + 1


def build_star_topology(
    n_slaves: int,
    fanout_width: int = DEFAULT_FANOUT_WIDTH,
    link_delays: Union[Duration, Sequence[Duration]] = DEFAULT_TRIGGER_DELAY,
    jitter: JitterSpec | None = None,
    *,
    clock_delay: Duration = 0,
    clock_jitter: JitterSpec | None = None,
    fanout_delay: Duration = 0,
) -> Topology:
    """Master-slave star with the fewest fan-out units at a common depth.

    ``link_delays`` is either one delay for every trigger link or a list
    with one entry per trigger link in this order: master to top fan-out,
    fan-out to fan-out links level by level, leaf fan-out to each slave in
    id order, and finally the loopback return to the master.

    Node ids: 0 clock root, 1 master, 2.. slaves, then trigger fan-outs,
    then clock fan-outs.
    """
    if n_slaves < 1:
        raise ConfigurationError("n_slaves must be >= 1")
    if fanout_width < 2:
        raise ConfigurationError("fanout_width must be >= 2 to build a star")
    jitter = jitter or JitterSpec()
    clock_jitter = clock_jitter or JitterSpec()

    n_links = count_trigger_links(n_slaves, fanout_width)
    if isinstance(link_delays, int):
        trigger_delays = [link_delays] * n_links
    else:
        trigger_delays = list(link_delays)
        if len(trigger_delays) != n_links:
            raise ConfigurationError(
                f"per-link delay list has {len(trigger_delays)} entries; this star needs {n_links}"
            )

    b = _Builder()
    root = b.node("clock_root", "clock-root")
    master = b.node("master_awg", "master")
    slaves = [b.node("slave_awg", f"slave-{i}") for i in range(n_slaves)]

    endpoints = [(s, "trigger") for s in slaves] + [(master, "trigger_return")]
    b.tree(master, endpoints, fanout_width, 1, "trig", "trigger", iter(trigger_delays), jitter)
    b.tree(root, [(a, "clock") for a in [master] + slaves], fanout_width, fanout_width,
           "clk", "clock", _repeat(clock_delay), clock_jitter)

    return Topology(tuple(b.nodes), tuple(b.links), fanout_width, fanout_delay)


def _repeat(value):
    while True:
        yield value
