"""Fat Tree data-center topology with per-server virtual switches and VM slots.

Component ids are integers assigned in construction order: for every
server its virtual switch followed by its VM slots, then the edge,
aggregation and core switches.  VM *indices* (0 .. n_vms-1) are a separate,
server-major numbering used by genotypes; ``vm_component[i]`` maps an index
to its component id.

Servers are numbered pod-major and edge-major, so the VMs under one server,
one edge switch and one pod each occupy a contiguous index range.  The
placement code relies on that to search VMs in hop-distance order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError


class Kind(enum.Enum):
    VM = "vm"
    VSWITCH = "vswitch"
    EDGE = "edge"
    AGG = "agg"
    CORE = "core"


KIND_CODES = {kind: code for code, kind in enumerate(Kind)}
PHYSICAL_SWITCHES = (Kind.EDGE, Kind.AGG, Kind.CORE)


@dataclass(frozen=True)
class KindParams:
    """Queue and power settings for one component kind.

    For physical switches ``service_rate`` and ``buffer_len`` are *per port*;
    a k-port switch serves ``k * service_rate`` packets/ms and buffers
    ``k * buffer_len`` packets.  A virtual switch carries the power figures
    of the server hosting it.  VM energy is never counted.
    """

    service_rate: float
    buffer_len: int
    energy_active: float = 0.0
    energy_idle: float = 0.0

    def __post_init__(self):
        if not self.service_rate > 0:
            raise InvalidParameterError(f"service_rate must be > 0, got {self.service_rate}")
        if int(self.buffer_len) != self.buffer_len or self.buffer_len < 1:
            raise InvalidParameterError(f"buffer_len must be an integer >= 1, got {self.buffer_len}")
        if self.energy_active < 0 or self.energy_idle < 0:
            raise InvalidParameterError("energy figures must be non-negative")


@dataclass(frozen=True)
class ComponentParams:
    """Per-kind settings.  Defaults are configuration, not measured values."""

    vm: KindParams = KindParams(10.0, 10)
    vswitch: KindParams = KindParams(20.0, 20, energy_active=200.0, energy_idle=100.0)
    edge: KindParams = KindParams(20.0, 20, energy_active=150.0, energy_idle=100.0)
    agg: KindParams = KindParams(20.0, 20, energy_active=150.0, energy_idle=100.0)
    core: KindParams = KindParams(20.0, 20, energy_active=150.0, energy_idle=100.0)

    def of(self, kind: Kind) -> KindParams:
        return getattr(self, kind.value)

    def scaled_energy(self, factor: float) -> ComponentParams:
        def scale(p: KindParams) -> KindParams:
            return KindParams(p.service_rate, p.buffer_len, p.energy_active * factor, p.energy_idle * factor)

        return ComponentParams(*(scale(self.of(kind)) for kind in Kind))


@dataclass(frozen=True)
class Component:
    id: int
    kind: Kind
    service_rate: float
    buffer_len: int
    energy_active: float
    energy_idle: float
    server: int | None = None  # owning server for VMs and virtual switches
    pod: int | None = None


@dataclass(frozen=True, eq=False)
class Topology:
    """Immutable Fat Tree graph.  Build with :func:`build_fat_tree`.

    Equality compares the construction parameters; everything else is
    derived from them deterministically.
    """

    k: int
    vms_per_server: int
    params: ComponentParams
    components: tuple[Component, ...] = field(repr=False)
    links: frozenset[tuple[int, int]] = field(repr=False)
    vm_component: np.ndarray = field(repr=False)
    vswitch_of_server: np.ndarray = field(repr=False)
    edge_of_server: np.ndarray = field(repr=False)
    agg_component: np.ndarray = field(repr=False)  # shape (k, k/2): pod, position
    core_component: np.ndarray = field(repr=False)  # shape ((k/2)**2,)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.k, self.vms_per_server, self.params) == (other.k, other.vms_per_server, other.params)

    def __hash__(self):
        return hash((self.k, self.vms_per_server, self.params))

    # -- sizes -------------------------------------------------------------
    @property
    def half(self) -> int:
        return self.k // 2

    @property
    def n_servers(self) -> int:
        return len(self.vswitch_of_server)

    @property
    def n_vms(self) -> int:
        return len(self.vm_component)

    @property
    def n_components(self) -> int:
        return len(self.components)

    def count(self, kind: Kind) -> int:
        return int(np.count_nonzero(self.kind_code == KIND_CODES[kind]))

    # -- component arrays ---------------------------------------------------
    @cached_property
    def kind_code(self) -> np.ndarray:
        return np.array([KIND_CODES[c.kind] for c in self.components], dtype=np.int8)

    @cached_property
    def service_rate(self) -> np.ndarray:
        return np.array([c.service_rate for c in self.components], dtype=float)

    @cached_property
    def buffer_len(self) -> np.ndarray:
        return np.array([c.buffer_len for c in self.components], dtype=float)

    @cached_property
    def energy_active(self) -> np.ndarray:
        return np.array([c.energy_active for c in self.components], dtype=float)

    @cached_property
    def energy_idle(self) -> np.ndarray:
        return np.array([c.energy_idle for c in self.components], dtype=float)

    @cached_property
    def switch_components(self) -> np.ndarray:
        codes = [KIND_CODES[k] for k in PHYSICAL_SWITCHES]
        return np.flatnonzero(np.isin(self.kind_code, codes))

    @cached_property
    def vm_index_of_component(self) -> dict[int, int]:
        return {int(c): i for i, c in enumerate(self.vm_component)}

    @cached_property
    def adjacency(self) -> tuple[frozenset[int], ...]:
        nbrs: list[set[int]] = [set() for _ in self.components]
        for a, b in self.links:
            nbrs[a].add(b)
            nbrs[b].add(a)
        return tuple(frozenset(n) for n in nbrs)

    def linked(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.links

    # -- VM-index geometry --------------------------------------------------
    def server_of_vm(self, vm: int) -> int:
        return vm // self.vms_per_server

    def vm_range_of_server(self, server: int) -> range:
        nv = self.vms_per_server
        return range(server * nv, (server + 1) * nv)

    def vm_levels(self, vm: int) -> list[tuple[int, int]]:
        """Nested half-open VM-index intervals at hop distance 0, 2, 4, 6, 8."""
        nv, h = self.vms_per_server, self.half
        per_edge = nv * h
        per_pod = per_edge * h
        s = vm // nv
        e = vm // per_edge
        p = vm // per_pod
        return [
            (vm, vm + 1),
            (s * nv, (s + 1) * nv),
            (e * per_edge, (e + 1) * per_edge),
            (p * per_pod, (p + 1) * per_pod),
            (0, self.n_vms),
        ]

    def vm_distance(self, a: int, b: int) -> int:
        """Hop (link) count of a shortest path between VM indices a and b."""
        if a == b:
            return 0
        for level, (lo, hi) in enumerate(self.vm_levels(a)[1:], start=1):
            if lo <= b < hi:
                return 2 * level
        raise AssertionError("unreachable")

    def server_distance(self, a: int, b: int) -> int:
        """Hop count between servers (0 for the same server)."""
        if a == b:
            return 0
        h = self.half
        if a // h == b // h:
            return 2
        if a // (h * h) == b // (h * h):
            return 4
        return 6

    # -- routing ------------------------------------------------------------
    def vm_paths(self, a: int, b: int) -> tuple[tuple[int, ...], ...]:
        """All shortest component sequences between VM indices a and b."""
        return _vm_paths(self, a, b)

    def shortest_paths(self, src_vm: int, dst_vm: int) -> list[tuple[int, ...]]:
        """All equal-length shortest component sequences between two VM components."""
        idx = self.vm_index_of_component
        if src_vm not in idx or dst_vm not in idx:
            raise InvalidParameterError("shortest_paths expects VM component ids")
        return list(self.vm_paths(idx[src_vm], idx[dst_vm]))


def _vm_paths(topo: Topology, a: int, b: int) -> tuple[tuple[int, ...], ...]:
    cache = topo.__dict__.setdefault("_path_cache", {})
    key = (a, b)
    if key in cache:
        return cache[key]
    ca, cb = int(topo.vm_component[a]), int(topo.vm_component[b])
    sa, sb = topo.server_of_vm(a), topo.server_of_vm(b)
    h = topo.half
    if a == b:
        paths = ((ca,),)
    elif sa == sb:
        paths = ((ca, int(topo.vswitch_of_server[sa]), cb),)
    else:
        va, vb = int(topo.vswitch_of_server[sa]), int(topo.vswitch_of_server[sb])
        ea, eb = int(topo.edge_of_server[sa]), int(topo.edge_of_server[sb])
        pa, pb = sa // (h * h), sb // (h * h)
        if ea == eb:
            paths = ((ca, va, ea, vb, cb),)
        elif pa == pb:
            paths = tuple((ca, va, ea, int(agg), eb, vb, cb) for agg in topo.agg_component[pa])
        else:
            out = []
            for pos in range(h):
                up, down = int(topo.agg_component[pa, pos]), int(topo.agg_component[pb, pos])
                for j in range(h):
                    core = int(topo.core_component[pos * h + j])
                    out.append((ca, va, ea, up, core, down, eb, vb, cb))
            paths = tuple(out)
    cache[key] = paths
    return paths


def build_fat_tree(k: int, vms_per_server: int = 1, component_params: ComponentParams | None = None) -> Topology:
    """Construct a k-port Fat Tree with ``vms_per_server`` VM slots per server."""
    if isinstance(k, bool) or int(k) != k or k < 2 or k % 2:
        raise InvalidParameterError(f"k must be an even integer >= 2, got {k}")
    if int(vms_per_server) != vms_per_server or vms_per_server < 1:
        raise InvalidParameterError(f"vms_per_server must be an integer >= 1, got {vms_per_server}")
    k, nv = int(k), int(vms_per_server)
    params = component_params or ComponentParams()
    h = k // 2
    n_servers = k**3 // 4

    components: list[Component] = []
    links: set[tuple[int, int]] = set()

    def add(kind: Kind, server=None, pod=None) -> int:
        p = params.of(kind)
        rate, buf = p.service_rate, p.buffer_len
        if kind in PHYSICAL_SWITCHES:
            rate, buf = rate * k, buf * k
        energy = (0.0, 0.0) if kind is Kind.VM else (p.energy_active, p.energy_idle)
        cid = len(components)
        components.append(Component(cid, kind, float(rate), int(buf), *energy, server=server, pod=pod))
        return cid

    def link(a: int, b: int):
        links.add((min(a, b), max(a, b)))

    vswitch = np.empty(n_servers, dtype=np.int64)
    vms = np.empty(n_servers * nv, dtype=np.int64)
    for s in range(n_servers):
        pod = s // (h * h)
        vswitch[s] = add(Kind.VSWITCH, server=s, pod=pod)
        for j in range(nv):
            vm = add(Kind.VM, server=s, pod=pod)
            vms[s * nv + j] = vm
            link(vm, int(vswitch[s]))

    edges = np.empty(k * h, dtype=np.int64)
    for e in range(k * h):
        edges[e] = add(Kind.EDGE, pod=e // h)
    edge_of_server = np.repeat(edges, h)
    for s in range(n_servers):
        link(int(vswitch[s]), int(edge_of_server[s]))

    aggs = np.empty((k, h), dtype=np.int64)
    for p in range(k):
        for a in range(h):
            aggs[p, a] = add(Kind.AGG, pod=p)
            for e in range(h):
                link(int(edges[p * h + e]), int(aggs[p, a]))

    cores = np.empty(h * h, dtype=np.int64)
    for c in range(h * h):
        cores[c] = add(Kind.CORE)
        for p in range(k):
            link(int(cores[c]), int(aggs[p, c // h]))

    for arr in (vswitch, vms, edge_of_server, aggs, cores):
        arr.setflags(write=False)
    return Topology(
        k=k,
        vms_per_server=nv,
        params=params,
        components=tuple(components),
        links=frozenset(links),
        vm_component=vms,
        vswitch_of_server=vswitch,
        edge_of_server=edge_of_server,
        agg_component=aggs,
        core_component=cores,
    )
