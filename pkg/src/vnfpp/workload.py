"""Problem instances: services, VNF catalog, constraints and their file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    InstanceFormatError,
    InstanceValidationError,
    InvalidParameterError,
    UnsupportedVersionError,
)
from .topology import ComponentParams, Kind, KindParams, Topology, build_fat_tree

FORMAT_TAG = "vnfpp-instance"
FORMAT_VERSION = 1

# Default generation profile: (mean, stddev) of Gaussians.  Placeholders, not
# measured values.
DEFAULT_SERVICE_LEN = (5.0, 1.0)
DEFAULT_ARRIVAL_RATE = (2.0, 0.5)  # packets/ms
DEFAULT_VNF_RATE = (10.0, 2.0)  # packets/ms


@dataclass(frozen=True)
class Vnf:
    id: str
    service_rate: float
    max_instances: int | None = None

    def __post_init__(self):
        if not self.service_rate > 0:
            raise InstanceValidationError(f"VNF {self.id}: service_rate must be > 0")
        if self.max_instances is not None and self.max_instances < 1:
            raise InstanceValidationError(f"VNF {self.id}: max_instances must be >= 1")


@dataclass(frozen=True)
class Service:
    id: str
    chain: tuple[str, ...]
    arrival_rate: float
    anti_affinity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        if not self.chain:
            raise InstanceValidationError(f"service {self.id}: chain is empty")
        # zero is allowed so traffic can be switched off (scaled(0.0))
        if not self.arrival_rate >= 0:
            raise InstanceValidationError(f"service {self.id}: arrival_rate must be >= 0")

    def __len__(self):
        return len(self.chain)


@dataclass(frozen=True, eq=True)
class ProblemInstance:
    topology: Topology
    services: tuple[Service, ...]
    vnf_catalog: tuple[Vnf, ...]
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "vnf_catalog", tuple(self.vnf_catalog))
        validate_instance(self)

    # -- lookups -------------------------------------------------------------
    @cached_property
    def vnf_index(self) -> dict[str, int]:
        return {v.id: i for i, v in enumerate(self.vnf_catalog)}

    @cached_property
    def chains(self) -> tuple[np.ndarray, ...]:
        """Per-service chain as an array of catalog indices."""
        idx = self.vnf_index
        return tuple(np.array([idx[v] for v in s.chain], dtype=np.int64) for s in self.services)

    @cached_property
    def chain_lengths(self) -> np.ndarray:
        return np.array([len(s.chain) for s in self.services], dtype=np.int64)

    @cached_property
    def arrival_rates(self) -> np.ndarray:
        return np.array([s.arrival_rate for s in self.services], dtype=float)

    @cached_property
    def vnf_rates(self) -> np.ndarray:
        return np.array([v.service_rate for v in self.vnf_catalog], dtype=float)

    @cached_property
    def first_vnf_rates(self) -> np.ndarray:
        return np.array([self.vnf_rates[c[0]] for c in self.chains])

    @cached_property
    def anti_affinity(self) -> np.ndarray:
        return np.array([s.anti_affinity for s in self.services], dtype=bool)

    @cached_property
    def license_limits(self) -> np.ndarray:
        """Max instances per VNF; ``inf`` when unlimited."""
        return np.array([np.inf if v.max_instances is None else v.max_instances for v in self.vnf_catalog])

    @cached_property
    def vnf_service(self) -> np.ndarray:
        """Owning service per VNF, or -1 when the VNF is shared by several."""
        owner = np.full(len(self.vnf_catalog), -2, dtype=np.int64)
        for s, chain in enumerate(self.chains):
            for v in chain:
                owner[v] = s if owner[v] in (-2, s) else -1
        return owner

    @property
    def n_services(self) -> int:
        return len(self.services)

    @property
    def total_chain_length(self) -> int:
        return int(self.chain_lengths.sum())

    def vm_demand(self, counts) -> int:
        """VMs needed for ``counts[s]`` instances of each service.

        Anti-affinity services reserve whole servers, so their demand is
        rounded up to a multiple of the per-server VM count.
        """
        counts = np.asarray(counts, dtype=np.int64)
        nv = self.topology.vms_per_server
        raw = counts * self.chain_lengths
        aa = self.anti_affinity
        rounded = np.where(aa, -(-raw // nv) * nv, raw)
        return int(rounded.sum())

    def scaled(self, factor: float) -> ProblemInstance:
        """Copy with every service arrival rate multiplied by ``factor``."""
        services = tuple(replace(s, arrival_rate=s.arrival_rate * factor) for s in self.services)
        return replace(self, services=services)

    def with_topology(self, topology: Topology) -> ProblemInstance:
        return replace(self, topology=topology)


def validate_instance(instance: ProblemInstance) -> None:
    ids = [s.id for s in instance.services]
    if len(set(ids)) != len(ids):
        raise InstanceValidationError("duplicate service ids")
    vnf_ids = [v.id for v in instance.vnf_catalog]
    if len(set(vnf_ids)) != len(vnf_ids):
        raise InstanceValidationError("duplicate VNF ids")
    if not instance.services:
        raise InstanceValidationError("instance has no services")
    known = set(vnf_ids)
    for s in instance.services:
        missing = [v for v in s.chain if v not in known]
        if missing:
            raise InstanceValidationError(f"service {s.id}: chain references unknown VNF(s) {missing}")
    ones = np.ones(len(instance.services), dtype=np.int64)
    need = instance.vm_demand(ones)
    if need > instance.topology.n_vms:
        raise InstanceValidationError(
            f"one instance of every service needs {need} VMs but the topology has {instance.topology.n_vms}"
        )
    uses = np.zeros(len(instance.vnf_catalog))
    for chain in instance.chains:
        np.add.at(uses, chain, 1)
    over = np.flatnonzero(uses > instance.license_limits)
    if over.size:
        raise InstanceValidationError(
            f"license limit below one instance per service for VNF(s) {[vnf_ids[i] for i in over]}"
        )


def feasible_fraction_upper_bound(num_vnfs: int, num_vms: int) -> tuple[float, float]:
    """Upper-bound feasibility probabilities for a random direct placement.

    Returns ``(p_placed, p_not_feasible)``: the probability that a given VNF
    lands on at least one of ``num_vms`` VMs when every VM picks one of
    ``num_vnfs`` VNFs independently and uniformly, and the probability that
    at least one VNF is missing.  ``1 - p_not_feasible`` bounds the feasible
    fraction of the search space from above.
    """
    if num_vnfs < 1 or num_vms < 1:
        raise InvalidParameterError("num_vnfs and num_vms must be >= 1")
    p_placed = -math.expm1(num_vms * math.log1p(-1.0 / num_vnfs)) if num_vnfs > 1 else 1.0
    p_not = -math.expm1(num_vnfs * math.log(p_placed))
    return p_placed, min(max(p_not, 0.0), 1.0)


def _truncated_normal(rng: np.random.Generator, dist: tuple[float, float], size, floor_frac: float) -> np.ndarray:
    mean, std = dist
    if mean <= 0 or std < 0:
        raise InvalidParameterError(f"distribution {dist}: need mean > 0 and stddev >= 0")
    return np.maximum(rng.normal(mean, std, size=size), mean * floor_frac)


def generate_instance(
    topology: Topology,
    target_utilization: float = 0.5,
    service_len_dist: tuple[float, float] = DEFAULT_SERVICE_LEN,
    arrival_rate_dist: tuple[float, float] = DEFAULT_ARRIVAL_RATE,
    vnf_rate_dist: tuple[float, float] = DEFAULT_VNF_RATE,
    seed: int = 0,
    *,
    anti_affinity: int = 0,
    limited_vnfs: int = 0,
    license_fraction: float = 1.0,
    truncation: float = 0.1,
) -> ProblemInstance:
    """Sample a problem instance whose chains fill ``target_utilization`` of the VMs.

    Every service gets its own VNFs.  ``anti_affinity`` services and
    ``limited_vnfs`` license-limited VNFs are drawn at random; a limited VNF
    may run ``license_fraction`` of the largest per-service instance count
    the data center can hold (at least one).  Gaussian samples are floored
    at ``truncation * mean``.
    """
    if not 0 < target_utilization <= 1:
        raise InvalidParameterError(f"target_utilization must be in (0, 1], got {target_utilization}")
    if not 0 < license_fraction <= 1:
        raise InvalidParameterError("license_fraction must be in (0, 1]")
    n_vms = topology.n_vms
    n_services = math.ceil(target_utilization * n_vms / service_len_dist[0] - 1e-9)
    if n_services < 1:
        raise InvalidParameterError("parameters imply zero services")
    if anti_affinity > n_services:
        raise InvalidParameterError("more anti-affinity services than services")
    rng = np.random.default_rng(seed)

    lengths = np.maximum(1, np.rint(_truncated_normal(rng, service_len_dist, n_services, truncation))).astype(int)
    rates = _truncated_normal(rng, arrival_rate_dist, n_services, truncation)
    aa = np.zeros(n_services, dtype=bool)
    if anti_affinity:
        aa[rng.choice(n_services, size=anti_affinity, replace=False)] = True

    nv = topology.vms_per_server

    def demand() -> int:
        return int(np.where(aa, -(-lengths // nv) * nv, lengths).sum())

    if n_services > n_vms:
        raise InvalidParameterError("more services than VMs")
    while demand() > n_vms:
        # oversubscribed by sampling noise: trim the longest chain
        lengths[int(np.argmax(lengths))] -= 1
        if lengths.min() < 1:
            raise InvalidParameterError("cannot fit one instance of every service")

    total_len = int(lengths.sum())
    vnf_rates = _truncated_normal(rng, vnf_rate_dist, total_len, truncation)
    if limited_vnfs > total_len:
        raise InvalidParameterError("more limited VNFs than VNFs")
    limited = set(rng.choice(total_len, size=limited_vnfs, replace=False).tolist()) if limited_vnfs else set()
    max_count = n_vms // total_len
    license_cap = max(1, int(math.floor(license_fraction * max_count)))

    vnfs, services, offset = [], [], 0
    for s in range(n_services):
        chain = []
        for j in range(lengths[s]):
            vid = f"v{offset}"
            vnfs.append(Vnf(vid, float(vnf_rates[offset]), license_cap if offset in limited else None))
            chain.append(vid)
            offset += 1
        services.append(Service(f"s{s}", tuple(chain), float(rates[s]), bool(aa[s])))
    return ProblemInstance(topology, tuple(services), tuple(vnfs), int(seed))


# -- file format ---------------------------------------------------------------


def instance_to_dict(instance: ProblemInstance) -> dict:
    topo = instance.topology
    comps = {}
    for kind in Kind:
        p = topo.params.of(kind)
        comps[kind.value] = {
            "service_rate": p.service_rate,
            "buffer_len": p.buffer_len,
            "energy_active": p.energy_active,
            "energy_idle": p.energy_idle,
        }
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "seed": instance.rng_seed,
        "topology": {"k": topo.k, "vms_per_server": topo.vms_per_server, "components": comps},
        "vnfs": [{"id": v.id, "service_rate": v.service_rate} for v in instance.vnf_catalog],
        "services": [{"id": s.id, "chain": list(s.chain), "arrival_rate": s.arrival_rate} for s in instance.services],
        "constraints": {
            "anti_affinity": [s.id for s in instance.services if s.anti_affinity],
            "max_instances": {v.id: v.max_instances for v in instance.vnf_catalog if v.max_instances is not None},
        },
    }


def save_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n", encoding="utf-8")


def _get(obj, key, where: str, kind=None):
    if not isinstance(obj, dict):
        raise InstanceFormatError("expected an object", field=where, location=where)
    if key not in obj:
        raise InstanceFormatError("missing field", field=f"{where}.{key}" if where else key, location=where or "top level")
    value = obj[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise InstanceFormatError(
            f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
            field=f"{where}.{key}" if where else key,
            location=where or "top level",
        )
    return value


def instance_from_dict(doc: dict) -> ProblemInstance:
    if not isinstance(doc, dict):
        raise InstanceFormatError("document root must be an object", location="top level")
    tag = _get(doc, "format", "", str)
    if tag != FORMAT_TAG:
        raise InstanceFormatError(f"unknown format tag {tag!r}", field="format", location="top level")
    version = _get(doc, "version", "", int)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported instance version {version}", field="version", location="top level")

    num = (int, float)
    t = _get(doc, "topology", "", dict)
    comps = _get(t, "components", "topology", dict)
    kinds = {}
    for kind in Kind:
        where = f"topology.components.{kind.value}"
        c = _get(comps, kind.value, "topology.components", dict)
        try:
            kinds[kind.value] = KindParams(
                float(_get(c, "service_rate", where, num)),
                int(_get(c, "buffer_len", where, int)),
                float(_get(c, "energy_active", where, num)),
                float(_get(c, "energy_idle", where, num)),
            )
        except InvalidParameterError as exc:
            raise InstanceValidationError(f"{where}: {exc}") from exc
    try:
        topo = build_fat_tree(
            _get(t, "k", "topology", int), _get(t, "vms_per_server", "topology", int), ComponentParams(**kinds)
        )
    except InvalidParameterError as exc:
        raise InstanceValidationError(f"topology: {exc}") from exc

    cons = _get(doc, "constraints", "", dict)
    aa_ids = set(_get(cons, "anti_affinity", "constraints", list))
    limits = _get(cons, "max_instances", "constraints", dict)

    vnfs = []
    for i, v in enumerate(_get(doc, "vnfs", "", list)):
        where = f"vnfs[{i}]"
        vid = _get(v, "id", where, str)
        limit = limits.get(vid)
        if limit is not None and (not isinstance(limit, int) or isinstance(limit, bool)):
            raise InstanceFormatError("expected int", field=f"constraints.max_instances.{vid}", location="constraints")
        vnfs.append(Vnf(vid, float(_get(v, "service_rate", where, num)), limit))
    unknown = set(limits) - {v.id for v in vnfs}
    if unknown:
        raise InstanceValidationError(f"max_instances names unknown VNF(s) {sorted(unknown)}")

    services = []
    for i, s in enumerate(_get(doc, "services", "", list)):
        where = f"services[{i}]"
        sid = _get(s, "id", where, str)
        chain = _get(s, "chain", where, list)
        if not all(isinstance(c, str) for c in chain):
            raise InstanceFormatError("chain entries must be strings", field=f"{where}.chain", location=where)
        services.append(Service(sid, tuple(chain), float(_get(s, "arrival_rate", where, num)), sid in aa_ids))
    unknown = aa_ids - {s.id for s in services}
    if unknown:
        raise InstanceValidationError(f"anti_affinity names unknown service(s) {sorted(unknown)}")
    return ProblemInstance(topo, tuple(services), tuple(vnfs), int(_get(doc, "seed", "", int)))


def load_instance(path) -> ProblemInstance:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(exc.msg, location=f"{path}:{exc.lineno}:{exc.colno}") from exc
    return instance_from_dict(doc)
