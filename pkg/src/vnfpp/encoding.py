"""Genotype-phenotype mapping: balance, first-feasible placement and ECMP routing.

A genotype is an integer array with one slot per VM (server-major order).
Slot values are service indices, or ``NONE`` (-1) for an unused VM.  Each
non-NONE slot is an *instance marker*: it asks for one instance of that
service to be placed close to that VM.  Decoding never produces an
infeasible phenotype; repair happens in :func:`balance` and :func:`place`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InfeasibleInstanceError
from .workload import ProblemInstance

NONE = -1

Genotype = np.ndarray


@dataclass(frozen=True)
class ServiceInstance:
    """One materialised copy of a service chain.

    ``vms`` holds the VM index of each chain position.  ``head`` is the
    component id of the first VM and ``segments[j]`` lists the equal-cost
    component sequences leading from chain position j to j+1; each sequence
    excludes its start VM and ends with the next VM.
    """

    vms: tuple[int, ...]
    head: int
    segments: tuple[tuple[tuple[int, ...], ...], ...]

    def paths(self):
        """Yield ``(path, probability)`` for every full route of this instance."""
        for combo in itertools.product(*self.segments):
            path = (self.head,) + tuple(itertools.chain.from_iterable(combo))
            prob = 1.0
            for seg in self.segments:
                prob /= len(seg)
            yield path, prob


@dataclass(frozen=True)
class Phenotype:
    """Placements and routes for every service.

    ``instances[s]`` lists the instances of service s; traffic is split
    uniformly over them.  ``assignment`` maps each occupied VM index to the
    catalog index of the VNF it runs.
    """

    instances: tuple[tuple[ServiceInstance, ...], ...]
    assignment: dict[int, int]

    def __hash__(self):
        return hash(self.instances)

    @property
    def instance_counts(self) -> np.ndarray:
        return np.array([len(x) for x in self.instances], dtype=np.int64)

    def paths(self, service: int) -> list[tuple[tuple[int, ...], float]]:
        """Full route set of a service with per-route probabilities.

        The number of routes grows as the product of per-segment ECMP
        fan-outs, so only call this on small instances; the QoS code works
        on the factored per-segment form instead.
        """
        insts = self.instances[service]
        out = []
        for inst in insts:
            for path, prob in inst.paths():
                out.append((path, prob / len(insts)))
        return out

    @cached_property
    def vms_used(self) -> np.ndarray:
        return np.array(sorted(self.assignment), dtype=np.int64)


def contribution(arrival_rate: float, first_vnf_rate: float, i: int) -> float:
    """Utilisation drop of a service's first VNF if its i-th instance were removed.

    The first instance is never removable and reports ``inf``.
    """
    if i < 1:
        raise ValueError("instance index starts at 1")
    if i == 1:
        return math.inf
    return arrival_rate / (first_vnf_rate * (i - 1)) - arrival_rate / (first_vnf_rate * i)


# -- balance -------------------------------------------------------------------


def balance(genotype: Genotype, instance: ProblemInstance) -> Genotype:
    """Repair a genotype so every service has a marker and the demand fits.

    Missing services first take free (NONE) slots.  While the expanded VM
    demand exceeds capacity, or a missing service still has no slot, the
    marker of the service whose last instance contributes least is removed
    (the highest-index marker of that service) and the slot is handed to a
    missing service if there is one.  Services with a single marker are
    never touched.
    """
    g = np.asarray(genotype)
    n_vms = instance.topology.n_vms
    if g.shape != (n_vms,):
        raise ValueError(f"genotype length {g.shape} does not match {n_vms} VMs")
    n_s = instance.n_services
    counts = np.bincount(g[g >= 0], minlength=n_s)
    missing = [s for s in range(n_s) if counts[s] == 0]
    capacity = n_vms
    if not missing and instance.vm_demand(counts) <= capacity:
        return g

    g = g.copy()
    lam, mu = instance.arrival_rates, instance.first_vnf_rates
    free = list(np.flatnonzero(g == NONE)[::-1])  # pop() yields lowest index
    while missing and free:
        s = missing.pop(0)
        slot = free.pop()
        g[slot] = s
        counts[s] += 1

    demand = instance.vm_demand(counts)
    while missing or demand > capacity:
        removable = np.flatnonzero(counts > 1)
        if removable.size == 0:
            raise InfeasibleInstanceError("cannot fit one instance of every service")
        m = counts[removable]
        contrib = lam[removable] / (mu[removable] * (m - 1)) - lam[removable] / (mu[removable] * m)
        s = int(removable[int(np.argmin(contrib))])
        slot = int(np.flatnonzero(g == s)[-1])
        counts[s] -= 1
        g[slot] = NONE
        if missing:
            t = missing.pop(0)
            g[slot] = t
            counts[t] += 1
        demand = instance.vm_demand(counts)
    return g


# -- placement -----------------------------------------------------------------


def nearest_vm(topology, start: int, ok: np.ndarray) -> int:
    """Lowest-index VM with ``ok`` set at minimal hop distance from ``start``."""
    levels = topology.vm_levels(start)
    if ok[start]:
        return start
    plo, phi = start, start + 1
    for lo, hi in levels[1:]:
        hit = np.flatnonzero(ok[lo:plo])
        if hit.size:
            return lo + int(hit[0])
        hit = np.flatnonzero(ok[phi:hi])
        if hit.size:
            return phi + int(hit[0])
        plo, phi = lo, hi
    return -1


def _admitted_markers(instance: ProblemInstance, markers: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop markers whose chain would exceed a license limit.

    The first marker of every service is granted before any second one, so
    each service keeps at least one instance.
    """
    limits = instance.license_limits
    if np.isinf(limits).all():
        return markers
    used = np.zeros(len(limits))
    chains = instance.chains
    keep = [False] * len(markers)
    seen = set()
    for i, (_, s) in enumerate(markers):
        if s not in seen:
            seen.add(s)
            np.add.at(used, chains[s], 1)
            keep[i] = True
    for i, (_, s) in enumerate(markers):
        if keep[i]:
            continue
        trial = used.copy()
        np.add.at(trial, chains[s], 1)
        if (trial <= limits).all():
            used = trial
            keep[i] = True
    return [m for m, k in zip(markers, keep) if k]


def place(genotype: Genotype, instance: ProblemInstance) -> list[list[tuple[int, ...]]]:
    """First-feasible placement of every instance marker of a balanced genotype.

    Returns, per service, the VM tuple of each materialised instance.
    Anti-affinity services are placed first on servers they reserve
    exclusively, filling their own reserved servers before opening a new
    one.  Each VNF goes on the nearest permissible free VM, searching from
    the marker for the first VNF and from the previous VNF afterwards.
    """
    topo = instance.topology
    nv = topo.vms_per_server
    g = np.asarray(genotype)
    aa = instance.anti_affinity
    slots = np.flatnonzero(g >= 0)
    markers = [(int(v), int(g[v])) for v in slots if aa[g[v]]]
    markers += [(int(v), int(g[v])) for v in slots if not aa[g[v]]]
    markers = _admitted_markers(instance, markers)

    free = np.ones(topo.n_vms, dtype=bool)
    # per-server reservation: -1 unreserved, else anti-affinity service index
    reserved = np.full(topo.n_servers, -1, dtype=np.int64)
    placed: list[list[tuple[int, ...]]] = [[] for _ in instance.services]

    for vm, s in markers:
        chain_len = len(instance.chains[s])
        vms = []
        pos = vm
        for _ in range(chain_len):
            if aa[s]:
                own = np.repeat(reserved == s, nv) & free
                target = nearest_vm(topo, pos, own)
                if target < 0:
                    empty = np.repeat(reserved == -1, nv) & free
                    empty &= np.repeat(free.reshape(-1, nv).all(axis=1), nv)
                    target = nearest_vm(topo, pos, empty)
                    if target >= 0:
                        reserved[target // nv] = s
            else:
                target = nearest_vm(topo, pos, np.repeat(reserved == -1, nv) & free)
            if target < 0:
                raise AssertionError("balance guarantees capacity; placement ran out of VMs")
            free[target] = False
            vms.append(target)
            pos = target
        placed[s].append(tuple(vms))
    return placed


# -- routing -------------------------------------------------------------------


def build_instance(topology, vms: tuple[int, ...]) -> ServiceInstance:
    segs = []
    for a, b in zip(vms[:-1], vms[1:]):
        segs.append(tuple(p[1:] for p in topology.vm_paths(a, b)))
    return ServiceInstance(tuple(vms), int(topology.vm_component[vms[0]]), tuple(segs))


def route(placements, instance: ProblemInstance, assignment: dict[int, int] | None = None) -> Phenotype:
    """Attach ECMP route sets to per-service placements.

    ``placements[s]`` is a list of VM tuples, one per instance.  When
    ``assignment`` is omitted every placed VM runs the VNF at its chain
    position.
    """
    topo = instance.topology
    insts = []
    assign = {} if assignment is None else dict(assignment)
    for s, plist in enumerate(placements):
        chain = instance.chains[s]
        built = []
        for vms in plist:
            vms = tuple(int(v) for v in vms)
            if len(vms) != len(chain):
                raise ValueError(f"service {s}: placement length {len(vms)} != chain length {len(chain)}")
            if assignment is None:
                for v, f in zip(vms, chain):
                    assign[v] = int(f)
            built.append(build_instance(topo, vms))
        insts.append(tuple(built))
    return Phenotype(tuple(insts), assign)


def decode(genotype: Genotype, instance: ProblemInstance) -> Phenotype:
    """Balance, place and route a genotype into a feasible phenotype."""
    g = balance(genotype, instance)
    return route(place(g, instance), instance)


def random_genotype(instance: ProblemInstance, rng: np.random.Generator) -> Genotype:
    return rng.integers(NONE, instance.n_services, size=instance.topology.n_vms)


def initial_marker_count(instance: ProblemInstance, i: int, population_size: int) -> int:
    """Per-service marker count of the i-th (1-based) initial solution.

    Grows linearly with i up to the number of full copies of all services
    the data center can hold.
    """
    if not 1 <= i <= population_size:
        raise ValueError("solution index must lie in 1..population_size")
    return (i * instance.topology.n_vms) // (population_size * instance.total_chain_length)
