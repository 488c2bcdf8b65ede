"""Competing placement heuristics and the unrepaired direct/binary encodings.

The heuristics solve *subproblems*: the number of instances per service is
fixed in advance and only VM positions are chosen.  None of them knows
about anti-affinity or license limits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .constraints import ALL, check_phenotype
from .encoding import NONE, Phenotype, build_instance, initial_marker_count, nearest_vm, route
from .errors import InfeasibleSubproblemError, InvalidParameterError
from .workload import ProblemInstance


@dataclass(frozen=True)
class Subproblem:
    instance: ProblemInstance
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.instance.n_services or min(self.counts) < 0:
            raise InvalidParameterError("need one non-negative count per service")

    @property
    def demand(self) -> int:
        return int(np.dot(self.counts, self.instance.chain_lengths))


class HeuristicKind(enum.Enum):
    BFDSU = "bfdsu"
    STRINGER = "stringer"
    ESPVDCE = "espvdce"


def generate_subproblems(
    instance: ProblemInstance,
    count: int,
    source: str = "initializer",
    reference: list[Phenotype] | None = None,
) -> list[Subproblem]:
    """Subproblems with varying instance counts.

    The ``initializer`` source follows the population initializer, with a
    count of zero raised to one.  The ``reference`` source copies the
    per-service counts of the first ``count`` phenotypes in ``reference``.
    """
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    if source == "initializer":
        out = []
        for i in range(1, count + 1):
            m = max(1, initial_marker_count(instance, i, count))
            out.append(Subproblem(instance, (m,) * instance.n_services))
        return out
    if source == "reference":
        if reference is None or len(reference) < count:
            raise InvalidParameterError("reference population smaller than the requested subproblem count")
        return [Subproblem(instance, tuple(int(c) for c in ph.instance_counts)) for ph in reference[:count]]
    raise InvalidParameterError(f"unknown subproblem source {source!r}")


# -- heuristics ----------------------------------------------------------------


def _items(sub: Subproblem) -> list[tuple[int, int, int]]:
    """(service, instance, position) for every VNF copy, in chain order."""
    inst = sub.instance
    return [
        (s, i, j)
        for s in range(inst.n_services)
        for i in range(sub.counts[s])
        for j in range(len(inst.chains[s]))
    ]


def _assemble(sub: Subproblem, where: dict[tuple[int, int, int], int]) -> Phenotype:
    inst = sub.instance
    placements = []
    for s in range(inst.n_services):
        n = len(inst.chains[s])
        placements.append([tuple(where[(s, i, j)] for j in range(n)) for i in range(sub.counts[s])])
    return route(placements, inst)


def _take_vm(free: np.ndarray, server: int, nv: int) -> int:
    lo = server * nv
    vm = lo + int(np.flatnonzero(free[lo : lo + nv])[0])
    free[vm] = False
    return vm


def _bfdsu(sub: Subproblem, rng: np.random.Generator) -> dict:
    inst = sub.instance
    topo = inst.topology
    nv = topo.vms_per_server
    items = _items(sub)
    demand = [inst.arrival_rates[s] / (sub.counts[s] * inst.vnf_rates[inst.chains[s][j]]) for s, _, j in items]
    order = sorted(range(len(items)), key=lambda k: -demand[k])
    free = np.ones(topo.n_vms, dtype=bool)
    left = np.full(topo.n_servers, nv)
    where = {}
    for k in order:
        ok = np.flatnonzero(left > 0)
        if ok.size == 0:
            raise InfeasibleSubproblemError("no free VM left")
        # fuller servers are preferred: softmax over negative free capacity
        logits = -left[ok].astype(float)
        p = np.exp(logits - logits.max())
        srv = int(rng.choice(ok, p=p / p.sum()))
        where[items[k]] = _take_vm(free, srv, nv)
        left[srv] -= 1
    return where


def _stringer(sub: Subproblem) -> dict:
    topo = sub.instance.topology
    nv = topo.vms_per_server
    n_srv = topo.n_servers
    cap = max(1, math.ceil(sub.demand / n_srv))
    used = np.zeros(n_srv, dtype=np.int64)
    free = np.ones(topo.n_vms, dtype=bool)
    where = {}
    ptr = 0

    def scan(start: int) -> int:
        for step in range(n_srv):
            srv = (start + step) % n_srv
            if used[srv] < cap:
                return srv
        return -1

    for item in _items(sub):
        srv = scan(ptr)
        while srv < 0:
            cap += 1
            if cap > nv:
                raise InfeasibleSubproblemError("per-server cap exceeds VM slots")
            ptr = 0
            srv = scan(ptr)
        where[item] = _take_vm(free, srv, nv)
        used[srv] += 1
        ptr = (srv + 1) % n_srv
    return where


def _espvdce(sub: Subproblem) -> dict:
    inst = sub.instance
    topo = inst.topology
    nv = topo.vms_per_server
    n_srv = topo.n_servers
    left = np.full(n_srv, nv)
    free = np.ones(topo.n_vms, dtype=bool)
    where = {}
    dist = np.array([[topo.server_distance(a, b) for b in range(n_srv)] for a in range(n_srv)]) if n_srv <= 2048 else None
    hosts: dict[int, set[int]] = {}
    for s, i, j in _items(sub):
        cand = np.flatnonzero(left > 0)
        if cand.size == 0:
            raise InfeasibleSubproblemError("no free VM left")
        mine = hosts.get(s)
        if mine:
            if dist is not None:
                d = dist[np.ix_(sorted(mine), cand)].min(axis=0)
            else:
                d = np.array([min(topo.server_distance(m, c) for m in mine) for c in cand])
            cand = cand[d == d.min()]
        # best fit: least remaining room, then lowest id
        srv = int(cand[np.argmin(left[cand])])
        where[(s, i, j)] = _take_vm(free, srv, nv)
        left[srv] -= 1
        hosts.setdefault(s, set()).add(srv)
    return where


def solve_heuristic(kind: HeuristicKind | str, subproblem: Subproblem, seed: int = 0) -> Phenotype:
    """Place and route one subproblem with the chosen heuristic."""
    kind = HeuristicKind(kind)
    if subproblem.demand > subproblem.instance.topology.n_vms:
        raise InfeasibleSubproblemError(f"demand {subproblem.demand} exceeds {subproblem.instance.topology.n_vms} VMs")
    if kind is HeuristicKind.BFDSU:
        where = _bfdsu(subproblem, np.random.default_rng(seed))
    elif kind is HeuristicKind.STRINGER:
        where = _stringer(subproblem)
    else:
        where = _espvdce(subproblem)
    return _assemble(subproblem, where)


# -- unrepaired representations ------------------------------------------------


@dataclass(frozen=True)
class Infeasible:
    """Decoding failure; ``violation`` counts what went wrong (larger is worse)."""

    reason: str
    violation: float


def _chains_from_assignment(
    assignment: dict[int, int], instance: ProblemInstance
) -> tuple[Phenotype | None, int]:
    """Build instances from a VM -> VNF map.

    Every VM running a service's first VNF starts an instance; each next
    VNF is taken from the nearest VM running it, which may be shared with
    other instances.  Returns the phenotype, or None with the number of
    missing (service, VNF) pairs.
    """
    topo = instance.topology
    hosts: dict[int, np.ndarray] = {}
    for vnf in set(assignment.values()):
        mask = np.zeros(topo.n_vms, dtype=bool)
        mask[[vm for vm, f in assignment.items() if f == vnf]] = True
        hosts[vnf] = mask
    missing = 0
    for chain in instance.chains:
        missing += sum(1 for f in chain if int(f) not in hosts)
    if missing:
        return None, missing
    insts = []
    for chain in instance.chains:
        built = []
        for start in np.flatnonzero(hosts[int(chain[0])]):
            vms = [int(start)]
            for f in chain[1:]:
                vms.append(nearest_vm(topo, vms[-1], hosts[int(f)]))
            built.append(build_instance(topo, tuple(vms)))
        insts.append(tuple(built))
    return Phenotype(tuple(insts), dict(assignment)), 0


def _finish(assignment, instance, pairs=None) -> Phenotype | Infeasible:
    ph, missing = _chains_from_assignment(assignment, instance)
    if ph is None:
        return Infeasible(f"{missing} chain positions have no VM", float(missing))
    bad = check_phenotype(instance, ph, ALL, pairs)
    if bad:
        return Infeasible("; ".join(v.detail for v in bad[:3]), float(len(bad)))
    return ph


def decode_direct(vnf_string, instance: ProblemInstance) -> Phenotype | Infeasible:
    """Decode a per-VM string of VNF catalog indices (or NONE), without repair."""
    g = np.asarray(vnf_string)
    if g.shape != (instance.topology.n_vms,):
        raise InvalidParameterError("direct string length must equal the VM count")
    assignment = {int(vm): int(g[vm]) for vm in np.flatnonzero(g != NONE)}
    return _finish(assignment, instance)


def decode_binary(bit_matrix, instance: ProblemInstance) -> Phenotype | Infeasible:
    """Decode a (server x VNF) 0/1 matrix, without repair.

    Set bits of a server fill its VM slots in VNF order; a server with more
    set bits than slots is infeasible.
    """
    topo = instance.topology
    bits = np.asarray(bit_matrix).reshape(topo.n_servers, len(instance.vnf_catalog)).astype(bool)
    nv = topo.vms_per_server
    over = np.maximum(bits.sum(axis=1) - nv, 0)
    if over.any():
        return Infeasible(f"{int((over > 0).sum())} servers over capacity", float(over.sum()))
    assignment = {}
    for srv, row in enumerate(bits):
        for slot, vnf in enumerate(np.flatnonzero(row)):
            assignment[srv * nv + slot] = int(vnf)
    return _finish(assignment, instance)
