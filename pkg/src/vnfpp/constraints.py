"""Independent feasibility checker for phenotypes.

Deliberately shares no logic with the decoders: paths are re-walked link by
link against the topology's adjacency and capacities are recounted from
scratch.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

from .encoding import Phenotype
from .workload import ProblemInstance

CONNECTIVITY = "connectivity"
CAPACITY = "capacity"
ORDER = "order"
ANTI_AFFINITY = "anti_affinity"
LICENSE = "license"
COVERAGE = "coverage"
PROBABILITY = "probability"

CORE = frozenset({CONNECTIVITY, CAPACITY, ORDER, COVERAGE, PROBABILITY})
ALL = CORE | {ANTI_AFFINITY, LICENSE}


@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str


def check_phenotype(
    instance: ProblemInstance,
    phenotype: Phenotype,
    constraints: frozenset[str] = ALL,
    vnf_placements: list[tuple[int, int]] | None = None,
) -> list[Violation]:
    """Return every constraint violation found (an empty list means feasible).

    ``vnf_placements`` optionally lists raw (vm, vnf) pairs before any slot
    deduplication, which lets the capacity check catch representations that
    stack several VNFs onto one VM.
    """
    topo = instance.topology
    out: list[Violation] = []
    adj = topo.adjacency
    vm_comp = topo.vm_component
    assign = phenotype.assignment

    if COVERAGE in constraints:
        if len(phenotype.instances) != instance.n_services:
            out.append(Violation(COVERAGE, "instance table does not cover every service"))
        for s, insts in enumerate(phenotype.instances):
            if not insts:
                out.append(Violation(COVERAGE, f"service {s} has no instance"))

    for s, insts in enumerate(phenotype.instances):
        chain = instance.chains[s]
        for i, inst in enumerate(insts):
            if ORDER in constraints:
                if len(inst.vms) != len(chain):
                    out.append(Violation(ORDER, f"service {s} instance {i}: wrong chain length"))
                else:
                    for j, (vm, vnf) in enumerate(zip(inst.vms, chain)):
                        if assign.get(vm) != int(vnf):
                            out.append(Violation(ORDER, f"service {s} instance {i}: position {j} not on VM {vm}"))
            if CONNECTIVITY in constraints:
                if inst.head != vm_comp[inst.vms[0]]:
                    out.append(Violation(CONNECTIVITY, f"service {s} instance {i}: head is not the first VM"))
                prev = inst.head
                for j, seg in enumerate(inst.segments):
                    target = int(vm_comp[inst.vms[j + 1]])
                    if not seg:
                        out.append(Violation(CONNECTIVITY, f"service {s} instance {i}: empty segment {j}"))
                    for opt in seg:
                        if not opt or opt[-1] != target:
                            out.append(Violation(CONNECTIVITY, f"service {s} instance {i}: segment {j} misses its VM"))
                            continue
                        cur = prev
                        for c in opt:
                            if c != cur and c not in adj[cur]:
                                out.append(Violation(CONNECTIVITY, f"link {cur}-{c} does not exist"))
                                break
                            cur = c
                    prev = target
            if PROBABILITY in constraints:
                # traffic splits uniformly, so distinct routes are all that is needed
                for j, seg in enumerate(inst.segments):
                    if len(set(seg)) != len(seg):
                        out.append(Violation(PROBABILITY, f"service {s} instance {i}: duplicate route in segment {j}"))

    if CAPACITY in constraints:
        per_server = Counter()
        pairs = vnf_placements if vnf_placements is not None else list(assign.items())
        for vm, _ in pairs:
            if not 0 <= vm < topo.n_vms:
                out.append(Violation(CAPACITY, f"VM {vm} out of range"))
                continue
            per_server[topo.server_of_vm(vm)] += 1
        for srv, n in per_server.items():
            if n > topo.vms_per_server:
                out.append(Violation(CAPACITY, f"server {srv} hosts {n} VNFs > {topo.vms_per_server}"))
        if vnf_placements is not None:
            for vm, n in Counter(vm for vm, _ in vnf_placements).items():
                if n > 1:
                    out.append(Violation(CAPACITY, f"VM {vm} hosts {n} VNFs"))

    if ANTI_AFFINITY in constraints and instance.anti_affinity.any():
        owners: dict[int, set[int]] = defaultdict(set)
        for s, insts in enumerate(phenotype.instances):
            for inst in insts:
                for vm in inst.vms:
                    owners[topo.server_of_vm(vm)].add(s)
        used_by_instances = {vm for insts in phenotype.instances for inst in insts for vm in inst.vms}
        for vm, vnf in assign.items():
            if vm not in used_by_instances:
                owners[topo.server_of_vm(vm)].add(int(instance.vnf_service[vnf]))
        for srv, ss in owners.items():
            if len(ss) > 1 and any(instance.anti_affinity[s] for s in ss):
                out.append(Violation(ANTI_AFFINITY, f"server {srv} shared by services {sorted(ss)}"))

    if LICENSE in constraints:
        limits = instance.license_limits
        counts = Counter(assign.values())
        for vnf, n in counts.items():
            if n > limits[vnf]:
                out.append(Violation(LICENSE, f"VNF {instance.vnf_catalog[vnf].id}: {n} instances > {int(limits[vnf])}"))
    return out


def is_feasible(instance: ProblemInstance, phenotype: Phenotype, constraints: frozenset[str] = ALL) -> bool:
    return not check_phenotype(instance, phenotype, constraints)
