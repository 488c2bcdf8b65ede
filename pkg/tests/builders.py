"""Small hand-built instances shared by several test modules."""

from __future__ import annotations

import numpy as np

from vnfpp.encoding import route
from vnfpp.topology import ComponentParams, KindParams, build_fat_tree
from vnfpp.workload import ProblemInstance, Service, Vnf


def loop_instance(rate: float = 10.0, vswitch_rate: float = 14.0, vswitch_buffer: int = 5):
    """Three VNFs on one server so every packet crosses the virtual switch twice.

    The virtual switch's loss then depends on its own arrival rate, the
    smallest feedback loop a Fat Tree placement can produce.
    """
    params = ComponentParams(vswitch=KindParams(vswitch_rate, vswitch_buffer, 200.0, 100.0))
    topo = build_fat_tree(2, 3, params)
    inst = ProblemInstance(
        topo,
        (Service("s", ("A", "B", "C"), rate),),
        (Vnf("A", 12.0), Vnf("B", 12.0), Vnf("C", 12.0)),
    )
    return inst, route([[(0, 1, 2)]], inst)


def chain_instance(topo, placements, rates=None, vnf_rate=10.0):
    """One service per placement tuple, each VNF private to its service."""
    services, vnfs = [], []
    for s, vms in enumerate(placements):
        chain = tuple(f"v{s}_{j}" for j in range(len(vms)))
        vnfs += [Vnf(f, vnf_rate) for f in chain]
        lam = 1.0 if rates is None else rates[s]
        services.append(Service(f"s{s}", chain, lam))
    inst = ProblemInstance(topo, tuple(services), tuple(vnfs))
    return inst, route([[tuple(p)] for p in placements], inst)


def expanded_arrival_rates(instance, phenotype, loss):
    """Per-component arrival rate by enumerating every full route."""
    lam = np.zeros(instance.topology.n_components)
    for s in range(instance.n_services):
        rate = instance.arrival_rates[s]
        for path, prob in phenotype.paths(s):
            surv = 1.0
            for c in path:
                lam[c] += rate * prob * surv
                surv *= 1.0 - loss[c]
    return lam


def expanded_service_metrics(instance, phenotype, loss, wait):
    out_loss, out_wait = [], []
    for s in range(instance.n_services):
        pl = pw = 0.0
        for path, prob in phenotype.paths(s):
            pl += prob * (1.0 - np.prod([1.0 - loss[c] for c in path]))
            pw += prob * sum(wait[c] for c in path)
        out_loss.append(pl)
        out_wait.append(pw)
    return np.array(out_loss), np.array(out_wait)
