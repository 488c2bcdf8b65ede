import dataclasses

import numpy as np

from builders import chain_instance
from vnfpp import constraints as C
from vnfpp.encoding import Phenotype, ServiceInstance, decode, random_genotype, route
from vnfpp.topology import build_fat_tree
from vnfpp.workload import ProblemInstance, Service, Vnf


def _kinds(violations):
    return {v.constraint for v in violations}


def _two_service_instance(aa=False, limit=None):
    topo = build_fat_tree(4, 3)
    services = (Service("a", ("f", "g"), 1.0, anti_affinity=aa), Service("b", ("h",), 1.0))
    vnfs = (Vnf("f", 5.0, limit), Vnf("g", 5.0), Vnf("h", 5.0))
    return ProblemInstance(topo, services, vnfs)


def test_valid_phenotype_passes():
    inst = _two_service_instance()
    ph = route([[(0, 1)], [(5,)]], inst)
    assert C.check_phenotype(inst, ph) == []
    assert C.is_feasible(inst, ph)


def test_capacity():
    inst = _two_service_instance()
    ph = route([[(0, 1)], [(2,)]], inst)
    assert C.check_phenotype(inst, ph) == []
    stacked = [(0, 0), (0, 1), (1, 2), (2, 2)]
    assert C.CAPACITY in _kinds(C.check_phenotype(inst, ph, vnf_placements=stacked))


def test_order():
    inst = _two_service_instance()
    ph = route([[(0, 1)], [(5,)]], inst)
    swapped = dict(ph.assignment)
    swapped[0], swapped[1] = swapped[1], swapped[0]
    bad = dataclasses.replace(ph, assignment=swapped)
    assert _kinds(C.check_phenotype(inst, bad)) == {C.ORDER}


def test_connectivity():
    inst = _two_service_instance()
    topo = inst.topology
    ph = route([[(0, 47)], [(5,)]], inst)
    good = ph.instances[0][0]
    # jump straight from the first VM to the last one
    broken = ServiceInstance(good.vms, good.head, (((int(topo.vm_component[47]),),),))
    bad = dataclasses.replace(ph, instances=((broken,), ph.instances[1]))
    assert C.CONNECTIVITY in _kinds(C.check_phenotype(inst, bad))


def test_probability_duplicate_route():
    inst = _two_service_instance()
    ph = route([[(0, 47)], [(5,)]], inst)
    good = ph.instances[0][0]
    dup = ServiceInstance(good.vms, good.head, ((good.segments[0][0],) * 2,))
    bad = dataclasses.replace(ph, instances=((dup,), ph.instances[1]))
    assert _kinds(C.check_phenotype(inst, bad)) == {C.PROBABILITY}


def test_coverage():
    inst = _two_service_instance()
    ph = route([[(0, 1)], []], inst)
    assert _kinds(C.check_phenotype(inst, ph)) == {C.COVERAGE}


def test_anti_affinity():
    inst = _two_service_instance(aa=True)
    shared = route([[(0, 1)], [(2,)]], inst)
    assert _kinds(C.check_phenotype(inst, shared)) == {C.ANTI_AFFINITY}
    apart = route([[(0, 1)], [(3,)]], inst)
    assert C.check_phenotype(inst, apart) == []
    assert C.check_phenotype(inst, shared, C.CORE) == []


def test_license():
    inst = _two_service_instance(limit=1)
    ph = route([[(0, 1), (6, 7)], [(3,)]], inst)
    assert _kinds(C.check_phenotype(inst, ph)) == {C.LICENSE}


def test_decoded_random_genotypes_pass(constrained_instance):
    rng = np.random.default_rng(0)
    for _ in range(50):
        ph = decode(random_genotype(constrained_instance, rng), constrained_instance)
        assert C.check_phenotype(constrained_instance, ph) == []


def test_empty_phenotype_fails_coverage():
    topo = build_fat_tree(2, 2)
    inst, _ = chain_instance(topo, [(0,)])
    assert C.COVERAGE in _kinds(C.check_phenotype(inst, Phenotype((), {})))
