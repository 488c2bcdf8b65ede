import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnfpp.errors import InstanceFormatError, InstanceValidationError, InvalidParameterError, UnsupportedVersionError
from vnfpp.topology import build_fat_tree
from vnfpp.workload import (
    ProblemInstance,
    Service,
    Vnf,
    feasible_fraction_upper_bound,
    generate_instance,
    instance_to_dict,
    load_instance,
    save_instance,
)


def _mc_missing(num_vnfs, num_vms, trials, rng):
    hits = np.zeros(trials, dtype=bool)
    batch = 10_000
    for start in range(0, trials, batch):
        n = min(batch, trials - start)
        draws = rng.integers(0, num_vnfs, size=(n, num_vms))
        present = np.zeros((n, num_vnfs), dtype=bool)
        present[np.repeat(np.arange(n), num_vms), draws.ravel()] = True
        hits[start : start + n] = ~present.all(axis=1)
    return hits.mean()


def test_bound_trivial():
    assert feasible_fraction_upper_bound(1, 1) == (1.0, 0.0)


def test_bound_two_by_two():
    pp, pn = feasible_fraction_upper_bound(2, 2)
    assert pp == pytest.approx(0.75) and pn == pytest.approx(0.4375)


def test_bound_two_by_two_monte_carlo():
    # for two VNFs and two VMs the independence bound is not tight: the
    # exact chance of missing a VNF is 1/2, and the bound sits below it
    rng = np.random.default_rng(0)
    est = _mc_missing(2, 2, 200_000, rng)
    assert est == pytest.approx(0.5, abs=0.01)
    assert feasible_fraction_upper_bound(2, 2)[1] <= est


def test_bound_fifty_by_hundred_within_3_sigma_of_independent_model():
    rng = np.random.default_rng(1)
    trials = 200_000
    pp, pn = feasible_fraction_upper_bound(50, 100)
    # relaxed placement: every (VNF, VM) pair chosen independently w.p. 1/|V|,
    # so the VMs picking one VNF are binomial
    est = (rng.binomial(100, 1 / 50, size=(trials, 50)) == 0).any(axis=1).mean()
    sigma = np.sqrt(pn * (1 - pn) / trials)
    assert abs(est - pn) < 3 * sigma


@pytest.mark.parametrize("v", [1, 3, 10, 40])
def test_bound_monotonicity(v):
    ns = [feasible_fraction_upper_bound(v, n)[1] for n in range(1, 200, 7)]
    assert all(a >= b - 1e-15 for a, b in zip(ns, ns[1:]))
    vs = [feasible_fraction_upper_bound(w, 60)[1] for w in range(1, 80, 3)]
    assert all(a <= b + 1e-15 for a, b in zip(vs, vs[1:]))


def test_bound_grows_with_size_at_fixed_ratio():
    vals = [feasible_fraction_upper_bound(n, 2 * n)[1] for n in (10, 100, 1000, 10_000, 100_000)]
    assert vals[0] < vals[1] and all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0.999


def test_bound_rejects_non_positive():
    with pytest.raises(InvalidParameterError):
        feasible_fraction_upper_bound(0, 3)


def test_generate_service_count_thousand_vms():
    t = build_fat_tree(10, 4)  # 250 servers, 1000 VMs
    assert t.n_vms == 1000
    assert generate_instance(t, 0.5, seed=0).n_services == 100


def test_generate_tiny_utilisation():
    t = build_fat_tree(2, 5)  # 10 VMs
    assert generate_instance(t, 1e-6, seed=0).n_services == 1


def test_generate_deterministic(k4):
    a = generate_instance(k4, 0.5, seed=7)
    b = generate_instance(k4, 0.5, seed=7)
    assert instance_to_dict(a) == instance_to_dict(b)
    assert instance_to_dict(a) != instance_to_dict(generate_instance(k4, 0.5, seed=8))


def test_generate_rejects_bad_utilisation(k4):
    for u in (0, -0.1, 1.5):
        with pytest.raises(InvalidParameterError):
            generate_instance(k4, u)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([2, 4]),
    st.integers(1, 4),
    st.floats(0.05, 1.0),
    st.integers(0, 10_000),
    st.floats(1.0, 8.0),
)
def test_generated_instances_valid(k, nv, util, seed, length):
    t = build_fat_tree(k, nv)
    try:
        inst = generate_instance(t, util, service_len_dist=(length, 1.0), seed=seed)
    except InvalidParameterError:
        return  # more services than VMs for this draw
    assert inst.total_chain_length <= t.n_vms
    assert all(s.arrival_rate > 0 for s in inst.services)
    assert all(v.service_rate > 0 for v in inst.vnf_catalog)
    ids = {v.id for v in inst.vnf_catalog}
    assert all(f in ids for s in inst.services for f in s.chain)


def test_generate_constraints(k4):
    inst = generate_instance(k4, 0.5, seed=2, anti_affinity=2, limited_vnfs=2, license_fraction=0.2)
    assert inst.anti_affinity.sum() == 2
    limited = [v for v in inst.vnf_catalog if v.max_instances is not None]
    assert len(limited) == 2 and all(v.max_instances >= 1 for v in limited)


def test_round_trip(tmp_path, k4_instance):
    path = tmp_path / "x.json"
    save_instance(k4_instance, path)
    assert load_instance(path) == k4_instance


def test_round_trip_custom_params(tmp_path):
    from vnfpp.topology import ComponentParams, KindParams

    t = build_fat_tree(2, 2, ComponentParams(vm=KindParams(3.0, 4)))
    inst = ProblemInstance(t, (Service("a", ("x", "y"), 1.5, True),), (Vnf("x", 2.0, 3), Vnf("y", 4.0)))
    save_instance(inst, tmp_path / "c.json")
    assert load_instance(tmp_path / "c.json") == inst


def test_missing_vnf_is_validation_error(tmp_path, k4_instance):
    doc = instance_to_dict(k4_instance)
    doc["vnfs"] = doc["vnfs"][1:]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(InstanceValidationError):
        load_instance(tmp_path / "bad.json")


def test_unknown_version(tmp_path, k4_instance):
    doc = instance_to_dict(k4_instance)
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        load_instance(tmp_path / "v.json")


def test_malformed_field_named(tmp_path, k4_instance):
    doc = instance_to_dict(k4_instance)
    doc["services"][0]["arrival_rate"] = "fast"
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(InstanceFormatError) as err:
        load_instance(tmp_path / "m.json")
    assert "arrival_rate" in err.value.field


def test_syntax_error_location(tmp_path):
    (tmp_path / "s.json").write_text('{"format": "vnfpp-instance",\n "version": 1,,}')
    with pytest.raises(InstanceFormatError) as err:
        load_instance(tmp_path / "s.json")
    assert err.value.location and ":2:" in err.value.location


def test_key_order_irrelevant(tmp_path, k4_instance):
    doc = instance_to_dict(k4_instance)
    rev = dict(reversed(list(doc.items())))
    (tmp_path / "r.json").write_text(json.dumps(rev))
    assert load_instance(tmp_path / "r.json") == k4_instance


def test_oversubscribed_instance_rejected():
    t = build_fat_tree(2, 1)
    with pytest.raises(InstanceValidationError):
        ProblemInstance(t, (Service("a", ("x", "y", "z"), 1.0),), (Vnf("x", 1.0), Vnf("y", 1.0), Vnf("z", 1.0)))


def test_vm_demand_rounds_anti_affinity(k4):
    inst = ProblemInstance(
        k4,
        (Service("a", ("x", "y"), 1.0, True), Service("b", ("z",), 1.0)),
        (Vnf("x", 1.0), Vnf("y", 1.0), Vnf("z", 1.0)),
    )
    assert inst.vm_demand([1, 1]) == 3 + 1
    assert inst.vm_demand([2, 2]) == 6 + 2
