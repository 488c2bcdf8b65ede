"""Baseline QoS evaluators compared against the converged M/M/1/B model."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import qos
from .encoding import Phenotype
from .errors import InvalidParameterError
from .qos import ObjectiveVector
from .workload import ProblemInstance


class SurrogateKind(enum.Enum):
    MM1 = "mm1"
    MM1B_INSTANT = "mm1b-instant"
    CWTPL = "cwtpl"
    RU = "ru"
    PLUS = "plus"


@dataclass(frozen=True)
class SurrogateParams:
    cwtpl_wait: float = 0.1  # ms per visited component
    cwtpl_loss: float = 0.001  # drop probability per visited component
    ru_clamp: float = 0.99

    def __post_init__(self):
        if not self.cwtpl_wait > 0:
            raise InvalidParameterError("cwtpl_wait must be > 0")
        if not 0 <= self.cwtpl_loss < 1:
            raise InvalidParameterError("cwtpl_loss must be in [0, 1)")
        if not 0 < self.ru_clamp < 1:
            raise InvalidParameterError("ru_clamp must be in (0, 1)")


DEFAULT_PARAMS = SurrogateParams()


def evaluate_mm1(instance: ProblemInstance, phenotype: Phenotype) -> ObjectiveVector:
    """Infinite-buffer queues: no loss, unbounded wait at saturated queues."""
    fs = qos.flow_structure(instance, phenotype)
    n = instance.n_services
    lam = qos.arrival_rates(fs, instance.arrival_rates, np.zeros(fs.n_components))
    mu = fs.service_rate
    saturated = lam >= mu
    with np.errstate(divide="ignore"):
        w = np.where(lam > 0, 1.0 / (mu - lam), 0.0)
    w[saturated & (lam > 0)] = np.inf
    weight = fs.inst_share[fs.entry_inst] / fs.seg_nopt[fs.entry_seg]
    service = fs.inst_service[fs.entry_inst]
    wc = w[fs.entry_comp]
    lat = np.bincount(service, weights=np.where(np.isinf(wc), 0.0, weight * wc), minlength=n)
    lat[np.unique(service[np.isinf(wc)])] = np.inf
    util = np.clip(lam / mu, 0.0, 1.0)
    energy = qos.energy_from_utilisation(instance.topology, lam, util)
    return ObjectiveVector(float(lat.mean()), 0.0, energy)


def evaluate_mm1b_instant(instance: ProblemInstance, phenotype: Phenotype) -> ObjectiveVector:
    """M/M/1/B objectives from a single propagation pass with no feedback."""
    state = qos.instantaneous_state(instance, phenotype)
    return qos.objectives_from_state(instance, phenotype, state)


def _cwtpl(instance: ProblemInstance, phenotype: Phenotype, params: SurrogateParams) -> tuple[float, ...]:
    fs = qos.flow_structure(instance, phenotype)
    n = instance.n_services
    hops = qos.expected_path_sum(fs, np.ones(fs.n_components), n)
    const = np.full(fs.n_components, params.cwtpl_loss)
    latency = hops * params.cwtpl_wait
    state = qos.ArrivalState(np.zeros(fs.n_components), const, fs.service_rate, fs.buffer_len)
    loss = qos.service_loss_all(state, fs, n)
    lam = qos.arrival_rates(fs, instance.arrival_rates, const)
    util = qos.queue_busy_probability(lam, fs.service_rate, fs.buffer_len)
    energy = qos.energy_from_utilisation(instance.topology, lam, util)
    return float(latency.mean()), float(loss.mean()), energy


def _ru(instance: ProblemInstance, phenotype: Phenotype, params: SurrogateParams) -> tuple[float, ...]:
    fs = qos.flow_structure(instance, phenotype)
    topo = instance.topology
    lam = qos.arrival_rates(fs, instance.arrival_rates, np.zeros(fs.n_components))
    ratio = lam / fs.service_rate
    r = np.minimum(ratio, params.ru_clamp)
    unit_wait = np.zeros(fs.n_components)
    vm = topo.vm_component
    unit_wait[vm] = r[vm] / (1.0 - r[vm])
    latency = qos.expected_path_sum(fs, unit_wait, instance.n_services)
    util = np.clip(ratio, 0.0, 1.0)
    energy = qos.energy_from_utilisation(topo, lam, util)
    return float(latency.mean()), energy


def _plus(instance: ProblemInstance, phenotype: Phenotype) -> tuple[float, ...]:
    # hop counts are physical links between the servers of consecutive VNFs,
    # so a chain kept on one server has length zero
    topo = instance.topology
    per_service = []
    for insts in phenotype.instances:
        lengths = []
        for inst in insts:
            srv = [topo.server_of_vm(v) for v in inst.vms]
            lengths.append(sum(topo.server_distance(a, b) for a, b in zip(srv[:-1], srv[1:])))
        per_service.append(np.mean(lengths))
    servers = {topo.server_of_vm(v) for v in phenotype.assignment}
    return float(np.mean(per_service)), len(servers) / topo.n_servers


def evaluate_surrogate(
    kind: SurrogateKind | str,
    instance: ProblemInstance,
    phenotype: Phenotype,
    params: SurrogateParams = DEFAULT_PARAMS,
) -> tuple[float, ...]:
    """Objective tuple of one of the simplified models.

    CWTPL returns (latency, loss, energy); RU returns (latency, energy);
    PLUS returns (mean server-to-server path length in links, fraction of
    servers used).
    The two queueing baselines are also accepted and return a full
    :class:`ObjectiveVector`.
    """
    try:
        kind = SurrogateKind(kind)
    except ValueError:
        raise InvalidParameterError(f"unknown surrogate kind {kind!r}") from None
    if kind is SurrogateKind.CWTPL:
        return _cwtpl(instance, phenotype, params)
    if kind is SurrogateKind.RU:
        return _ru(instance, phenotype, params)
    if kind is SurrogateKind.PLUS:
        return _plus(instance, phenotype)
    if kind is SurrogateKind.MM1:
        return evaluate_mm1(instance, phenotype)
    return evaluate_mm1b_instant(instance, phenotype)
