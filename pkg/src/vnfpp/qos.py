"""Analytical QoS model: M/M/1/B queues, arrival-rate fixed point, objectives.

Route sets are never expanded.  A service instance is a head VM followed by
segments, each segment a set of equal-cost alternatives picked uniformly and
independently.  Because per-segment choices are independent, expectations
over full routes factor into products and sums over segments, which keeps
evaluation linear in the number of (segment, alternative, component)
entries instead of exponential in chain length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .encoding import Phenotype
from .errors import ConvergenceError, InvalidParameterError
from .topology import Topology
from .workload import ProblemInstance

DEFAULT_DELTA = 5.0
DEFAULT_PATIENCE = 10
DEFAULT_MAX_ITER = 10_000

_RHO_ONE = 1e-12


class ObjectiveVector(NamedTuple):
    latency: float  # ms
    loss: float  # probability
    energy: float  # W


# -- single-queue formulas -----------------------------------------------------


def _split(lam, mu, buffer):
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    b = np.asarray(buffer, dtype=float)
    lam, mu, b = np.broadcast_arrays(lam, mu, b)
    rho = lam / mu
    one = np.abs(rho - 1.0) <= _RHO_ONE
    low = (rho < 1.0) & ~one
    high = (rho > 1.0) & ~one
    return rho, b, one, low, high


_NEAR_ONE = 1e-2
_NEAR_ONE_MAX_B = 4096


def _direct_length(rho: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = np.arange(int(b.max()) + 1, dtype=float)
    # weights rho^(n - b) keep every term O(1) on either side of rho = 1
    w = np.where(n[None, :] <= b[:, None], np.exp((n[None, :] - b[:, None]) * np.log(rho)[:, None]), 0.0)
    return (w * n).sum(axis=1) / w.sum(axis=1)


def _scalar(x, *args):
    return float(x) if all(np.ndim(a) == 0 for a in args) else x


def queue_loss_probability(lam, mu, buffer):
    """Blocking probability of an M/M/1/B queue (vectorised)."""
    rho, b, one, low, high = _split(lam, mu, buffer)
    out = np.zeros_like(rho)
    out[one] = 1.0 / (b[one] + 1.0)
    r, bb = rho[low], b[low]
    out[low] = (1.0 - r) * r**bb / (1.0 - r ** (bb + 1.0))
    # divide through by rho**(B+1) to stay finite for large loads
    inv, bb = 1.0 / rho[high], b[high]
    out[high] = (1.0 - inv) / (1.0 - inv ** (bb + 1.0))
    out[rho == 0] = 0.0
    return _scalar(out, lam, mu, buffer)


def queue_expected_length(lam, mu, buffer):
    """Mean number in system of an M/M/1/B queue (vectorised)."""
    rho, b, one, low, high = _split(lam, mu, buffer)
    out = np.zeros_like(rho)
    out[one] = b[one] / 2.0
    # the closed forms cancel badly close to rho = 1, so sum the chain there
    near = (np.abs(rho - 1.0) < _NEAR_ONE) & ~one & (b <= _NEAR_ONE_MAX_B)
    if near.any():
        out[near] = _direct_length(rho[near], b[near])
    low &= ~near
    high &= ~near
    r, bb = rho[low], b[low]
    out[low] = r * (1.0 - (bb + 1.0) * r**bb + bb * r ** (bb + 1.0)) / ((1.0 - r) * (1.0 - r ** (bb + 1.0)))
    inv, bb = 1.0 / rho[high], b[high]
    out[high] = (bb + 1.0) / (1.0 - inv ** (bb + 1.0)) - 1.0 / (1.0 - inv)
    out[rho == 0] = 0.0
    return _scalar(out, lam, mu, buffer)


def queue_busy_probability(lam, mu, buffer):
    """Probability that an M/M/1/B server is busy: one minus the empty probability."""
    rho, b, one, low, high = _split(lam, mu, buffer)
    p0 = np.ones_like(rho)
    p0[one] = 1.0 / (b[one] + 1.0)
    r, bb = rho[low], b[low]
    p0[low] = (1.0 - r) / (1.0 - r ** (bb + 1.0))
    inv, bb = 1.0 / rho[high], b[high]
    p0[high] = inv**bb * (1.0 - inv) / (1.0 - inv ** (bb + 1.0))
    out = np.asarray(1.0 - p0)
    out[rho == 0] = 0.0
    return _scalar(out, lam, mu, buffer)


# -- flow structure ------------------------------------------------------------


@dataclass(frozen=True)
class FlowStructure:
    """Flattened, arrival-rate-independent view of a phenotype's routes.

    Level by level: instances own segments (the first being a one-element
    pseudo-segment for the head VM), segments own alternatives, alternatives
    own component entries.  All ``*_start`` arrays index into the next level
    and are contiguous per owner.
    """

    n_components: int
    entry_comp: np.ndarray
    entry_opt: np.ndarray
    entry_seg: np.ndarray
    entry_inst: np.ndarray
    opt_start: np.ndarray
    opt_end: np.ndarray
    seg_opt_start: np.ndarray
    seg_nopt: np.ndarray
    seg_inst: np.ndarray
    inst_seg_start: np.ndarray
    inst_seg_end: np.ndarray
    inst_service: np.ndarray
    inst_share: np.ndarray  # 1 / (instances of its service)
    service_rate: np.ndarray
    buffer_len: np.ndarray


def flow_structure(instance: ProblemInstance, phenotype: Phenotype) -> FlowStructure:
    cached = phenotype.__dict__.get("_flow")
    if cached is not None and cached[0] is instance.topology:
        return cached[1]
    topo = instance.topology
    comps, opt_bounds, seg_opt_start, seg_nopt, seg_inst = [], [], [], [], []
    inst_seg_start, inst_seg_end, inst_service, inst_share = [], [], [], []
    for s, insts in enumerate(phenotype.instances):
        for inst in insts:
            i = len(inst_service)
            inst_service.append(s)
            inst_share.append(1.0 / len(insts))
            inst_seg_start.append(len(seg_nopt))
            for options in ((inst.head,),), *inst.segments:
                seg_opt_start.append(len(opt_bounds))
                seg_nopt.append(len(options))
                seg_inst.append(i)
                for opt in options:
                    opt_bounds.append((len(comps), len(comps) + len(opt)))
                    comps.extend(opt)
            inst_seg_end.append(len(seg_nopt))
    opt_bounds = np.array(opt_bounds, dtype=np.int64).reshape(-1, 2)
    opt_start, opt_end = opt_bounds[:, 0], opt_bounds[:, 1]
    entry_opt = np.repeat(np.arange(len(opt_start)), opt_end - opt_start)
    seg_opt_start = np.array(seg_opt_start, dtype=np.int64)
    seg_nopt = np.array(seg_nopt, dtype=np.int64)
    opt_seg = np.repeat(np.arange(len(seg_nopt)), seg_nopt)
    seg_inst = np.array(seg_inst, dtype=np.int64)
    entry_seg = opt_seg[entry_opt]

    mu = topo.service_rate.copy()
    if phenotype.assignment:
        vms = np.fromiter(phenotype.assignment.keys(), dtype=np.int64)
        vnfs = np.fromiter(phenotype.assignment.values(), dtype=np.int64)
        mu[topo.vm_component[vms]] = instance.vnf_rates[vnfs]
    fs = FlowStructure(
        n_components=topo.n_components,
        entry_comp=np.array(comps, dtype=np.int64),
        entry_opt=entry_opt,
        entry_seg=entry_seg,
        entry_inst=seg_inst[entry_seg],
        opt_start=opt_start,
        opt_end=opt_end,
        seg_opt_start=seg_opt_start,
        seg_nopt=seg_nopt.astype(float),
        seg_inst=seg_inst,
        inst_seg_start=np.array(inst_seg_start, dtype=np.int64),
        inst_seg_end=np.array(inst_seg_end, dtype=np.int64),
        inst_service=np.array(inst_service, dtype=np.int64),
        inst_share=np.array(inst_share, dtype=float),
        service_rate=mu,
        buffer_len=topo.buffer_len,
    )
    phenotype.__dict__["_flow"] = (topo, fs)
    return fs


def _segment_log_survival(fs: FlowStructure, loss: np.ndarray):
    """Per-entry log survival before the entry (within its alternative) and
    per-segment log of the expected survival across alternatives."""
    with np.errstate(divide="ignore"):
        logq = np.log1p(-loss[fs.entry_comp])
    cs = np.concatenate(([0.0], np.cumsum(logq)))
    before = cs[:-1] - cs[fs.opt_start][fs.entry_opt]
    opt_log = cs[fs.opt_end] - cs[fs.opt_start]
    seg_surv = np.add.reduceat(np.exp(opt_log), fs.seg_opt_start) / fs.seg_nopt
    with np.errstate(divide="ignore"):
        seg_log = np.log(seg_surv)
    return before, seg_log


def _instance_prefix(fs: FlowStructure, seg_log: np.ndarray):
    scs = np.concatenate(([0.0], np.cumsum(seg_log)))
    seg_prefix = scs[:-1] - scs[fs.inst_seg_start][fs.seg_inst]
    inst_log = scs[fs.inst_seg_end] - scs[fs.inst_seg_start]
    return seg_prefix, inst_log


def arrival_rates(fs: FlowStructure, rates: np.ndarray, loss: np.ndarray) -> np.ndarray:
    """Per-component arrival rate when upstream components drop with ``loss``.

    ``rates`` is the arrival rate of each service.
    """
    before, seg_log = _segment_log_survival(fs, loss)
    seg_prefix, _ = _instance_prefix(fs, seg_log)
    weight = rates[fs.inst_service] * fs.inst_share
    flow = weight[fs.entry_inst] * np.exp(seg_prefix[fs.entry_seg] + before) / fs.seg_nopt[fs.entry_seg]
    return np.bincount(fs.entry_comp, weights=flow, minlength=fs.n_components)


# -- fixed point ---------------------------------------------------------------


@dataclass
class ArrivalState:
    """Per-component arrival rates and drop probabilities of one evaluation."""

    arrival_rate: np.ndarray
    loss_prob: np.ndarray
    service_rate: np.ndarray
    buffer_len: np.ndarray
    iterations: int = 0
    converged: bool = True
    history: list[np.ndarray] = field(default_factory=list)  # raw iterates, if recorded
    means: list[np.ndarray] = field(default_factory=list)
    divergence: list[float] = field(default_factory=list)
    first_loss: np.ndarray | None = None

    @property
    def effective_rate(self) -> np.ndarray:
        return self.arrival_rate * (1.0 - self.loss_prob)


def _loss(fs: FlowStructure, lam: np.ndarray) -> np.ndarray:
    return queue_loss_probability(lam, fs.service_rate, fs.buffer_len)


def converge_arrival_rates(
    instance: ProblemInstance,
    phenotype: Phenotype,
    delta: float = DEFAULT_DELTA,
    patience: int = DEFAULT_PATIENCE,
    max_iter: int = DEFAULT_MAX_ITER,
    record: bool = False,
) -> ArrivalState:
    """Iterate arrival rates and drop probabilities to their fixed point.

    Drop probabilities start at zero.  Each iteration recomputes every
    arrival rate from the previous drop probabilities, then the drop
    probabilities from those rates.  Successive iterates alternate between
    upper and lower bounds, so their pairwise mean is tracked; iteration
    stops once the largest change of that mean stays below ``delta`` for
    ``patience`` consecutive iterations, and the mean is returned.
    """
    if not delta > 0:
        raise InvalidParameterError("delta must be > 0")
    if not patience > 1:
        raise InvalidParameterError("patience must be > 1")
    fs = flow_structure(instance, phenotype)
    rates = instance.arrival_rates
    loss = np.zeros(fs.n_components)
    prev_lam = None
    prev_mean = np.zeros(fs.n_components)
    first_loss = None
    below = 0
    history, means, divs = [], [], []
    for it in range(1, max_iter + 1):
        lam = arrival_rates(fs, rates, loss)
        loss = _loss(fs, lam)
        if first_loss is None:
            first_loss = loss
        mean = lam if prev_lam is None else 0.5 * (lam + prev_lam)
        div = float(np.max(np.abs(mean - prev_mean))) if mean.size else 0.0
        if record:
            history.append(lam)
            means.append(mean)
            divs.append(div)
        below = below + 1 if div < delta else 0
        prev_lam, prev_mean = lam, mean
        if below >= patience:
            break
    else:
        state = ArrivalState(
            mean, _loss(fs, mean), fs.service_rate, fs.buffer_len, max_iter, False, history, means, divs, first_loss
        )
        raise ConvergenceError(f"arrival rates did not stabilise within {max_iter} iterations", state)
    return ArrivalState(mean, _loss(fs, mean), fs.service_rate, fs.buffer_len, it, True, history, means, divs, first_loss)


def instantaneous_state(instance: ProblemInstance, phenotype: Phenotype) -> ArrivalState:
    """Single propagation pass from zero drop probabilities."""
    fs = flow_structure(instance, phenotype)
    lam = arrival_rates(fs, instance.arrival_rates, np.zeros(fs.n_components))
    loss = _loss(fs, lam)
    return ArrivalState(lam, loss, fs.service_rate, fs.buffer_len, 1, True, first_loss=loss)


# -- metrics -------------------------------------------------------------------


def service_loss_all(state: ArrivalState, fs: FlowStructure, n_services: int) -> np.ndarray:
    _, seg_log = _segment_log_survival(fs, state.loss_prob)
    _, inst_log = _instance_prefix(fs, seg_log)
    surv = np.bincount(fs.inst_service, weights=fs.inst_share * np.exp(inst_log), minlength=n_services)
    return np.clip(1.0 - surv, 0.0, 1.0)


def component_waiting_time(state: ArrivalState) -> np.ndarray:
    lam = state.arrival_rate
    n_bar = queue_expected_length(lam, state.service_rate, state.buffer_len)
    eff = lam * (1.0 - state.loss_prob)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(eff > 0, n_bar / eff, 0.0)
    return w


def expected_path_sum(fs: FlowStructure, per_component: np.ndarray, n_services: int) -> np.ndarray:
    """Per-service expectation, over instances and ECMP choices, of the sum of
    ``per_component`` along the route."""
    weight = fs.inst_share[fs.entry_inst] / fs.seg_nopt[fs.entry_seg]
    service = fs.inst_service[fs.entry_inst]
    return np.bincount(service, weights=weight * per_component[fs.entry_comp], minlength=n_services)


def service_latency_all(state: ArrivalState, fs: FlowStructure, n_services: int) -> np.ndarray:
    return expected_path_sum(fs, component_waiting_time(state), n_services)


def service_packet_loss(state: ArrivalState, phenotype: Phenotype, service: int, instance: ProblemInstance) -> float:
    """Expected drop probability of one service over its routes."""
    fs = flow_structure(instance, phenotype)
    return float(service_loss_all(state, fs, instance.n_services)[service])


def service_latency(state: ArrivalState, phenotype: Phenotype, service: int, instance: ProblemInstance) -> float:
    """Expected end-to-end waiting time (ms) of one service over its routes."""
    fs = flow_structure(instance, phenotype)
    return float(service_latency_all(state, fs, instance.n_services)[service])


def energy_from_utilisation(topology: Topology, lam: np.ndarray, util: np.ndarray) -> float:
    """Total power of switches and servers given per-queue utilisation.

    Components with no traffic are off.  A server is busy unless its virtual
    switch and all of its VM queues are idle, treated as independent.
    """
    on = lam > 0
    sw = topology.switch_components
    sw_on = sw[on[sw]]
    u = util[sw_on]
    total = float(np.sum(u * topology.energy_active[sw_on] + (1.0 - u) * topology.energy_idle[sw_on]))

    nv = topology.vms_per_server
    vs = topology.vswitch_of_server
    vm = topology.vm_component.reshape(-1, nv)
    server_on = on[vs] | on[vm].any(axis=1)
    idle = (1.0 - np.clip(util[vs], 0.0, 1.0)) * np.prod(1.0 - np.clip(util[vm], 0.0, 1.0), axis=1)
    u_srv = (1.0 - idle)[server_on]
    vs_on = vs[server_on]
    total += float(np.sum(u_srv * topology.energy_active[vs_on] + (1.0 - u_srv) * topology.energy_idle[vs_on]))
    return total


def total_energy(state: ArrivalState, topology: Topology, phenotype: Phenotype | None = None) -> float:
    """Power draw (W) of the data center under the given arrival state."""
    util = queue_busy_probability(state.arrival_rate, state.service_rate, state.buffer_len)
    return energy_from_utilisation(topology, state.arrival_rate, util)


def objectives_from_state(instance: ProblemInstance, phenotype: Phenotype, state: ArrivalState) -> ObjectiveVector:
    fs = flow_structure(instance, phenotype)
    n = instance.n_services
    lat = service_latency_all(state, fs, n)
    loss = service_loss_all(state, fs, n)
    return ObjectiveVector(float(lat.mean()), float(loss.mean()), total_energy(state, instance.topology))


def evaluate_objectives(
    instance: ProblemInstance,
    phenotype: Phenotype,
    delta: float = DEFAULT_DELTA,
    patience: int = DEFAULT_PATIENCE,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ObjectiveVector:
    """Mean service latency, mean service loss and total energy of a phenotype."""
    state = converge_arrival_rates(instance, phenotype, delta, patience, max_iter)
    return objectives_from_state(instance, phenotype, state)


@dataclass
class ServiceReport:
    latency: np.ndarray
    loss: np.ndarray
    objectives: ObjectiveVector
    state: ArrivalState


def evaluate_services(
    instance: ProblemInstance, phenotype: Phenotype, delta: float = DEFAULT_DELTA, patience: int = DEFAULT_PATIENCE
) -> ServiceReport:
    """Per-service latency and loss alongside the aggregate objectives."""
    state = converge_arrival_rates(instance, phenotype, delta, patience)
    return report_from_state(instance, phenotype, state)


def report_from_state(instance: ProblemInstance, phenotype: Phenotype, state: ArrivalState) -> ServiceReport:
    fs = flow_structure(instance, phenotype)
    n = instance.n_services
    lat = service_latency_all(state, fs, n)
    loss = service_loss_all(state, fs, n)
    obj = ObjectiveVector(float(lat.mean()), float(loss.mean()), total_energy(state, instance.topology))
    return ServiceReport(lat, loss, obj, state)

