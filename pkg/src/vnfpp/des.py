"""Packet-level discrete-event simulation of a placed and routed phenotype.

Every component is a FIFO single-server queue holding at most ``buffer_len``
packets (including the one in service) with exponential service times.
Each packet picks one service instance and, per segment, one equal-cost
route uniformly at random.  Packets "count" if they are generated inside
the measurement window; the run continues after the window closes until
every counted packet has been delivered or dropped.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .encoding import Phenotype
from .errors import InvalidParameterError
from .qos import energy_from_utilisation, flow_structure
from .workload import ProblemInstance


@dataclass(frozen=True)
class SimConfig:
    warmup_time: float = 1_000.0  # ms
    measure_time: float = 10_000.0  # ms
    replications: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.warmup_time < 0 or not self.measure_time > 0:
            raise InvalidParameterError("warmup_time must be >= 0 and measure_time > 0")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")


@dataclass
class ReplicationStats:
    generated: np.ndarray
    delivered: np.ndarray
    dropped: np.ndarray
    latency_sum: np.ndarray
    busy_fraction: np.ndarray  # per component
    server_busy_fraction: np.ndarray
    mean_queue_length: np.ndarray
    touched: np.ndarray  # component saw at least one packet in the window
    energy: float


@dataclass
class SimReport:
    latency: np.ndarray  # per-service mean end-to-end latency, ms
    latency_ci: np.ndarray  # 95% half-width
    loss: np.ndarray
    loss_ci: np.ndarray
    busy_fraction: np.ndarray  # per component, averaged over replications
    mean_queue_length: np.ndarray
    energy: float
    energy_ci: float
    generated: np.ndarray
    delivered: np.ndarray
    dropped: np.ndarray
    replications: list[ReplicationStats] = field(default_factory=list, repr=False)

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latency))

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.loss))


def _half_width(samples: np.ndarray) -> np.ndarray:
    """95% Student-t half-width over replications (axis 0)."""
    r = samples.shape[0]
    if r < 2:
        return np.full(samples.shape[1:], np.inf)
    sd = samples.std(axis=0, ddof=1)
    return stats.t.ppf(0.975, r - 1) * sd / math.sqrt(r)


def _binomial_half_width(events: np.ndarray, trials: np.ndarray) -> np.ndarray:
    """Largest distance from the pooled rate to its 95% Clopper-Pearson bounds.

    Unlike the replication t-interval this stays informative when no
    replication observed a single drop.
    """
    k = np.asarray(events, dtype=float)
    n = np.asarray(trials, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n > 0, k / np.maximum(n, 1), 0.0)
        lo = np.where(k > 0, stats.beta.ppf(0.025, k, n - k + 1), 0.0)
        hi = np.where(k < n, stats.beta.ppf(0.975, k + 1, n - k), 1.0)
    out = np.maximum(hi - p, p - lo)
    return np.where(n > 0, out, 0.0)


def _replicate(instance: ProblemInstance, phenotype: Phenotype, cfg: SimConfig, seed: int) -> ReplicationStats:
    rng = random.Random(seed)
    expo = rng.expovariate
    rand = rng.random
    topo = instance.topology
    fs = flow_structure(instance, phenotype)
    mu = fs.service_rate.tolist()
    cap = fs.buffer_len.astype(int).tolist()
    n_comp = topo.n_components
    n_srv = len(phenotype.instances)

    routes_of = []  # per service: per instance (head, segments)
    for insts in phenotype.instances:
        routes_of.append([((inst.head,), inst.segments) for inst in insts])

    server_of = [-1] * n_comp
    for srv in range(topo.n_servers):
        server_of[int(topo.vswitch_of_server[srv])] = srv
        for v in topo.vm_range_of_server(srv):
            server_of[int(topo.vm_component[v])] = srv

    t0 = cfg.warmup_time
    t1 = cfg.warmup_time + cfg.measure_time

    in_sys = [0] * n_comp
    waiting = [deque() for _ in range(n_comp)]
    busy = [0.0] * n_comp
    busy_since = [0.0] * n_comp
    area = [0.0] * n_comp
    last_change = [0.0] * n_comp
    touched = [False] * n_comp
    srv_active = [0] * topo.n_servers
    srv_busy = [0.0] * topo.n_servers
    srv_since = [0.0] * topo.n_servers

    generated = [0] * n_srv
    delivered = [0] * n_srv
    dropped = [0] * n_srv
    lat_sum = [0.0] * n_srv

    def window(a, b):
        lo = a if a > t0 else t0
        hi = b if b < t1 else t1
        return hi - lo if hi > lo else 0.0

    events = []  # (time, seq, kind, payload): kind 0 = new packet, 1 = departure
    seq = 0
    rates = instance.arrival_rates.tolist()
    for s, lam in enumerate(rates):
        if lam > 0 and routes_of[s]:
            heapq.heappush(events, (expo(lam), seq, 0, s))
            seq += 1

    def arrive(packet, comp, now):
        # packet = [service, route, position, birth, counted]
        nonlocal seq
        if now >= t0 and now <= t1:
            touched[comp] = True
        n = in_sys[comp]
        if n >= cap[comp]:
            if packet[4]:
                dropped[packet[0]] += 1
            return
        area[comp] += n * window(last_change[comp], now)
        last_change[comp] = now
        in_sys[comp] = n + 1
        if n == 0:
            busy_since[comp] = now
            srv = server_of[comp]
            if srv >= 0:
                if srv_active[srv] == 0:
                    srv_since[srv] = now
                srv_active[srv] += 1
            heapq.heappush(events, (now + expo(mu[comp]), seq, 1, (comp, packet)))
            seq += 1
        else:
            waiting[comp].append(packet)

    while events:
        now, _, kind, payload = heapq.heappop(events)
        if kind == 0:
            s = payload
            if now <= t1:
                lam = rates[s]
                heapq.heappush(events, (now + expo(lam), seq, 0, s))
                seq += 1
                counted = now >= t0
                if counted:
                    generated[s] += 1
                insts = routes_of[s]
                head, segments = insts[int(rand() * len(insts))]
                route = head
                for seg in segments:
                    route = route + seg[int(rand() * len(seg))]
                arrive([s, route, 0, now, counted], route[0], now)
            continue

        comp, packet = payload
        n = in_sys[comp]
        area[comp] += n * window(last_change[comp], now)
        last_change[comp] = now
        in_sys[comp] = n - 1
        if n == 1:
            busy[comp] += window(busy_since[comp], now)
            srv = server_of[comp]
            if srv >= 0:
                srv_active[srv] -= 1
                if srv_active[srv] == 0:
                    srv_busy[srv] += window(srv_since[srv], now)
        else:
            nxt = waiting[comp].popleft()
            heapq.heappush(events, (now + expo(mu[comp]), seq, 1, (comp, nxt)))
            seq += 1
        route = packet[1]
        pos = packet[2] + 1
        if pos < len(route):
            packet[2] = pos
            arrive(packet, route[pos], now)
        elif packet[4]:
            s = packet[0]
            delivered[s] += 1
            lat_sum[s] += now - packet[3]

    busy_frac = np.array(busy) / cfg.measure_time
    srv_frac = np.array(srv_busy) / cfg.measure_time
    touched_arr = np.array(touched)
    energy = _energy(topo, touched_arr, busy_frac, srv_frac)
    return ReplicationStats(
        np.array(generated),
        np.array(delivered),
        np.array(dropped),
        np.array(lat_sum),
        busy_frac,
        srv_frac,
        np.array(area) / cfg.measure_time,
        touched_arr,
        energy,
    )


def _energy(topo, touched: np.ndarray, util: np.ndarray, server_util: np.ndarray) -> float:
    # the model's accounting, with a server's measured union busy time in
    # place of the product-form utilisation
    u = util.copy()
    vs = topo.vswitch_of_server
    vm = topo.vm_component.reshape(-1, topo.vms_per_server)
    u[vs] = server_util
    u[vm] = 0.0
    return energy_from_utilisation(topo, touched, u)


def simulate(instance: ProblemInstance, phenotype: Phenotype, config: SimConfig | None = None) -> SimReport:
    """Run independent replications and summarise them with 95% intervals."""
    cfg = config or SimConfig()
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.replications)]
    reps = [_replicate(instance, phenotype, cfg, s) for s in seeds]

    gen = np.array([r.generated for r in reps], dtype=float)
    dlv = np.array([r.delivered for r in reps], dtype=float)
    drp = np.array([r.dropped for r in reps], dtype=float)
    lat = np.array([r.latency_sum for r in reps])
    with np.errstate(invalid="ignore", divide="ignore"):
        lat_mean = np.where(dlv > 0, lat / np.maximum(dlv, 1), 0.0)
        loss = np.where(gen > 0, drp / np.maximum(gen, 1), 0.0)
    energy = np.array([[r.energy] for r in reps])
    return SimReport(
        latency=lat_mean.mean(axis=0),
        latency_ci=_half_width(lat_mean),
        loss=loss.mean(axis=0),
        loss_ci=np.maximum(_half_width(loss), _binomial_half_width(drp.sum(axis=0), gen.sum(axis=0))),
        busy_fraction=np.mean([r.busy_fraction for r in reps], axis=0),
        mean_queue_length=np.mean([r.mean_queue_length for r in reps], axis=0),
        energy=float(energy.mean()),
        energy_ci=float(_half_width(energy)[0]),
        generated=gen.sum(axis=0).astype(np.int64),
        delivered=dlv.sum(axis=0).astype(np.int64),
        dropped=drp.sum(axis=0).astype(np.int64),
        replications=reps,
    )
