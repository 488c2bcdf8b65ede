"""Multi-objective evolutionary search over placement genotypes.

Variation is representation-agnostic (uniform crossover, per-slot
resampling); environmental selection is pluggable and defaults to NSGA-II
with Deb's feasibility rule, which only matters for the unrepaired direct
and binary representations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import qos, surrogates
from .encoding import NONE, Phenotype, decode, initial_marker_count
from .errors import ConvergenceError, InvalidParameterError
from .heuristics import Infeasible, decode_binary, decode_direct
from .hypervolume import hypervolume, nondominated_mask, normalized_hypervolumes
from .workload import ProblemInstance

__all__ = [
    "Candidate",
    "NSGA2Selection",
    "OptimizerConfig",
    "OptimizerResult",
    "hypervolume",
    "initialize_population",
    "make_representation",
    "mutate",
    "normalized_hypervolumes",
    "run_optimizer",
    "uniform_crossover",
]


# -- variation -----------------------------------------------------------------


def initialize_population(instance: ProblemInstance, n: int, rng: np.random.Generator | int = 0) -> list[np.ndarray]:
    """Genotypes whose per-service marker count grows linearly with their index."""
    if n < 1:
        raise InvalidParameterError("population size must be >= 1")
    rng = np.random.default_rng(rng)
    n_vms = instance.topology.n_vms
    out = []
    for i in range(1, n + 1):
        m = initial_marker_count(instance, i, n)
        g = np.full(n_vms, NONE, dtype=np.int64)
        slots = rng.permutation(n_vms)[: m * instance.n_services]
        g[slots] = np.repeat(np.arange(instance.n_services), m)
        out.append(g)
    return out


def uniform_crossover(g1, g2, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(g1), np.asarray(g2)
    if a.shape != b.shape:
        raise InvalidParameterError("parents must have equal length")
    if not 0 <= rate <= 1:
        raise InvalidParameterError("crossover rate must be in [0, 1]")
    a, b = a.copy(), b.copy()
    if rng.random() < rate:
        swap = rng.random(a.shape) < 0.5
        a[swap], b[swap] = b[swap], a[swap].copy()
    return a, b


def mutate(g, rate: float, rng: np.random.Generator, low: int = NONE, high: int | None = None) -> np.ndarray:
    """Resample each slot with probability ``rate`` uniformly from ``low..high``."""
    if not 0 <= rate <= 1:
        raise InvalidParameterError("mutation rate must be in [0, 1]")
    g = np.array(g, copy=True)
    if high is None:
        raise InvalidParameterError("mutation needs the alphabet upper bound")
    hit = rng.random(g.shape) < rate
    g[hit] = rng.integers(low, high + 1, size=int(hit.sum()))
    return g


# -- representations -----------------------------------------------------------


class Representation(Protocol):
    name: str
    length: int
    low: int
    high: int

    def initialize(self, n: int, rng: np.random.Generator) -> list[np.ndarray]: ...

    def decode(self, genotype: np.ndarray) -> Phenotype | Infeasible: ...


@dataclass
class ProposedRepresentation:
    instance: ProblemInstance
    name: str = "proposed"

    def __post_init__(self):
        self.length = self.instance.topology.n_vms
        self.low, self.high = NONE, self.instance.n_services - 1

    def initialize(self, n, rng):
        return initialize_population(self.instance, n, rng)

    def decode(self, genotype):
        return decode(genotype, self.instance)


@dataclass
class DirectRepresentation:
    instance: ProblemInstance
    name: str = "direct"

    def __post_init__(self):
        self.length = self.instance.topology.n_vms
        self.low, self.high = NONE, len(self.instance.vnf_catalog) - 1

    def initialize(self, n, rng):
        return [rng.integers(self.low, self.high + 1, size=self.length) for _ in range(n)]

    def decode(self, genotype):
        return decode_direct(genotype, self.instance)


@dataclass
class BinaryRepresentation:
    instance: ProblemInstance
    name: str = "binary"

    def __post_init__(self):
        self.length = self.instance.topology.n_servers * len(self.instance.vnf_catalog)
        self.low, self.high = 0, 1

    def initialize(self, n, rng):
        return [rng.integers(0, 2, size=self.length) for _ in range(n)]

    def decode(self, genotype):
        return decode_binary(genotype, self.instance)


REPRESENTATIONS = {"proposed": ProposedRepresentation, "direct": DirectRepresentation, "binary": BinaryRepresentation}


def make_representation(name: str, instance: ProblemInstance) -> Representation:
    try:
        return REPRESENTATIONS[name](instance)
    except KeyError:
        raise InvalidParameterError(f"unknown representation {name!r}") from None


# -- evaluators ----------------------------------------------------------------

Evaluator = Callable[[ProblemInstance, Phenotype], tuple]


def make_evaluator(name: str, delta: float = qos.DEFAULT_DELTA, patience: int = qos.DEFAULT_PATIENCE) -> Evaluator:
    if name == "proposed":
        return lambda inst, ph: tuple(qos.evaluate_objectives(inst, ph, delta, patience))
    if name == "mm1":
        return lambda inst, ph: tuple(surrogates.evaluate_mm1(inst, ph))
    if name == "mm1b-instant":
        return lambda inst, ph: tuple(surrogates.evaluate_mm1b_instant(inst, ph))
    if name in ("cwtpl", "ru", "plus"):
        return lambda inst, ph: tuple(surrogates.evaluate_surrogate(name, inst, ph))
    raise InvalidParameterError(f"unknown evaluator {name!r}")


# -- selection -----------------------------------------------------------------


def fast_nondominated_sort(f: np.ndarray) -> list[np.ndarray]:
    """Fronts of row indices, best first (minimisation)."""
    n = len(f)
    if n == 0:
        return []
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    assigned = np.zeros(n, dtype=bool)
    while current.size:
        fronts.append(current)
        assigned[current] = True
        count = count - dom[current].sum(axis=0)
        current = np.flatnonzero((count == 0) & ~assigned)
    return fronts


def crowding_distance(f: np.ndarray) -> np.ndarray:
    """Range-normalised crowding distance of the rows of one front."""
    n, m = f.shape
    d = np.zeros(n)
    if n <= 2:
        d[:] = np.inf
        return d
    for j in range(m):
        v = f[:, j].copy()
        finite = np.isfinite(v)
        if not finite.all():
            top = v[finite].max() + 1.0 if finite.any() else 0.0
            v[~finite] = top
        order = np.argsort(v, kind="stable")
        span = v[order[-1]] - v[order[0]]
        d[order[0]] = d[order[-1]] = np.inf
        if span > 0:
            d[order[1:-1]] += (v[order[2:]] - v[order[:-2]]) / span
    return d


class Selection(Protocol):
    def rank(self, objectives: np.ndarray, violation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-member (rank, crowding) used by mating selection."""

    def survive(self, objectives: np.ndarray, violation: np.ndarray, k: int) -> np.ndarray:
        """Indices of the ``k`` members that survive."""


class NSGA2Selection:
    """Nondominated sorting with crowding, and Deb's rule for infeasible members."""

    def _fronts(self, objectives, violation):
        feas = np.flatnonzero(violation <= 0)
        fronts = [feas[fr] for fr in fast_nondominated_sort(objectives[feas])]
        infeas = np.flatnonzero(violation > 0)
        for v in np.unique(violation[infeas]):
            fronts.append(infeas[violation[infeas] == v])
        return fronts

    def rank(self, objectives, violation):
        n = len(objectives)
        rank = np.zeros(n, dtype=np.int64)
        crowd = np.zeros(n)
        for r, fr in enumerate(self._fronts(objectives, violation)):
            rank[fr] = r
            crowd[fr] = crowding_distance(objectives[fr]) if violation[fr[0]] <= 0 else 0.0
        return rank, crowd

    def survive(self, objectives, violation, k):
        chosen = []
        for fr in self._fronts(objectives, violation):
            if len(chosen) + len(fr) <= k:
                chosen.extend(fr.tolist())
                continue
            room = k - len(chosen)
            if violation[fr[0]] <= 0:
                cd = crowding_distance(objectives[fr])
                order = np.argsort(-cd, kind="stable")
            else:
                order = np.arange(len(fr))
            chosen.extend(fr[order[:room]].tolist())
            break
        return np.array(chosen, dtype=np.int64)


def _tournament(rank, crowd, rng) -> int:
    i, j = rng.integers(0, len(rank), size=2)
    if rank[i] != rank[j]:
        return int(i if rank[i] < rank[j] else j)
    if crowd[i] != crowd[j]:
        return int(i if crowd[i] > crowd[j] else j)
    return int(i if rng.random() < 0.5 else j)


# -- optimizer -----------------------------------------------------------------


@dataclass
class OptimizerConfig:
    population_size: int = 100
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # default 1 / genotype length
    evaluator: str = "proposed"
    representation: str = "proposed"
    selection: Selection | None = None
    seed: int = 0
    delta: float = qos.DEFAULT_DELTA
    patience: int = qos.DEFAULT_PATIENCE
    record_history: bool = False

    def __post_init__(self):
        if self.population_size < 2:
            raise InvalidParameterError("population_size must be >= 2")
        if self.generations < 0:
            raise InvalidParameterError("generations must be >= 0")
        if not 0 <= self.crossover_rate <= 1:
            raise InvalidParameterError("crossover_rate must be in [0, 1]")
        if self.mutation_rate is not None and not 0 <= self.mutation_rate <= 1:
            raise InvalidParameterError("mutation_rate must be in [0, 1]")


@dataclass
class Candidate:
    genotype: np.ndarray
    phenotype: Phenotype | None
    objectives: np.ndarray
    violation: float = 0.0
    status: str = "ok"  # ok | infeasible | nonconvergent

    @property
    def feasible(self) -> bool:
        return self.status == "ok"


@dataclass
class OptimizerResult:
    population: list[Candidate]
    archive: list[Candidate]  # objectives under the converged QoS model
    generations: int
    evaluations: int
    history: list[tuple[int, int, tuple, str]] = field(default_factory=list)
    best_per_generation: list[np.ndarray] = field(default_factory=list)

    def archive_objectives(self) -> np.ndarray:
        return np.array([c.objectives for c in self.archive], dtype=float).reshape(-1, 3)


def _evaluate(genotype, rep, evaluator, instance, n_obj_hint) -> Candidate:
    ph = rep.decode(genotype)
    if isinstance(ph, Infeasible):
        return Candidate(genotype, None, np.full(n_obj_hint, np.inf), ph.violation, "infeasible")
    try:
        obj = np.asarray(evaluator(instance, ph), dtype=float)
    except ConvergenceError:
        return Candidate(genotype, ph, np.full(n_obj_hint, np.inf), 0.0, "nonconvergent")
    return Candidate(genotype, ph, obj)


def _dedupe(cands: list[Candidate], k: int) -> list[Candidate]:
    seen, uniq, dups = set(), [], []
    for c in cands:
        key = c.genotype.tobytes()
        (dups if key in seen else uniq).append(c)
        seen.add(key)
    return uniq if len(uniq) >= k else uniq + dups[: k - len(uniq)]


def final_archive(instance: ProblemInstance, members: list[Candidate], reevaluate: Evaluator | None) -> list[Candidate]:
    """Feasible, mutually nondominated members under the converged QoS model."""
    pool = []
    seen = set()
    for c in members:
        if not c.feasible or c.genotype.tobytes() in seen:
            continue
        seen.add(c.genotype.tobytes())
        if reevaluate is not None:
            try:
                obj = np.asarray(reevaluate(instance, c.phenotype), dtype=float)
            except ConvergenceError:
                continue
            c = Candidate(c.genotype, c.phenotype, obj)
        pool.append(c)
    if not pool:
        return []
    f = np.array([c.objectives for c in pool])
    keep = nondominated_mask(f)
    return [c for c, k in zip(pool, keep) if k]


def run_optimizer(instance: ProblemInstance, config: OptimizerConfig | None = None) -> OptimizerResult:
    """Evolve a population and return it with its nondominated archive."""
    cfg = config or OptimizerConfig()
    rng = np.random.default_rng(cfg.seed)
    rep = make_representation(cfg.representation, instance)
    evaluator = make_evaluator(cfg.evaluator, cfg.delta, cfg.patience)
    selection = cfg.selection or NSGA2Selection()
    mrate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / rep.length
    n_obj = 2 if cfg.evaluator in ("ru", "plus") else 3
    cache: dict[bytes, Candidate] = {}

    def evaluate(g) -> Candidate:
        key = g.tobytes()
        c = cache.get(key)
        if c is None:
            c = _evaluate(g, rep, evaluator, instance, n_obj)
            cache[key] = c
        return c

    history = []
    best = []

    def log(gen, members):
        feas = [c.objectives for c in members if c.feasible]
        best.append(np.min(feas, axis=0) if feas else np.full(n_obj, np.inf))
        if cfg.record_history:
            for i, c in enumerate(members):
                history.append((gen, i, tuple(float(x) for x in c.objectives), c.status))

    pop = [evaluate(np.asarray(g, dtype=np.int64)) for g in rep.initialize(cfg.population_size, rng)]
    log(0, pop)
    n = cfg.population_size
    for gen in range(1, cfg.generations + 1):
        f = np.array([c.objectives for c in pop])
        v = np.array([c.violation for c in pop])
        rank, crowd = selection.rank(f, v)
        offspring = []
        while len(offspring) < n:
            a = pop[_tournament(rank, crowd, rng)].genotype
            b = pop[_tournament(rank, crowd, rng)].genotype
            a, b = uniform_crossover(a, b, cfg.crossover_rate, rng)
            for child in (a, b):
                if len(offspring) < n:
                    offspring.append(evaluate(mutate(child, mrate, rng, rep.low, rep.high)))
        merged = _dedupe(pop + offspring, n)
        f = np.array([c.objectives for c in merged])
        v = np.array([c.violation for c in merged])
        pop = [merged[i] for i in selection.survive(f, v, n)]
        log(gen, pop)

    reeval = None if cfg.evaluator == "proposed" else make_evaluator("proposed", cfg.delta, cfg.patience)
    archive = final_archive(instance, pop, reeval)
    return OptimizerResult(pop, archive, cfg.generations, len(cache), history, best)
