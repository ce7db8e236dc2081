"""Genetic-programming planner.

An individual holds one scaling formula per bottleneck service. Formulas are
decoded against the current metrics into a pod allocation, the surrogate
predicts the SLO value of that allocation and the fitness rewards predicted
SLO compliance first and small allocations second.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import expr as ex
from .simcluster import MetricsSnapshot
from .slo import SloSpec

DEFAULT_VOCABULARY = ("qps", "cpu")


class PlanningError(RuntimeError):
    """A planning round could not complete; the caller keeps its old plan."""


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 50
    generations: int = 30
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    tournament_size: int = 3
    max_tree_depth: int = ex.DEFAULT_MAX_DEPTH
    init_grow_depth: int = 4
    mutation_depth: int = ex.MUTATION_SUBTREE_DEPTH
    pod_min: int = 1
    pod_max: int = 10
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1 or self.generations < 1:
            raise ValueError("population_size and generations must be positive")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [1, population_size]")
        if self.max_tree_depth < 1 or self.init_grow_depth < 1 or self.mutation_depth < 1:
            raise ValueError("tree depths must be positive")
        if not 1 <= self.pod_min <= self.pod_max:
            raise ValueError(f"invalid pod bounds [{self.pod_min}, {self.pod_max}]")
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        ex._check_vocabulary(self.vocabulary)


@dataclass(frozen=True)
class PodAllocation:
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def check(self, cfg: GpConfig) -> "PodAllocation":
        for c in self.counts:
            if not cfg.pod_min <= c <= cfg.pod_max:
                raise ValueError(f"pod count {c} outside [{cfg.pod_min}, {cfg.pod_max}]")
        return self


@dataclass
class Individual:
    formulas: tuple[ex.Expr, ...]
    fitness: float | None = None
    allocation: PodAllocation | None = field(default=None, compare=False)
    predicted: float | None = field(default=None, compare=False)

    def clone(self) -> "Individual":
        # trees are immutable, so sharing them is safe
        return Individual(self.formulas)

    def texts(self) -> list[str]:
        return [ex.to_text(f) for f in self.formulas]


def formula_context(snapshot: MetricsSnapshot, service: str) -> dict[str, float]:
    """Metric bindings for the formula of ``service``.

    ``cpu`` is the CPU work offered to the service in replica units, ``mem``
    its memory share and ``qps`` the ingress request rate. Offered work does
    not depend on how many replicas serve it, so a formula keeps its value
    after the allocation it produced has been deployed.
    """
    s = snapshot.service(service)
    return {"qps": snapshot.qps, "cpu": s.cpu_demand, "mem": s.mem}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def decode(ind: Individual, metrics: MetricsSnapshot, cfg: GpConfig,
           bottlenecks: Sequence[str]) -> PodAllocation:
    if len(ind.formulas) != len(bottlenecks):
        raise ValueError(f"individual has {len(ind.formulas)} formulas for {len(bottlenecks)} services")
    counts = []
    for f, name in zip(ind.formulas, bottlenecks):
        raw = ex.evaluate(f, formula_context(metrics, name))
        counts.append(min(cfg.pod_max, max(cfg.pod_min, round_half_up(raw))))
    return PodAllocation(tuple(counts))


def fitness(predicted_slo: float, slo: SloSpec, alloc: PodAllocation, cfg: GpConfig) -> float:
    """Severity-of-violation above 1, or resource share in (0, 1]."""
    if slo.threshold == 0:
        raise ValueError("SLO threshold must be non-zero")
    if slo.violates(predicted_slo):
        return abs(slo.threshold - predicted_slo) / slo.threshold + 1.0
    return alloc.total / (cfg.pod_max * len(alloc.counts))


def initial_population(n_slots: int, cfg: GpConfig, rng: random.Random) -> list[Individual]:
    return [
        Individual(tuple(ex.grow_random(cfg.vocabulary, cfg.init_grow_depth, rng) for _ in range(n_slots)))
        for _ in range(cfg.population_size)
    ]


def tournament(population: Sequence[Individual], size: int, rng: random.Random) -> Individual:
    """Best of ``size`` draws with replacement; ties go to the earlier entry."""
    picks = [rng.randrange(len(population)) for _ in range(size)]
    best = min(picks, key=lambda i: (population[i].fitness, i))
    return population[best]


def breed(population: Sequence[Individual], cfg: GpConfig, rng: random.Random) -> list[Individual]:
    if not population:
        raise ValueError("cannot breed from an empty population")
    offspring: list[Individual] = []
    while len(offspring) < cfg.population_size:
        p1 = tournament(population, cfg.tournament_size, rng)
        p2 = tournament(population, cfg.tournament_size, rng)
        c1, c2 = list(p1.formulas), list(p2.formulas)
        if rng.random() < cfg.crossover_rate:
            slot = rng.randrange(len(c1))
            c1[slot], c2[slot] = ex.crossover_one_point(c1[slot], c2[slot], rng, cfg.max_tree_depth)
        for child in (c1, c2):
            if rng.random() < cfg.mutation_rate:
                slot = rng.randrange(len(child))
                child[slot] = ex.mutate_one_point(child[slot], cfg.vocabulary, rng,
                                                  cfg.max_tree_depth, cfg.mutation_depth)
            offspring.append(Individual(tuple(child)))
    return offspring[: cfg.population_size]


def score(individuals: Sequence[Individual], slo: SloSpec, cfg: GpConfig,
          metrics: MetricsSnapshot, surrogate, bottlenecks: Sequence[str],
          cache: dict | None = None):
    """Decode, predict and assign fitness with one batched surrogate call.

    ``cache`` maps allocations to predictions already made for the same
    snapshot; only allocations missing from it reach the surrogate.
    """
    if not individuals:
        return
    if cache is None:
        cache = {}
    allocs = [decode(ind, metrics, cfg, bottlenecks) for ind in individuals]
    missing = list(dict.fromkeys(a.counts for a in allocs if a.counts not in cache))
    if missing:
        try:
            preds = surrogate.predict_many(metrics, missing, bottlenecks)
        except Exception as exc:
            raise PlanningError(f"surrogate prediction failed: {exc}") from exc
        cache.update(zip(missing, preds))
    for ind, alloc in zip(individuals, allocs):
        pred = float(cache[alloc.counts])
        if not math.isfinite(pred):
            raise PlanningError(f"surrogate returned non-finite prediction {pred}")
        ind.allocation = alloc
        ind.predicted = pred
        ind.fitness = fitness(pred, slo, alloc, cfg)


def select(pool: Sequence[Individual], cfg: GpConfig, rng: random.Random) -> list[Individual]:
    """Survivor selection: the pool's best is kept, the rest won by tournament.

    Plain tournament can drop the best individual; keeping it makes the best
    fitness of the population non-increasing over generations.
    """
    elite = min(range(len(pool)), key=lambda i: (pool[i].fitness, i))
    survivors = [pool[elite]]
    while len(survivors) < cfg.population_size:
        survivors.append(tournament(pool, cfg.tournament_size, rng))
    return survivors


def gpplan(slo: SloSpec, cfg: GpConfig, metrics: MetricsSnapshot, best_sol: Individual | None,
           surrogate, rng: random.Random, bottlenecks: Sequence[str] | None = None,
           history: list | None = None) -> Individual:
    """Evolve scaling formulas for the current metrics and return the best.

    ``history``, when given, receives the best fitness of the population
    after every generation.
    """
    if bottlenecks is None:
        bottlenecks = surrogate.bottlenecks
    bottlenecks = list(bottlenecks)
    population: list[Individual] = []
    cache: dict = {}
    if best_sol is not None:
        if len(best_sol.formulas) != len(bottlenecks):
            raise PlanningError("previous best solution has the wrong number of formulas")
        incumbent = best_sol.clone()
        score([incumbent], slo, cfg, metrics, surrogate, bottlenecks, cache)
        population = [incumbent]
    for gen in range(cfg.generations):
        if gen == 0:
            offspring = initial_population(len(bottlenecks), cfg, rng)
        else:
            offspring = breed(population, cfg, rng)
        score(offspring, slo, cfg, metrics, surrogate, bottlenecks, cache)
        # incumbents first so that ties keep the already deployed formulas
        population = select(population + offspring, cfg, rng)
        if history is not None:
            history.append(population[0].fitness)
    return min(population, key=lambda ind: ind.fitness)


# -- persistence of planning results ------------------------------------------------

BEST_COLUMNS = ("time_s", "service", "formula", "fitness")


def append_best(path, t: float, ind: Individual, bottlenecks: Sequence[str]):
    """Append one row per bottleneck service to the best-formula log."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(BEST_COLUMNS)
        for name, f in zip(bottlenecks, ind.formulas):
            w.writerow([f"{t:g}", name, ex.to_text(f), f"{ind.fitness:.9g}"])


def load_best(path, bottlenecks: Sequence[str], vocabulary: Sequence[str]) -> Individual | None:
    """Most recent best individual from a best-formula log (warm restart)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    last_t = rows[-1]["time_s"]
    latest = {r["service"]: r for r in rows if r["time_s"] == last_t}
    try:
        formulas = tuple(ex.parse_text(latest[b]["formula"], vocabulary) for b in bottlenecks)
    except KeyError as exc:
        raise PlanningError(f"best-formula log has no entry for {exc}") from None
    return Individual(formulas, float(latest[bottlenecks[0]]["fitness"]))
