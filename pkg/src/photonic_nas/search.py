"""Genetic architecture search over the gene table.

Generational loop: evaluate, tournament-select parents, recombine whole gene
groups, mutate per gene, carry the top individuals over unchanged.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ContractError, DimensionError, NonFiniteError
from .genome import derived_seed, genome_key

log = logging.getLogger(__name__)


@dataclass
class Individual:
    id: int
    genome: dict
    fitness: float | None = None
    born: int = 1
    parents: tuple = ()


@dataclass
class GAConfig:
    population: int = 20
    generations: int = 30
    crossover_rate: float = 0.75
    mutation_rate: float = 0.20
    elite: int = 2
    tournament_k: int = 3

    def validate(self):
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if not 0.0 <= self.crossover_rate <= 1.0 or not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("crossover and mutation rates must lie in [0, 1]")
        if not 0 <= self.elite <= self.population:
            raise ValueError("elite count must lie in [0, population]")
        if self.tournament_k < 1:
            raise ValueError("tournament size must be at least 1")


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    worst: float
    best_id: int
    new_best: bool


@dataclass
class SearchLog:
    generations: list = field(default_factory=list)
    records: list = field(default_factory=list)  # one dict per individual per generation

    @property
    def best_series(self):
        return [g.best for g in self.generations]

    def new_best_events(self):
        return [g for g in self.generations if g.new_best]


# operators -------------------------------------------------------------------


def random_genome(table, rng):
    return {g.name: int(rng.integers(len(g.options))) for g in table.genes}


def _rank_key(ind):
    return (-ind.fitness, ind.id)


def tournament_select(population, rng, k=3):
    """Fittest of ``k`` distinct members drawn uniformly; ties go to the lower id."""
    if not population:
        raise ContractError("tournament on an empty population")
    for ind in population:
        if ind.fitness is None:
            raise ContractError(f"individual {ind.id} has not been evaluated")
    picks = rng.choice(len(population), size=min(k, len(population)), replace=False)
    return min((population[i] for i in picks), key=_rank_key)


def group_crossover(a, b, table, rng, rate=0.75):
    if rng.random() >= rate:
        return dict(a)
    child = {}
    for group, names in table.groups.items():
        source = a if rng.random() < 0.5 else b
        for name in names:
            child[name] = source[name]
    return {g.name: child[g.name] for g in table.genes}


def mutate(genome, table, rng, rate=0.20, events=None):
    """Per-gene mutation: half local +/-1 steps (clamped), half uniform re-draws.

    Names of genes that fired are appended to ``events`` when given.
    """
    out = dict(genome)
    for g in table.genes:
        if rng.random() >= rate:
            continue
        if events is not None:
            events.append(g.name)
        n = len(g.options)
        if rng.random() < 0.5:
            step = 1 if rng.random() < 0.5 else -1
            out[g.name] = int(min(max(out[g.name] + step, 0), n - 1))
        else:
            out[g.name] = int(rng.integers(n))
    return out


# fitness ------------------------------------------------------------------------


class ProxyFitness:
    """Validation accuracy after a short training run on a fixed proxy subset."""

    def __init__(self, table, proxy, val, dims, epochs, seed):
        self.table = table
        self.proxy = proxy
        self.val = val
        self.dims = dims
        self.epochs = epochs
        self.seed = seed

    def __call__(self, genome):
        from .model import TrainBudget, build_model, train_model

        genes = self.table.decode(genome)
        seed = derived_seed(genome, self.seed)
        try:
            model = build_model(genes, self.dims, seed)
            _, history = train_model(model, self.proxy, self.val, TrainBudget.from_genes(genes, self.epochs), seed)
        except (NonFiniteError, CapacityError, DimensionError, FloatingPointError) as exc:
            log.warning("genome %s scored 0: %s", genome_key(genome), exc)
            return 0.0
        return float(history.records[-1].val_acc) if history.records else 0.0


def _timed(fn, genome):
    t0 = time.perf_counter()
    value = fn(genome)
    return float(value), time.perf_counter() - t0


class _Evaluator:
    def __init__(self, fitness_fn, workers):
        self.fitness_fn = fitness_fn
        self.workers = max(1, int(workers))
        self.cache = {}
        self.times = {}

    def evaluate(self, population):
        pending = []
        for ind in population:
            key = genome_key(ind.genome)
            if key not in self.cache and key not in [genome_key(p) for p in pending]:
                pending.append(ind.genome)
        if pending:
            if self.workers > 1 and len(pending) > 1:
                with ProcessPoolExecutor(max_workers=min(self.workers, len(pending))) as pool:
                    results = list(pool.map(_timed, [self.fitness_fn] * len(pending), pending))
            else:
                results = [_timed(self.fitness_fn, g) for g in pending]
            for g, (fit, secs) in zip(pending, results):
                self.cache[genome_key(g)] = fit
                self.times[genome_key(g)] = secs
        for ind in population:
            if ind.fitness is None:
                ind.fitness = self.cache[genome_key(ind.genome)]


# main loop -----------------------------------------------------------------------


def _ind_to_json(ind):
    d = asdict(ind)
    d["parents"] = list(ind.parents)
    return d


def _ind_from_json(d):
    return Individual(d["id"], dict(d["genome"]), d["fitness"], d["born"], tuple(d["parents"]))


def evolve(table, fitness_fn, config=None, seed=0, workers=1, checkpoint_path=None, on_generation=None):
    """Run the search; returns the best individual seen in any generation and the log.

    With ``checkpoint_path`` the state after every completed generation is
    saved there, and an existing checkpoint for the same seed and config is
    resumed instead of starting over.
    """
    config = config or GAConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    evaluator = _Evaluator(fitness_fn, workers)
    search_log = SearchLog()
    start_gen = 1
    next_id = 0
    best = None
    population = []

    resumed = _load_checkpoint(checkpoint_path, config, seed)
    if resumed is not None:
        rng.bit_generator.state = resumed["rng"]
        evaluator.cache = resumed["cache"]
        evaluator.times = resumed["times"]
        search_log = SearchLog(
            [GenerationStats(**g) for g in resumed["generations"]], [dict(r) for r in resumed["records"]]
        )
        population = [_ind_from_json(d) for d in resumed["population"]]
        best = _ind_from_json(resumed["best"])
        next_id = resumed["next_id"]
        start_gen = resumed["generation"] + 1
        log.info("resuming search at generation %d", start_gen)
    else:
        for _ in range(config.population):
            population.append(Individual(next_id, random_genome(table, rng), born=1))
            next_id += 1

    for gen in range(start_gen, config.generations + 1):
        evaluator.evaluate(population)
        fits = [ind.fitness for ind in population]
        ranked = sorted(population, key=_rank_key)
        new_best = best is None or ranked[0].fitness > best.fitness
        if new_best:
            best = Individual(**{**asdict(ranked[0]), "genome": dict(ranked[0].genome)})
        stats = GenerationStats(gen, float(max(fits)), float(np.mean(fits)), float(min(fits)), ranked[0].id, new_best)
        search_log.generations.append(stats)
        for ind in population:
            search_log.records.append(
                {
                    "generation": gen,
                    "id": ind.id,
                    "genome": dict(ind.genome),
                    "fitness": ind.fitness,
                    "wall_time": evaluator.times.get(genome_key(ind.genome), 0.0),
                }
            )
        log.info("generation %d best %.4f mean %.4f worst %.4f", gen, stats.best, stats.mean, stats.worst)
        if on_generation is not None:
            on_generation(stats, population)

        if gen < config.generations:
            elites = ranked[: config.elite]
            children = []
            while len(elites) + len(children) < config.population:
                a = tournament_select(population, rng, config.tournament_k)
                b = tournament_select(population, rng, config.tournament_k)
                genome = group_crossover(a.genome, b.genome, table, rng, config.crossover_rate)
                genome = mutate(genome, table, rng, config.mutation_rate)
                children.append(Individual(next_id, genome, born=gen + 1, parents=(a.id, b.id)))
                next_id += 1
            population = list(elites) + children

        if checkpoint_path is not None:
            _save_checkpoint(checkpoint_path, config, seed, gen, rng, evaluator, search_log, population, best, next_id)
    return best, search_log


def _save_checkpoint(path, config, seed, gen, rng, evaluator, search_log, population, best, next_id):
    state = {
        "config": asdict(config),
        "seed": seed,
        "generation": gen,
        "rng": rng.bit_generator.state,
        "cache": evaluator.cache,
        "times": evaluator.times,
        "generations": [asdict(g) for g in search_log.generations],
        "records": search_log.records,
        "population": [_ind_to_json(i) for i in population],
        "best": _ind_to_json(best),
        "next_id": next_id,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(state))
    os.replace(tmp, path)


def _load_checkpoint(path, config, seed):
    if path is None or not Path(path).exists():
        return None
    state = json.loads(Path(path).read_text())
    if state["config"] != asdict(config) or state["seed"] != seed:
        log.warning("ignoring checkpoint %s: it belongs to a different configuration", path)
        return None
    return state


# persistence ------------------------------------------------------------------


def write_search_csv(search_log, table, path):
    """One row per individual per generation; deterministic (no timings)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "id", *table.names, "fitness"])
        for rec in search_log.records:
            values = table.decode(rec["genome"])
            writer.writerow([rec["generation"], rec["id"], *[_fmt(values[n]) for n in table.names], repr(rec["fitness"])])


def write_timing_csv(search_log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "id", "wall_time_s"])
        for rec in search_log.records:
            writer.writerow([rec["generation"], rec["id"], f"{rec['wall_time']:.3f}"])


def _fmt(value):
    return "None" if value is None else str(value)


def summary(best, search_log, table):
    return {
        "best_fitness": best.fitness,
        "best_id": best.id,
        "best_genome": table.decode(best.genome),
        "best_genome_indices": best.genome,
        "search_space_size": table.search_space_size(),
        "generations": [asdict(g) for g in search_log.generations],
    }
