import csv
import json

import numpy as np
import pytest

from photonic_nas.genome import REFERENCE_DIGITS, GeneSpec, GeneTable, genome_hash
from photonic_nas.search import (
    GAConfig,
    Individual,
    ProxyFitness,
    evolve,
    group_crossover,
    mutate,
    random_genome,
    tournament_select,
    write_search_csv,
    write_timing_csv,
)


def mock_fitness(genome):
    """Smooth deterministic landscape with a little hashed ruggedness."""
    score = sum((i + 1) * v for i, v in enumerate(sorted(genome.values())))
    bumps = (int(genome_hash(genome)[:8], 16) % 97) / 97.0
    return float(np.tanh(score / 150.0) * 0.9 + 0.1 * bumps)


def test_random_genome(table):
    rng = np.random.default_rng(0)
    counts = {"sigmoid": 0, "tanh": 0, "clamp": 0}
    for _ in range(10_000):
        g = random_genome(table, rng)
        table.validate(g)
        counts[table.decode(g)["phase_activation"]] += 1
    for c in counts.values():
        assert abs(c / 10_000 - 1 / 3) < 0.02
    assert random_genome(table, np.random.default_rng(5)) == random_genome(table, np.random.default_rng(5))


def test_tournament_examples():
    pop = [Individual(i, {}, f) for i, f in enumerate([0.5, 0.7, 0.9])]
    assert tournament_select(pop, np.random.default_rng(0), k=3).fitness == 0.9
    rng = np.random.default_rng(1)
    picks = [tournament_select(pop, rng, k=1).id for _ in range(3000)]
    freq = np.bincount(picks) / 3000
    assert np.all(np.abs(freq - 1 / 3) < 0.04)


def test_tournament_ties_to_lower_id():
    pop = [Individual(i, {}, 0.5) for i in range(4)]
    assert tournament_select(pop, np.random.default_rng(0), k=4).id == 0


def test_tournament_prefers_better():
    pop = [Individual(i, {}, f) for i, f in enumerate(np.linspace(0, 1, 11))]
    rng = np.random.default_rng(2)
    ids = np.bincount([tournament_select(pop, rng, 3).id for _ in range(100_000)], minlength=11)
    assert ids[10] > ids[5]


def test_crossover_examples(table):
    rng = np.random.default_rng(0)
    a = random_genome(table, rng)
    assert all(group_crossover(a, dict(a), table, rng) == a for _ in range(50))
    b = random_genome(table, rng)
    assert all(group_crossover(a, b, table, rng, rate=0.0) == a for _ in range(50))


def test_crossover_group_atomicity_and_closure(table):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = random_genome(table, rng), random_genome(table, rng)
        child = group_crossover(a, b, table, rng, rate=1.0)
        table.validate(child)
        for names in table.groups.values():
            from_a = all(child[n] == a[n] for n in names)
            from_b = all(child[n] == b[n] for n in names)
            assert from_a or from_b


def test_mutation_examples(table):
    rng = np.random.default_rng(0)
    g = random_genome(table, rng)
    assert mutate(g, table, rng, rate=0.0) == g
    low = {name: 0 for name in table.names}
    seen_low = set()
    for _ in range(500):
        m = mutate(low, table, rng, rate=1.0)
        table.validate(m)
        seen_low |= {v for v in m.values()}
    assert min(seen_low) == 0  # downward local steps clamp at index 0


def test_mutation_rate_monte_carlo(table):
    rng = np.random.default_rng(11)
    g = random_genome(table, rng)
    counts = []
    for _ in range(10_000):
        events = []
        mutate(g, table, rng, 0.2, events)
        counts.append(len(events))
    assert abs(np.mean(counts) - 19 * 0.2) < 0.1


def test_evolve_tiny():
    tiny = GeneTable([GeneSpec("x", (0, 1, 2, 3), 1), GeneSpec("y", (0, 1), 2)])
    best, log = evolve(tiny, lambda g: g["x"] + 10 * g["y"], GAConfig(population=2, generations=1), seed=0)
    assert len(log.generations) == 1
    fits = [r["fitness"] for r in log.records]
    assert best.fitness == max(fits)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elitism_monotone_and_elites_copied(table, seed):
    snapshots = []

    def on_gen(stats, population):
        snapshots.append([(i.id, dict(i.genome), i.fitness) for i in population])

    best, log = evolve(table, mock_fitness, GAConfig(population=10, generations=50), seed=seed, on_generation=on_gen)
    series = log.best_series
    assert all(b >= a for a, b in zip(series, series[1:]))
    for prev, nxt in zip(snapshots, snapshots[1:]):
        elites = sorted(prev, key=lambda t: (-t[2], t[0]))[:2]
        nxt_ids = {i: (g, f) for i, g, f in nxt}
        for i, g, f in elites:
            assert nxt_ids[i] == (g, f)
    assert best.fitness == max(series)


def test_full_search_determinism(table, tmp_path):
    outs = []
    for run in range(2):
        _, log = evolve(table, mock_fitness, GAConfig(population=8, generations=6), seed=9)
        path = tmp_path / f"log{run}.csv"
        write_search_csv(log, table, path)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.reader(outs[0].decode().splitlines()))
    assert rows[0][:2] == ["generation", "id"] and rows[0][-1] == "fitness"
    assert len(rows) == 1 + 8 * 6


def test_memoization_skips_repeat_evaluations(table):
    calls = []

    def counting(g):
        calls.append(json.dumps(g, sort_keys=True))
        return mock_fitness(g)

    evolve(table, counting, GAConfig(population=8, generations=8), seed=1)
    assert len(calls) == len(set(calls))


def test_checkpoint_resume_matches_uninterrupted(table, tmp_path):
    cfg = GAConfig(population=6, generations=6)
    _, full = evolve(table, mock_fitness, cfg, seed=4)

    ckpt = tmp_path / "ck.json"

    class Stop(Exception):
        pass

    def crash(stats, _pop):
        if stats.generation == 3:
            raise Stop

    with pytest.raises(Stop):
        evolve(table, mock_fitness, cfg, seed=4, checkpoint_path=ckpt, on_generation=crash)
    state = json.loads(ckpt.read_text())
    assert state["generation"] == 2
    _, resumed = evolve(table, mock_fitness, cfg, seed=4, checkpoint_path=ckpt)
    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]  # noqa: E731
    assert strip(resumed.records) == strip(full.records)
    assert resumed.best_series == full.best_series


def test_timing_csv(table, tmp_path):
    _, log = evolve(table, mock_fitness, GAConfig(population=3, generations=2), seed=0)
    write_timing_csv(log, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("generation,id,wall_time_s")


def test_config_validation():
    for bad in (GAConfig(population=0), GAConfig(crossover_rate=1.5), GAConfig(elite=30), GAConfig(tournament_k=0)):
        with pytest.raises(ValueError):
            bad.validate()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_proxy_fitness_memo_and_failure_path(digits_split):
    train, val, proxy = digits_split
    small, vsmall = proxy.subset(np.arange(120)), val.subset(np.arange(60))
    table = GeneTable.load()
    genome = table.encode(REFERENCE_DIGITS)
    fit = ProxyFitness(table, small, vsmall, (8, 8, 8, 10), epochs=1, seed=0)
    a, b = fit(genome), fit(genome)
    assert a == b and 0.0 <= a <= 1.0

    # an injected table whose learning rate is absurd drives training to non-finite values
    raw = table.to_dict()
    for g in raw["genes"]:
        if g["name"] == "lr":
            g["options"] = [1e30]
        if g["name"] == "grad_clip":
            g["options"] = [None]
    wild = GeneTable.from_dict(raw)
    wild_genome = dict(genome, lr=0, grad_clip=0)
    assert ProxyFitness(wild, small, vsmall, (8, 8, 8, 10), epochs=2, seed=0)(wild_genome) == 0.0
