"""Quantum-contribution metrics, baseline comparison and proxy-epoch correlation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CoverageError, InsufficientDataError, PhotonicNASError, UndefinedCorrelationError
from .genome import derived_seed, genome_key

log = logging.getLogger(__name__)


def _cosine_matrix(vectors):
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms == 0, 1.0, norms)
    return unit @ unit.T


def interclass_cosine_from_outputs(outputs, labels, n_classes=None):
    """Cosine similarity between per-class mean output vectors over all class pairs."""
    labels = np.asarray(labels)
    classes = np.arange(n_classes) if n_classes is not None else np.unique(labels)
    means = []
    for k in classes:
        members = outputs[labels == k]
        if len(members) == 0:
            raise CoverageError(f"class {k} has no samples")
        means.append(members.mean(axis=0))
    C = _cosine_matrix(np.asarray(means))
    iu = np.triu_indices(len(classes), k=1)
    pairs = C[iu]
    return float(pairs.mean()), float(pairs.std()), C


def padded_cosines(a, b):
    """Per-row cosine after zero-padding the narrower array; rows with a zero vector are dropped."""
    width = max(a.shape[1], b.shape[1])
    A = np.zeros((len(a), width))
    Bm = np.zeros((len(b), width))
    A[:, : a.shape[1]] = a
    Bm[:, : b.shape[1]] = b
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(Bm, axis=1)
    keep = (na > 0) & (nb > 0)
    cos = (A[keep] * Bm[keep]).sum(axis=1) / (na[keep] * nb[keep])
    return cos, int((~keep).sum())


@dataclass
class ContributionReport:
    interclass_mean: float
    interclass_std: float
    orthogonality_mean: float
    orthogonality_std: float
    n_classes: int
    n_samples: int
    excluded_zero_norm: int = 0
    pair_matrix: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return asdict(self)


def interclass_cosine(model, ds):
    _, q = model.features(ds.images)
    return interclass_cosine_from_outputs(q, ds.labels, model.spec.n_classes)


def feature_orthogonality(model, ds):
    h, q = model.features(ds.images)
    cos, excluded = padded_cosines(q, h)
    return float(cos.mean()), float(cos.std()), excluded


def contribution_report(model, ds):
    h, q = model.features(ds.images)
    mean, std, C = interclass_cosine_from_outputs(q, ds.labels, model.spec.n_classes)
    cos, excluded = padded_cosines(q, h)
    return ContributionReport(
        interclass_mean=mean,
        interclass_std=std,
        orthogonality_mean=float(cos.mean()),
        orthogonality_std=float(cos.std()),
        n_classes=model.spec.n_classes,
        n_samples=len(ds),
        excluded_zero_norm=excluded,
        pair_matrix=C.tolist(),
    )


# correlation -------------------------------------------------------------------


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("correlation needs two 1-d series of equal length")
    if len(x) < 3:
        raise InsufficientDataError("correlation needs at least 3 points")
    return x, y


def pearson(x, y):
    x, y = _check_pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def average_ranks(x):
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    x, y = _check_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass
class CorrelationScan:
    epochs: list
    pearson: list
    spearman: list
    threshold: float = 0.8
    accuracies: list = field(default_factory=list, repr=False)  # [arch][epoch]
    genomes: list = field(default_factory=list, repr=False)

    @property
    def threshold_epoch(self):
        for e, r, rho in zip(self.epochs, self.pearson, self.spearman):
            if r > self.threshold and rho > self.threshold:
                return e
        return None

    @property
    def stable_epoch(self):
        """First epoch from which both coefficients stay above the threshold."""
        stable = None
        for e, r, rho in zip(self.epochs, self.pearson, self.spearman):
            if r > self.threshold and rho > self.threshold:
                stable = e if stable is None else stable
            else:
                stable = None
        return stable

    def rows(self):
        return list(zip(self.epochs, self.pearson, self.spearman))


def correlation_table(acc, threshold=0.8):
    """Per-epoch correlation of accuracy@epoch with final accuracy; ``acc`` is (n_arch, epochs)."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 trained architectures, got {acc.shape[0]}")
    final = acc[:, -1]
    rs, rhos = [], []
    for e in range(acc.shape[1]):
        try:
            r = pearson(acc[:, e], final)
            rho = spearman(acc[:, e], final)
        except UndefinedCorrelationError:
            r = rho = float("nan")
        rs.append(r)
        rhos.append(rho)
    return CorrelationScan(list(range(1, acc.shape[1] + 1)), rs, rhos, threshold, acc.tolist())


def _train_curve(args):
    from .model import TrainBudget, build_model, train_model

    table, genome, proxy, val, dims, epochs, seed = args
    genes = table.decode(genome)
    model = build_model(genes, dims, seed)
    _, history = train_model(model, proxy, val, TrainBudget.from_genes(genes, epochs), seed)
    return history.val_acc


def epoch_correlation_scan(table, proxy, val, dims, n_arch=24, budget_epochs=20, seed=0, workers=1, max_draws=None):
    """Train random architectures and correlate every epoch's accuracy with the last one."""
    from concurrent.futures import ProcessPoolExecutor

    from .model import build_model
    from .search import random_genome

    rng = np.random.default_rng([seed, 7])
    genomes, seen = [], set()
    draws = 0
    max_draws = max_draws or 50 * n_arch
    while len(genomes) < n_arch and draws < max_draws:
        draws += 1
        g = random_genome(table, rng)
        if genome_key(g) in seen:
            continue
        try:
            build_model(table.decode(g), dims, 0)
        except PhotonicNASError:
            continue  # capacity/dimension rejections
        seen.add(genome_key(g))
        genomes.append(g)
    jobs = [(table, g, proxy, val, dims, budget_epochs, derived_seed(g, seed)) for g in genomes]
    curves, kept = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_curve, jobs))
    else:
        results = [_safe_curve(j) for j in jobs]
    for g, curve in zip(genomes, results):
        if curve is not None and len(curve) == budget_epochs:
            curves.append(curve)
            kept.append(g)
    scan = correlation_table(np.array(curves).reshape(len(curves), budget_epochs))
    scan.genomes = kept
    return scan


def _safe_curve(job):
    try:
        return _train_curve(job)
    except (PhotonicNASError, FloatingPointError) as exc:
        log.warning("architecture dropped from correlation scan: %s", exc)
        return None


# baseline comparison -------------------------------------------------------------


@dataclass
class BaselineComparison:
    seeds: list
    hybrid_curves: list  # per seed, list of val acc per epoch
    baseline_curves: list
    hybrid_histories: list = field(default_factory=list, repr=False)
    baseline_histories: list = field(default_factory=list, repr=False)
    hybrid_params: int = 0
    baseline_params: int = 0
    failures: list = field(default_factory=list)

    @staticmethod
    def _best(curves):
        return np.array([max(c) for c in curves]) if curves else np.array([])

    def summary(self):
        hb = self._best(self.hybrid_curves)
        bb = self._best(self.baseline_curves)
        delta = 100.0 * (hb.mean() - bb.mean()) if len(hb) and len(bb) else float("nan")
        n = min(len(hb), len(bb))
        per_seed = 100.0 * (hb[:n] - bb[:n])
        return {
            "seeds": self.seeds,
            "hybrid_best_mean": float(hb.mean()) if len(hb) else None,
            "hybrid_best_std": float(hb.std()) if len(hb) else None,
            "baseline_best_mean": float(bb.mean()) if len(bb) else None,
            "baseline_best_std": float(bb.std()) if len(bb) else None,
            "delta_pp": float(delta),
            "delta_pp_std": float(per_seed.std()) if n else None,
            "hybrid_params": self.hybrid_params,
            "baseline_params": self.baseline_params,
            "failures": self.failures,
        }

    def curve_stats(self, which):
        curves = np.array(self.hybrid_curves if which == "hybrid" else self.baseline_curves)
        return curves.mean(axis=0), curves.std(axis=0)


def compare_baseline(genes, train, val, dims, seeds=(0, 1, 2), epochs=100, target_param_count=None, builder=None):
    """Train the hybrid and its parameter-matched classical twin for every seed.

    ``builder(kind, seed)`` may replace the default model construction (used to
    compare two identical architectures).
    """
    from .model import TrainBudget, build_classical_baseline, build_model, count_parameters, train_model

    out = BaselineComparison(list(seeds), [], [])
    budget = TrainBudget.from_genes(genes, epochs)
    for seed in seeds:
        for kind in ("hybrid", "baseline"):
            try:
                if builder is not None:
                    model = builder(kind, seed)
                elif kind == "hybrid":
                    model = build_model(genes, dims, seed)
                else:
                    target = target_param_count or count_parameters(build_model(genes, dims, seed))
                    model = build_classical_baseline(genes, dims, target, seed)
                _, history = train_model(model, train, val, budget, seed)
            except (PhotonicNASError, FloatingPointError) as exc:
                out.failures.append({"seed": seed, "kind": kind, "error": str(exc)})
                continue
            if kind == "hybrid":
                out.hybrid_curves.append(history.val_acc)
                out.hybrid_histories.append(history)
                out.hybrid_params = count_parameters(model)
            else:
                out.baseline_curves.append(history.val_acc)
                out.baseline_histories.append(history)
                out.baseline_params = count_parameters(model)
    return out
