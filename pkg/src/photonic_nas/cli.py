"""Command-line entry point.

Every command takes ``--seed``, ``--out`` and an optional JSON ``--config``;
explicit flags override config values. Artifacts other than ``manifest.json``
are deterministic for a fixed config, seed and dataset.

Exit codes: 0 ok, 2 usage/config, 3 data, 4 runtime/numerical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import find_digits, find_mnist, load_digits, load_mnist_idx, proxy_subset, split_and_subset
from .errors import FormatError, PhotonicNASError
from .genome import GeneTable, GenomeError

log = logging.getLogger("photonic_nas")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DATASETS = {"digits": {"d": 8, "proxy_size": 1000}, "mnist": {"d": 16, "proxy_size": 5000}}

COMMON = {
    "dataset": "digits",
    "data_dir": None,
    "gene_table": None,
    "workers": 1,
    "out": "out",
    "val_fraction": 0.2,
    "d": None,
    "seed": None,
}

DEFAULTS = {
    "search": {
        "pop": 20, "gens": 30, "crossover_rate": 0.75, "mutation_rate": 0.20, "elite": 2, "tournament_k": 3,
        "proxy_epochs": 5, "proxy_size": None, "resume": True,
    },
    "train": {"genome": None, "epochs": 100},
    "estimate-hw": {
        "checkpoint": None, "modes": None, "photons": None, "eta": 0.45, "layer_time_ms": 1.0, "k_det_ms": 0.0125,
        "latency_ms": 0.8, "path_length_m": 0.03, "mc_iterations": 1000, "classical_ms": None,
        "measure_classical": False,
    },
    "analyze": {"checkpoint": None},
    "correlate-epochs": {"n_arch": 24, "epochs": 20, "proxy_size": None},
    "baseline": {"genome": None, "seeds": [0, 1, 2], "epochs": 100},
}


class UsageError(Exception):
    pass


class MissingDataError(Exception):
    pass


# configuration -----------------------------------------------------------------


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _rate(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return value


def build_parser():
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values (flags override it)")
    common.add_argument("--seed", type=int, default=S, help="master seed (mandatory)")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--dataset", choices=sorted(DATASETS), default=S)
    common.add_argument("--data-dir", dest="data_dir", default=S,
                        help="dataset directory (else $PHOTONIC_NAS_DATA_DIR, else bundled Digits)")
    common.add_argument("--gene-table", dest="gene_table", default=S, help="JSON gene table")
    common.add_argument("--workers", type=_positive_int, default=S)
    common.add_argument("--val-fraction", dest="val_fraction", type=float, default=S)
    common.add_argument("--d", type=_positive_int, default=S, help="PCA/photonic input size")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="photonic-nas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", parents=[common], help="run the genetic architecture search")
    p.add_argument("--pop", type=_positive_int, default=S)
    p.add_argument("--gens", type=_positive_int, default=S)
    p.add_argument("--crossover-rate", dest="crossover_rate", type=_rate, default=S)
    p.add_argument("--mutation-rate", dest="mutation_rate", type=_rate, default=S)
    p.add_argument("--elite", type=_nonneg_int, default=S)
    p.add_argument("--tournament-k", dest="tournament_k", type=_positive_int, default=S)
    p.add_argument("--proxy-epochs", dest="proxy_epochs", type=_positive_int, default=S)
    p.add_argument("--proxy-size", dest="proxy_size", type=_positive_int, default=S)
    p.add_argument("--no-resume", dest="resume", action="store_false", default=S)

    p = sub.add_parser("train", parents=[common], help="fully train one genome")
    p.add_argument("--genome", default=S, help="genome JSON (best_genome.json or a gene->value map)")
    p.add_argument("--epochs", type=_nonneg_int, default=S)

    p = sub.add_parser("estimate-hw", parents=[common], help="photonic execution-time estimate")
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--modes", type=_positive_int, default=S)
    p.add_argument("--photons", type=_nonneg_int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--layer-time-ms", dest="layer_time_ms", type=float, default=S)
    p.add_argument("--k-det-ms", dest="k_det_ms", type=float, default=S)
    p.add_argument("--latency-ms", dest="latency_ms", type=float, default=S)
    p.add_argument("--path-length-m", dest="path_length_m", type=float, default=S)
    p.add_argument("--mc-iterations", dest="mc_iterations", type=_positive_int, default=S)
    p.add_argument("--classical-ms", dest="classical_ms", type=float, default=S)
    p.add_argument("--measure-classical", dest="measure_classical", action="store_true", default=S)

    p = sub.add_parser("analyze", parents=[common], help="quantum-contribution metrics of a checkpoint")
    p.add_argument("--checkpoint", default=S)

    p = sub.add_parser("correlate-epochs", parents=[common], help="proxy-epoch correlation scan")
    p.add_argument("--n-arch", dest="n_arch", type=_positive_int, default=S)
    p.add_argument("--epochs", type=_positive_int, default=S)
    p.add_argument("--proxy-size", dest="proxy_size", type=_positive_int, default=S)

    p = sub.add_parser("baseline", parents=[common], help="hybrid vs parameter-matched classical baseline")
    p.add_argument("--genome", default=S)
    p.add_argument("--seeds", type=int, nargs="+", default=S)
    p.add_argument("--epochs", type=_positive_int, default=S)
    return parser


def resolve_config(args):
    """defaults < config file < flags; paths made absolute."""
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[args.command])
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
    if args.config:
        path = Path(args.config)
        try:
            from_file = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(from_file, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        from_file = {k.replace("-", "_"): v for k, v in from_file.items()}
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        cfg.update(from_file)
    cfg.update(flags)
    cfg["command"] = args.command
    if cfg["seed"] is None:
        raise UsageError("--seed is required (there is no clock-based default)")
    if cfg["dataset"] not in DATASETS:
        raise UsageError(f"unknown dataset {cfg['dataset']!r}")
    if not 0.0 < float(cfg["val_fraction"]) < 1.0:
        raise UsageError("--val-fraction must lie in (0, 1)")
    for key in ("data_dir", "gene_table", "out", "genome", "checkpoint"):
        if cfg.get(key) is not None:
            cfg[key] = str(Path(cfg[key]).expanduser().resolve())
    if args.command == "search":
        if int(cfg["pop"]) < 1 or int(cfg["gens"]) < 1:
            raise UsageError("--pop and --gens must be at least 1")
        if int(cfg["elite"]) > int(cfg["pop"]):
            raise UsageError("--elite cannot exceed --pop")
    return cfg


# data ---------------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_data(cfg):
    """(train, val, dims, checksums) for the configured dataset."""
    name = cfg["dataset"]
    d = int(cfg["d"] or DATASETS[name]["d"])
    data_dir = cfg["data_dir"]
    if data_dir is not None and not Path(data_dir).is_dir():
        raise MissingDataError(f"data directory does not exist: {data_dir}")
    if name == "digits":
        path = find_digits(data_dir)
        if path is None:
            raise MissingDataError(f"Digits data not found under {data_dir or '$PHOTONIC_NAS_DATA_DIR'}")
        ds = load_digits(path)
        train, val, _ = split_and_subset(ds, float(cfg["val_fraction"]), 0, int(cfg["seed"]))
        sums = {str(path): _sha256(path)}
    else:
        paths = find_mnist(data_dir)
        if paths is None:
            raise MissingDataError(f"MNIST IDX files not found under {data_dir or '$PHOTONIC_NAS_DATA_DIR'}")
        train = load_mnist_idx(paths[0], paths[1], "train")
        val = load_mnist_idx(paths[2], paths[3], "val")
        sums = {str(p): _sha256(p) for p in paths}
    dims = (train.images.shape[1], train.images.shape[2], d, 10)
    return train, val, dims, sums


def _proxy(cfg, train):
    size = cfg.get("proxy_size") or DATASETS[cfg["dataset"]]["proxy_size"]
    if size > len(train):
        raise UsageError(f"proxy size {size} exceeds the {len(train)} training samples")
    return proxy_subset(train, int(size), int(cfg["seed"]))


def load_table(cfg):
    try:
        return GeneTable.load(cfg["gene_table"])
    except FileNotFoundError:
        raise UsageError(f"gene table not found: {cfg['gene_table']}") from None
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid gene table: {exc}") from None


def load_genome(table, path):
    """Accepts ``best_genome.json`` ({"indices": ...}) or a plain gene -> value map."""
    if path is None:
        raise UsageError("--genome is required")
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"genome file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"genome file {path} is not valid JSON: {exc}") from None
    if "indices" in raw:
        table.validate(raw["indices"])
        return dict(raw["indices"])
    values = raw.get("genes", raw)
    return table.encode(values)


# output helpers -------------------------------------------------------------------


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_history(history, path):
    _write_rows(path, ["epoch", "train_loss", "val_loss", "val_acc"],
                [(r.epoch, r.train_loss, r.val_loss, r.val_acc) for r in history.records])


def write_manifest(out, cfg, checksums, artifacts, started):
    manifest = {
        "tool": "photonic-nas",
        "version": __version__,
        "config": cfg,
        "dataset_sha256": checksums,
        "artifacts": sorted(str(a) for a in artifacts),
        "started_unix": started,
        "wall_seconds": time.time() - started,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    os.replace(tmp, out / "manifest.json")


# commands -------------------------------------------------------------------------


def cmd_search(cfg, out):
    from .search import GAConfig, ProxyFitness, evolve, summary, write_search_csv, write_timing_csv

    table = load_table(cfg)
    train, val, dims, sums = load_data(cfg)
    proxy = _proxy(cfg, train)
    ga = GAConfig(int(cfg["pop"]), int(cfg["gens"]), float(cfg["crossover_rate"]), float(cfg["mutation_rate"]),
                  int(cfg["elite"]), int(cfg["tournament_k"]))
    fitness = ProxyFitness(table, proxy, val, dims, int(cfg["proxy_epochs"]), int(cfg["seed"]))
    ckpt = out / "search_checkpoint.json"
    if not cfg["resume"] and ckpt.exists():
        ckpt.unlink()

    def report(stats, _population):
        print(f"generation {stats.generation}: best {stats.best:.4f} mean {stats.mean:.4f}", flush=True)

    best, search_log = evolve(table, fitness, ga, int(cfg["seed"]), int(cfg["workers"]), ckpt, report)
    write_search_csv(search_log, table, out / "search_log.csv")
    write_timing_csv(search_log, out / "search_timing.csv")
    _dump_json({"fitness": best.fitness, "id": best.id, "genes": table.decode(best.genome), "indices": best.genome},
               out / "best_genome.json")
    _dump_json(summary(best, search_log, table), out / "search_summary.json")
    print(f"best fitness {best.fitness:.4f} (individual {best.id})")
    return sums, ["search_log.csv", "search_timing.csv", "best_genome.json", "search_summary.json",
                  "search_checkpoint.json"]


def cmd_train(cfg, out):
    from .model import TrainBudget, build_model, count_parameters, save_checkpoint, train_model

    table = load_table(cfg)
    genome = load_genome(table, cfg["genome"])
    genes = table.decode(genome)
    train, val, dims, sums = load_data(cfg)
    model = build_model(genes, dims, int(cfg["seed"]))

    def report(rec):
        print(f"epoch {rec.epoch}: train {rec.train_loss:.4f} val {rec.val_loss:.4f} acc {rec.val_acc:.4f}",
              flush=True)

    model, history = train_model(model, train, val, TrainBudget.from_genes(genes, int(cfg["epochs"])),
                                 int(cfg["seed"]), report)
    save_checkpoint(model, out / "checkpoint.npz")
    write_history(history, out / "history.csv")
    _dump_json({"best_val_acc": history.best_val_acc, "best_epoch": history.best_epoch,
                "parameters": count_parameters(model), "genes": genes}, out / "train_summary.json")
    if history.records:
        print(f"best val acc {history.best_val_acc:.4f} at epoch {history.best_epoch}")
    return sums, ["checkpoint.npz", "history.csv", "train_summary.json"]


def cmd_estimate_hw(cfg, out):
    from .model import measure_classical_ms
    from .timing import HardwareConstants, estimate, estimate_total

    model = None
    sums = {}
    if cfg["checkpoint"]:
        model = _load_ckpt(cfg["checkpoint"])
        sums[cfg["checkpoint"]] = _sha256(cfg["checkpoint"])
        modes = model.spec.d + 1
        photons = math.ceil(modes / 2)
    else:
        modes, photons = cfg["modes"], cfg["photons"]
        if modes is None or photons is None:
            raise UsageError("estimate-hw needs --checkpoint or both --modes and --photons")
    try:
        constants = HardwareConstants(
            layer_time_ms=float(cfg["layer_time_ms"]), eta=float(cfg["eta"]), k_det_ms=float(cfg["k_det_ms"]),
            latency_ms=float(cfg["latency_ms"]), path_length_m=float(cfg["path_length_m"]),
            mc_iterations=int(cfg["mc_iterations"]),
        )
        timing = estimate(int(modes), int(photons), constants, np.random.default_rng(int(cfg["seed"])))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    classical = cfg["classical_ms"]
    if cfg["measure_classical"]:
        if model is None:
            raise UsageError("--measure-classical needs --checkpoint")
        image = np.zeros((model.spec.height, model.spec.width))
        classical = measure_classical_ms(model, image)
    if classical is not None:
        estimate_total(timing, float(classical))
    report = timing.to_dict()
    _dump_json(report, out / "timing.json")
    q = timing.quantum
    print(f"T_prep {timing.t_prep_ms:.4f} ms  T_det {timing.t_det_ms:.4f} ms  "
          f"quantum {q.mean:.3f} +/- {q.std:.3f} ms (95% CI {q.ci_low:.3f}..{q.ci_high:.3f})")
    if timing.total is not None:
        print(f"total {timing.total.mean:.3f} ms (classical {timing.classical_ms:.3f} ms)")
    return sums, ["timing.json"]


def _load_ckpt(path):
    from .model import load_checkpoint

    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None


def cmd_analyze(cfg, out):
    from .analysis import contribution_report

    if not cfg["checkpoint"]:
        raise UsageError("analyze needs --checkpoint")
    model = _load_ckpt(cfg["checkpoint"])
    cfg = dict(cfg, d=model.spec.d)
    _, val, _, sums = load_data(cfg)
    report = contribution_report(model, val)
    _dump_json(report.to_dict(), out / "contribution.json")
    K = len(report.pair_matrix)
    _write_rows(out / "interclass_cosine.csv", ["class_a", "class_b", "cosine"],
                [(i, j, report.pair_matrix[i][j]) for i in range(K) for j in range(i + 1, K)])
    print(f"inter-class cosine {report.interclass_mean:.4f} +/- {report.interclass_std:.4f}; "
          f"orthogonality {report.orthogonality_mean:+.4f} +/- {report.orthogonality_std:.4f}")
    return sums, ["contribution.json", "interclass_cosine.csv"]


def cmd_correlate_epochs(cfg, out):
    from .analysis import epoch_correlation_scan

    table = load_table(cfg)
    train, val, dims, sums = load_data(cfg)
    proxy = _proxy(cfg, train)
    scan = epoch_correlation_scan(table, proxy, val, dims, int(cfg["n_arch"]), int(cfg["epochs"]),
                                  int(cfg["seed"]), int(cfg["workers"]))
    _write_rows(out / "epoch_correlation.csv", ["epoch", "pearson", "spearman"], scan.rows())
    _write_rows(out / "epoch_accuracy.csv", ["arch", *[f"epoch_{e}" for e in scan.epochs]],
                [(i, *row) for i, row in enumerate(scan.accuracies)])
    _dump_json({"threshold_epoch": scan.threshold_epoch, "stable_epoch": scan.stable_epoch,
                "n_arch": len(scan.genomes), "genomes": [table.decode(g) for g in scan.genomes]},
               out / "correlation_summary.json")
    print(f"threshold epoch {scan.threshold_epoch}, stable from {scan.stable_epoch}")
    return sums, ["epoch_correlation.csv", "epoch_accuracy.csv", "correlation_summary.json"]


def cmd_baseline(cfg, out):
    from .analysis import compare_baseline

    table = load_table(cfg)
    genes = table.decode(load_genome(table, cfg["genome"]))
    train, val, dims, sums = load_data(cfg)
    seeds = [int(s) for s in cfg["seeds"]]
    result = compare_baseline(genes, train, val, dims, seeds, int(cfg["epochs"]))
    artifacts = ["baseline_summary.json", "baseline_curves.csv"]
    for kind, histories in (("hybrid", result.hybrid_histories), ("baseline", result.baseline_histories)):
        ok_seeds = [s for s in seeds if not any(f["seed"] == s and f["kind"] == kind for f in result.failures)]
        for seed, history in zip(ok_seeds, histories):
            name = f"history_{kind}_seed{seed}.csv"
            write_history(history, out / name)
            artifacts.append(name)
    rows = []
    for kind in ("hybrid", "baseline"):
        curves = result.hybrid_curves if kind == "hybrid" else result.baseline_curves
        if curves:
            mean, std = result.curve_stats(kind)
            rows += [(kind, e + 1, float(m), float(s)) for e, (m, s) in enumerate(zip(mean, std))]
    _write_rows(out / "baseline_curves.csv", ["model", "epoch", "val_acc_mean", "val_acc_std"], rows)
    summ = result.summary()
    _dump_json(summ, out / "baseline_summary.json")
    print(f"delta {summ['delta_pp']:+.2f} pp (std {summ['delta_pp_std']}) over seeds {seeds}")
    if result.failures and not result.hybrid_curves and not result.baseline_curves:
        raise PhotonicNASError("every training run failed")
    return sums, artifacts


COMMANDS = {
    "search": cmd_search,
    "train": cmd_train,
    "estimate-hw": cmd_estimate_hw,
    "analyze": cmd_analyze,
    "correlate-epochs": cmd_correlate_epochs,
    "baseline": cmd_baseline,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        sums, artifacts = COMMANDS[args.command](cfg, out)
        write_manifest(out, cfg, sums, [out / a for a in artifacts], started)
    except (UsageError, GenomeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PhotonicNASError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
