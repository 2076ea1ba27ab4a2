"""Gene table and genome encoding.

A genome maps each gene name to an index into that gene's ordered option list.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

DEFAULT_TABLE = "gene_table.json"

REFERENCE_DIGITS = {
    "batch_size": 16,
    "pre_depth": 0,
    "pre_width": 16,
    "pre_activation": "silu",
    "pre_bn": False,
    "pre_dropout": 0.2,
    "phase_activation": "tanh",
    "phase_scale_init": 1.5,
    "phase_bias": False,
    "q_output_size": 16,
    "clf_depth": 3,
    "clf_width": 64,
    "clf_activation": "silu",
    "clf_bn": True,
    "clf_dropout": 0.0,
    "lr": 8e-3,
    "lr_schedule": "cosine",
    "weight_decay": 1e-4,
    "grad_clip": 1.0,
}

REFERENCE_MNIST = {
    "batch_size": 16,
    "pre_depth": 0,
    "pre_width": 128,
    "pre_activation": "tanh",
    "pre_bn": True,
    "pre_dropout": 0.2,
    "phase_activation": "clamp",
    "phase_scale_init": 1.5,
    "phase_bias": True,
    "q_output_size": 64,
    "clf_depth": 2,
    "clf_width": 64,
    "clf_activation": "silu",
    "clf_bn": True,
    "clf_dropout": 0.3,
    "lr": 5e-4,
    "lr_schedule": "onecycle",
    "weight_decay": 0.0,
    "grad_clip": 1.0,
}


class GenomeError(ValueError):
    def __init__(self, message, gene=None):
        super().__init__(message)
        self.gene = gene


@dataclass(frozen=True)
class GeneSpec:
    name: str
    options: tuple
    group: int


class GeneTable:
    def __init__(self, genes, group_names=None):
        self.genes = list(genes)
        self.group_names = dict(group_names or {})
        names = [g.name for g in self.genes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate gene names in table")
        for g in self.genes:
            if not g.options:
                raise ValueError(f"gene {g.name!r} has an empty option list")
        self.by_name = {g.name: g for g in self.genes}
        self.groups = {}
        for g in self.genes:
            self.groups.setdefault(g.group, []).append(g.name)
        self.groups = dict(sorted(self.groups.items()))

    @classmethod
    def from_dict(cls, raw):
        genes = [GeneSpec(g["name"], tuple(g["options"]), int(g["group"])) for g in raw["genes"]]
        groups = {int(k): v for k, v in raw.get("groups", {}).items()}
        return cls(genes, groups)

    @classmethod
    def load(cls, path=None):
        if path is None:
            text = resources.files("photonic_nas").joinpath("configs").joinpath(DEFAULT_TABLE).read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {
            "groups": {str(k): v for k, v in self.group_names.items()},
            "genes": [{"name": g.name, "group": g.group, "options": list(g.options)} for g in self.genes],
        }

    @property
    def names(self):
        return [g.name for g in self.genes]

    def __len__(self):
        return len(self.genes)

    def search_space_size(self):
        return math.prod(len(g.options) for g in self.genes)

    def validate(self, genome):
        for g in self.genes:
            if g.name not in genome:
                raise GenomeError(f"genome is missing gene {g.name!r}", g.name)
            idx = genome[g.name]
            if not isinstance(idx, int) or not 0 <= idx < len(g.options):
                raise GenomeError(f"gene {g.name!r} index {idx!r} outside its {len(g.options)} options", g.name)
        extra = set(genome) - set(self.by_name)
        if extra:
            name = sorted(extra)[0]
            raise GenomeError(f"genome carries unknown gene {name!r}", name)

    def decode(self, genome):
        self.validate(genome)
        return {g.name: g.options[genome[g.name]] for g in self.genes}

    def encode(self, values):
        genome = {}
        for g in self.genes:
            if g.name not in values:
                raise GenomeError(f"values are missing gene {g.name!r}", g.name)
            matches = [i for i, opt in enumerate(g.options) if _same(opt, values[g.name])]
            if not matches:
                raise GenomeError(f"value {values[g.name]!r} is not an option of gene {g.name!r}", g.name)
            genome[g.name] = matches[0]
        return genome


def _same(a, b):
    if isinstance(a, bool) or isinstance(b, bool) or a is None or b is None:
        return a is b or (a == b and type(a) is type(b))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0)
    return a == b


def genome_key(genome):
    return json.dumps(genome, sort_keys=True, separators=(",", ":"))


def genome_hash(genome, *salt):
    payload = json.dumps([genome_key(genome), *salt], separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def derived_seed(genome, seed):
    """Training seed tied to (search seed, genome) so re-evaluations reproduce."""
    return int(genome_hash(genome, int(seed))[:15], 16)
