"""Hybrid photonic classifier assembled from a decoded genome.

Forward pass::

    raw image --conv frontend--> d  \
                                     concat -> Linear(2d, d) + SiLU -> pre-MLP -> phase encoder
    flatten -> standardize -> PCA -> BN1d /                                        |
                                                     classifier head <- pool <- photonic layer

The classical baseline swaps the phase encoder and photonic layer for a dense
block of matching output size.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .data import PCA, Standardizer
from .errors import DimensionError, FormatError, NonFiniteError, SizingError, StateError
from .optim import Adam, LrSchedule, clip_gradients
from .photonic import PhotonicCircuit, bucket_matrix, enumerate_fock, photonic_layer
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "photonic-nas-checkpoint/1"
PHASE_ACTIVATIONS = ("sigmoid", "tanh", "clamp")
MAX_INPUT_SIZE = 20


@dataclass
class ModelSpec:
    height: int
    width: int
    d: int
    n_classes: int
    genes: dict
    kind: str = "hybrid"  # or "baseline"
    baseline_hidden: int | None = None
    frontend_blocks: int = 2
    base_channels: int = 16
    kernel_size: int = 3
    basis_cap: int = 100_000

    def __post_init__(self):
        if self.d > MAX_INPUT_SIZE:
            raise DimensionError(f"input size d={self.d} exceeds the photonic layer limit of {MAX_INPUT_SIZE}")

    @property
    def q_out(self):
        q = self.genes["q_output_size"]
        return self.d if q is None else int(q)


def encode_phases(x, scale, bias, kind):
    """Map features to phases in [0, pi]: ``act(x * scale + bias) * pi``."""
    if kind not in PHASE_ACTIVATIONS:
        raise ValueError(f"unknown phase activation {kind!r}")
    u = x * scale
    if bias is not None:
        u = u + bias
    if kind == "sigmoid":
        a = u.sigmoid()
    elif kind == "tanh":
        a = (u.tanh() + 1.0) * 0.5
    else:
        a = u.clamp(0.0, 1.0)
    return a * math.pi


class PhaseEncoder(nn.Module):
    def __init__(self, d, scale_init, use_bias, kind):
        super().__init__()
        self.kind = kind
        self.params["scale"] = Tensor(np.full(d, float(scale_init)), True)
        if use_bias:
            self.params["bias"] = Tensor(np.zeros(d), True)

    def forward(self, x):
        return encode_phases(x, self.params["scale"], self.params.get("bias"), self.kind)


class PhotonicLayer(nn.Module):
    """Photonic circuit over ``d + 1`` modes followed by Fock-basis pooling."""

    def __init__(self, d, q_out, rng, basis_cap=100_000):
        super().__init__()
        self.circuit = PhotonicCircuit.for_input_size(d, rng)
        self.basis = enumerate_fock(self.circuit.modes, self.circuit.photons, cap=basis_cap)
        self.pool = bucket_matrix(len(self.basis), q_out)
        self.params["mesh1"] = Tensor(self.circuit.mesh1.copy(), True)
        self.params["mesh2"] = Tensor(self.circuit.mesh2.copy(), True)

    def distribution(self, theta):
        return photonic_layer(theta, self.params["mesh1"], self.params["mesh2"], self.circuit, self.basis)

    def forward(self, theta):
        return self.distribution(theta) @ self.pool


def _mlp_block(in_f, out_f, act, bn, p, rng, dropout_rng, bn_last):
    layers = [nn.Linear(in_f, out_f, rng), nn.Activation(act)]
    if bn_last:
        layers.append(nn.Dropout(p, dropout_rng))
        if bn:
            layers.append(nn.BatchNorm(out_f))
    else:
        if bn:
            layers.append(nn.BatchNorm(out_f))
        layers.append(nn.Dropout(p, dropout_rng))
    return layers


class PhotonicModel(nn.Module):
    def __init__(self, spec, seed):
        super().__init__()
        self.spec = spec
        self.seed = int(seed)
        g = spec.genes
        d, C = spec.d, spec.base_channels
        rng = np.random.default_rng([self.seed, 0])
        self.dropout_rng = np.random.default_rng([self.seed, 1])

        convs = []
        in_ch = 1
        for block in range(spec.frontend_blocks):
            out_ch = C * 2**block
            convs += [nn.Conv2d(in_ch, out_ch, rng, spec.kernel_size, spec.kernel_size // 2), nn.Activation("relu"),
                      nn.BatchNorm(out_ch)]
            convs.append(_MaxPool())
            in_ch = out_ch
        self.children["frontend"] = nn.Sequential(*convs)
        self.children["frontend_proj"] = nn.Linear(in_ch, d, rng)
        self.children["pca_bn"] = nn.BatchNorm(d)
        self.children["fusion"] = nn.Linear(2 * d, d, rng)

        pre = []
        width = d
        for _ in range(int(g["pre_depth"])):
            pre += _mlp_block(width, int(g["pre_width"]), g["pre_activation"], g["pre_bn"], g["pre_dropout"], rng,
                              self.dropout_rng, bn_last=True)
            width = int(g["pre_width"])
        pre.append(nn.Linear(width, d, rng))
        self.children["pre"] = nn.Sequential(*pre)

        q_out = spec.q_out
        if spec.kind == "hybrid":
            self.children["encoder"] = PhaseEncoder(d, g["phase_scale_init"], g["phase_bias"], g["phase_activation"])
            self.children["quantum"] = PhotonicLayer(d, q_out, rng, spec.basis_cap)
        elif spec.kind == "baseline":
            if spec.baseline_hidden:
                block = [nn.Linear(d, spec.baseline_hidden, rng), nn.Activation("silu"),
                         nn.Linear(spec.baseline_hidden, q_out, rng), nn.Activation("silu")]
            else:
                block = [nn.Linear(d, q_out, rng), nn.Activation("silu")]
            self.children["replacement"] = nn.Sequential(*block)
        else:
            raise ValueError(f"unknown model kind {spec.kind!r}")

        head = []
        width = q_out
        for _ in range(int(g["clf_depth"]) - 1):
            head += _mlp_block(width, int(g["clf_width"]), g["clf_activation"], g["clf_bn"], g["clf_dropout"], rng,
                               self.dropout_rng, bn_last=False)
            width = int(g["clf_width"])
        head.append(nn.Linear(width, spec.n_classes, rng))
        self.children["head"] = nn.Sequential(*head)

        self.standardizer = Standardizer()
        self.pca = PCA(d)
        self.metadata = {}

    # preprocessing ---------------------------------------------------------

    @property
    def fitted(self):
        return self.standardizer.fitted and self.pca.fitted

    def fit_preprocessing(self, images):
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        self.standardizer.fit(flat)
        self.pca.fit(self.standardizer.transform(flat))

    def reseed_dropout(self, seed):
        self.dropout_rng = np.random.default_rng(seed)
        for module in _walk(self):
            if isinstance(module, nn.Dropout):
                module.rng = self.dropout_rng

    # forward ---------------------------------------------------------------

    def _check_input(self, images):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or images.shape[1:] != (self.spec.height, self.spec.width):
            raise DimensionError(
                f"expected images of shape (B, {self.spec.height}, {self.spec.width}), got {images.shape}"
            )
        if not self.fitted:
            raise StateError("standardizer/PCA must be fitted before the forward pass")
        return images

    def pre_quantum(self, images):
        """Features entering the phase encoder (B, d)."""
        images = self._check_input(images)
        x = self.children["frontend"](Tensor(images[:, None, :, :]))
        x = self.children["frontend_proj"](T.adaptive_avg_pool1x1(x))
        flat = images.reshape(len(images), -1)
        p = Tensor(self.pca.transform(self.standardizer.transform(flat)))
        p = self.children["pca_bn"](p)
        z = self.children["fusion"](T.concat([x, p], axis=1)).silu()
        return self.children["pre"](z)

    def quantum_features(self, h):
        if self.spec.kind == "hybrid":
            return self.children["quantum"](self.children["encoder"](h))
        return self.children["replacement"](h)

    def forward(self, images):
        h = self.pre_quantum(images)
        return self.children["head"](self.quantum_features(h))

    def predict_logits(self, images, batch_size=512):
        was = self.training
        self.eval()
        try:
            out = [self.forward(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        finally:
            self.train(was)
        return np.concatenate(out) if out else np.zeros((0, self.spec.n_classes))

    def features(self, images, batch_size=512):
        """Eval-mode (pre-quantum features, quantum-layer outputs) as arrays."""
        was = self.training
        self.eval()
        hs, qs = [], []
        try:
            for i in range(0, len(images), batch_size):
                h = self.pre_quantum(images[i : i + batch_size])
                hs.append(h.data)
                qs.append(self.quantum_features(h).data)
        finally:
            self.train(was)
        return np.concatenate(hs), np.concatenate(qs)

    # state -----------------------------------------------------------------

    def state_arrays(self):
        out = {f"param/{k}": p.data for k, p in self.named_parameters()}
        out.update({f"buffer/{k}": b for k, b in self.named_buffers()})
        if self.standardizer.fitted:
            out.update({f"prep/standardizer/{k}": v for k, v in self.standardizer.state().items()})
        if self.pca.fitted:
            out.update({f"prep/pca/{k}": v for k, v in self.pca.state().items()})
        return out

    def snapshot(self):
        return {k: np.array(v, copy=True) for k, v in self.state_arrays().items()}

    def load_arrays(self, arrays):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for key, value in arrays.items():
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name].data[...] = value
            elif kind == "buffer":
                buffers[name][...] = value
        std = {k.rsplit("/", 1)[1]: v for k, v in arrays.items() if k.startswith("prep/standardizer/")}
        if std:
            self.standardizer = Standardizer.from_state(std)
        pca = {k.rsplit("/", 1)[1]: v for k, v in arrays.items() if k.startswith("prep/pca/")}
        if pca:
            self.pca = PCA.from_state(pca)


class _MaxPool(nn.Module):
    def forward(self, x):
        return T.max_pool2x2(x)


def _walk(module):
    yield module
    for child in module.children.values():
        yield from _walk(child)


def build_model(genes, dataset_dims, seed, kind="hybrid", baseline_hidden=None, basis_cap=100_000):
    """Build a model from decoded gene values; ``dataset_dims = (H, W, d, K)``."""
    H, W, d, K = dataset_dims
    spec = ModelSpec(H, W, d, K, dict(genes), kind=kind, baseline_hidden=baseline_hidden, basis_cap=basis_cap)
    return PhotonicModel(spec, seed)


def count_parameters(model):
    return nn.count_parameters(model)


def _replacement_count(d, q, hidden):
    if not hidden:
        return d * q + q
    return d * hidden + hidden + hidden * q + q


def build_classical_baseline(genes, dataset_dims, target_param_count, seed=0, tolerance=0.02, max_hidden=4096):
    """Classical model whose size is within ``tolerance`` of ``target_param_count``.

    The dense replacement is ``d -> q_out`` when that already fits; otherwise
    ``d -> h -> q_out`` with the width ``h`` landing closest to the target.
    """
    probe = build_model(genes, dataset_dims, seed, kind="baseline")
    d, q = probe.spec.d, probe.spec.q_out
    rest = count_parameters(probe) - _replacement_count(d, q, None)
    best = None
    if abs(rest + _replacement_count(d, q, None) - target_param_count) > tolerance * target_param_count:
        best = min(range(1, max_hidden + 1), key=lambda h: abs(rest + _replacement_count(d, q, h) - target_param_count))
    achieved = rest + _replacement_count(d, q, best)
    if abs(achieved - target_param_count) > tolerance * target_param_count:
        raise SizingError(
            f"cannot reach {target_param_count} parameters within {tolerance:.0%}; nearest achievable is {achieved}",
            nearest=achieved,
        )
    model = build_model(genes, dataset_dims, seed, kind="baseline", baseline_hidden=best)
    assert count_parameters(model) == achieved
    return model


# training --------------------------------------------------------------------


@dataclass
class TrainBudget:
    epochs: int
    batch_size: int
    lr: float
    schedule: str = "constant"
    weight_decay: float = 0.0
    grad_clip: float | None = None

    @classmethod
    def from_genes(cls, genes, epochs):
        return cls(
            epochs=int(epochs),
            batch_size=int(genes["batch_size"]),
            lr=float(genes["lr"]),
            schedule=genes["lr_schedule"],
            weight_decay=float(genes["weight_decay"]),
            grad_clip=None if genes["grad_clip"] is None else float(genes["grad_clip"]),
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.records)

    @property
    def val_acc(self):
        return [r.val_acc for r in self.records]

    @property
    def best_val_acc(self):
        return max(self.val_acc) if self.records else None

    def to_rows(self):
        return [asdict(r) for r in self.records]


def evaluate(model, ds, batch_size=512):
    """(mean cross-entropy, accuracy) in eval mode."""
    logits = model.predict_logits(ds.images, batch_size)
    loss = T.softmax_cross_entropy(Tensor(logits), ds.labels).item()
    acc = float(np.mean(logits.argmax(axis=1) == ds.labels))
    return loss, acc


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches.pop()  # batch norm cannot train on a single sample
    return batches


def train_model(model, train, val, budget, seed, on_epoch=None):
    """Minimise cross-entropy with Adam; the best-validation weights are restored at the end."""
    if budget.epochs < 0 or budget.batch_size < 1 or budget.lr <= 0:
        raise ValueError(f"invalid training budget {budget}")
    history = History()
    if not model.fitted:
        model.fit_preprocessing(train.images)
    if budget.epochs == 0:
        return model, history
    rng = np.random.default_rng([int(seed), 2])
    model.reseed_dropout([int(seed), 1])
    named = list(model.named_parameters())
    opt = Adam(named, lr=budget.lr, weight_decay=budget.weight_decay)
    steps_per_epoch = len(_batches(len(train), budget.batch_size, np.random.default_rng(0)))
    schedule = LrSchedule(budget.schedule, budget.lr, total_steps=budget.epochs * steps_per_epoch)
    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(1, budget.epochs + 1):
        model.train()
        losses = []
        lr = schedule.lr_at(step)
        for b, idx in enumerate(_batches(len(train), budget.batch_size, rng)):
            opt.zero_grad()
            loss = T.softmax_cross_entropy(model(train.images[idx]), train.labels[idx])
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}")
            T.backward(loss)
            clip_gradients([p for _, p in named], budget.grad_clip)
            lr = schedule.lr_at(step)
            try:
                opt.step(lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc} at epoch {epoch}, batch {b}") from None
            step += 1
            losses.append(loss.item())
        val_loss, val_acc = evaluate(model, val)
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
        schedule.observe(val_loss)
        rec = EpochRecord(epoch, float(np.mean(losses)), val_loss, val_acc, lr)
        history.records.append(rec)
        if val_acc > best_acc:
            best_acc, best_state, history.best_epoch = val_acc, model.snapshot(), epoch
        log.debug("epoch %d train %.4f val %.4f acc %.4f", epoch, rec.train_loss, val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(rec)
    if best_state is not None:
        model.load_arrays(best_state)
    model.metadata.update(
        {"epochs": budget.epochs, "seed": int(seed), "best_epoch": history.best_epoch, "best_val_acc": best_acc}
    )
    return model, history


def measure_classical_ms(model, image, repeats=100):
    """Median host time (ms) of the classical stages for one image, excluding the photonic simulation."""
    image = np.asarray(image, dtype=np.float64)[None]
    was = model.training
    model.eval()
    try:
        q = model.quantum_features(model.pre_quantum(image)).data
        pre, post = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            h = model.pre_quantum(image)
            if model.spec.kind == "hybrid":
                model.children["encoder"](h)
            t1 = time.perf_counter()
            model.children["head"](Tensor(q))
            t2 = time.perf_counter()
            pre.append(t1 - t0)
            post.append(t2 - t1)
    finally:
        model.train(was)
    return 1e3 * (float(np.median(pre)) + float(np.median(post)))


# checkpoints ------------------------------------------------------------------


def save_checkpoint(model, path):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "spec": asdict(model.spec),
        "seed": model.seed,
        "metadata": model.metadata,
    }
    arrays = model.state_arrays()
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as npz:
        if "meta" not in npz.files:
            raise FormatError(f"{path}: missing checkpoint metadata")
        meta = json.loads(str(npz["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: npz[k] for k in npz.files if k != "meta"}
    spec = ModelSpec(**meta["spec"])
    model = PhotonicModel(spec, meta["seed"])
    model.load_arrays(arrays)
    model.metadata = meta["metadata"]
    return model


def clone(model):
    return copy.deepcopy(model)
