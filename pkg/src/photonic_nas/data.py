"""Dataset readers, standardisation, PCA and deterministic splits."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, StateError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10


@dataclass
class Dataset:
    images: np.ndarray  # (B, H, W) float64
    labels: np.ndarray  # (B,) int64
    name: str = ""
    split: str = "train"

    def __len__(self):
        return len(self.labels)

    @property
    def flat(self):
        return self.images.reshape(len(self.images), -1)

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.name, split or self.split)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_digits(path):
    """Read an optdigits-style CSV: 64 integer pixels in [0, 16], then the label."""
    images, labels = [], []
    with _open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.decode("ascii").strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 65:
                raise FormatError(f"{path}:{lineno}: expected 65 comma-separated values, got {len(fields)}")
            try:
                values = [int(float(v)) for v in fields]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            pixels, label = values[:64], values[64]
            if min(pixels) < 0 or max(pixels) > 16:
                raise FormatError(f"{path}:{lineno}: pixel value outside [0, 16]")
            if not 0 <= label < NUM_CLASSES:
                raise FormatError(f"{path}:{lineno}: label {label} outside [0, {NUM_CLASSES})")
            images.append(pixels)
            labels.append(label)
    images = np.asarray(images, dtype=np.float64).reshape(-1, 8, 8)
    return Dataset(images, np.asarray(labels, dtype=np.int64), name="digits")


def _read_idx(path, expected_magic):
    with _open(path) as fh:
        payload = fh.read()
    if len(payload) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(payload)}")
    (magic,) = struct.unpack(">I", payload[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(payload) < header:
        raise FormatError(f"{path}: truncated dimension header at offset {len(payload)}")
    dims = struct.unpack(f">{ndim}I", payload[4:header])
    need = header + math.prod(dims)
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload at offset {len(payload)}, expected {need} bytes")
    data = np.frombuffer(payload, dtype=np.uint8, count=math.prod(dims), offset=header)
    return data.reshape(dims)


def load_mnist_idx(images_path, labels_path, split="train"):
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[1:] != (28, 28):
        raise FormatError(f"{images_path}: image dimensions {images.shape[1:]} at offset 8, expected 28x28")
    if len(images) != len(labels):
        raise FormatError(
            f"count mismatch at offset 4: {len(images)} images in {images_path}, {len(labels)} labels in {labels_path}"
        )
    if labels.size and labels.max() >= NUM_CLASSES:
        raise FormatError(f"{labels_path}: label {labels.max()} outside [0, {NUM_CLASSES})")
    return Dataset(images.astype(np.float64), labels.astype(np.int64), name="mnist", split=split)


class Standardizer:
    def __init__(self, floor=1e-8):
        self.floor = floor
        self.mean = None
        self.std = None

    @property
    def fitted(self):
        return self.mean is not None

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), self.floor)
        return self

    def transform(self, x):
        if not self.fitted:
            raise StateError("standardizer used before fit")
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def state(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_state(cls, state):
        obj = cls()
        obj.mean = np.asarray(state["mean"], dtype=np.float64)
        obj.std = np.asarray(state["std"], dtype=np.float64)
        return obj


def jacobi_eigh(A, tol=1e-10, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every (p, q) pair once, in round-robin order so that the
    rotations of one round act on disjoint index pairs and can be applied
    together. Returns ``(eigenvalues, eigenvectors)`` sorted by decreasing
    eigenvalue.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    scale = max(np.abs(A).max(), 1e-300)
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(max_sweeps):
        off = np.abs(A - np.diag(A.diagonal())).max()
        if off <= tol * scale:
            break
        for _ in range(m - 1):
            pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
            pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
            p = np.array([a for a, _ in pairs])
            q = np.array([b for _, b in pairs])
            apq = A[p, q]
            active = np.abs(apq) > 1e-300
            p, q, apq = p[active], q[active], apq[active]
            if len(p):
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t[tau == 0] = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
                Ap, Aq = A[p].copy(), A[q].copy()
                A[p] = c[:, None] * Ap - s[:, None] * Aq
                A[q] = s[:, None] * Ap + c[:, None] * Aq
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = Ap * c - Aq * s
                A[:, q] = Ap * s + Aq * c
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = Vp * c - Vq * s
                V[:, q] = Vp * s + Vq * c
            players = [players[0], players[-1]] + players[1:-1]
    vals = A.diagonal().copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]


class PCA:
    def __init__(self, n_components):
        self.n_components = n_components
        self.components = None
        self.explained_variance = None

    @property
    def fitted(self):
        return self.components is not None

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64)
        F = x.shape[1]
        d = self.n_components
        if d > F:
            raise DimensionError(f"cannot keep {d} components of {F}-feature data")
        xc = x - x.mean(axis=0)
        cov = xc.T @ xc / max(len(x) - 1, 1)
        vals, vecs = jacobi_eigh(cov)
        comps = vecs[:, :d]
        lead = np.abs(comps).argmax(axis=0)
        signs = np.sign(comps[lead, np.arange(d)])
        signs[signs == 0] = 1.0
        self.components = comps * signs
        self.explained_variance = vals[:d]
        return self

    def transform(self, x):
        if not self.fitted:
            raise StateError("PCA used before fit")
        return np.asarray(x, dtype=np.float64) @ self.components

    def state(self):
        return {"components": self.components, "explained_variance": self.explained_variance}

    @classmethod
    def from_state(cls, state):
        comps = np.asarray(state["components"], dtype=np.float64)
        obj = cls(comps.shape[1])
        obj.components = comps
        obj.explained_variance = np.asarray(state["explained_variance"], dtype=np.float64)
        return obj


def split_and_subset(ds, val_fraction, proxy_size, seed):
    """Shuffle into train/val (train gets ``floor((1 - f) N)``) and draw a proxy subset of train."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"validation fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_train = int(math.floor((1.0 - val_fraction) * len(ds)))
    train = ds.subset(np.sort(order[:n_train]), "train")
    val = ds.subset(np.sort(order[n_train:]), "val")
    return train, val, proxy_subset(train, proxy_size, seed)


def proxy_subset(train, proxy_size, seed):
    if proxy_size > len(train):
        raise ValueError(f"proxy size {proxy_size} exceeds the {len(train)} training samples")
    rng = np.random.default_rng([seed, 1])
    return train.subset(np.sort(rng.permutation(len(train))[:proxy_size]), "proxy")


def bundled_digits_path():
    """Location of the Digits CSV shipped with scikit-learn, if it is installed."""
    import importlib.util

    spec = importlib.util.find_spec("sklearn")
    if spec is None or not spec.submodule_search_locations:
        return None
    path = Path(list(spec.submodule_search_locations)[0]) / "datasets" / "data" / "digits.csv.gz"
    return path if path.exists() else None


def find_digits(data_dir=None):
    for directory in filter(None, [data_dir, os.environ.get("PHOTONIC_NAS_DATA_DIR")]):
        for name in ("optdigits.csv", "optdigits.csv.gz", "digits.csv", "digits.csv.gz"):
            candidate = Path(directory) / name
            if candidate.exists():
                return candidate
    return bundled_digits_path()


def find_mnist(data_dir=None):
    """Paths of (train images, train labels, test images, test labels) or None."""
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    for directory in filter(None, [data_dir, os.environ.get("PHOTONIC_NAS_DATA_DIR")]):
        found = []
        for name in names:
            for candidate in (Path(directory) / name, Path(directory) / (name + ".gz")):
                if candidate.exists():
                    found.append(candidate)
                    break
        if len(found) == 4:
            return tuple(found)
    return None
