"""Exact simulation of the linear-optical layer.

The circuit acting on ``M`` modes is ``U = mesh2 @ diag(e^{i theta}, 1) @ mesh1``.
Each mesh is a rectangular array of ``M`` columns of two-mode units on
alternating even/odd mode pairs; a unit applies a phase ``phi`` on its upper
mode followed by the beamsplitter ``[[cos a, i sin a], [i sin a, cos a]]``.

Output probabilities over the ``n``-photon Fock basis are squared moduli of
permanents of ``n x n`` submatrices of ``U``. Two evaluation routes exist: the
explicit Ryser permanent per output state, and an equivalent creation-operator
recursion that is used for training. Gradients flow back to the encoding
phases and to every mesh angle through ``dL = 2 Re sum(G * dU)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError, DimensionError, ParameterError
from .tensor import Tensor, record

DEFAULT_BASIS_CAP = 100_000


@dataclass(frozen=True)
class FockBasis:
    modes: int
    photons: int
    states: np.ndarray  # (S, M) occupation vectors
    rows: np.ndarray  # (S, n) mode index of every photon, non-decreasing
    norms: np.ndarray  # (S,) sqrt(prod s_j!)
    index: dict = field(repr=False, compare=False)

    def __len__(self):
        return len(self.states)

    def position(self, occupation):
        return self.index[tuple(int(s) for s in occupation)]


def basis_size(modes, photons):
    return math.comb(modes + photons - 1, photons)


def enumerate_fock(modes, photons, cap=DEFAULT_BASIS_CAP):
    """All occupation vectors of ``photons`` over ``modes``.

    States are ordered lexicographically with the first mode most significant,
    starting from ``(n, 0, ..., 0)``.
    """
    if modes < 1 or photons < 0:
        raise ValueError(f"need modes >= 1 and photons >= 0, got M={modes}, n={photons}")
    size = basis_size(modes, photons)
    if cap is not None and size > cap:
        raise CapacityError(f"Fock basis for M={modes}, n={photons} has {size} states, above the cap of {cap}")
    rows = np.array(list(itertools.combinations_with_replacement(range(modes), photons)), dtype=np.int64)
    rows = rows.reshape(size, photons)
    states = np.zeros((size, modes), dtype=np.int64)
    for k in range(photons):
        np.add.at(states, (np.arange(size), rows[:, k]), 1)
    norms = np.sqrt([math.prod(math.factorial(int(s)) for s in st) for st in states])
    index = {tuple(int(s) for s in st): i for i, st in enumerate(states)}
    return FockBasis(modes, photons, states, rows, np.asarray(norms, dtype=np.float64), index)


# permanents -----------------------------------------------------------------


def permanent(A):
    """Permanent of a square matrix by Ryser's formula in Gray-code order."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"permanent needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n > 20:
        raise DimensionError(f"permanent limited to 20x20, got {n}x{n}")
    A = A.astype(np.complex128)
    rowsum = np.zeros(n, dtype=np.complex128)
    total = 0j
    gray = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        gray ^= 1 << j
        if gray >> j & 1:
            rowsum += A[:, j]
        else:
            rowsum -= A[:, j]
        sign = -1.0 if bin(gray).count("1") % 2 else 1.0
        total += sign * np.prod(rowsum)
    return (-1) ** n * total


def batched_permanent(A, with_grad=False):
    """Permanents of a stack of square matrices ``A[..., n, n]``.

    With ``with_grad`` also returns ``dperm[..., a, b]``, the permanent of the
    minor obtained by deleting row ``a`` and column ``b``.
    """
    n = A.shape[-1]
    lead = A.shape[:-2]
    if n == 0:
        ones = np.ones(lead, dtype=np.complex128)
        return (ones, np.zeros(lead + (0, 0), dtype=np.complex128)) if with_grad else ones
    rowsum = np.zeros(lead + (n,), dtype=np.complex128)
    total = np.zeros(lead, dtype=np.complex128)
    grad = np.zeros(lead + (n, n), dtype=np.complex128) if with_grad else None
    gray = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        gray ^= 1 << j
        if gray >> j & 1:
            rowsum += A[..., :, j]
        else:
            rowsum -= A[..., :, j]
        sign = -1.0 if bin(gray).count("1") % 2 else 1.0
        if not with_grad:
            total += sign * np.prod(rowsum, axis=-1)
            continue
        # products of all row sums except one, via prefix/suffix products
        prefix = np.ones(lead + (n + 1,), dtype=np.complex128)
        suffix = np.ones(lead + (n + 1,), dtype=np.complex128)
        np.cumprod(rowsum, axis=-1, out=prefix[..., 1:])
        np.cumprod(rowsum[..., ::-1], axis=-1, out=suffix[..., 1:])
        others = prefix[..., :n] * suffix[..., n - 1 :: -1][..., :n]
        total += sign * prefix[..., n]
        cols = [b for b in range(n) if gray >> b & 1]
        grad[..., :, cols] += sign * others[..., :, None]
    sgn = (-1) ** n
    if with_grad:
        return sgn * total, sgn * grad
    return sgn * total


# mesh -------------------------------------------------------------------------


def mesh_layout(modes):
    """Upper-mode index of every two-mode unit, column by column."""
    units = []
    for col in range(modes):
        units.extend(range(col % 2, modes - 1, 2))
    return np.array(units, dtype=np.int64)


def unit_matrix(phi, alpha):
    c, s = np.cos(alpha), np.sin(alpha)
    e = np.exp(1j * phi)
    return np.array([[c * e, 1j * s], [1j * s * e, c]])


def _unit_derivatives(phi, alpha):
    c, s = np.cos(alpha), np.sin(alpha)
    e = np.exp(1j * phi)
    d_phi = np.array([[1j * c * e, 0.0], [-s * e, 0.0]])
    d_alpha = np.array([[-s * e, 1j * c], [1j * c * e, -s]])
    return d_phi, d_alpha


def _apply_unit_left(mat, top, T2):
    rows = mat[top : top + 2].copy()
    mat[top : top + 2] = T2 @ rows


def mesh_unitary(modes, angles, layout=None):
    """Transfer matrix of one mesh; ``angles[k] = (phi_k, alpha_k)`` for unit ``k``."""
    layout = mesh_layout(modes) if layout is None else layout
    angles = np.asarray(angles, dtype=np.float64).reshape(len(layout), 2)
    U = np.eye(modes, dtype=np.complex128)
    for top, (phi, alpha) in zip(layout, angles):
        _apply_unit_left(U, top, unit_matrix(phi, alpha))
    return U


def mesh_backward(modes, angles, G, layout=None):
    """Gradient of ``L`` w.r.t. mesh angles given ``dL = 2 Re sum(G * dU)``."""
    layout = mesh_layout(modes) if layout is None else layout
    angles = np.asarray(angles, dtype=np.float64).reshape(len(layout), 2)
    K = len(layout)
    # prefixes[k] = product of units 0..k-1 (applied first)
    prefixes = [np.eye(modes, dtype=np.complex128)]
    for top, (phi, alpha) in zip(layout, angles):
        nxt = prefixes[-1].copy()
        _apply_unit_left(nxt, top, unit_matrix(phi, alpha))
        prefixes.append(nxt)
    out = np.zeros((K, 2))
    # A = (units after k)^T @ G, swept from the last unit backwards
    A = np.array(G, dtype=np.complex128)
    for k in range(K - 1, -1, -1):
        top = layout[k]
        phi, alpha = angles[k]
        H = A[top : top + 2] @ prefixes[k].T[:, top : top + 2]
        d_phi, d_alpha = _unit_derivatives(phi, alpha)
        out[k, 0] = 2.0 * np.real(np.sum(H * d_phi))
        out[k, 1] = 2.0 * np.real(np.sum(H * d_alpha))
        T2 = unit_matrix(phi, alpha)
        A[top : top + 2] = T2.T @ A[top : top + 2].copy()
    return out


# circuit ------------------------------------------------------------------------


def input_state(modes, photons):
    """One photon in each even-indexed mode."""
    state = np.zeros(modes, dtype=np.int64)
    occupied = np.arange(0, modes, 2)[:photons]
    if len(occupied) < photons:
        raise ValueError(f"cannot place {photons} photons on even modes of a {modes}-mode circuit")
    state[occupied] = 1
    return state


@dataclass
class PhotonicCircuit:
    """Two trainable meshes around a layer of ``d = M - 1`` encoding phases."""

    modes: int
    photons: int
    mesh1: np.ndarray  # (units, 2)
    mesh2: np.ndarray
    input_occupation: np.ndarray = None

    def __post_init__(self):
        self.layout = mesh_layout(self.modes)
        self.mesh1 = np.asarray(self.mesh1, dtype=np.float64).reshape(len(self.layout), 2)
        self.mesh2 = np.asarray(self.mesh2, dtype=np.float64).reshape(len(self.layout), 2)
        if self.input_occupation is None:
            self.input_occupation = input_state(self.modes, self.photons)
        self.input_modes = np.flatnonzero(self.input_occupation)
        if np.any(self.input_occupation > 1):
            raise ValueError("input occupation must be 0/1 per mode")

    @classmethod
    def for_input_size(cls, d, rng=None):
        """Circuit with ``M = d + 1`` modes and ``n = ceil(M / 2)`` photons.

        Mesh angles are drawn uniformly from [0, 2 pi); without ``rng`` they are zero.
        """
        modes = d + 1
        photons = math.ceil(modes / 2)
        units = len(mesh_layout(modes))
        if rng is None:
            m1 = np.zeros((units, 2))
            m2 = np.zeros((units, 2))
        else:
            m1 = rng.uniform(0.0, 2 * np.pi, size=(units, 2))
            m2 = rng.uniform(0.0, 2 * np.pi, size=(units, 2))
        return cls(modes, photons, m1, m2)

    @property
    def n_encoding(self):
        return self.modes - 1

    @property
    def n_units(self):
        return len(self.layout)

    def meshes(self):
        return (
            mesh_unitary(self.modes, self.mesh1, self.layout),
            mesh_unitary(self.modes, self.mesh2, self.layout),
        )

    def unitary(self, theta):
        U1, U2 = self.meshes()
        return _compose(U1, U2, np.asarray(theta, dtype=np.float64)[None, :])[0]


def _check_phases(theta, d):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != d:
        raise DimensionError(f"expected {d} encoding phases, got {theta.shape[-1]}")
    if not np.all(np.isfinite(theta)):
        raise ParameterError("encoding phases must be finite")
    return theta


def _compose(U1, U2, theta):
    """``U2 @ diag(e^{i theta}, 1) @ U1`` for each row of ``theta`` (B, d)."""
    B, d = theta.shape
    phases = np.ones((B, d + 1), dtype=np.complex128)
    phases[:, :d] = np.exp(1j * theta)
    return np.einsum("ij,bj,jk->bik", U2, phases, U1, optimize=True)


def build_unitary(circuit, theta):
    theta = _check_phases(theta, circuit.n_encoding)
    for name, mesh in (("mesh1", circuit.mesh1), ("mesh2", circuit.mesh2)):
        if not np.all(np.isfinite(mesh)):
            raise ParameterError(f"{name} holds non-finite angles")
    return circuit.unitary(theta)


def _amplitudes(U, basis, input_modes, with_grad):
    """Output amplitudes (B, S) for unitaries U (B, M, M) via permanents."""
    sub = U[:, basis.rows[:, :, None], input_modes[None, None, :]]  # (B, S, n, n)
    if with_grad:
        perm, dperm = batched_permanent(sub, with_grad=True)
        return perm / basis.norms, dperm / basis.norms[None, :, None, None]
    return batched_permanent(sub) / basis.norms, None


class CreationLadder:
    """Photon-by-photon construction of the output state.

    Applying ``sum_j U[j, c] a_j^dagger`` once per occupied input mode ``c`` to
    the vacuum yields ``sum_S perm(U_{S,T}) / sqrt(prod s_j!) |S>``, i.e. the
    same amplitudes as the permanent formula, at a cost of ``S * M`` per photon
    instead of ``S * n * 2^n``.
    """

    def __init__(self, basis, input_modes):
        self.basis = basis
        self.input_modes = np.asarray(input_modes, dtype=np.int64)
        M, n = basis.modes, basis.photons
        if len(self.input_modes) != n:
            raise ValueError("input occupation does not carry the basis photon number")
        levels = [enumerate_fock(M, k, cap=None) for k in range(n)] + [basis]
        self.pred, self.pred_w, self.succ, self.succ_w = [], [], [], []
        for lo, hi in zip(levels[:-1], levels[1:]):
            pred = np.full((len(hi), M), len(lo), dtype=np.int64)  # len(lo) -> zero pad
            pred_w = np.zeros((len(hi), M))
            for i, st in enumerate(hi.states):
                for j in np.flatnonzero(st):
                    prev = st.copy()
                    prev[j] -= 1
                    pred[i, j] = lo.position(prev)
                    pred_w[i, j] = math.sqrt(st[j])
            succ = np.empty((len(lo), M), dtype=np.int64)
            succ_w = np.empty((len(lo), M))
            for i, st in enumerate(lo.states):
                for j in range(M):
                    nxt = st.copy()
                    nxt[j] += 1
                    succ[i, j] = hi.position(nxt)
                    succ_w[i, j] = math.sqrt(nxt[j])
            self.pred.append(pred)
            self.pred_w.append(pred_w)
            self.succ.append(succ)
            self.succ_w.append(succ_w)

    def amplitudes(self, U, keep=False):
        B = U.shape[0]
        coef = np.ones((B, 1), dtype=np.complex128)
        history = []
        for k, c in enumerate(self.input_modes):
            if keep:
                history.append(coef)
            padded = np.concatenate([coef, np.zeros((B, 1), dtype=np.complex128)], axis=1)
            u = U[:, :, c]
            coef = np.einsum("bsj,sj,bj->bs", padded[:, self.pred[k]], self.pred_w[k], u, optimize=True)
        return (coef, history) if keep else coef

    def backward(self, U, history, zeta):
        """``G`` with ``dL = 2 Re sum(G * dU)`` given ``dL = 2 Re sum(zeta * dA)``."""
        B, M, _ = U.shape
        G = np.zeros((B, M, M), dtype=np.complex128)
        for k in range(len(self.input_modes) - 1, -1, -1):
            c = self.input_modes[k]
            coef = history[k]
            padded = np.concatenate([coef, np.zeros((B, 1), dtype=np.complex128)], axis=1)
            G[:, :, c] = np.einsum("bs,sj,bsj->bj", zeta, self.pred_w[k], padded[:, self.pred[k]], optimize=True)
            zeta = np.einsum("bsj,sj,bj->bs", zeta[:, self.succ[k]], self.succ_w[k], U[:, :, c], optimize=True)
        return G


_LADDERS = {}


def _ladder(basis, input_modes):
    key = (basis.modes, basis.photons, tuple(int(m) for m in input_modes))
    if key not in _LADDERS:
        _LADDERS[key] = CreationLadder(basis, input_modes)
    return _LADDERS[key]


def output_distribution(circuit, theta, basis=None, method="ladder"):
    """Probability of every Fock output state for one or many phase vectors.

    ``method="permanent"`` evaluates every amplitude as an explicit permanent;
    ``"ladder"`` uses :class:`CreationLadder`. Both give the same distribution.
    """
    theta = _check_phases(theta, circuit.n_encoding)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    basis = enumerate_fock(circuit.modes, circuit.photons) if basis is None else basis
    U1, U2 = circuit.meshes()
    U = _compose(U1, U2, theta)
    if method == "permanent":
        amps, _ = _amplitudes(U, basis, circuit.input_modes, False)
    elif method == "ladder":
        amps = _ladder(basis, circuit.input_modes).amplitudes(U)
    else:
        raise ValueError(f"unknown method {method!r}")
    probs = np.abs(amps) ** 2
    return probs[0] if single else probs


def bucket_matrix(size, q_out):
    """0/1 matrix (size, q_out) summing contiguous near-equal runs of basis indices."""
    if not 1 <= q_out <= size:
        raise DimensionError(f"pooled size {q_out} must lie in [1, {size}]")
    base, extra = divmod(size, q_out)
    lengths = [base + (1 if i < extra else 0) for i in range(q_out)]
    P = np.zeros((size, q_out))
    start = 0
    for b, length in enumerate(lengths):
        P[start : start + length, b] = 1.0
        start += length
    return P


def pool_output(dist, q_out):
    dist = np.asarray(dist, dtype=np.float64)
    return dist @ bucket_matrix(dist.shape[-1], q_out)


@dataclass
class ForwardCache:
    U1: np.ndarray
    U2: np.ndarray
    theta: np.ndarray
    amps: np.ndarray
    method: str
    dperm: np.ndarray = None
    history: list = None


def forward_with_cache(circuit, theta, basis, method="ladder"):
    theta = np.atleast_2d(_check_phases(theta, circuit.n_encoding))
    U1, U2 = circuit.meshes()
    U = _compose(U1, U2, theta)
    if method == "permanent":
        amps, dperm = _amplitudes(U, basis, circuit.input_modes, True)
        cache = ForwardCache(U1, U2, theta, amps, method, dperm=dperm)
    else:
        amps, history = _ladder(basis, circuit.input_modes).amplitudes(U, keep=True)
        cache = ForwardCache(U1, U2, theta, amps, method, history=history)
    return np.abs(amps) ** 2, cache


def _unitary_gradient(circuit, basis, cache, zeta):
    B, M = cache.theta.shape[0], circuit.modes
    if cache.method == "permanent":
        # dA_S = sum_ab dperm_ab dU[row_a, col_b]
        contrib = zeta[:, :, None, None] * cache.dperm  # (B, S, n, n)
        onehot = np.zeros((len(basis), basis.photons, M))
        np.put_along_axis(onehot, basis.rows[:, :, None], 1.0, axis=2)
        G = np.zeros((B, M, M), dtype=np.complex128)
        G[:, :, circuit.input_modes] = np.einsum("bsak,sam->bmk", contrib, onehot, optimize=True)
        return G
    U = _compose(cache.U1, cache.U2, cache.theta)
    return _ladder(basis, circuit.input_modes).backward(U, cache.history, zeta)


def photonic_backward(circuit, basis, cache, upstream):
    """Gradients of ``sum(upstream * P)`` w.r.t. theta (B, d), mesh1 and mesh2 angles."""
    if cache is None:
        raise ContractError("photonic_backward called without a cached forward pass")
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    B = cache.theta.shape[0]
    M = circuit.modes
    # P_S = |A_S|^2  ->  dL = 2 Re sum_S g_S conj(A_S) dA_S
    G = _unitary_gradient(circuit, basis, cache, upstream * np.conj(cache.amps))

    d = circuit.n_encoding
    phases = np.ones((B, M), dtype=np.complex128)
    phases[:, :d] = np.exp(1j * cache.theta)
    U1, U2 = cache.U1, cache.U2
    # theta: dU/dtheta_m = U2[:, m] (i e^{i theta_m}) U1[m, :]
    core = np.einsum("jm,bjk,mk->bm", U2, G, U1, optimize=True)
    g_theta = 2.0 * np.real(1j * phases[:, :d] * core[:, :d])
    # U = (U2 D) U1 -> G_U1 = (U2 D)^T G ; U = U2 (D U1) -> G_U2 = G (D U1)^T
    G1 = np.einsum("jm,bm,bjk->mk", U2, phases, G, optimize=True)
    G2 = np.einsum("bjk,bm,mk->jm", G, phases, U1, optimize=True)
    g_mesh1 = mesh_backward(M, circuit.mesh1, G1, circuit.layout)
    g_mesh2 = mesh_backward(M, circuit.mesh2, G2, circuit.layout)
    return g_theta, g_mesh1, g_mesh2


def photonic_layer(theta, mesh1, mesh2, circuit, basis, method="ladder"):
    """Tensor op: phases (B, d) -> Fock probabilities (B, S).

    ``mesh1``/``mesh2`` are the trainable angle tensors; ``circuit`` is updated
    to their current values before simulation.
    """
    circuit.mesh1 = mesh1.data.reshape(circuit.n_units, 2)
    circuit.mesh2 = mesh2.data.reshape(circuit.n_units, 2)
    needs_grad = theta.requires_grad or mesh1.requires_grad or mesh2.requires_grad
    if not needs_grad:
        return Tensor(output_distribution(circuit, theta.data, basis, method))
    probs, cache = forward_with_cache(circuit, theta.data, basis, method)
    snapshot = PhotonicCircuit(circuit.modes, circuit.photons, circuit.mesh1.copy(), circuit.mesh2.copy())

    def grad_fn(g):
        g_theta, g1, g2 = photonic_backward(snapshot, basis, cache, g)
        if theta.requires_grad:
            theta.accumulate(g_theta)
        if mesh1.requires_grad:
            mesh1.accumulate(g1.reshape(mesh1.shape))
        if mesh2.requires_grad:
            mesh2.accumulate(g2.reshape(mesh2.shape))

    return record(probs, (theta, mesh1, mesh2), grad_fn)
