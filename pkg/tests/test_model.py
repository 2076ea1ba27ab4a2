import math

import numpy as np
import pytest

from photonic_nas import nn
from photonic_nas import tensor as T
from photonic_nas.errors import CapacityError, DimensionError, SizingError, StateError
from photonic_nas.genome import REFERENCE_DIGITS, REFERENCE_MNIST
from photonic_nas.model import (
    ModelSpec,
    PhaseEncoder,
    TrainBudget,
    build_classical_baseline,
    build_model,
    count_parameters,
    encode_phases,
    evaluate,
    load_checkpoint,
    measure_classical_ms,
    save_checkpoint,
    train_model,
)
from photonic_nas.tensor import Tensor

DIGITS_DIMS = (8, 8, 8, 10)


@pytest.fixture(scope="module")
def fitted_model(digits_split):
    train, _, _ = digits_split
    m = build_model(REFERENCE_DIGITS, DIGITS_DIMS, seed=0)
    m.fit_preprocessing(train.images)
    return m


def test_phase_encoding_examples():
    zero = Tensor([0.0])
    assert encode_phases(zero, Tensor([1.0]), None, "sigmoid").item() == pytest.approx(math.pi / 2)
    assert encode_phases(zero, Tensor([1.0]), None, "tanh").item() == pytest.approx(math.pi / 2)
    x = Tensor([2.5], requires_grad=True)
    theta = encode_phases(x, Tensor([2.0]), Tensor([0.0]), "clamp")
    assert theta.item() == pytest.approx(math.pi)
    T.backward(theta.sum())
    assert x.grad[0] == 0.0


def test_phase_range(rng):
    x = Tensor(rng.normal(scale=10, size=(50, 4)))
    for kind in ("sigmoid", "tanh", "clamp"):
        th = encode_phases(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), kind).data
        assert th.min() >= 0 and th.max() <= math.pi


def test_reference_digits_structure():
    m = build_model(REFERENCE_DIGITS, DIGITS_DIMS, seed=0)
    circ = m.children["quantum"].circuit
    assert (m.spec.d, circ.modes, circ.photons, m.spec.q_out) == (8, 9, 5, 16)
    head = [c for c in m.children["head"] if isinstance(c, nn.Linear)]
    assert [(l.in_features, l.out_features) for l in head] == [(16, 64), (64, 64), (64, 10)]
    acts = [c.kind for c in m.children["head"] if isinstance(c, nn.Activation)]
    assert acts == ["silu", "silu"]
    pre = list(m.children["pre"])
    assert len(pre) == 1 and (pre[0].in_features, pre[0].out_features) == (8, 8)


def test_reference_mnist_gated_by_capacity():
    spec = ModelSpec(28, 28, 16, 10, REFERENCE_MNIST)
    assert spec.q_out == 64
    with pytest.raises(CapacityError):
        build_model(REFERENCE_MNIST, (28, 28, 16, 10), seed=0)


def test_input_size_limit():
    with pytest.raises(DimensionError):
        ModelSpec(8, 8, 21, 10, REFERENCE_DIGITS)


def test_parameter_counts():
    assert count_parameters(nn.Linear(8, 10, np.random.default_rng(0))) == 90
    assert count_parameters(PhaseEncoder(8, 1.0, True, "tanh")) == 16
    assert count_parameters(PhaseEncoder(8, 1.0, False, "tanh")) == 8


def test_baseline_sizing():
    hybrid = build_model(REFERENCE_DIGITS, DIGITS_DIMS, 0)
    base = build_classical_baseline(REFERENCE_DIGITS, DIGITS_DIMS, 11_658)
    assert 11_425 <= count_parameters(base) <= 11_891
    assert "quantum" not in base.children and "encoder" not in base.children
    assert count_parameters(hybrid) > 0
    with pytest.raises(SizingError) as info:
        build_classical_baseline(REFERENCE_DIGITS, DIGITS_DIMS, 100)
    assert info.value.nearest > 100


def test_q_out_none_means_d():
    genes = dict(REFERENCE_DIGITS, q_output_size=None)
    assert build_model(genes, DIGITS_DIMS, 0).spec.q_out == 8


def test_forward_requires_fitted_preprocessing(digits):
    m = build_model(REFERENCE_DIGITS, DIGITS_DIMS, 0)
    with pytest.raises(StateError):
        m.predict_logits(digits.images[:2])


def test_forward_shapes_and_determinism(fitted_model, digits):
    logits = fitted_model.predict_logits(digits.images[:1])
    assert logits.shape == (1, 10) and np.all(np.isfinite(logits))
    pair = fitted_model.predict_logits(np.stack([digits.images[5], digits.images[5]]))
    assert np.array_equal(pair[0], pair[1])
    with pytest.raises(DimensionError):
        fitted_model.predict_logits(np.zeros((1, 28, 28)))


def test_quantum_features_are_distributions(fitted_model, digits):
    h, q = fitted_model.features(digits.images[:20])
    assert h.shape == (20, 8) and q.shape == (20, 16)
    assert np.all(q >= 0)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_roundtrip_bit_identical(fitted_model, digits, tmp_path):
    path = tmp_path / "m.npz"
    fitted_model.metadata["note"] = "x"
    save_checkpoint(fitted_model, path)
    again = load_checkpoint(path)
    x = digits.images[:7]
    assert np.array_equal(fitted_model.predict_logits(x), again.predict_logits(x))
    assert again.metadata["note"] == "x"
    for (k1, a), (k2, b) in zip(sorted(fitted_model.state_arrays().items()), sorted(again.state_arrays().items())):
        assert k1 == k2 and np.array_equal(a, b)


def test_zero_epochs(digits_split):
    train, val, _ = digits_split
    m = build_model(REFERENCE_DIGITS, DIGITS_DIMS, 0)
    m, hist = train_model(m, train, val, TrainBudget.from_genes(REFERENCE_DIGITS, 0), seed=0)
    assert len(hist) == 0 and m.fitted


def test_short_training_reduces_loss_and_is_reproducible(digits_split):
    train, val, proxy = digits_split
    small = proxy.subset(np.arange(200))
    budget = TrainBudget.from_genes(REFERENCE_DIGITS, 3)
    runs = []
    for _ in range(2):
        m = build_model(REFERENCE_DIGITS, DIGITS_DIMS, 4)
        m, h = train_model(m, small, val.subset(np.arange(100)), budget, seed=4)
        runs.append(h)
    losses = [r.train_loss for r in runs[0].records]
    assert losses[-1] < losses[0]
    assert runs[0].to_rows() == runs[1].to_rows()
    assert len(runs[0]) == 3


def test_evaluate_and_measure(fitted_model, digits):
    from photonic_nas.data import Dataset

    ds = Dataset(digits.images[:30], digits.labels[:30])
    loss, acc = evaluate(fitted_model, ds)
    assert loss > 0 and 0 <= acc <= 1
    ms = measure_classical_ms(fitted_model, digits.images[0], repeats=5)
    assert ms > 0
