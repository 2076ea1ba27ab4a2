import math

import numpy as np
import pytest

from photonic_nas.timing import SPEED_OF_LIGHT, HardwareConstants, estimate, estimate_total, linear_depth


def test_depth_model():
    assert linear_depth(9) == 65
    assert linear_depth(17) == 129
    assert linear_depth(2) == 9


def test_digits_components():
    t = estimate(9, 5)
    assert t.t_prep_ms == 65.0
    assert abs(t.t_det_ms - 0.6774) <= 0.0002
    assert t.p_success == pytest.approx(0.45**5)
    assert t.t_prop_ms == pytest.approx(0.03 * 3.44 / SPEED_OF_LIGHT * 1e3)
    assert t.t_prop_ms < 1e-6


def test_mnist_components():
    t = estimate(17, 9)
    assert t.t_prep_ms == 129.0
    assert abs(t.t_det_ms - 16.5195) <= 0.005


def test_lossless_limit():
    for n in (0, 3, 40):
        t = estimate(9, n, HardwareConstants(eta=1.0))
        assert t.p_success == 1.0 and t.t_det_ms == 0.0125


def test_success_floor_guard():
    t = estimate(9, 200)
    assert t.p_success == 1e-10
    assert math.isfinite(t.t_det_ms) and t.t_det_ms == pytest.approx(0.0125 / 1e-10)


def test_monotonicity():
    dets = [estimate(9, n).t_det_ms for n in range(8)]
    assert all(b > a for a, b in zip(dets, dets[1:]))
    preps = [estimate(m, 3).t_prep_ms for m in range(2, 12)]
    assert all(b > a for a, b in zip(preps, preps[1:]))


def test_monte_carlo_mean_converges():
    t = estimate(9, 5, rng=np.random.default_rng(3))
    c = t.constants
    sigma = math.sqrt(
        (c.sigma_prep * t.t_prep_ms) ** 2 + (c.sigma_det * t.t_det_ms) ** 2 + (c.sigma_lat * t.t_lat_ms) ** 2
    )
    assert abs(t.quantum.mean - t.deterministic_subtotal_ms) < 3 * sigma / math.sqrt(1000)
    assert t.quantum.ci_low == pytest.approx(t.quantum.mean - 1.96 * t.quantum.std)
    assert t.quantum.ci_high == pytest.approx(t.quantum.mean + 1.96 * t.quantum.std)


def test_seeded_reproducibility():
    a = estimate(9, 5, rng=np.random.default_rng(1)).quantum
    b = estimate(9, 5, rng=np.random.default_rng(1)).quantum
    assert a == b


def test_totals():
    t = estimate_total(estimate(9, 5), 0.535)
    assert t.total.mean == pytest.approx(67.09, rel=0.01)
    t = estimate_total(estimate(17, 9), 2.159)
    assert t.total.mean == pytest.approx(148.61, rel=0.01)
    t = estimate_total(estimate(9, 5), 0.0)
    assert t.total.mean == pytest.approx(t.quantum.mean)


def test_invalid_constants():
    with pytest.raises(ValueError):
        HardwareConstants(eta=0.0)
    with pytest.raises(ValueError):
        HardwareConstants(layer_time_ms=-1)
    with pytest.raises(ValueError):
        estimate(9, -1)


def test_report_is_json_ready():
    import json

    d = estimate_total(estimate(9, 5), 0.5).to_dict()
    text = json.dumps(d)
    assert "samples" not in d and "deterministic_subtotal_ms" in d and "ci_low" in text
