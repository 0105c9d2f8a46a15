"""Smoke test for the servtime_py extension.

Build and stage the module first:

    cargo build --release -p servtime-py --features extension-module
    cp target/release/libservtime_py.so python/servtime_py.so

Then run ``python -m pytest python/smoke_test.py``.
"""

import math
import random

import pytest

servtime_py = pytest.importorskip("servtime_py")


def test_bimodal_trace():
    rows = servtime_py.simulate("bimodal", 200.0, seed=3)
    assert rows == servtime_py.simulate("bimodal", 200.0, seed=3)
    assert all(0.0 <= a <= 200.0 for a, _ in rows)
    assert any(d is None for _, d in rows)
    assert all(d > a for a, d in rows if d is not None)


def test_unit_head():
    h = servtime_py.IntensityHead(0.0, 0.0)
    assert h.intensity(3.0) == 1.0
    assert math.isclose(h.survival(2.0), math.exp(-2.0))
    assert math.isclose(h.inverse_cdf(0.5), math.log(2.0))
    mean, defective = h.expected_next()
    assert not defective and math.isclose(mean, 1.0, rel_tol=1e-8)
    decaying = servtime_py.IntensityHead(0.0, -1.0)
    assert math.isclose(decaying.survival_at_infinity, math.exp(-1.0))
    with pytest.raises(ValueError):
        h.inverse_cdf(1.0)


def test_simulators():
    assert servtime_py.simulate_ps_queue([0.0, 0.5], [1.0, 1.0]) == [1.5, 2.0]
    times = servtime_py.simulate_hawkes(1.0, 0.5, 1.0, 2000.0, seed=1)
    assert abs(len(times) / 2000.0 - 2.0) < 0.2
    blocks = servtime_py.simulate_mempool(5.0, 1.0, 50.0, seed=2)
    assert all(u > 0 and acc > 0 for _, u, acc in blocks)


def test_metrics():
    rng = random.Random(0)
    a = [rng.random() for _ in range(50)]
    b = [rng.random() + 0.3 for _ in range(40)]
    d = servtime_py.ks_two_sample(a, b)
    assert 0.0 < d <= 1.0
    assert servtime_py.ks_two_sample(a, a) == 0.0
    assert servtime_py.prediction_error([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == 1.0
    assert servtime_py.mean_baseline([1.0, 3.0], [0.0, 2.0, 6.0]) == 2.0
    with pytest.raises(ValueError):
        servtime_py.prediction_error([], [])
