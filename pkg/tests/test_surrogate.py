import numpy as np
import pytest

from supermux.channel import MimoShape
from supermux.rates import RateEstimator
from supermux.surrogate import (SurrogateTable, TABLE_SHAPES, alpha_lookup, fit_alpha,
                                fit_table, load_surrogate_table, save_surrogate_table,
                                surrogate_phi)


def test_surrogate_basics():
    assert surrogate_phi(0.0, 0.7) == 1.0
    assert surrogate_phi(0.0, 16.0) == 1.0
    assert surrogate_phi(99.0, 1.0) == pytest.approx(0.01, abs=1e-15)
    # tail behaves as 1/x for alpha = 1
    x = 1e6
    assert x * surrogate_phi(x, 1.0) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        surrogate_phi(1.0, 0.0)


def test_surrogate_decreasing_convex():
    xs = np.linspace(0.0, 50.0, 201)
    vals = surrogate_phi(xs, 1.3)
    assert np.all(np.diff(vals) < 0)
    assert np.all(np.diff(vals, 2) > 0)


@pytest.mark.parametrize("n_t,n_r,alpha_pub", [(1, 1, 1.306), (8, 4, 1.164), (32, 1, 1.008)])
def test_fit_alpha_spot_checks(n_t, n_r, alpha_pub):
    shape = MimoShape(n_t, n_r)
    est = RateEstimator(shape=shape, n_samples=100_000, seed=0)
    alpha, mse = fit_alpha(shape, est)
    assert alpha == pytest.approx(alpha_pub, rel=0.03)
    assert mse >= 0.0


def test_alpha_decreases_toward_one_with_more_tx_antennas():
    alphas = []
    for n_t in (4, 8, 32):
        est = RateEstimator(shape=MimoShape(n_t, 1), n_samples=30_000, seed=1)
        alphas.append(fit_alpha(MimoShape(n_t, 1), est)[0])
    assert alphas[0] > alphas[1] > alphas[2] > 1.0


def test_fit_alpha_seed_stability():
    shape = MimoShape(1, 1)
    a1, _ = fit_alpha(shape, RateEstimator(shape=shape, n_samples=100_000, seed=0))
    a2, _ = fit_alpha(shape, RateEstimator(shape=shape, n_samples=100_000, seed=12345))
    assert abs(a1 - a2) / a1 < 0.01


def test_fit_alpha_validation():
    shape = MimoShape(2, 1)
    est = RateEstimator(shape=MimoShape(1, 1), n_samples=100, seed=0)
    with pytest.raises(ValueError):
        fit_alpha(shape, est)
    good = RateEstimator(shape=shape, n_samples=100, seed=0)
    with pytest.raises(ValueError):
        fit_alpha(shape, good, grid=[150.0])


def test_alpha_lookup_uses_table_then_falls_back():
    table = SurrogateTable(entries={(8, 2): (1.071, 6.46e-4), (4, 8): (2.324, 2.4e-3),
                                    (2, 2): (1.402, 6.3e-3)})
    assert alpha_lookup(MimoShape(8, 2), table) == pytest.approx(1.071)
    assert alpha_lookup(MimoShape(4, 8), table) == pytest.approx(2.324)
    assert alpha_lookup(MimoShape(2, 2), table) == pytest.approx(1.402)
    est = RateEstimator(shape=MimoShape(2, 1), n_samples=30_000, seed=2)
    fitted = alpha_lookup(MimoShape(2, 1), table, est)
    assert fitted == pytest.approx(1.144, rel=0.03)


def test_table_shapes_cover_default_grid():
    assert len(TABLE_SHAPES) == 30
    assert MimoShape(32, 16) in TABLE_SHAPES


def test_table_roundtrip(tmp_path):
    table = fit_table(shapes=(MimoShape(1, 1), MimoShape(2, 1)),
                      n_samples=20_000, seed=3)
    path = tmp_path / "alphas.txt"
    save_surrogate_table(table, path, n_samples=20_000, seed=3)
    again = load_surrogate_table(path)
    assert again.entries.keys() == table.entries.keys()
    for key in table.entries:
        assert again.entries[key][0] == pytest.approx(table.entries[key][0])


def test_table_validation():
    with pytest.raises(ValueError):
        SurrogateTable(entries={(1, 1): (-1.0, 0.0)})
