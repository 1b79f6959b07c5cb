import numpy as np
import pytest
from scipy.linalg import solve_toeplitz

from prewhiten.arfit import (REFLECTION_LIMIT, ArField, aci, aic_curve, autocovariance,
                             empirical_acf, fit_ar_field, from_reflection, levinson_durbin,
                             levinson_path, select_order_aic, stabilize, stationary,
                             to_reflection)
from prewhiten.sim import analytic_acf, analytic_aci, gen_ar_series


def test_ramp_lag_one_near_one():
    r = empirical_acf(np.arange(50.0), 1).acf
    assert r[0, 0] == 1.0
    assert r[1, 0] >= 0.9


def test_white_noise_band():
    x = np.random.default_rng(0).standard_normal(10000)
    r = empirical_acf(x, 20).acf[1:, 0]
    assert np.mean(np.abs(r) < 3 / np.sqrt(10000)) >= 0.99


def test_ar1_acf_matches_geometric():
    x = gen_ar_series([0.5], 1.0, 10000, seed=3)
    r = empirical_acf(x, 5).acf[:, 0]
    np.testing.assert_allclose(r[1:], 0.5 ** np.arange(1, 6), atol=0.03)


def test_fft_and_direct_autocovariance_agree():
    x = np.random.default_rng(1).standard_normal((300, 3))
    direct = autocovariance(x, 40)
    fft = autocovariance(x, 41)[:41]
    np.testing.assert_allclose(fft, direct, atol=1e-12)


def test_acf_bounds_and_zero_variance():
    rng = np.random.default_rng(2)
    x = np.column_stack([rng.standard_normal(100), np.full(100, 4.0)])
    f = empirical_acf(x)
    assert f.max_lag == 99
    assert np.all(np.abs(f.acf) <= 1 + 1e-9)
    assert f.zero_variance.tolist() == [False, True]
    assert f.acf[0, 1] == 1.0 and not f.acf[1:, 1].any()


def test_max_lag_out_of_range():
    with pytest.raises(ValueError):
        empirical_acf(np.ones(5) * np.arange(5), 5)


def test_aci_examples():
    assert aci(np.r_[1.0, np.zeros(10)]).aci[0] == 1.0
    rho = 0.5 ** np.arange(200)
    assert aci(rho).aci[0] == pytest.approx(4 / 3, abs=1e-12)
    assert aci(rho, max_lag=1).aci[0] == pytest.approx(1.25)


def test_aci_lower_bound():
    x = np.random.default_rng(4).standard_normal((64, 50))
    assert np.all(aci(empirical_acf(x)).aci >= 1 - 1e-9)


def test_full_lag_aci_has_documented_upward_bias():
    # sum of squared sample correlations over all lags: about +0.5 for white noise
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1200, 400))
    full = aci(empirical_acf(x)).aci.mean()
    trunc = aci(empirical_acf(x, 60)).aci.mean()
    assert 1.4 < full < 1.6
    assert abs(trunc - 1.05) < 0.02


def test_truncated_aci_converges_at_long_T():
    phi = (0.5, 0.3, 0.1)
    x = np.column_stack([gen_ar_series(phi, 1.0, 10000, seed=6, vertex=v) for v in range(40)])
    est = aci(empirical_acf(x, 100)).aci.mean()
    assert est == pytest.approx(analytic_aci(phi), abs=0.3)


def test_levinson_ar1_closed_form():
    phi, s = levinson_durbin([2.0, 1.2], 1)
    assert phi[0] == pytest.approx(0.6)
    assert s == pytest.approx(2.0 * 0.64)


def test_levinson_recovers_ar2():
    rho = analytic_acf((0.5, -0.3), 2)
    phi, _ = levinson_durbin(rho, 2)
    np.testing.assert_allclose(phi, [0.5, -0.3], atol=1e-10)


@pytest.mark.parametrize("p", [1, 4, 10])
def test_white_noise_acf_gives_zero_phi(p):
    phi, s = levinson_durbin(np.r_[3.0, np.zeros(p)], p)
    assert not phi.any()
    assert s == 3.0


def _random_stationary_acf(rng, p):
    k = rng.uniform(-0.9, 0.9, p)
    return analytic_acf(from_reflection(k), p)


def test_levinson_matches_toeplitz_solve():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(1000):
        p = 1 + i % 10
        r = _random_stationary_acf(rng, p)
        phi, _ = levinson_durbin(r, p)
        ref = solve_toeplitz(r[:p], r[1: p + 1])
        worst = max(worst, np.abs(phi - ref).max())
    assert worst < 1e-10


def test_vectorized_path_matches_scalar():
    rng = np.random.default_rng(8)
    R = np.column_stack([_random_stationary_acf(rng, 5) for _ in range(20)])
    phis, var, _, _ = levinson_path(R, 5)
    for v in range(20):
        phi, s = levinson_durbin(R[:, v], 5)
        np.testing.assert_allclose(phis[5][:, v], phi, atol=1e-14)
        assert var[5, v] == pytest.approx(s)


def test_innovation_variance_monotone():
    x = gen_ar_series((0.4, 0.2), 1.0, 500, seed=9)
    _, var, _, _ = levinson_path(autocovariance(x, 10), 10)
    assert np.all(np.diff(var) <= 1e-15)


def test_reflection_clamped(caplog):
    phi, s = levinson_durbin([1.0, 1.0], 1)
    assert phi[0] == pytest.approx(REFLECTION_LIMIT)
    assert s >= 0
    assert "clamped" in caplog.text


def test_reflection_roundtrip():
    k = np.array([0.3, -0.5, 0.2])
    np.testing.assert_allclose(to_reflection(from_reflection(k)), k, atol=1e-12)


def test_aic_ties_go_to_lower_order():
    # T = 2: orders 0 and 1 both score 2.0, order 2 scores 6.0
    crit = aic_curve(np.array([1.0, np.exp(-1.0), 1.0]), 2)
    assert crit[0] == crit[1] == 2.0
    assert np.argmin(crit) == 0


def test_aic_picks_zero_for_white_noise_on_average():
    picks = [select_order_aic(gen_ar_series((), 1.0, 2000, seed=10, vertex=v))[0]
             for v in range(100)]
    assert np.mean(np.array(picks) == 0) >= 0.7


def test_aic_gm_order_range_and_zero_tail():
    orders = []
    for v in range(100):
        order, phi, s = select_order_aic(
            gen_ar_series((0.425, 0.25, 0.1), 1.0, 2000, seed=11, vertex=v))
        assert phi.shape == (10,)
        assert not phi[order:].any()
        assert s > 0
        orders.append(order)
    assert np.mean((np.array(orders) >= 3) & (np.array(orders) <= 6)) >= 0.9


def test_aic_requires_long_series():
    with pytest.raises(ValueError):
        select_order_aic(np.random.default_rng(0).standard_normal(30), 10)


def test_fit_field_fixed_and_aic():
    rng = np.random.default_rng(12)
    x = np.column_stack([rng.standard_normal(300), np.full(300, 1.0)])
    f = fit_ar_field(x, 6)
    assert f.phi.shape == (6, 2)
    assert f.order.tolist() == [6, 0]
    assert f.flags.tolist() == [False, True]
    assert not f.phi[:, 1].any() and f.s[1] == 1.0
    g = fit_ar_field(x, "aic", p_max=10)
    for v in range(2):
        assert not g.phi[g.order[v]:, v].any()


def test_field_matches_per_series_aic():
    x = np.column_stack([gen_ar_series((0.5, 0.3, 0.1), 1.0, 400, seed=13, vertex=v)
                         for v in range(5)])
    f = fit_ar_field(x, "aic")
    for v in range(5):
        order, phi, s = select_order_aic(x[:, v])
        assert f.order[v] == order
        np.testing.assert_allclose(f.phi[:, v], phi, atol=1e-12)
        assert f.s[v] == pytest.approx(s)


def test_stationarity_and_stabilize():
    phi = np.array([[0.5, 1.2], [0.0, 0.0]])
    assert stationary(phi).tolist() == [True, False]
    ar = stabilize(ArField(phi, [1.0, 1.0], [1, 1], 2))
    assert ar.flags.tolist() == [False, True]
    assert stationary(ar.phi).all()


def test_global_detection():
    assert ArField(np.ones((2, 3)) * 0.2, [1, 1, 1], [2, 2, 2], 2).is_global()
    assert not ArField(np.array([[0.2, 0.3]]), [1, 1], [1, 1], 1).is_global()
