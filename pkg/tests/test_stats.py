import math

import numpy as np
import pytest
from scipy import integrate

from prewhiten.sim import gen_ar_series
from prewhiten.stats import (agresti_coull, ar_adjusted_dof, bonferroni, chi2_sf, fdr_bh,
                             ljung_box, ljung_box_field, summarize_error_rates)


def _chi2_tail_quad(x, k):
    # numerical integration of the chi-square density as an oracle
    c = 1.0 / (2 ** (k / 2) * math.gamma(k / 2))
    f = lambda t: c * t ** (k / 2 - 1) * math.exp(-t / 2)
    return integrate.quad(f, x, np.inf, epsabs=1e-14, epsrel=1e-12)[0]


def test_chi2_zero_and_k2_closed_form():
    assert chi2_sf(0.0, 5) == 1.0
    assert chi2_sf(2 * math.log(20), 2) == pytest.approx(0.05, abs=1e-15)
    x = np.linspace(0, 60, 1000)
    assert np.abs(chi2_sf(x, 2) - np.exp(-x / 2)).max() < 1e-12


def test_chi2_k1_normal_tail():
    assert chi2_sf(3.8415, 1) == pytest.approx(0.05, abs=1e-4)
    z = 1.95996
    assert chi2_sf(z * z, 1) == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-10)


def test_chi2_19_critical_value():
    assert chi2_sf(30.144, 19) == pytest.approx(0.05, abs=1e-3)


@pytest.mark.parametrize("x, k", [(3.0, 3), (17.2, 7), (30.144, 19), (55.0, 40)])
def test_chi2_against_quadrature(x, k):
    assert chi2_sf(x, k) == pytest.approx(_chi2_tail_quad(x, k), rel=1e-9)


def test_chi2_decreasing_and_errors():
    x = np.linspace(0, 50, 200)
    assert np.all(np.diff(chi2_sf(x, 7)) < 0)
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 3)
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)


def test_dof_formula():
    assert ar_adjusted_dof(20, 6, 100, 284) == 17
    assert ar_adjusted_dof(20, 0, 100, 284) == 19


def test_dof_clamp_warns():
    with pytest.warns(UserWarning):
        assert ar_adjusted_dof(3, 10, 100, 100) == 1


def test_ljung_box_zero_correlation():
    # zero-mean series whose two nonzero samples are farther apart than h
    x = np.zeros(50)
    x[0], x[49] = 1.0, -1.0
    Q, dof, p = ljung_box(x, 5)
    assert (Q, dof, p) == (0.0, 4, 1.0)


def test_ljung_box_hand_statistic():
    x = np.random.default_rng(0).standard_normal(120)
    xc = x - x.mean()
    r = np.array([np.dot(xc[:-u], xc[u:]) for u in range(1, 11)]) / np.dot(xc, xc)
    Q_ref = 120 * 122 * np.sum(r ** 2 / (120 - np.arange(1, 11)))
    Q, dof, p = ljung_box(x, 10)
    assert Q == pytest.approx(Q_ref, rel=1e-12)
    assert p == pytest.approx(_chi2_tail_quad(Q_ref, 9), rel=1e-8)


def test_ljung_box_scale_invariance():
    x = gen_ar_series([0.3], 1.0, 200, seed=1)
    assert ljung_box(x, 20)[0] == pytest.approx(ljung_box(-7.5 * x, 20)[0], rel=1e-12)


def test_ljung_box_needs_n_above_h():
    with pytest.raises(ValueError):
        ljung_box(np.arange(20.0), 20)


def test_ljung_box_ar_mode_per_vertex_dof():
    X = np.random.default_rng(2).standard_normal((284, 3))
    _, dof, _ = ljung_box(X[:100], 20, "ar", p=np.array([0, 6, 10]), T_full=284)
    assert dof.tolist() == [19, 17, 15]
    with pytest.raises(ValueError):
        ljung_box(X[:100], 20, "ar")


def test_ljung_box_null_size_at_n100_h20():
    # with 20 lags on 100 samples the statistic is oversized; h - 1 dof adds to it
    X = np.random.default_rng(3).standard_normal((100, 10000))
    Q, _, p = ljung_box(X, 20)
    intercept_rate = np.mean(p < 0.05)
    full_dof_rate = np.mean(chi2_sf(Q, 20) < 0.05)
    assert 0.05 < full_dof_rate < intercept_rate < 0.11


def test_ljung_box_null_size_long_series():
    X = np.random.default_rng(8).standard_normal((1000, 4000))
    Q, _, _ = ljung_box(X, 20)
    assert 0.04 <= np.mean(chi2_sf(Q, 20) < 0.05) <= 0.06


def test_ljung_box_field_fdr_and_exclusion():
    rng = np.random.default_rng(4)
    R = rng.standard_normal((284, 6))
    R[:, 0] = gen_ar_series([0.8], 1.0, 284, seed=5)
    res = ljung_box_field(R, exclude=np.array([False, False, False, False, False, True]))
    assert res.significant_mask[0]
    assert not res.significant_mask[5]
    assert res.lags == 20
    assert np.all(res.statistic >= 0) and np.all((res.pvalue >= 0) & (res.pvalue <= 1))


def test_bh_examples():
    assert not fdr_bh(np.ones(5)).any()
    assert fdr_bh([0.04], 0.05).tolist() == [True]
    assert fdr_bh([0.01, 0.02, 0.03, 0.5], 0.05).tolist() == [True, True, True, False]
    # equality counts as rejection
    assert fdr_bh([0.025, 0.5], 0.05).tolist() == [True, False]
    with pytest.raises(ValueError):
        fdr_bh([])


def test_bh_step_up_beyond_first_failure():
    # p_(2) fails its own threshold but p_(3) passes, so all three are rejected
    assert fdr_bh([0.001, 0.04, 0.045, 0.9], 0.06).tolist() == [True, True, True, False]


def test_bh_monotone():
    rng = np.random.default_rng(6)
    for _ in range(200):
        p = rng.uniform(0, 0.2, 12)
        base = fdr_bh(p)
        i = rng.integers(12)
        p2 = p.copy()
        p2[i] *= rng.uniform(0, 1)
        assert np.all(fdr_bh(p2) >= base)


def test_bonferroni_examples():
    m = 6000
    thr = 0.05 / m
    assert thr == pytest.approx(8.333e-6, rel=1e-4)
    p = np.ones(m)
    p[0] = thr
    p[1] = np.nextafter(thr, 0)
    mask = bonferroni(p)
    assert not mask[0] and mask[1]
    assert bonferroni([0.049]).tolist() == [True]
    assert bonferroni([0.05]).tolist() == [False]


def _ac_oracle(x, n, z=1.95996):
    nt = n + z * z
    pt = (x + z * z / 2) / nt
    h = z * math.sqrt(pt * (1 - pt) / nt)
    return max(0.0, pt - h), min(1.0, pt + h)


def test_agresti_coull_examples():
    lo, hi = agresti_coull(0, 100)
    assert lo == 0.0
    assert hi == pytest.approx(0.0444, abs=5e-4)
    assert agresti_coull(100, 100)[1] == 1.0
    lo, hi = agresti_coull(8, 160)
    assert lo < 0.05 < hi
    for x, n in [(3, 17), (10, 200), (50, 60)]:
        assert agresti_coull(x, n) == pytest.approx(_ac_oracle(x, n), abs=1e-15)


def test_agresti_coull_errors():
    with pytest.raises(ValueError):
        agresti_coull(0, 0)
    with pytest.raises(ValueError):
        agresti_coull(5, 4)


def test_summaries():
    s = summarize_error_rates(np.zeros((10, 30), bool))
    assert s.fwer == 0 and not s.fpr_per_scan.any()
    m = np.zeros((10, 30), bool)
    m[4, 7] = True
    s = summarize_error_rates(m)
    assert s.fwer == pytest.approx(0.1)
    assert s.fpr_per_scan[4] == pytest.approx(1 / 30)
    assert s.ci_low <= s.fwer <= s.ci_high
    d = s.to_dict()
    assert d["n_scans"] == 10 and d["mean_fpr"] == pytest.approx(1 / 300)


def test_summary_exclusion():
    m = np.zeros((2, 4), bool)
    m[0, 3] = True
    s = summarize_error_rates(m, exclude=np.array([False, False, False, True]))
    assert s.fwer == 0.0


def test_simulated_null_fwer_inside_band():
    rng = np.random.default_rng(7)
    masks = np.array([bonferroni(rng.uniform(size=500)) for _ in range(200)])
    s = summarize_error_rates(masks)
    lo, hi = agresti_coull(10, 200)
    assert lo <= s.fwer <= hi
