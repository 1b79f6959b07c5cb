import math
import warnings

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from prewhiten.design import (OVERSAMPLE, assemble_design, build_design, canonical_hrf,
                              convolve_events, dct_bases, hrf_derivatives)
from prewhiten.errors import RankError
from prewhiten.io import Condition, EventSchedule
from prewhiten.sim import boxcar_design, boxcar_events


def _gamma_pdf(t, a):
    # closed form, independent of scipy.stats
    return np.where(t > 0, np.power(np.maximum(t, 1e-300), a - 1) * np.exp(-t)
                    / math.gamma(a), 0.0)


def _double_gamma_oracle(t):
    return _gamma_pdf(t, 6.0) - _gamma_pdf(t, 16.0) / 6.0


def test_hrf_shape_and_peak():
    h = canonical_hrf(0.1, 32.0)
    assert h.kernel[0] == 0.0
    assert h.kernel.max() == 1.0
    assert h.times[np.argmax(h.kernel)] == pytest.approx(5.0)
    ref = _double_gamma_oracle(h.times)
    np.testing.assert_allclose(h.kernel, ref / ref.max(), atol=1e-12)


def test_hrf_bad_dt():
    with pytest.raises(ValueError):
        canonical_hrf(0.0)


def test_temporal_derivative_integral():
    dt = 0.1
    h = canonical_hrf(dt, 32.0)
    td, _ = hrf_derivatives(h)
    # telescoping sum leaves only the response in the final second of the window
    tail = h.kernel[h.times > 31.0 + 1e-9].sum() * dt
    assert td.kernel.sum() * dt == pytest.approx(tail, abs=1e-12)
    # on a window long enough for the undershoot to decay it integrates to ~0
    td40, _ = hrf_derivatives(canonical_hrf(dt, 40.0))
    assert abs(td40.kernel.sum() * dt) < 1e-3 * dt


def test_derivative_definitions():
    h = canonical_hrf(0.05)
    td, dd = hrf_derivatives(h)
    t = h.times
    norm = _double_gamma_oracle(t).max()
    np.testing.assert_allclose(td.kernel, (_double_gamma_oracle(t)
                                           - _double_gamma_oracle(t - 1.0)) / norm, atol=1e-12)
    scaled = _gamma_pdf(t / 1.01, 6.0) / 1.01 - _gamma_pdf(t / 1.01, 16.0) / 1.01 / 6.0
    np.testing.assert_allclose(dd.kernel, (_double_gamma_oracle(t) - scaled) / norm / 0.01,
                               atol=1e-10)


@pytest.mark.parametrize("shift", [-0.5, -0.25, -0.1, 0.1, 0.25, 0.5])
def test_shift_recovered_by_temporal_derivative(shift):
    h = canonical_hrf(0.05)
    td, _ = hrf_derivatives(h)
    y = h.evaluate(h.times - shift)
    coef = np.linalg.lstsq(np.column_stack([h.kernel, td.kernel]), y, rcond=None)[0]
    # backward difference: h(t - s) ~ h(t) - s * td(t)
    assert -coef[1] == pytest.approx(shift, rel=0.10)


def test_zero_dispersion_delta_rejected():
    with pytest.raises(ValueError):
        hrf_derivatives(canonical_hrf(0.1), delta=0.0)


def test_empty_schedule_gives_zero_column():
    h = canonical_hrf(0.72 / OVERSAMPLE)
    assert not convolve_events(EventSchedule(()), h, 50, 0.72).any()


def test_impulse_reproduces_kernel():
    tr = 0.72
    dt = tr / OVERSAMPLE
    h = canonical_hrf(dt)
    col = convolve_events(Condition("imp", [0.0], [dt], [1.0 / dt]), h, 40, tr)
    expect = _double_gamma_oracle(np.arange(40) * tr) / _double_gamma_oracle(h.times).max()
    np.testing.assert_allclose(col, expect, atol=1e-12)


def test_boxcar_first_nonzero_index():
    col = boxcar_design().matrix[:, 1]
    assert np.flatnonzero(col)[0] == math.ceil(20 / 0.72) == 28


def test_amplitude_scaling_is_exact():
    h = canonical_hrf(0.72 / OVERSAMPLE)
    a = convolve_events(Condition("c", [5, 30], [4, 4], [1, 1]), h, 100, 0.72)
    b = convolve_events(Condition("c", [5, 30], [4, 4], [2, 2]), h, 100, 0.72)
    assert np.array_equal(b, 2 * a)


def test_event_past_end_truncated():
    h = canonical_hrf(1.0 / OVERSAMPLE)
    col = convolve_events(Condition("c", [8.0], [100.0]), h, 10, 1.0)
    assert col.shape == (10,)
    assert np.isfinite(col).all()


def test_dct_count_norm_orthogonality():
    C = dct_bases(284, 0.72, 0.01)
    assert C.shape == (284, math.floor(2 * 284 * 0.72 * 0.01)) == (284, 4)
    np.testing.assert_allclose(np.linalg.norm(C, axis=0), 1.0, atol=1e-12)
    G = C.T @ C
    assert np.abs(G - np.eye(4)).max() < 1e-10


def test_dct_matches_oracle_subspace():
    T, tr, cut = 200, 2.0, 0.008
    C = dct_bases(T, tr, cut)
    K = C.shape[1]
    # DCT-II basis vectors via scipy's inverse transform of unit vectors
    from scipy.fft import idct
    ref = np.column_stack([idct(np.eye(T)[k], norm="ortho") for k in range(1, K + 1)])
    assert subspace_angles(C, ref).max() < 1e-8


def test_dct_empty_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        C = dct_bases(20, 1.0, 0.01)
    assert C.shape == (20, 0)
    assert w


def test_duplicate_task_rank_error():
    x = np.random.default_rng(0).standard_normal(50)
    with pytest.raises(RankError, match="task2") as exc:
        assemble_design(np.column_stack([x, x]))
    assert exc.value.name == "task2"


def test_intercept_collinear_nuisance():
    with pytest.raises(RankError, match="nuisance1"):
        assemble_design(np.arange(10.0), nuisance_cols=np.full(10, 2.0))


def test_standard_null_design():
    X = boxcar_design()
    assert X.matrix.shape == (284, 6)
    assert X.roles == ("intercept", "task", "drift", "drift", "drift", "drift")
    assert X.roles.count("intercept") == 1


def test_twelve_nuisance_columns():
    rng = np.random.default_rng(4)
    X = assemble_design(rng.standard_normal(100), nuisance_cols=rng.standard_normal((100, 12)))
    assert len(X.columns("nuisance")) == 12
    assert X.K == 14


@pytest.mark.parametrize("hrf, k", [("canonical", 6), ("+td", 7), ("+td+dd", 8)])
def test_build_design_hrf_variants(hrf, k):
    X = build_design(284, 0.72, boxcar_events(), hrf)
    assert X.K == k
    assert X.names[1] == "boxcar"
    if hrf == "+td+dd":
        assert X.roles[2:4] == ("temporal-derivative", "dispersion-derivative")
