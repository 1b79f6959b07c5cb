"""Autocorrelation estimation and AR(p) fitting.

Autocovariances use the biased (divide-by-T) estimator on centered data,
which keeps every autocovariance sequence positive semidefinite so the
Yule-Walker system is always well posed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

REFLECTION_LIMIT = 1.0 - 1e-6
DEFAULT_PMAX = 10


def _as_matrix(x):
    x = np.asarray(x, dtype=float)
    return (x[:, None], True) if x.ndim == 1 else (x, False)


def autocovariance(x, max_lag=None):
    """Biased autocovariance of the columns of ``x`` at lags ``0..max_lag``."""
    x, squeeze = _as_matrix(x)
    T = x.shape[0]
    L = T - 1 if max_lag is None else int(max_lag)
    if not 0 <= L < T:
        raise ValueError(f"max_lag must lie in [0, {T - 1}], got {L}")
    xc = x - x.mean(axis=0)
    if L <= 40:
        acov = np.empty((L + 1, x.shape[1]))
        for u in range(L + 1):
            acov[u] = np.einsum("ij,ij->j", xc[: T - u], xc[u:])
    else:
        nfft = 1 << int(np.ceil(np.log2(2 * T - 1)))
        F = np.fft.rfft(xc, nfft, axis=0)
        acov = np.fft.irfft(F.real ** 2 + F.imag ** 2, nfft, axis=0)[: L + 1]
    acov /= T
    return acov[:, 0] if squeeze else acov


@dataclass(frozen=True)
class AcfField:
    """Empirical autocorrelations, shape ``(max_lag + 1, V)``.

    ``zero_variance`` flags columns whose ACF is set to ``(1, 0, 0, ...)``.
    """

    acf: np.ndarray
    max_lag: int
    zero_variance: np.ndarray

    @property
    def V(self):
        return self.acf.shape[1]


def empirical_acf(residuals, max_lag=None):
    """Biased sample ACF ``r_u = sum (e_t - m)(e_{t+u} - m) / sum (e_t - m)^2``.

    ``max_lag`` defaults to ``T - 1`` (all lags).
    """
    x, _ = _as_matrix(residuals)
    acov = autocovariance(x, max_lag)
    L = acov.shape[0] - 1
    scale = np.abs(x).max(axis=0) if x.size else np.zeros(x.shape[1])
    zero = acov[0] <= (np.finfo(float).eps * np.maximum(scale, 1e-300)) ** 2 * x.shape[0]
    acf = np.zeros_like(acov)
    ok = ~zero
    acf[:, ok] = acov[:, ok] / acov[0, ok]
    acf[0] = 1.0
    if zero.any():
        logger.warning("%d zero-variance column(s) in ACF input", int(zero.sum()))
    return AcfField(acf, L, zero)


@dataclass(frozen=True)
class AciField:
    aci: np.ndarray
    max_lag: int


def aci(acf, max_lag=None):
    """Autocorrelation index: sum of squared autocorrelations, lag 0 included.

    By default every lag held in ``acf`` is used. ``max_lag`` gives the
    truncated variant (lags ``0..max_lag`` only), which is cheaper and has a
    much smaller finite-sample upward bias than the full-lag sum.
    """
    a = acf.acf if isinstance(acf, AcfField) else np.asarray(acf, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    L = a.shape[0] - 1 if max_lag is None else min(int(max_lag), a.shape[0] - 1)
    return AciField(np.sum(a[: L + 1] ** 2, axis=0), L)


def levinson_path(r, order):
    """Run the Levinson-Durbin recursion on autocovariances ``r[0..order]``.

    ``r`` may be a vector or an ``(order + 1, V)`` matrix (one column per
    series). Returns ``(phis, variances, reflections, clamped)`` where
    ``phis[m]`` holds the order-``m`` coefficients (``m`` rows),
    ``variances[m]`` the order-``m`` innovation variance and ``clamped``
    flags series with a reflection coefficient outside ``(-1, 1)``, which is
    clamped to ``+-(1 - 1e-6)``.
    """
    r, squeeze = _as_matrix(r)
    if r.shape[0] < order + 1:
        raise ValueError(f"need {order + 1} autocovariance lags, got {r.shape[0]}")
    V = r.shape[1]
    phi = np.zeros((0, V))
    var = r[0].copy()
    phis, variances, reflections = [phi], [var.copy()], []
    clamped = np.zeros(V, bool)
    degenerate = var <= 0
    for m in range(1, order + 1):
        num = r[m] - np.einsum("jv,jv->v", phi, r[m - 1:0:-1]) if m > 1 else r[1].copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, var))
        bad = np.abs(k) >= REFLECTION_LIMIT
        if bad.any():
            clamped |= bad
            k = np.where(bad, np.sign(k) * REFLECTION_LIMIT, k)
        phi = np.vstack([phi - k * phi[::-1], k])
        var = var * (1.0 - k ** 2)
        phis.append(phi)
        variances.append(var.copy())
        reflections.append(k)
    if squeeze:
        phis = [p[:, 0] for p in phis]
        variances = [float(v[0]) for v in variances]
        reflections = np.array([float(k[0]) for k in reflections])
        clamped = bool(clamped[0])
    else:
        variances = np.array(variances)
        reflections = np.array(reflections).reshape(order, V)
    return phis, variances, reflections, clamped


def levinson_durbin(r, order):
    """Solve the order-``p`` Yule-Walker system.

    Parameters
    ----------
    r : array_like
        Autocorrelations (or autocovariances) at lags ``0..order``.
    order : int

    Returns
    -------
    phi : ndarray, shape (order,)
    s : float
        Innovation variance ``r[0] * prod(1 - k_j**2)``.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    r = np.asarray(r, dtype=float)
    if r.ndim != 1:
        raise ValueError("levinson_durbin takes a single autocorrelation sequence")
    phis, variances, _, clamped = levinson_path(r, order)
    if clamped:
        logger.warning("non-stationary Yule-Walker solution clamped")
    return phis[order], variances[order]


def aic_curve(variances, T):
    """``T ln(s_p) + 2 (p + 1)`` for each order; ``inf`` where ``s_p <= 0``."""
    v = np.asarray(variances, dtype=float)
    p = np.arange(v.shape[0]).reshape((-1,) + (1,) * (v.ndim - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = T * np.log(v) + 2.0 * (p + 1)
    return np.where(v > 0, out, np.inf)


def select_order_aic(x, p_max=DEFAULT_PMAX):
    """AIC-optimal AR order for one series.

    Returns ``(order, phi, s)`` with ``phi`` of length ``p_max``; entries
    above the selected order are exactly zero. Ties go to the lower order.
    """
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    if T <= 3 * p_max:
        raise ValueError(f"series too short for p_max={p_max}: T={T}")
    r = autocovariance(x, p_max)
    phis, variances, _, _ = levinson_path(r, p_max)
    crit = aic_curve(variances, T)
    order = int(np.argmin(crit))
    phi = np.zeros(p_max)
    phi[:order] = phis[order]
    return order, phi, float(variances[order])


@dataclass(frozen=True)
class ArField:
    """Per-vertex AR parameters.

    Attributes
    ----------
    phi : ndarray, shape (p_max, V)
        Coefficients; rows above ``order[v]`` are zero.
    s : ndarray, shape (V,)
        Innovation (white-noise) variance.
    order : ndarray of int, shape (V,)
    p_max : int
    flags : ndarray of bool, shape (V,)
        Vertices whose fit was clamped or found non-stationary.
    """

    phi: np.ndarray
    s: np.ndarray
    order: np.ndarray
    p_max: int
    flags: np.ndarray = None

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        V = phi.shape[1]
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float).reshape(V))
        object.__setattr__(self, "order", np.asarray(self.order, dtype=int).reshape(V))
        object.__setattr__(self, "p_max", int(self.p_max))
        if self.flags is None:
            object.__setattr__(self, "flags", np.zeros(V, bool))

    @property
    def V(self):
        return self.phi.shape[1]

    def column(self, v):
        return self.phi[: self.order[v], v], float(self.s[v])

    def is_global(self):
        """True when every vertex carries the same parameters."""
        return bool(np.all(self.phi == self.phi[:, :1]) and np.all(self.s == self.s[0])
                    and np.all(self.order == self.order[0]))


def fit_ar_field(residuals, order=6, p_max=DEFAULT_PMAX, constant=None):
    """Fit AR models to every column of ``residuals``.

    ``order`` is a fixed integer or ``"aic"`` (per-vertex selection up to
    ``p_max``). Zero-variance columns get zero coefficients and unit
    variance and are flagged.
    """
    x, _ = _as_matrix(residuals)
    T, V = x.shape
    if order == "aic":
        pm = int(p_max)
        if T <= 3 * pm:
            raise ValueError(f"series too short for p_max={pm}: T={T}")
    else:
        pm = int(order)
        if pm < 0 or pm >= T:
            raise ValueError(f"AR order must lie in [0, {T - 1}]")
    r = autocovariance(x, pm)
    zero = r[0] <= 0 if constant is None else (np.asarray(constant, bool) | (r[0] <= 0))
    phis, variances, _, clamped = levinson_path(r, pm)
    phi = np.zeros((pm, V))
    if order == "aic":
        sel = np.argmin(aic_curve(variances, T), axis=0)
        s = variances[sel, np.arange(V)]
        for p in range(1, pm + 1):
            cols = sel == p
            phi[:p, cols] = phis[p][:, cols]
    else:
        sel = np.full(V, pm)
        phi[:] = phis[pm]
        s = variances[pm].copy()
    phi[:, zero] = 0.0
    s = np.where(zero, 1.0, s)
    sel = np.where(zero, 0, sel)
    flags = clamped | zero
    nonstat = ~stationary(phi)
    if nonstat.any():
        logger.warning("%d vertices with non-stationary AR fit", int(nonstat.sum()))
    return ArField(phi, s, sel, pm, flags | nonstat)


def stationary(phi):
    """Whether each AR polynomial (columns of ``phi``) has all roots outside
    the unit circle, i.e. companion spectral radius below one."""
    phi, squeeze = _as_matrix(phi)
    p, V = phi.shape
    if p == 0:
        out = np.ones(V, bool)
    else:
        comp = np.zeros((V, p, p))
        comp[:, 0, :] = phi.T
        if p > 1:
            comp[:, np.arange(1, p), np.arange(p - 1)] = 1.0
        radius = np.abs(np.linalg.eigvals(comp)).max(axis=1)
        out = radius < 1.0
    return bool(out[0]) if squeeze else out


def to_reflection(phi):
    """Step-down recursion: AR coefficients to reflection coefficients.

    Reflection coefficients at or beyond the unit bound are clamped to
    ``+-(1 - 1e-6)`` as they are met, so the output always describes a
    stationary model.
    """
    a = np.array(phi, dtype=float)
    p = a.shape[0]
    k = np.zeros(p)
    for m in range(p, 0, -1):
        km = a[m - 1]
        if abs(km) >= REFLECTION_LIMIT:
            km = np.sign(km) * REFLECTION_LIMIT
        k[m - 1] = km
        if m > 1:
            a = (a[: m - 1] + km * a[m - 2::-1]) / (1.0 - km ** 2)
    return k


def from_reflection(k):
    """Step-up recursion: reflection coefficients to AR coefficients."""
    phi = np.zeros(0)
    for km in np.asarray(k, dtype=float):
        phi = np.append(phi - km * phi[::-1], km)
    return phi


def stabilize(ar):
    """Clamp non-stationary vertices of an :class:`ArField` through their
    reflection coefficients; returns a new field with those vertices
    flagged."""
    bad = ~stationary(ar.phi)
    if not bad.any():
        return ar
    phi = ar.phi.copy()
    for v in np.flatnonzero(bad):
        p = int(ar.order[v]) or ar.p_max
        phi[:p, v] = from_reflection(to_reflection(phi[:p, v]))
    logger.warning("clamped %d non-stationary vertices", int(bad.sum()))
    return ArField(phi, ar.s, ar.order, ar.p_max, ar.flags | bad)
