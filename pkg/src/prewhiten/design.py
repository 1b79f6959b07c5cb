"""Design matrix construction: HRF-convolved task regressors, derivatives,
cosine drift terms, intercept and pass-through nuisance columns."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError, RankError

logger = logging.getLogger(__name__)

OVERSAMPLE = 16

# double-gamma parameters: (shape, scale) of response and undershoot
RESPONSE_SHAPE, RESPONSE_SCALE = 6.0, 1.0
UNDERSHOOT_SHAPE, UNDERSHOOT_SCALE = 16.0, 1.0
UNDERSHOOT_RATIO = 1.0 / 6.0

TEMPORAL_SHIFT = 1.0
DISPERSION_DELTA = 0.01

ROLES = ("intercept", "task", "temporal-derivative", "dispersion-derivative",
         "drift", "nuisance")


def _double_gamma(t, scale_factor=1.0):
    t = np.asarray(t, dtype=float)
    g1 = stats.gamma.pdf(t, RESPONSE_SHAPE, scale=RESPONSE_SCALE * scale_factor)
    g2 = stats.gamma.pdf(t, UNDERSHOOT_SHAPE, scale=UNDERSHOOT_SCALE * scale_factor)
    return g1 - UNDERSHOOT_RATIO * g2


@dataclass(frozen=True)
class HrfBasis:
    """Sampled impulse response.

    ``dt`` and ``duration`` describe the sampling grid ``0, dt, ...``;
    ``norm`` is the peak value of the unnormalized canonical response so
    that every variant can be re-evaluated on another grid.
    """

    kernel: np.ndarray
    dt: float
    duration: float
    variant: str = "canonical"
    norm: float = 1.0
    delta: float = DISPERSION_DELTA

    @property
    def times(self):
        return np.arange(len(self.kernel)) * self.dt

    def evaluate(self, t):
        """Evaluate this basis function at arbitrary times (seconds)."""
        t = np.asarray(t, dtype=float)
        h = lambda s, f=1.0: _double_gamma(s, f) / self.norm  # noqa: E731
        if self.variant == "canonical":
            return h(t)
        if self.variant == "temporal-derivative":
            return (h(t) - h(t - TEMPORAL_SHIFT)) / TEMPORAL_SHIFT
        if self.variant == "dispersion-derivative":
            return (h(t) - h(t, 1.0 + self.delta)) / self.delta
        raise ValueError(f"unknown HRF variant {self.variant!r}")

    def resample(self, dt):
        """Same basis function sampled at a new step."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        t = np.arange(int(np.floor(self.duration / dt + 1e-9)) + 1) * dt
        return HrfBasis(self.evaluate(t), dt, self.duration, self.variant,
                        self.norm, self.delta)


def canonical_hrf(dt, duration=32.0):
    """Peak-normalized difference of two gamma densities sampled at ``dt``.

    Response gamma has shape 6, undershoot gamma shape 16 (both scale 1 s),
    undershoot ratio 1/6.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t = np.arange(int(np.floor(duration / dt + 1e-9)) + 1) * dt
    raw = _double_gamma(t)
    # normalized on the sampled grid so the kernel peak is exactly 1
    norm = float(raw.max())
    kernel = raw / norm
    return HrfBasis(kernel, float(dt), float(duration), "canonical", norm)


def hrf_derivatives(h, delta=DISPERSION_DELTA):
    """Temporal and dispersion derivatives of a canonical HRF.

    The temporal derivative is the backward difference
    ``h(t) - h(t - 1 s)``; the dispersion derivative is
    ``(h(t) - h_d(t)) / delta`` with both gamma scales inflated by
    ``1 + delta``.
    """
    if h.variant != "canonical":
        raise ValueError("derivatives are defined for the canonical HRF only")
    if delta == 0:
        raise ValueError("dispersion delta must be nonzero")
    return tuple(
        HrfBasis(np.empty(0), h.dt, h.duration, variant, h.norm, delta).resample(h.dt)
        for variant in ("temporal-derivative", "dispersion-derivative"))


def stimulus_function(condition, n, dt):
    """Boxcar stick function on the grid ``k * dt``, ``k < n``.

    Event ``i`` covers samples with ``onset <= k*dt < onset + duration``.
    Samples past the end of the grid are dropped.
    """
    stim = np.zeros(n)
    for on, du, am in zip(condition.onsets, condition.durations, condition.amplitudes):
        a = int(np.ceil(on / dt - 1e-9))
        b = int(np.ceil((on + du) / dt - 1e-9))
        if b <= a:  # shorter than one step: keep a single stick
            b = a + 1
        stim[max(a, 0):min(b, n)] += am
    return stim


def convolve_events(events, hrf, T, tr, condition=None):
    """HRF-convolved regressor sampled at the ``T`` scan times.

    ``events`` may be an :class:`~prewhiten.io.EventSchedule` (use
    ``condition`` to pick one when it holds several) or a single condition.
    The stimulus is built on a grid ``OVERSAMPLE`` times finer than ``tr``,
    convolved causally with the kernel and decimated. Events running past
    the end of the scan are truncated silently.
    """
    dt = tr / OVERSAMPLE
    n = T * OVERSAMPLE
    if hasattr(events, "conditions"):
        conds = events.conditions
        if condition is not None:
            conds = [events[condition]]
        elif len(conds) > 1:
            raise ValueError("schedule holds several conditions; pass condition=")
    else:
        conds = [events]
    if not conds:
        return np.zeros(T)
    stim = sum(stimulus_function(c, n, dt) for c in conds)
    if not np.any(stim):
        return np.zeros(T)
    kernel = hrf.kernel if np.isclose(hrf.dt, dt) else hrf.resample(dt).kernel
    full = np.convolve(stim, kernel)[:n] * dt
    return full[::OVERSAMPLE].copy()


def dct_bases(T, tr, cutoff_hz=0.01):
    """Cosine drift regressors removing frequencies below ``cutoff_hz``.

    Returns a ``(T, K)`` array with ``K = floor(2 T tr cutoff)`` unit-norm
    columns ``cos(pi k (2t + 1) / (2T))``, ``k = 1..K``.
    """
    if not cutoff_hz > 0:
        raise ValueError("cutoff_hz must be positive")
    K = int(np.floor(2.0 * T * tr * cutoff_hz + 1e-12))
    K = min(K, T - 1)
    if K <= 0:
        warnings.warn("drift cutoff yields no cosine columns", stacklevel=2)
        return np.zeros((T, 0))
    t = np.arange(T)[:, None]
    k = np.arange(1, K + 1)[None, :]
    C = np.cos(np.pi * k * (2 * t + 1) / (2 * T))
    return C / np.linalg.norm(C, axis=0)


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    roles: tuple
    names: tuple

    @property
    def T(self):
        return self.matrix.shape[0]

    @property
    def K(self):
        return self.matrix.shape[1]

    def columns(self, role):
        return [i for i, r in enumerate(self.roles) if r == role]

    def index(self, name):
        return self.names.index(name)


def _as_columns(cols, T=None):
    if cols is None:
        return np.zeros((T or 0, 0))
    a = np.asarray(cols, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def _names(prefix, n, given):
    if given is not None:
        given = list(given)
        if len(given) != n:
            raise ValueError(f"expected {n} {prefix} names, got {len(given)}")
        return given
    return [f"{prefix}{i + 1}" for i in range(n)]


def assemble_design(task_cols=None, derivative_cols=None, nuisance_cols=None,
                    drift_cols=None, *, task_names=None, derivative_roles=None,
                    derivative_names=None, nuisance_names=None, rtol=1e-10):
    """Stack regressors behind an intercept and verify full column rank.

    Each group is a ``(T, k)`` array (or a single column). Derivative
    columns default to role ``temporal-derivative``; pass
    ``derivative_roles`` to label dispersion derivatives.

    Raises
    ------
    RankError
        Naming the first column that is linearly dependent on the columns
        before it (singular values below ``rtol`` times the largest).
    """
    groups = [_as_columns(c) for c in (task_cols, derivative_cols, nuisance_cols, drift_cols)]
    lengths = {g.shape[0] for g in groups if g.shape[1]}
    if len(lengths) > 1:
        raise DataError(f"regressor lengths differ: {sorted(lengths)}")
    if not lengths:
        raise DataError("design needs at least one regressor besides the intercept "
                        "or an explicit length")
    T = lengths.pop()
    task, deriv, nuis, drift = [g if g.shape[1] else np.zeros((T, 0)) for g in groups]

    droles = (["temporal-derivative"] * deriv.shape[1] if derivative_roles is None
              else list(derivative_roles))
    if len(droles) != deriv.shape[1] or any(r not in ROLES[2:4] for r in droles):
        raise ValueError(f"bad derivative roles {droles}")
    if derivative_names is None:
        short = {"temporal-derivative": "td", "dispersion-derivative": "dd"}
        derivative_names = [f"{short[r]}{i + 1}" for i, r in enumerate(droles)]

    names = (["intercept"] + _names("task", task.shape[1], task_names)
             + _names("deriv", deriv.shape[1], derivative_names)
             + _names("nuisance", nuis.shape[1], nuisance_names)
             + _names("drift", drift.shape[1], None))
    roles = (["intercept"] + ["task"] * task.shape[1] + droles
             + ["nuisance"] * nuis.shape[1] + ["drift"] * drift.shape[1])
    X = np.column_stack([np.ones(T), task, deriv, nuis, drift])
    if not np.isfinite(X).all():
        raise DataError("non-finite value in design")
    if X.shape[1] > T:
        raise RankError(f"design has {X.shape[1]} columns but only {T} rows")

    s = np.linalg.svd(X, compute_uv=False)
    tol = rtol * s[0]
    if (s > tol).sum() < X.shape[1]:
        # locate the first column that adds no new direction
        for j in range(1, X.shape[1] + 1):
            sj = np.linalg.svd(X[:, :j], compute_uv=False)
            if (sj > tol).sum() < j:
                raise RankError(
                    f"design is rank deficient: column {j} ({names[j - 1]!r}) "
                    "depends on earlier columns", column=j, name=names[j - 1])
    X.setflags(write=False)
    return DesignMatrix(X, tuple(roles), tuple(names))


def build_design(T, tr, events=None, hrf="canonical", cutoff_hz=0.01, nuisance=None,
                 conditions=None):
    """Convenience builder used by the pipeline.

    ``hrf`` is one of ``canonical``, ``+td`` or ``+td+dd``.
    """
    if hrf not in ("canonical", "+td", "+td+dd"):
        raise ValueError(f"unknown hrf model {hrf!r}")
    h = canonical_hrf(tr / OVERSAMPLE)
    td, dd = hrf_derivatives(h) if hrf != "canonical" else (None, None)
    task, deriv, droles, tnames, dnames = [], [], [], [], []
    names = conditions or (events.names if events is not None else [])
    for name in names:
        cond = events[name]
        task.append(convolve_events(cond, h, T, tr))
        tnames.append(name)
        if td is not None:
            deriv.append(convolve_events(cond, td, T, tr))
            droles.append("temporal-derivative")
            dnames.append(f"{name}_td")
        if hrf == "+td+dd":
            deriv.append(convolve_events(cond, dd, T, tr))
            droles.append("dispersion-derivative")
            dnames.append(f"{name}_dd")
    task = np.column_stack(task) if task else np.zeros((T, 0))
    deriv = np.column_stack(deriv) if deriv else np.zeros((T, 0))
    drift = dct_bases(T, tr, cutoff_hz) if cutoff_hz else np.zeros((T, 0))
    nuis = np.zeros((T, 0)) if nuisance is None else _as_columns(nuisance)
    if nuis.shape[1] and nuis.shape[0] != T:
        raise DataError(f"nuisance matrix has {nuis.shape[0]} rows, expected {T}")
    if not (task.shape[1] or deriv.shape[1] or nuis.shape[1] or drift.shape[1]):
        return DesignMatrix(np.ones((T, 1)), ("intercept",), ("intercept",))
    return assemble_design(task, deriv, nuis, drift, task_names=tnames,
                           derivative_roles=droles, derivative_names=dnames)
