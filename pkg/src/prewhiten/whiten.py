"""Per-vertex prewhitening operators built from AR parameters.

For each vertex a symmetric band precision matrix is formed, its symmetric
square root is taken through a banded eigendecomposition and entries more
than ``p`` diagonals away are discarded. Operators are stored in LAPACK
lower band form: ``band[k, j] = W[j + k, j]``.
"""

from __future__ import annotations

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .design import DesignMatrix
from .io import BoldMatrix

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-6
PRECISION_KINDS = ("appendix", "ar")


class _Counter:
    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def increment(self):
        with self._lock:
            self._n += 1

    def reset(self):
        with self._lock:
            self._n = 0

    @property
    def value(self):
        return self._n


eigen_calls = _Counter()


def _precision_band(phi, s, T, kind):
    phi = np.asarray(phi, dtype=float).ravel()
    p = phi.shape[0]
    band = np.zeros((p + 1, T))
    if kind == "appendix":
        band[0] = 1.0
        for q in range(1, p + 1):
            band[q, : T - q] = -phi[q - 1]
    elif kind == "ar":
        # (I - Phi)'(I - Phi) for the lower-triangular AR filter
        a = np.concatenate([[1.0], -phi])
        for k in range(p + 1):
            band[k, : T - k] = np.dot(a[: p - k + 1], a[k:])
            # last rows of A'A see a truncated filter
            for j in range(max(0, T - p), T - k):
                m = T - 1 - j - k
                band[k, j] = np.dot(a[: m + 1], a[k: k + m + 1])
    else:
        raise ValueError(f"unknown precision kind {kind!r}")
    return band / s


def build_precision(phi, s, T, kind="ar", data_variance=1.0):
    """Symmetric band precision matrix ``S^-1`` for one vertex.

    ``kind="ar"`` (default) is the exact band precision ``(I - Phi)'(I - Phi)``
    of the AR filter; ``kind="appendix"`` puts 1 on the diagonal and
    ``-phi[q-1]`` on the ``q``-th off-diagonals. Both are scaled by ``1/s``.
    A nonpositive ``s`` is replaced by ``eps * data_variance``.

    Returns
    -------
    scipy.sparse.dia_matrix, shape (T, T)
    """
    phi = np.asarray(phi, dtype=float).ravel()
    if T <= phi.shape[0]:
        raise ValueError(f"T={T} must exceed the AR order {phi.shape[0]}")
    if not s > 0:
        logger.warning("nonpositive white-noise variance %r clamped", s)
        s = np.finfo(float).eps * data_variance
    band = _precision_band(phi, s, T, kind)
    p = band.shape[0] - 1
    diags = [band[0]] + [band[k, : T - k] for k in range(1, p + 1)] * 2
    offsets = [0] + list(range(-1, -p - 1, -1)) + list(range(1, p + 1))
    return sparse.diags(diags, offsets, shape=(T, T), format="dia")


def _lower_band(precision, p):
    P = sparse.dia_matrix(precision)
    T = P.shape[0]
    band = np.zeros((p + 1, T))
    for k in range(p + 1):
        band[k, : T - k] = P.diagonal(-k)
    return band


@dataclass(frozen=True)
class WhitenOperator:
    """Symmetric band prewhitening matrix for one vertex.

    ``dense`` is set only when band truncation was disabled.
    """

    band: np.ndarray
    p: int
    flagged: bool = False
    dense: np.ndarray = None

    @property
    def T(self):
        return self.band.shape[1]

    def toarray(self):
        if self.dense is not None:
            return self.dense.copy()
        T = self.T
        W = np.diag(self.band[0])
        for k in range(1, self.p + 1):
            d = np.diag(self.band[k, : T - k], -k)
            W += d + d.T
        return W

    def apply(self, a):
        """``W @ a`` for a vector or a ``(T, m)`` matrix in ``O(T p m)``."""
        a = np.asarray(a, dtype=float)
        if a.shape[0] != self.T:
            raise ValueError(f"operand has {a.shape[0]} rows, operator is {self.T}x{self.T}")
        if self.dense is not None:
            return self.dense @ a
        b = self.band if a.ndim == 1 else self.band[:, :, None]
        out = b[0] * a
        T = self.T
        for k in range(1, self.p + 1):
            out[k:] += b[k, : T - k] * a[: T - k]
            out[: T - k] += b[k, : T - k] * a[k:]
        return out


def scalar_whitener(s, T, literal=False):
    """Order-0 operator ``(1/sqrt(s)) I`` (``1/s`` in literal mode)."""
    val = 1.0 / s if literal else 1.0 / np.sqrt(s)
    return WhitenOperator(np.full((1, T), val), 0)


def build_whitener(precision, p, literal=False, truncate=True):
    """Prewhitening matrix from a band precision matrix.

    The precision is eigendecomposed as ``U D U'``; eigenvalues below
    ``1e-6`` times the largest are raised to that floor. The whitener is the
    symmetric square root ``U D^(1/2) U'`` (or ``U D U'`` when ``literal``),
    with entries farther than ``p`` from the diagonal set to zero unless
    ``truncate`` is False.
    """
    ab = _lower_band(precision, p)
    T = ab.shape[1]
    try:
        eigen_calls.increment()
        d, U = linalg.eig_banded(ab, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        logger.warning("eigendecomposition failed (%s); identity whitener used", exc)
        return WhitenOperator(np.vstack([np.ones(T), np.zeros((p, T))]), p, flagged=True)
    d = np.maximum(d, EIGEN_FLOOR * d.max())
    f = d if literal else np.sqrt(d)
    Uf = U * f
    if not truncate:
        W = Uf @ U.T
        W = 0.5 * (W + W.T)
        band = np.zeros((p + 1, T))
        for k in range(p + 1):
            band[k, : T - k] = np.diagonal(W, -k)
        return WhitenOperator(band, p, dense=W)
    band = np.zeros((p + 1, T))
    for k in range(p + 1):
        band[k, : T - k] = np.einsum("im,im->i", Uf[k:], U[: T - k])
    return WhitenOperator(band, p)


def whitener_for(phi, s, T, kind="ar", literal=False, truncate=True):
    """Build the operator for one vertex's ``(phi, s)``."""
    phi = np.asarray(phi, dtype=float).ravel()
    p = phi.shape[0]
    if p == 0 or not np.any(phi):
        if not s > 0:
            s = np.finfo(float).eps
        return scalar_whitener(s, T, literal)
    return build_whitener(build_precision(phi, s, T, kind), p, literal, truncate)


def apply_whitener(W, y, X):
    """Return ``(W y, W X)``."""
    return W.apply(y), W.apply(X)


def default_threads():
    return os.cpu_count() or 1


def build_whiteners(ar, T, kind="ar", literal=False, truncate=True, threads=None):
    """Operators for every distinct parameter column of an ArField.

    Returns ``(operators, groups)`` where ``groups[i]`` lists the vertices
    sharing ``operators[i]``. Identical columns (always the case after
    global averaging) share a single eigendecomposition.
    """
    keys = {}
    groups = []
    for v in range(ar.V):
        phi, s = ar.column(v)
        key = (phi.tobytes(), float(s))
        if key not in keys:
            keys[key] = len(groups)
            groups.append([])
        groups[keys[key]].append(v)
    reps = [g[0] for g in groups]

    def make(v):
        phi, s = ar.column(v)
        return whitener_for(phi, s, T, kind, literal, truncate)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(reps) == 1:
        ops = [make(v) for v in reps]
    else:
        with ThreadPoolExecutor(threads) as pool:
            ops = list(pool.map(make, reps))
    return ops, [np.array(g) for g in groups]


def whiten_dataset(y, X, ar, kind="ar", literal=False, truncate=True, threads=None):
    """Stream of prewhitened ``(vertices, Y_tilde, X_tilde)`` groups.

    Vertices sharing identical AR parameters are whitened together, so a
    global field yields one group and a single ``X_tilde``.
    """
    Y = y.data if isinstance(y, BoldMatrix) else np.asarray(y, dtype=float)
    Xm = X.matrix if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] != ar.V:
        raise ValueError(f"AR field covers {ar.V} vertices, data has {Y.shape[1]}")
    ops, groups = build_whiteners(ar, Y.shape[0], kind, literal, truncate, threads)
    for W, idx in zip(ops, groups):
        yield idx, W.apply(Y[:, idx]), W.apply(Xm), W
