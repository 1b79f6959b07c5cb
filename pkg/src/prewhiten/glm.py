"""Vertex-wise OLS and prewhitened GLS fits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .design import DesignMatrix
from .errors import NumericError, RankError
from .io import BoldMatrix
from .whiten import whiten_dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlmFit:
    """Per-vertex regression results.

    ``residuals`` are in the (possibly whitened) space the model was fit
    in. ``failed`` marks vertices whose whitened design was singular; their
    entries are NaN and they are left out of summaries.
    """

    beta: np.ndarray
    residuals: np.ndarray
    sigma2: np.ndarray
    dof: int
    tstats: np.ndarray
    se: np.ndarray
    failed: np.ndarray = None

    @property
    def V(self):
        return self.beta.shape[1]


def _unpack(y, X):
    Y = y.data if isinstance(y, BoldMatrix) else np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Xm = X.matrix if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if Xm.ndim == 1:
        Xm = Xm[:, None]
    if Xm.shape[0] != Y.shape[0]:
        raise ValueError(f"design has {Xm.shape[0]} rows, data has {Y.shape[0]}")
    return Y, Xm


def _ols_block(Y, X):
    """Shared-design least squares via one QR factorization."""
    T, K = X.shape
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * diag.max():
        raise RankError("design matrix is rank deficient")
    beta = solve_triangular(R, Q.T @ Y)
    resid = Y - X @ beta
    dof = T - K
    sigma2 = np.einsum("ij,ij->j", resid, resid) / dof
    Rinv = solve_triangular(R, np.eye(K))
    xtx_inv_diag = np.einsum("ij,ij->i", Rinv, Rinv)
    se = np.sqrt(np.outer(xtx_inv_diag, sigma2))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
    return beta, resid, sigma2, se, t


def fit_ols(y, X):
    """Ordinary least squares for every vertex with a shared design.

    ``beta = (X'X)^-1 X'y``, ``sigma2 = RSS / (T - K)`` and
    ``se = sqrt(sigma2 diag((X'X)^-1))``.
    """
    Y, Xm = _unpack(y, X)
    T, K = Xm.shape
    if T - K < 1:
        raise RankError(f"no residual degrees of freedom (T={T}, K={K})")
    beta, resid, sigma2, se, t = _ols_block(Y, Xm)
    return GlmFit(beta, resid, sigma2, T - K, t, se, np.zeros(Y.shape[1], bool))


def fit_gls(y, X, W=None, *, ar=None, **whiten_kw):
    """Prewhitened least squares.

    The whitening can be given as

    * ``W``: a sequence of V :class:`~prewhiten.whiten.WhitenOperator` (the
      same object may repeat; repeats share one whitened design), or
      dense ``(T, T)`` arrays;
    * ``ar``: an :class:`~prewhiten.arfit.ArField`, whitened on the fly via
      :func:`~prewhiten.whiten.whiten_dataset` (``whiten_kw`` forwarded).

    Vertices whose whitened design is singular are flagged in ``failed``.
    """
    Y, Xm = _unpack(y, X)
    T, K = Xm.shape
    V = Y.shape[1]
    if T - K < 1:
        raise RankError(f"no residual degrees of freedom (T={T}, K={K})")
    if ar is not None:
        stream = whiten_dataset(Y, Xm, ar, **whiten_kw)
    elif W is not None:
        stream = _stream_from_operators(Y, Xm, W)
    else:
        raise ValueError("fit_gls needs W or ar")

    beta = np.full((K, V), np.nan)
    resid = np.full((T, V), np.nan)
    sigma2 = np.full(V, np.nan)
    se = np.full((K, V), np.nan)
    t = np.full((K, V), np.nan)
    failed = np.zeros(V, bool)
    for item in stream:
        idx, Yt, Xt = item[:3]
        try:
            b, r, s2, e, tt = _ols_block(Yt, Xt)
        except (RankError, np.linalg.LinAlgError):
            failed[idx] = True
            continue
        beta[:, idx], resid[:, idx], sigma2[idx], se[:, idx], t[:, idx] = b, r, s2, e, tt
    if failed.any():
        logger.warning("%d vertices with singular whitened design", int(failed.sum()))
    return GlmFit(beta, resid, sigma2, T - K, t, se, failed)


def _stream_from_operators(Y, Xm, W):
    W = list(W)
    if len(W) != Y.shape[1]:
        raise ValueError(f"got {len(W)} whitening operators for {Y.shape[1]} vertices")
    order = {}
    for v, op in enumerate(W):
        order.setdefault(id(op), []).append(v)
    for members in order.values():
        op = W[members[0]]
        idx = np.array(members)
        if hasattr(op, "apply"):
            yield idx, op.apply(Y[:, idx]), op.apply(Xm)
        else:
            op = np.asarray(op, dtype=float)
            yield idx, op @ Y[:, idx], op @ Xm


def t_sf2(t, dof):
    """Two-sided Student-t tail probability ``P(|T| >= |t|)``.

    Uses the regularized incomplete beta identity
    ``I_{dof/(dof+t^2)}(dof/2, 1/2)``.
    """
    t = np.asarray(t, dtype=float)
    if dof < 1:
        raise NumericError(f"degrees of freedom must be >= 1, got {dof}")
    with np.errstate(invalid="ignore"):
        x = dof / (dof + t ** 2)
    p = special.betainc(0.5 * dof, 0.5, x)
    return np.where(np.isinf(t), 0.0, p)


def ttest(fit, column):
    """Two-sided p-values for coefficient ``column`` at every vertex."""
    return t_sf2(fit.tstats[column], fit.dof)
