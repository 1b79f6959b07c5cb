"""Significance machinery: Ljung-Box, chi-square tails, multiple-comparison
corrections and error-rate summaries."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .arfit import empirical_acf

logger = logging.getLogger(__name__)

Z95 = 1.95996


def chi2_sf(x, k):
    """Upper tail of the chi-square distribution with ``k`` degrees of freedom.

    Computed as the regularized upper incomplete gamma ``Q(k/2, x/2)``.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise ValueError("chi-square degrees of freedom must be >= 1")
    if np.any(x < 0):
        raise ValueError("chi-square argument must be nonnegative")
    out = special.gammaincc(0.5 * k, 0.5 * x)
    return out[()] if out.ndim == 0 else out


def ar_adjusted_dof(h, p, n, T_full):
    """``h - round(p * n / T_full) - 1``, floored at 1.

    The AR order is scaled by ``n / T_full`` because the coefficients were
    estimated on the full series while the test uses its first ``n``
    samples. Rounding is half-up.
    """
    p = np.asarray(p, dtype=float)
    dof = h - np.floor(p * n / T_full + 0.5).astype(int) - 1
    if np.any(dof < 1):
        warnings.warn("Ljung-Box dof below 1 after AR adjustment; clamped to 1",
                      stacklevel=2)
        dof = np.maximum(dof, 1)
    return dof[()] if dof.ndim == 0 else dof


def ljung_box(series, h=20, dof_mode="intercept", p=None, T_full=None):
    """Ljung-Box portmanteau statistic for each column of ``series``.

    ``Q = n (n + 2) sum_{u=1..h} r_u^2 / (n - u)`` with the centered biased
    sample autocorrelations. ``dof_mode`` is ``"intercept"`` (``h - 1``
    degrees of freedom) or ``"ar"`` (see :func:`ar_adjusted_dof`; needs the
    per-vertex or common order ``p`` and the full series length
    ``T_full``).

    Returns
    -------
    Q, dof, pvalue : ndarrays (scalars for 1-D input)
    """
    x = np.asarray(series, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n <= h:
        raise ValueError(f"need more than h={h} samples, got {n}")
    r = empirical_acf(x, h).acf[1:]
    Q = n * (n + 2) * np.sum(r ** 2 / (n - np.arange(1, h + 1))[:, None], axis=0)
    if dof_mode == "intercept":
        dof = np.full(x.shape[1], h - 1)
    elif dof_mode == "ar":
        if p is None or T_full is None:
            raise ValueError("ar-adjusted dof needs p and T_full")
        dof = np.broadcast_to(ar_adjusted_dof(h, p, n, T_full), (x.shape[1],)).copy()
    else:
        raise ValueError(f"unknown dof_mode {dof_mode!r}")
    pv = chi2_sf(Q, dof)
    if squeeze:
        return float(Q[0]), int(dof[0]), float(pv[0])
    return Q, dof, pv


@dataclass(frozen=True)
class LjungBoxResult:
    statistic: np.ndarray
    dof: np.ndarray
    pvalue: np.ndarray
    lags: int
    significant_mask: np.ndarray

    @property
    def fraction_significant(self):
        return float(np.mean(self.significant_mask)) if self.significant_mask.size else 0.0


def ljung_box_field(residuals, h=20, n=100, dof_mode="intercept", p=None, T_full=None,
                    q=0.05, exclude=None):
    """Vertex-wise Ljung-Box on the first ``n`` samples with BH-FDR at ``q``.

    ``exclude`` marks vertices left out of the FDR family (masked or failed
    fits); they are never significant.
    """
    R = np.asarray(residuals, dtype=float)
    n = min(n, R.shape[0])
    T_full = R.shape[0] if T_full is None else T_full
    Q, dof, pv = ljung_box(R[:n], h, dof_mode, p, T_full)
    keep = np.ones(R.shape[1], bool) if exclude is None else ~np.asarray(exclude, bool)
    keep &= np.isfinite(pv)
    mask = np.zeros(R.shape[1], bool)
    if keep.any():
        mask[keep] = fdr_bh(pv[keep], q)
    return LjungBoxResult(Q, dof, pv, h, mask)


def fdr_bh(pvalues, q=0.05):
    """Benjamini-Hochberg step-up: reject ``p_(1..i)`` for the largest ``i``
    with ``p_(i) <= i q / m``."""
    p = np.asarray(pvalues, dtype=float).ravel()
    m = p.size
    if m == 0:
        raise ValueError("fdr_bh needs at least one p-value")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    reject = np.zeros(m, bool)
    if below.any():
        i = np.flatnonzero(below)[-1]
        reject[order[: i + 1]] = True
    return reject.reshape(np.shape(pvalues))


def bonferroni(pvalues, alpha=0.05):
    """Reject where ``p < alpha / m`` (strict)."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m < 1:
        raise ValueError("bonferroni needs at least one p-value")
    return p < alpha / m


def agresti_coull(successes, trials, conf=0.95):
    """Agresti-Coull interval for a binomial proportion, clipped to [0, 1]."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    z = Z95 if conf == 0.95 else float(special.ndtri(0.5 + conf / 2))
    n_t = trials + z * z
    p_t = (successes + 0.5 * z * z) / n_t
    half = z * math.sqrt(p_t * (1 - p_t) / n_t)
    return max(0.0, p_t - half), min(1.0, p_t + half)


@dataclass(frozen=True)
class ErrorRateSummary:
    fpr_per_scan: np.ndarray
    fwer: float
    ci_low: float
    ci_high: float
    n_scans: int

    @property
    def mean_fpr(self):
        return float(np.mean(self.fpr_per_scan))

    def to_dict(self):
        return {"fpr_per_scan": [float(x) for x in self.fpr_per_scan],
                "mean_fpr": self.mean_fpr, "fwer": self.fwer, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "n_scans": self.n_scans}


def summarize_error_rates(masks, exclude=None):
    """False-positive rate per scan and family-wise error rate over scans.

    ``masks`` is a ``(scans, V)`` boolean array of flagged vertices;
    ``exclude`` (``(V,)`` or ``(scans, V)``) drops vertices from the
    per-scan denominators.
    """
    M = np.atleast_2d(np.asarray(masks, dtype=bool))
    if M.shape[0] < 1:
        raise ValueError("need at least one scan")
    keep = np.ones_like(M) if exclude is None else ~np.broadcast_to(
        np.asarray(exclude, bool), M.shape)
    M = M & keep
    counts = keep.sum(axis=1)
    fpr = np.where(counts > 0, M.sum(axis=1) / np.maximum(counts, 1), 0.0)
    hits = int(M.any(axis=1).sum())
    n = M.shape[0]
    lo, hi = agresti_coull(hits, n)
    return ErrorRateSummary(fpr, hits / n, lo, hi, n)
