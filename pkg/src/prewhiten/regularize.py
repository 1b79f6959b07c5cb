"""Spatial regularization of AR fields on a surface mesh.

Local mode smooths each coefficient row (and the innovation variance) with
a Gaussian kernel of geodesic distance, approximated by shortest paths
along mesh edges. Global mode replaces every vertex by the mask-wide mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .arfit import ArField, stabilize

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
TRUNCATE_SIGMAS = 3.0


def fwhm_to_sigma(fwhm):
    return fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class SmoothingOperator:
    """Row-stochastic sparse ``V x V`` weight matrix.

    Masked vertices have identity rows and zero weight in every other row;
    ``isolated`` marks vertices with no unmasked neighbor within radius
    (self weight 1).
    """

    weights: sparse.csr_matrix
    fwhm: float
    neighborhood_radius: float
    mask: np.ndarray
    isolated: np.ndarray

    @property
    def V(self):
        return self.weights.shape[0]

    def to_triplets(self, path):
        """Write ``row,col,weight`` rows for inspection."""
        W = self.weights.tocoo()
        with open(path, "w") as fh:
            fh.write("row,col,weight\n")
            for i, j, w in zip(W.row, W.col, W.data):
                fh.write(f"{i},{j},{w!r}\n")


def _edge_graph(mesh, keep):
    e = mesh.edges
    e = e[keep[e[:, 0]] & keep[e[:, 1]]]
    w = np.linalg.norm(mesh.coords[e[:, 0]] - mesh.coords[e[:, 1]], axis=1)
    V = mesh.V
    G = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(V, V))
    return (G + G.T).tocsr()


def build_smoother(mesh, fwhm=5.0, chunk=512):
    """Geodesic Gaussian smoothing operator for ``mesh``.

    Weights are ``exp(-d^2 / (2 sigma^2))`` for shortest-path distance
    ``d <= 3 sigma``, ``sigma = fwhm / (2 sqrt(2 ln 2))``, normalized to
    unit row sums.
    """
    if not fwhm > 0:
        raise ValueError(f"fwhm must be positive, got {fwhm}")
    sigma = fwhm_to_sigma(fwhm)
    radius = TRUNCATE_SIGMAS * sigma
    V = mesh.V
    mask = np.asarray(mesh.boundary_mask, bool)
    keep = ~mask
    G = _edge_graph(mesh, keep)
    sources = np.flatnonzero(keep)
    rows, cols, vals = [], [], []
    for start in range(0, len(sources), chunk):
        idx = sources[start:start + chunk]
        D = csgraph.dijkstra(G, directed=False, indices=idx, limit=radius)
        r, c = np.nonzero(np.isfinite(D) & (D <= radius))
        d = D[r, c]
        rows.append(idx[r])
        cols.append(c)
        vals.append(np.exp(-0.5 * (d / sigma) ** 2))
    masked = np.flatnonzero(mask)
    rows.append(masked)
    cols.append(masked)
    vals.append(np.ones(len(masked)))
    W = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(V, V)
    )
    W.sum_duplicates()
    W = sparse.diags(1.0 / np.asarray(W.sum(axis=1)).ravel()) @ W
    W = W.tocsr()
    W.sort_indices()
    isolated = keep & (np.diff(W.indptr) == 1)
    if isolated.any():
        logger.warning("%d vertices have no neighbors within %.3g mm", int(isolated.sum()),
                       radius)
    return SmoothingOperator(W, float(fwhm), float(radius), mask, isolated)


def smooth_field(op, field):
    """Apply the smoother to a ``(V,)`` vector or each row of a ``(p, V)``
    matrix."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] != op.V:
        raise ValueError(f"field has {f.shape[-1]} vertices, operator has {op.V}")
    if f.ndim == 1:
        return op.weights @ f
    return (op.weights @ f.T).T


def global_average(field, mask=None):
    """Replace every unmasked column by the unmasked row means.

    ``mask`` marks excluded vertices (``True`` = excluded); those columns are
    returned unchanged.
    """
    f = np.asarray(field, dtype=float)
    squeeze = f.ndim == 1
    if squeeze:
        f = f[None, :]
    V = f.shape[1]
    excl = np.zeros(V, bool) if mask is None else np.asarray(mask, bool)
    if excl.all():
        raise ValueError("global average needs at least one unmasked vertex")
    out = f.copy()
    out[:, ~excl] = f[:, ~excl].mean(axis=1, keepdims=True)
    return out[0] if squeeze else out


def _effective_order(phi):
    nz = phi != 0
    p = phi.shape[0]
    # highest nonzero lag (1-based), 0 when all coefficients vanish
    return np.where(nz.any(axis=0), p - np.argmax(nz[::-1], axis=0), 0)


def regularize_ar(ar, mode="local", mesh=None, fwhm=5.0, smoother=None, mask=None):
    """Spatially regularize the coefficients and variance of an AR field.

    Parameters
    ----------
    ar : ArField
        Coefficients above each vertex's order must already be zero.
    mode : {"local", "global", "none"}
    mesh : SurfaceMesh, optional
        Needed for local mode unless ``smoother`` is given; its boundary
        mask also excludes vertices in global mode.
    fwhm : float
        Kernel width in mm for local mode.

    Returns
    -------
    ArField
        After regularization ``order[v]`` is the highest lag with a nonzero
        coefficient; non-stationary results are clamped and flagged.
    """
    if mode == "none":
        return ar
    if mode == "local":
        if smoother is None:
            if mesh is None:
                raise ValueError("local regularization needs a mesh or a smoother")
            smoother = build_smoother(mesh, fwhm)
        phi = smooth_field(smoother, ar.phi) if ar.p_max else ar.phi.copy()
        s = smooth_field(smoother, ar.s)
    elif mode == "global":
        if mask is None and mesh is not None:
            mask = mesh.boundary_mask
        phi = global_average(ar.phi, mask) if ar.p_max else ar.phi.copy()
        s = global_average(ar.s, mask)
    else:
        raise ValueError(f"unknown regularization mode {mode!r}")
    out = ArField(phi, s, _effective_order(phi), ar.p_max, ar.flags.copy())
    return stabilize(out)
