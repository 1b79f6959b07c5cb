"""Containers and on-disk formats for BOLD matrices, meshes and events.

Dense matrices use a one-line header ``BOLD v1 <T> <V> <tr>`` followed by
either comma separated rows (text) or little-endian float64 values in
row-major order (binary, ``.bmat`` extension). Meshes use ``MESH v1 <V> <F>``
followed by ``V`` coordinate rows and ``F`` face rows. Event files hold rows
``condition,onset,duration[,amplitude]``.

All indices reported in error messages are 1-based ``(row, column)`` pairs
relative to the data block (the header line is not counted).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

BOLD_MAGIC = "BOLD"
MESH_MAGIC = "MESH"
FORMAT_VERSION = "v1"


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoldMatrix:
    """Time-by-vertex data matrix with its sampling interval.

    Attributes
    ----------
    data : ndarray, shape (T, V)
    tr : float
        Seconds per sample.
    vertex_ids : ndarray, shape (V,)
    constant : ndarray of bool, shape (V,)
        Columns with zero variance. They are kept (indexing stays stable)
        and treated downstream as zero-AR, unit-variance placeholders.
    """

    data: np.ndarray
    tr: float
    vertex_ids: np.ndarray = None
    constant: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise DataError(f"BOLD data must be 2-D, got shape {data.shape}")
        T, V = data.shape
        if T < 2:
            raise DataError(f"need at least 2 time points, got T={T}")
        if V < 1:
            raise DataError("need at least one vertex")
        if not (np.isfinite(self.tr) and self.tr > 0):
            raise DataError(f"tr must be a positive number of seconds, got {self.tr}")
        bad = ~np.isfinite(data)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"non-finite value at cell ({r + 1},{c + 1})", location=(r + 1, c + 1)
            )
        ids = np.arange(V) if self.vertex_ids is None else np.asarray(self.vertex_ids)
        if ids.shape != (V,):
            raise DataError(f"expected {V} vertex ids, got {ids.shape[0]}")
        const = np.ptp(data, axis=0) == 0
        if const.any():
            logger.warning("%d constant column(s) flagged", int(const.sum()))
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "tr", float(self.tr))
        object.__setattr__(self, "vertex_ids", _readonly(ids))
        object.__setattr__(self, "constant", _readonly(const))

    @property
    def T(self):
        return self.data.shape[0]

    @property
    def V(self):
        return self.data.shape[1]


def _parse_header(line, magic, nfields, path):
    parts = line.split()
    if len(parts) != nfields or parts[0] != magic or parts[1] != FORMAT_VERSION:
        raise DataError(f"{path}: malformed header {line.strip()!r}")
    return parts[2:]


def _parse_dims(tokens, path):
    try:
        dims = [int(t) for t in tokens]
    except ValueError:
        raise DataError(f"{path}: non-integer dimensions in header {tokens}") from None
    if any(d < 0 for d in dims):
        raise DataError(f"{path}: negative dimension in header {tokens}")
    return dims


def _parse_text_rows(lines, ncol, path, expect_rows, what="row", dtype=float):
    """Parse comma separated rows, reporting the first bad cell."""
    out = np.empty((expect_rows, ncol), dtype=dtype)
    rows = [ln for ln in lines if ln.strip()]
    if len(rows) != expect_rows:
        raise DataError(
            f"{path}: header declares {expect_rows} {what}s, found {len(rows)}"
        )
    for i, ln in enumerate(rows):
        cells = [c.strip() for c in ln.replace("\t", ",").split(",")]
        if len(cells) != ncol:
            raise DataError(
                f"{path}: {what} {i + 1} has {len(cells)} columns, expected {ncol}",
                location=(i + 1, len(cells)),
            )
        for j, c in enumerate(cells):
            try:
                out[i, j] = dtype(c)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse cell ({i + 1},{j + 1}) {c!r}",
                    location=(i + 1, j + 1),
                ) from None
    return out


def load_bold(path, tr=None):
    """Read a dense matrix file into a :class:`BoldMatrix`.

    ``tr`` overrides the sampling interval stored in the header.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace")
        T, V = _parse_dims(_parse_header(header, BOLD_MAGIC, 5, path)[:2], path)
        try:
            tr_file = float(header.split()[4])
        except ValueError:
            raise DataError(f"{path}: malformed tr in header") from None
        body = fh.read()
    if path.endswith(".bmat"):
        if len(body) != 8 * T * V:
            raise DataError(
                f"{path}: expected {T}x{V} float64 values ({8 * T * V} bytes), "
                f"got {len(body)} bytes"
            )
        data = np.frombuffer(body, dtype="<f8").reshape(T, V)
    else:
        data = _parse_text_rows(body.decode().splitlines(), V, path, T)
    data = np.array(data, dtype=float)
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(
            f"{path}: non-finite value at cell ({r + 1},{c + 1})",
            location=(r + 1, c + 1),
        )
    return BoldMatrix(data, tr_file if tr is None else tr)


def save_bold(path, bold, tr=None):
    """Write a matrix in the dense format; ``.bmat`` selects binary.

    ``bold`` may be a :class:`BoldMatrix` or any 2-D array (then ``tr`` is
    required, and defaults to 1.0 for non-temporal maps).
    """
    path = os.fspath(path)
    if isinstance(bold, BoldMatrix):
        data, tr = bold.data, bold.tr
    else:
        data = np.atleast_2d(np.asarray(bold, dtype=float))
        tr = 1.0 if tr is None else tr
    T, V = data.shape
    header = f"{BOLD_MAGIC} {FORMAT_VERSION} {T} {V} {tr!r}\n"
    if path.endswith(".bmat"):
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            # repr precision round-trips float64 exactly
            for row in data:
                fh.write(",".join(repr(float(x)) for x in row))
                fh.write("\n")


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh (coordinates in mm) with an optional exclusion mask.

    ``lines`` holds extra edges for graphs without triangles (for example a
    1-D strip of vertices); files store them after the faces.
    """

    coords: np.ndarray
    faces: np.ndarray
    boundary_mask: np.ndarray = None
    lines: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise DataError(f"coords must be Vx3, got {coords.shape}")
        if not np.isfinite(coords).all():
            r = np.argwhere(~np.isfinite(coords))[0]
            raise DataError(f"non-finite coordinate at vertex {r[0] + 1}",
                            location=(r[0] + 1, r[1] + 1))
        V = coords.shape[0]
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        lines = (np.zeros((0, 2), np.int64) if self.lines is None
                 else np.asarray(self.lines, dtype=np.int64).reshape(-1, 2))
        for name, idx in (("face", faces), ("line", lines)):
            out = (idx < 0) | (idx >= V)
            if out.any():
                r, c = np.argwhere(out)[0]
                raise DataError(
                    f"{name} {r + 1} references vertex {idx[r, c]} outside [0,{V})",
                    location=(r + 1, c + 1),
                )
            k = idx.shape[1]
            degenerate = np.zeros(len(idx), bool)
            for a in range(k):
                for b in range(a + 1, k):
                    degenerate |= idx[:, a] == idx[:, b]
            if degenerate.any():
                r = int(np.flatnonzero(degenerate)[0])
                raise DataError(f"degenerate {name} {r + 1} repeats a vertex: {idx[r]}",
                                location=(r + 1, 1))
        mask = (np.zeros(V, bool) if self.boundary_mask is None
                else np.asarray(self.boundary_mask, dtype=bool))
        if mask.shape != (V,):
            raise DataError(f"boundary_mask must have {V} entries")
        object.__setattr__(self, "coords", _readonly(coords))
        object.__setattr__(self, "faces", _readonly(faces))
        object.__setattr__(self, "lines", _readonly(lines))
        object.__setattr__(self, "boundary_mask", _readonly(mask))
        iso = self.isolated
        if iso.any():
            logger.info("mesh has %d isolated vertices", int(iso.sum()))

    @property
    def V(self):
        return self.coords.shape[0]

    @property
    def F(self):
        return self.faces.shape[0]

    @property
    def edges(self):
        """Unique undirected edges as an (E, 2) array with ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]], self.lines])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0) if len(e) else e.reshape(0, 2)

    @property
    def isolated(self):
        deg = np.bincount(self.edges.ravel(), minlength=self.V)
        return deg == 0

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.coords[e[:, 0]] - self.coords[e[:, 1]], axis=1)


def load_mesh(path):
    """Read a text mesh file.

    The header is ``MESH v1 V F`` with an optional fifth field ``L``: the
    count of two-index line rows after the faces (edges without triangles).
    Coordinate rows may carry a fourth 0/1 column marking excluded vertices.
    """
    path = os.fspath(path)
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty mesh file")
    nfields = 5 if len(lines[0].split()) == 5 else 4
    dims = _parse_dims(_parse_header(lines[0], MESH_MAGIC, nfields, path), path)
    V, F = dims[:2]
    L = dims[2] if nfields == 5 else 0
    body = lines[1:]
    if len(body) != V + F + L:
        raise DataError(f"{path}: header declares {V} vertices, {F} faces and {L} lines, "
                        f"found {len(body)} body rows")
    ncoord = len(body[0].replace("\t", ",").split(",")) if V else 3
    if ncoord not in (3, 4):
        raise DataError(f"{path}: coordinate rows must have 3 or 4 columns")
    xyz = _parse_text_rows(body[:V], ncoord, path, V, what="vertex row")
    faces = _parse_text_rows(body[V:V + F], 3, path, F, what="face row", dtype=int)
    segs = None
    if L:
        segs = _parse_text_rows(body[V + F:], 2, path, L, what="line row", dtype=int)
    mask = xyz[:, 3] != 0 if ncoord == 4 else None
    return SurfaceMesh(xyz[:, :3], faces.reshape(-1, 3), boundary_mask=mask, lines=segs)


def save_mesh(path, mesh):
    with open(path, "w") as fh:
        nl = 0 if mesh.lines is None else len(mesh.lines)
        extra = f" {nl}" if nl else ""
        fh.write(f"{MESH_MAGIC} {FORMAT_VERSION} {mesh.V} {mesh.F}{extra}\n")
        masked = mesh.boundary_mask.any()
        for xyz, m in zip(mesh.coords, mesh.boundary_mask):
            row = [repr(float(x)) for x in xyz]
            if masked:
                row.append(str(int(m)))
            fh.write(",".join(row) + "\n")
        for f in mesh.faces:
            fh.write(",".join(str(int(i)) for i in f) + "\n")
        for seg in (mesh.lines if nl else ()):
            fh.write(",".join(str(int(i)) for i in seg) + "\n")


@dataclass(frozen=True)
class Condition:
    name: str
    onsets: np.ndarray
    durations: np.ndarray
    amplitudes: np.ndarray = None

    def __post_init__(self):
        on = np.asarray(self.onsets, dtype=float).ravel()
        du = np.asarray(self.durations, dtype=float).ravel()
        am = (np.ones_like(on) if self.amplitudes is None
              else np.asarray(self.amplitudes, dtype=float).ravel())
        if not (on.shape == du.shape == am.shape):
            raise DataError(f"condition {self.name!r}: onsets, durations and "
                            "amplitudes differ in length")
        if not (np.isfinite(on).all() and np.isfinite(du).all() and np.isfinite(am).all()):
            raise DataError(f"condition {self.name!r}: non-finite event value")
        if (on < 0).any():
            raise DataError(f"condition {self.name!r}: negative onset {on[on < 0][0]}")
        if (du <= 0).any():
            raise DataError(f"condition {self.name!r}: nonpositive duration {du[du <= 0][0]}")
        order = np.argsort(on, kind="stable")
        on, du, am = on[order], du[order], am[order]
        if (np.diff(on) <= 0).any():
            raise DataError(f"condition {self.name!r}: repeated onset")
        object.__setattr__(self, "onsets", _readonly(on))
        object.__setattr__(self, "durations", _readonly(du))
        object.__setattr__(self, "amplitudes", _readonly(am))

    def __len__(self):
        return len(self.onsets)


@dataclass(frozen=True)
class EventSchedule:
    conditions: tuple

    def __post_init__(self):
        conds = tuple(self.conditions)
        names = [c.name for c in conds]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate condition names in {names}")
        object.__setattr__(self, "conditions", conds)

    def __getitem__(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self):
        return [c.name for c in self.conditions]


def load_events(path):
    """Read ``condition,onset,duration[,amplitude]`` rows (comma or tab)."""
    path = os.fspath(path)
    grouped = {}
    with open(path, newline="") as fh:
        sample = fh.read()
    delim = "\t" if "\t" in sample and "," not in sample else ","
    for i, row in enumerate(csv.reader(sample.splitlines(), delimiter=delim)):
        row = [c.strip() for c in row]
        if not row or not any(row) or row[0].startswith("#"):
            continue
        if len(row) not in (3, 4):
            raise DataError(f"{path}: row {i + 1} has {len(row)} fields, expected 3 or 4",
                            location=(i + 1, len(row)))
        try:
            vals = [float(x) for x in row[1:]]
        except ValueError:
            if i == 0:  # header row
                continue
            raise DataError(f"{path}: row {i + 1} has a non-numeric field",
                            location=(i + 1, 2)) from None
        if vals[0] < 0:
            raise DataError(f"{path}: negative onset on row {i + 1}", location=(i + 1, 2))
        if vals[1] <= 0:
            raise DataError(f"{path}: nonpositive duration on row {i + 1}",
                            location=(i + 1, 3))
        amp = vals[2] if len(vals) == 3 else 1.0
        grouped.setdefault(row[0], []).append((vals[0], vals[1], amp))
    if not grouped:
        raise DataError(f"{path}: no conditions")
    conds = []
    for name, ev in grouped.items():
        ev = np.array(ev)
        conds.append(Condition(name, ev[:, 0], ev[:, 1], ev[:, 2]))
    return EventSchedule(tuple(conds))


def save_events(path, events):
    with open(path, "w") as fh:
        for c in events.conditions:
            for on, du, am in zip(c.onsets, c.durations, c.amplitudes):
                fh.write(f"{c.name},{float(on)!r},{float(du)!r},{float(am)!r}\n")


def write_vertex_csv(path, vertex_ids, columns):
    """Per-vertex table: ``vertex_id`` followed by the named columns."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_id", *names])
        cols = [np.asarray(columns[n]) for n in names]
        for i, vid in enumerate(vertex_ids):
            w.writerow([vid, *(_fmt(c[i]) for c in cols)])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else "nan"
    return x
