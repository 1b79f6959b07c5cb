"""Synthetic AR fields, the tissue-class scenario and null boxcar scans.

Random streams: every generated series is driven by its own
``numpy.random.PCG64`` generator seeded with
``SeedSequence(seed, spawn_key=(scan, vertex))``, so results depend only on
the seed and never on the order or parallelism of generation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .design import assemble_design, canonical_hrf, convolve_events, dct_bases, OVERSAMPLE
from .io import BoldMatrix, Condition, EventSchedule, SurfaceMesh

GENERATOR = "numpy.random.PCG64"

# tissue classes: (name, count, AR(3) coefficients)
TABLE2 = (
    ("background", 11, ()),
    ("csf", 3, (0.5, 0.3, 0.1)),
    ("gm", 2, (0.425, 0.25, 0.1)),
    ("wm", 11, (0.1, 0.0, 0.0)),
)
TABLE2_REPORTED_ACI = {"wm": 1.1, "gm": 2.3, "csf": 4.5, "background": 1.0}

BOXCAR_ONSETS = (20.0, 40.0, 60.0)
BOXCAR_DURATION = 10.0
NULL_T = 284
NULL_TR = 0.72


def _check_stationary(phi):
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size and np.abs(np.roots(np.r_[1.0, -phi])).max() >= 1.0:
        raise ValueError(f"AR coefficients {tuple(phi)} are not stationary")
    return phi


def burn_in(p):
    return 10 * p + 100


def rng_for(seed, scan=0, vertex=0):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(scan, vertex))))


def gen_ar_series(phi, s, T, seed, scan=0, vertex=0):
    """Stationary Gaussian AR(p) series of length ``T``.

    ``10 p + 100`` leading samples are generated and discarded.
    """
    phi = _check_stationary(phi)
    rng = rng_for(seed, scan, vertex)
    n = T + burn_in(phi.size)
    e = rng.standard_normal(n) * np.sqrt(s)
    if phi.size == 0:
        return e[-T:]
    return signal.lfilter([1.0], np.r_[1.0, -phi], e)[-T:]


def analytic_acf(phi, nlags):
    """Population autocorrelations at lags ``0..nlags``.

    Lags ``1..p`` solve the Yule-Walker equations; later lags follow
    ``rho_u = sum_k phi_k rho_{u-k}``.
    """
    phi = _check_stationary(phi)
    p = phi.size
    rho = np.zeros(max(nlags, p) + 1)
    rho[0] = 1.0
    if p:
        # rho_k - sum_j phi_j rho_{|k-j|} = 0 for k = 1..p, with rho_0 = 1
        A = np.eye(p)
        b = np.zeros(p)
        for k in range(1, p + 1):
            for j in range(1, p + 1):
                lag = abs(k - j)
                if lag == 0:
                    b[k - 1] += phi[j - 1]
                else:
                    A[k - 1, lag - 1] -= phi[j - 1]
        rho[1: p + 1] = np.linalg.solve(A, b)
        for u in range(p + 1, rho.size):
            rho[u] = np.dot(phi, rho[u - 1: u - p - 1 if u - p - 1 >= 0 else None: -1])
    return rho[: nlags + 1]


def analytic_aci(phi, tol=1e-12, max_lags=1_000_000):
    """Population autocorrelation index ``sum_{u>=0} rho_u^2``.

    Accumulates until an increment falls below ``tol`` (after lag ``p``).
    """
    phi = _check_stationary(phi)
    p = phi.size
    if p == 0:
        return 1.0
    rho = list(analytic_acf(phi, p))
    total = float(np.sum(np.square(rho)))
    window = rho[-p:][::-1]  # rho_{u-1}, ..., rho_{u-p}
    for _ in range(max_lags):
        r = float(np.dot(phi, window))
        total += r * r
        window = [r] + window[:-1]
        if r * r < tol:
            break
    return total


def ar_variance(phi, s=1.0):
    """Marginal variance ``s / (1 - sum phi_k rho_k)`` of a stationary AR."""
    phi = _check_stationary(phi)
    if phi.size == 0:
        return float(s)
    rho = analytic_acf(phi, phi.size)
    return float(s / (1.0 - np.dot(phi, rho[1:])))


def grid_mesh(nx, ny, spacing=2.0):
    """Planar ``nx x ny`` vertex grid split into right triangles.

    Vertex ``(i, j)`` (column ``i``, row ``j``) has index ``j * nx + i`` and
    coordinates ``(i, j, 0) * spacing``.
    """
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    coords = np.column_stack([i.ravel(), j.ravel(), np.zeros(nx * ny)]) * spacing
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return SurfaceMesh(coords, faces)


def line_mesh(n, spacing=2.0):
    """Vertices on a line joined by consecutive edges (no triangles)."""
    coords = np.column_stack([np.arange(n) * spacing, np.zeros(n), np.zeros(n)])
    lines = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return SurfaceMesh(coords, np.zeros((0, 3), int), lines=lines)


@dataclass(frozen=True)
class Region:
    name: str
    vertices: np.ndarray
    phi: tuple
    s: float = 1.0
    amplitude: float = 0.0


@dataclass(frozen=True)
class SimScenario:
    """Regions of constant AR structure plus an optional shared signal."""

    regions: tuple
    T: int
    tr: float = NULL_TR
    seed: int = 0
    signal: np.ndarray = None
    mesh: SurfaceMesh = field(default=None, compare=False)
    V: int = None

    def __post_init__(self):
        regions = tuple(self.regions)
        for r in regions:
            _check_stationary(r.phi)
        allv = np.concatenate([np.asarray(r.vertices, int) for r in regions]) if regions \
            else np.zeros(0, int)
        if len(np.unique(allv)) != len(allv):
            raise ValueError("regions overlap")
        V = self.V
        if V is None:
            V = self.mesh.V if self.mesh is not None else int(allv.max()) + 1
        covered = np.zeros(V, bool)
        covered[allv] = True
        masked = (self.mesh.boundary_mask if self.mesh is not None else np.zeros(V, bool))
        if not np.array_equal(covered, ~masked):
            raise ValueError("regions must partition the unmasked vertices")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "V", V)

    def labels(self):
        out = np.full(self.V, "", dtype=object)
        for r in self.regions:
            out[np.asarray(r.vertices, int)] = r.name
        return out

    def phi_matrix(self, p=None):
        """True coefficients as a ``(p, V)`` matrix (zero padded)."""
        p = max((len(r.phi) for r in self.regions), default=0) if p is None else p
        out = np.zeros((p, self.V))
        for r in self.regions:
            out[: len(r.phi), np.asarray(r.vertices, int)] = np.asarray(r.phi)[:p, None]
        return out

    def to_dict(self):
        return {
            "T": self.T, "tr": self.tr, "seed": self.seed, "V": self.V,
            "generator": GENERATOR,
            "regions": [{"name": r.name, "vertices": [int(v) for v in r.vertices],
                         "phi": list(map(float, r.phi)), "s": r.s,
                         "amplitude": r.amplitude} for r in self.regions],
        }


def scenario_from_dict(d, mesh=None, signal=None):
    regions = tuple(Region(r["name"], np.asarray(r["vertices"], int), tuple(r.get("phi", ())),
                           float(r.get("s", 1.0)), float(r.get("amplitude", 0.0)))
                    for r in d["regions"])
    return SimScenario(regions, int(d["T"]), float(d.get("tr", NULL_TR)),
                       int(d.get("seed", 0)), signal, mesh, d.get("V"))


def load_scenario(path, mesh=None):
    with open(path) as fh:
        return scenario_from_dict(json.load(fh), mesh)


def simulate(scenario, scan=0, seed=None):
    """Generate one scan of a scenario as a :class:`BoldMatrix`.

    Masked vertices are left at zero.
    """
    seed = scenario.seed if seed is None else seed
    T, V = scenario.T, scenario.V
    data = np.zeros((T, V))
    for r in scenario.regions:
        verts = np.asarray(r.vertices, int)
        phi = np.asarray(r.phi, dtype=float)
        n = T + burn_in(phi.size)
        e = np.empty((n, verts.size))
        for k, v in enumerate(verts):
            e[:, k] = rng_for(seed, scan, int(v)).standard_normal(n)
        e *= np.sqrt(r.s)
        x = signal.lfilter([1.0], np.r_[1.0, -phi], e, axis=0) if phi.size else e
        data[:, verts] = x[-T:]
        if r.amplitude and scenario.signal is not None:
            data[:, verts] += r.amplitude * np.asarray(scenario.signal)[:, None]
    return BoldMatrix(data, scenario.tr)


def table2_scenario(T=1200, seed=0, tr=NULL_TR, spacing=2.0):
    """The four-class AR(3) strip: 11 background, 3 CSF, 2 GM and 11 WM
    vertices in that order on a line mesh, unit innovation variance.

    Returns ``(bold, scenario)``; the mesh is ``scenario.mesh``.
    """
    if T < 100:
        raise ValueError("T must be at least 100")
    regions, start = [], 0
    for name, count, phi in TABLE2:
        regions.append(Region(name, np.arange(start, start + count), phi, 1.0))
        start += count
    mesh = line_mesh(start, spacing)
    scen = SimScenario(tuple(regions), T, tr, seed, mesh=mesh)
    return simulate(scen), scen


def table2_grid_scenario(nx=50, ny=20, spacing=2.0, T=NULL_T, tr=NULL_TR, seed=0,
                         widths=(20, 6, 4, 20)):
    """Tissue classes laid out as vertical bands on a planar grid.

    ``widths`` gives the number of grid columns per class in the order
    background, CSF, GM, WM (default keeps the strip's 11:3:2:11 ratio on
    50 columns).
    """
    if sum(widths) != nx:
        raise ValueError(f"band widths {widths} must sum to nx={nx}")
    mesh = grid_mesh(nx, ny, spacing)
    col = np.arange(nx * ny) % nx
    regions, start = [], 0
    for (name, _, phi), w in zip(TABLE2, widths):
        verts = np.flatnonzero((col >= start) & (col < start + w))
        regions.append(Region(name, verts, phi, 1.0))
        start += w
    return SimScenario(tuple(regions), T, tr, seed, mesh=mesh)


def boxcar_events():
    return EventSchedule((Condition("boxcar", BOXCAR_ONSETS, [BOXCAR_DURATION] * 3),))


def boxcar_design(T=NULL_T, tr=NULL_TR, cutoff_hz=0.01):
    """Intercept, canonical-HRF boxcar regressor and cosine drift terms."""
    h = canonical_hrf(tr / OVERSAMPLE)
    task = convolve_events(boxcar_events()["boxcar"], h, T, tr)
    return assemble_design(task, None, None, dct_bases(T, tr, cutoff_hz),
                           task_names=["boxcar"])


@dataclass(frozen=True)
class NullExperiment:
    """Independent null scans sharing a false boxcar design.

    Scans are generated on demand: ``experiment[i]`` always returns the same
    :class:`BoldMatrix` for a given seed.
    """

    scenario: SimScenario
    design: object
    n_scans: int

    def __len__(self):
        return self.n_scans

    def __getitem__(self, i):
        if not 0 <= i < self.n_scans:
            raise IndexError(i)
        return simulate(self.scenario, scan=i)

    def __iter__(self):
        return (self[i] for i in range(self.n_scans))

    @property
    def task_column(self):
        return self.design.index("boxcar")


def null_boxcar_experiment(scenario=None, n_scans=200, seed=0, T=NULL_T, tr=NULL_TR,
                           cutoff_hz=0.01, mesh=None, phi=(), s=1.0):
    """Null scans with a false three-block boxcar task.

    Either pass a ``scenario`` (its ``T``/``tr``/``seed`` are replaced by the
    arguments here) or a ``mesh`` with one homogeneous ``(phi, s)`` field.
    No HRF derivatives are included in the design.
    """
    if scenario is None:
        if mesh is None:
            raise ValueError("need a scenario or a mesh")
        verts = np.flatnonzero(~mesh.boundary_mask)
        scenario = SimScenario((Region("field", verts, tuple(phi), s),), T, tr, seed,
                               mesh=mesh)
    else:
        scenario = SimScenario(scenario.regions, T, tr, seed, None, scenario.mesh,
                               scenario.V)
    return NullExperiment(scenario, boxcar_design(T, tr, cutoff_hz), int(n_scans))
