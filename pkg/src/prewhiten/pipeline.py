"""End-to-end orchestration: configuration, per-scan prewhitening,
strategy comparison and output manifests."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .arfit import aci, empirical_acf, fit_ar_field
from .design import build_design
from .errors import ConfigError, DataError, NumericError, PrewhitenError
from .glm import fit_gls, fit_ols, ttest
from .io import BoldMatrix, load_bold, load_events, load_mesh, save_bold, write_vertex_csv
from .regularize import build_smoother, regularize_ar
from .stats import bonferroni, fdr_bh, ljung_box_field, summarize_error_rates
from .whiten import PRECISION_KINDS

logger = logging.getLogger(__name__)

REGULARIZATIONS = ("local", "global", "none")
HRF_MODELS = ("canonical", "+td", "+td+dd")


@dataclass(frozen=True)
class Strategy:
    """One prewhitening strategy: AR order (or ``"aic"``) and regularization."""

    order: object = 6
    regularization: str = "local"
    fwhm: float = 5.0
    p_max: int = 10

    def __post_init__(self):
        if self.order != "aic":
            try:
                order = int(self.order)
            except (TypeError, ValueError):
                raise ConfigError(f"AR order must be an integer or 'aic', got {self.order!r}") \
                    from None
            if order < 0:
                raise ConfigError("AR order must be nonnegative")
            object.__setattr__(self, "order", order)
        if self.regularization not in REGULARIZATIONS:
            raise ConfigError(f"regularization must be one of {REGULARIZATIONS}")
        if not self.fwhm > 0:
            raise ConfigError("fwhm must be positive")

    @property
    def name(self):
        order = "AIC" if self.order == "aic" else f"AR({self.order})"
        if self.regularization == "local":
            return f"{order}-local({self.fwhm:g}mm)"
        return f"{order}-{self.regularization}"

    @classmethod
    def parse(cls, text):
        """Parse ``ar6-local``, ``ar1-local@4``, ``aic-global``, ``none``."""
        t = text.strip().lower()
        if t == "none":
            return cls(0, "none")
        m = re.fullmatch(r"(aic|ar(\d+))(?:-(local|global|none))?(?:@([0-9.]+))?", t)
        if not m:
            raise ConfigError(f"cannot parse strategy {text!r}")
        order = "aic" if m.group(1) == "aic" else int(m.group(2))
        fwhm = float(m.group(4)) if m.group(4) else 5.0
        return cls(order, m.group(3) or "local", fwhm)


@dataclass
class PipelineConfig:
    """Declarative pipeline settings (JSON file plus flag overrides)."""

    bold: list = field(default_factory=list)
    tr: float = None
    mesh: str = None
    events: str = None
    nuisance: str = None
    task: str = None
    hrf: str = "canonical"
    cutoff_hz: float = 0.01
    ar_order: object = 6
    p_max: int = 10
    regularization: str = "local"
    fwhm: float = 5.0
    precision: str = "ar"
    appendix_literal: bool = False
    truncate: bool = True
    whiten: bool = True
    lb_lags: int = 20
    lb_n: int = 100
    lb_dof: str = "intercept"
    lb_q: float = 0.05
    correction: str = "bonferroni"
    alpha: float = 0.05
    aci_max_lag: int = None
    strategies: list = field(default_factory=list)
    output_dir: str = None
    threads: int = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.bold, (str, os.PathLike)):
            self.bold = [self.bold]
        self.bold = [os.fspath(b) for b in self.bold]
        self.validate()

    def validate(self):
        if self.hrf not in HRF_MODELS:
            raise ConfigError(f"hrf must be one of {HRF_MODELS}, got {self.hrf!r}")
        if self.precision not in PRECISION_KINDS:
            raise ConfigError(f"precision must be one of {PRECISION_KINDS}")
        if self.lb_dof not in ("intercept", "ar"):
            raise ConfigError("lb_dof must be 'intercept' or 'ar'")
        if self.correction not in ("bonferroni", "fdr"):
            raise ConfigError("correction must be 'bonferroni' or 'fdr'")
        if not 0 < self.alpha < 1 or not 0 < self.lb_q < 1:
            raise ConfigError("alpha and lb_q must lie in (0, 1)")
        if self.lb_lags < 1:
            raise ConfigError("lb_lags must be positive")
        self.strategy()  # validates order / regularization / fwhm
        for s in self.strategies:
            Strategy.parse(s) if isinstance(s, str) else Strategy(**s)

    def strategy(self):
        return Strategy(self.ar_order, self.regularization, self.fwhm, self.p_max)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path, overrides=None):
        """Load a JSON config; non-None ``overrides`` take precedence."""
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = Path(path).parent
        for key in ("mesh", "events", "nuisance", "output_dir"):
            if d.get(key) and not os.path.isabs(d[key]):
                d[key] = str(base / d[key])
        if "bold" in d:
            bold = [d["bold"]] if isinstance(d["bold"], str) else d["bold"]
            d["bold"] = [b if os.path.isabs(b) else str(base / b) for b in bold]
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)

    def hash(self):
        """Digest of the settings that influence numeric output."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class ScanResult:
    ols: object
    ar_raw: object
    ar: object
    gls: object
    aci_pre: np.ndarray
    aci_post: np.ndarray
    lb_pre: object
    lb_post: object
    pvalues: np.ndarray
    significant: np.ndarray
    exclude: np.ndarray

    @property
    def final(self):
        return self.gls if self.gls is not None else self.ols

    def summary(self):
        keep = ~self.exclude
        post = self.aci_post if self.aci_post is not None else self.aci_pre
        lbp = self.lb_post if self.lb_post is not None else self.lb_pre
        out = {
            "n_vertices": int(keep.sum()),
            "mean_aci_pre": _mean(self.aci_pre[keep]),
            "mean_aci_post": _mean(post[keep]),
            "q95_aci_post": _quantile(post[keep], 0.95),
            "lb_significant_pre": _mean(self.lb_pre.significant_mask[keep]),
            "lb_significant_post": _mean(lbp.significant_mask[keep]),
        }
        if self.significant is not None:
            out["fpr"] = _mean(self.significant[keep])
            out["any_positive"] = bool(self.significant[keep].any())
        return out


def _mean(a):
    a = np.asarray(a, dtype=float)
    return float(np.nanmean(a)) if a.size else float("nan")


def _quantile(a, q):
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(np.quantile(a, q)) if a.size else float("nan")


def _aci(residuals, max_lag):
    return aci(empirical_acf(residuals, max_lag)).aci


@contextmanager
def _stage(name):
    """Prefix errors raised inside a pipeline stage with the stage name."""
    try:
        yield
    except PrewhitenError as exc:
        exc.args = (f"stage '{name}': {exc}",)
        raise
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        raise NumericError(f"stage '{name}': {exc}") from exc


def prewhiten_scan(bold, design, strategy=None, *, mesh=None, smoother=None,
                   precision="ar", literal=False, truncate=True, whiten=True,
                   threads=None, task_column=None, lb_lags=20, lb_n=100,
                   lb_dof="intercept", lb_q=0.05, correction="bonferroni", alpha=0.05,
                   aci_max_lag=None, exclude=None):
    """Run every per-scan stage in order.

    OLS, pre-whitening ACI and Ljung-Box, AR fit, regularization,
    whitening and GLS, post-whitening ACI and Ljung-Box, and (when
    ``task_column`` is given) a corrected t-test on the final fit.
    """
    strategy = strategy or Strategy()
    Y = bold.data if isinstance(bold, BoldMatrix) else np.asarray(bold, dtype=float)
    V = Y.shape[1]
    const = bold.constant if isinstance(bold, BoldMatrix) else None
    excl = np.zeros(V, bool)
    if exclude is not None:
        excl |= np.asarray(exclude, bool)
    if mesh is not None:
        excl |= mesh.boundary_mask
    if const is not None:
        excl |= const

    with _stage("ols"):
        ols = fit_ols(Y, design)
    with _stage("pre-whitening diagnostics"):
        aci_pre = _aci(ols.residuals, aci_max_lag)
        lb_pre = ljung_box_field(ols.residuals, lb_lags, lb_n, "intercept", q=lb_q,
                                 exclude=excl)
    ar_raw = ar = gls = aci_post = lb_post = None
    final = ols
    if whiten:
        with _stage("ar fit"):
            ar_raw = fit_ar_field(ols.residuals, strategy.order, strategy.p_max, constant=const)
        with _stage("regularize"):
            if strategy.regularization == "local" and smoother is None:
                if mesh is None:
                    raise ConfigError("local regularization needs a mesh")
                smoother = build_smoother(mesh, strategy.fwhm)
            ar = regularize_ar(ar_raw, strategy.regularization, mesh=mesh, smoother=smoother,
                               mask=excl)
        with _stage("whiten+gls"):
            gls = fit_gls(Y, design, ar=ar, kind=precision, literal=literal,
                          truncate=truncate, threads=threads)
        with _stage("post-whitening diagnostics"):
            excl = excl | gls.failed
            resid = np.nan_to_num(gls.residuals)
            aci_post = np.where(gls.failed, np.nan, _aci(resid, aci_max_lag))
            if lb_dof == "ar":
                lb_post = ljung_box_field(resid, lb_lags, lb_n, "ar", p=ar.order,
                                          T_full=Y.shape[0], q=lb_q, exclude=excl)
            else:
                lb_post = ljung_box_field(resid, lb_lags, lb_n, "intercept", q=lb_q,
                                          exclude=excl)
        final = gls
    pvalues = significant = None
    if task_column is not None:
        with _stage("corrections"):
            pvalues = ttest(final, task_column)
            significant = np.zeros(V, bool)
            keep = ~excl & np.isfinite(pvalues)
            if keep.any():
                if correction == "bonferroni":
                    significant[keep] = bonferroni(pvalues[keep], alpha)
                else:
                    significant[keep] = fdr_bh(pvalues[keep], alpha)
    return ScanResult(ols, ar_raw, ar, gls, aci_pre, aci_post, lb_pre, lb_post, pvalues,
                      significant, excl)


def null_error_rates(experiment, strategy=None, *, smoother=None, whiten=True, alpha=0.05,
                     precision="ar", threads=None):
    """False-positive summary of a strategy over all scans of a null
    experiment (Bonferroni at ``alpha``)."""
    mesh = experiment.scenario.mesh
    if whiten and strategy is not None and strategy.regularization == "local" \
            and smoother is None:
        smoother = build_smoother(mesh, strategy.fwhm)
    masks = []
    for bold in experiment:
        res = prewhiten_scan(bold, experiment.design, strategy, mesh=mesh, smoother=smoother,
                             whiten=whiten, precision=precision, threads=threads,
                             task_column=experiment.task_column, alpha=alpha)
        masks.append(res.significant)
    excl = mesh.boundary_mask if mesh is not None else None
    return summarize_error_rates(np.array(masks), exclude=excl)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    return {"prewhiten": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, config, extra=None):
    """Record config, its hash, seed, versions and a hash of every output.

    ``config`` is a :class:`PipelineConfig` or a plain JSON-able dict.
    """
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out_dir).as_posix()] = file_sha256(p)
    if isinstance(config, PipelineConfig):
        cfg, digest, seed = config.to_dict(), config.hash(), config.seed
    else:
        cfg = dict(config)
        digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
        seed = cfg.get("seed")
    manifest = {"config": cfg, "config_hash": digest, "seed": seed,
                "versions": _versions(), "files": files}
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _write_scan(out, res, bold, design, strategy):
    out.mkdir(parents=True, exist_ok=True)
    ids = bold.vertex_ids
    save_bold(out / "beta_ols.bmat", res.ols.beta)
    save_bold(out / "tstat_ols.bmat", res.ols.tstats)
    save_bold(out / "aci_pre.bmat", res.aci_pre[None, :])
    cols = {"aci_pre": res.aci_pre, "lb_pre_Q": res.lb_pre.statistic,
            "lb_pre_p": res.lb_pre.pvalue, "lb_pre_sig": res.lb_pre.significant_mask,
            "excluded": res.exclude}
    if res.gls is not None:
        save_bold(out / "beta_gls.bmat", res.gls.beta)
        save_bold(out / "tstat_gls.bmat", res.gls.tstats)
        save_bold(out / "aci_post.bmat", res.aci_post[None, :])
        if res.ar.p_max:
            save_bold(out / "ar_phi.bmat", res.ar.phi)
        save_bold(out / "ar_s.bmat", res.ar.s[None, :])
        save_bold(out / "ar_order.bmat", res.ar.order[None, :].astype(float))
        cols.update({"aci_post": res.aci_post, "ar_order": res.ar.order, "ar_s": res.ar.s,
                     "lb_post_Q": res.lb_post.statistic, "lb_post_dof": res.lb_post.dof,
                     "lb_post_p": res.lb_post.pvalue,
                     "lb_post_sig": res.lb_post.significant_mask})
    if res.pvalues is not None:
        save_bold(out / "pvalue.bmat", res.pvalues[None, :])
        cols.update({"pvalue": res.pvalues, "significant": res.significant})
    write_vertex_csv(out / "vertices.csv", ids, cols)
    summary = {"strategy": strategy.name if res.gls is not None else "none",
               "design_columns": list(design.names), **res.summary()}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


@dataclass
class ReportBundle:
    results: list
    summaries: list
    error_rates: object
    manifest: dict
    output_dir: str = None


def _load_inputs(config):
    if not config.bold:
        raise ConfigError("no BOLD input given")
    scans = [load_bold(p, config.tr) for p in config.bold]
    T = {b.T for b in scans}
    V = {b.V for b in scans}
    if len(T) > 1 or len(V) > 1:
        raise DataError("all scans must share T and V")
    tr = scans[0].tr
    mesh = load_mesh(config.mesh) if config.mesh else None
    if mesh is not None and mesh.V != scans[0].V:
        raise DataError(f"mesh has {mesh.V} vertices, data has {scans[0].V}")
    events = load_events(config.events) if config.events else None
    nuisance = load_bold(config.nuisance).data if config.nuisance else None
    design = build_design(scans[0].T, tr, events, config.hrf, config.cutoff_hz, nuisance)
    task_column = None
    if events is not None:
        name = config.task or events.names[0]
        if name not in design.names:
            raise ConfigError(f"task {name!r} not among design columns {design.names}")
        task_column = design.index(name)
    return scans, mesh, design, task_column


def _run_scans(config, strategy, scans, mesh, design, task_column, smoother=None):
    if config.whiten and strategy.regularization == "local" and smoother is None:
        if mesh is None:
            raise ConfigError("local regularization needs a mesh (set 'mesh')")
        smoother = build_smoother(mesh, strategy.fwhm)
    results = []
    for i, bold in enumerate(scans):
        try:
            results.append(prewhiten_scan(
                bold, design, strategy, mesh=mesh, smoother=smoother,
                precision=config.precision, literal=config.appendix_literal,
                truncate=config.truncate, whiten=config.whiten, threads=config.threads,
                task_column=task_column, lb_lags=config.lb_lags, lb_n=config.lb_n,
                lb_dof=config.lb_dof, lb_q=config.lb_q, correction=config.correction,
                alpha=config.alpha, aci_max_lag=config.aci_max_lag))
        except PrewhitenError as exc:
            exc.args = (f"scan {i} ({config.bold[i]}): {exc}",)
            raise
    return results, smoother


def run_pipeline(config):
    """Fit every scan listed in ``config`` and write the report bundle.

    Stages run in order: load, design, OLS, pre-whitening diagnostics, AR
    fit, regularization, whitening, GLS, post-whitening diagnostics,
    multiple-comparison correction, summaries and manifest.
    """
    scans, mesh, design, task_column = _load_inputs(config)
    strategy = config.strategy()
    results, _ = _run_scans(config, strategy, scans, mesh, design, task_column)
    error_rates = None
    if task_column is not None:
        excl = np.array([r.exclude for r in results])
        error_rates = summarize_error_rates(np.array([r.significant for r in results]), excl)
    summaries = [r.summary() for r in results]
    manifest = {}
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        summaries = [_write_scan(out / f"scan_{i:03d}", r, b, design, strategy)
                     for i, (r, b) in enumerate(zip(results, scans))]
        save_bold(out / "design.bmat", design.matrix, tr=scans[0].tr)
        with open(out / "design_columns.json", "w") as fh:
            json.dump({"names": list(design.names), "roles": list(design.roles)}, fh, indent=2)
        if error_rates is not None:
            with open(out / "error_rates.json", "w") as fh:
                json.dump(error_rates.to_dict(), fh, indent=2, sort_keys=True)
        manifest = write_manifest(out, config)
    return ReportBundle(results, summaries, error_rates, manifest, config.output_dir)


COMPARISON_FIELDS = ("strategy", "scan", "mean_aci", "q95_aci", "lb_significant_pct", "fpr",
                     "any_positive")


def compare_strategies(config, strategies=None):
    """Evaluate several strategies on the same scans.

    Returns ``(rows, aggregate)``: one row per strategy and scan and one
    aggregate record per strategy (with FWER and its Agresti-Coull
    interval when a task is present). Written as ``comparison.csv`` and
    ``comparison.json`` when ``output_dir`` is set.
    """
    specs = strategies if strategies is not None else config.strategies
    strategies = [s if isinstance(s, Strategy) else
                  Strategy.parse(s) if isinstance(s, str) else Strategy(**s) for s in specs]
    if len(strategies) < 2:
        raise ConfigError("compare needs at least two strategies")
    scans, mesh, design, task_column = _load_inputs(config)
    smoothers = {}
    rows, aggregate = [], []
    for strat in strategies:
        sm = None
        if strat.regularization == "local":
            if mesh is None:
                raise ConfigError("local regularization needs a mesh (set 'mesh')")
            sm = smoothers.get(strat.fwhm) or smoothers.setdefault(
                strat.fwhm, build_smoother(mesh, strat.fwhm))
        results, _ = _run_scans(config, strat, scans, mesh, design, task_column, sm)
        for i, r in enumerate(results):
            s = r.summary()
            rows.append({"strategy": strat.name, "scan": i, "mean_aci": s["mean_aci_post"],
                         "q95_aci": s["q95_aci_post"],
                         "lb_significant_pct": 100.0 * s["lb_significant_post"],
                         "fpr": s.get("fpr", float("nan")),
                         "any_positive": s.get("any_positive", False)})
        agg = {"strategy": strat.name,
               "mean_aci": _mean([r["mean_aci"] for r in rows[-len(results):]]),
               "lb_significant_pct": _mean([r["lb_significant_pct"]
                                            for r in rows[-len(results):]])}
        if task_column is not None:
            er = summarize_error_rates(np.array([r.significant for r in results]),
                                       np.array([r.exclude for r in results]))
            agg.update({"fwer": er.fwer, "fwer_ci": [er.ci_low, er.ci_high],
                        "mean_fpr": er.mean_fpr})
        aggregate.append(agg)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARISON_FIELDS)
            w.writeheader()
            w.writerows(rows)
        with open(out / "comparison.json", "w") as fh:
            json.dump({"rows": rows, "aggregate": aggregate}, fh, indent=2, sort_keys=True)
        write_manifest(out, config, {"strategies": [s.name for s in strategies]})
    return rows, aggregate
