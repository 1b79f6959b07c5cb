"""Command line front end: ``prewhiten fit|compare|simulate|diagnose``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import sim
from .arfit import aci, empirical_acf
from .errors import ConfigError, DataError, NumericError, PrewhitenError
from .io import load_bold, save_bold, save_events, save_mesh, write_vertex_csv
from .pipeline import PipelineConfig, compare_strategies, run_pipeline, write_manifest
from .stats import ljung_box_field

logger = logging.getLogger("prewhiten")

# flag dest -> PipelineConfig field
_FIELD_FLAGS = {
    "bold": "bold", "tr": "tr", "mesh": "mesh", "events": "events", "nuisance": "nuisance",
    "task": "task", "hrf": "hrf", "cutoff": "cutoff_hz", "order": "ar_order",
    "p_max": "p_max", "regularization": "regularization", "fwhm": "fwhm",
    "precision": "precision", "appendix_literal": "appendix_literal",
    "truncate": "truncate", "whiten": "whiten", "lags": "lb_lags", "lb_n": "lb_n",
    "lb_dof": "lb_dof", "lb_q": "lb_q", "correction": "correction", "alpha": "alpha",
    "aci_lag": "aci_max_lag", "strategy": "strategies", "output": "output_dir",
    "threads": "threads", "seed": "seed",
}


def _order(text):
    return text if text == "aic" else int(text)


def _add_common(p):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--bold", nargs="+", help="BOLD matrix file(s), one per scan")
    p.add_argument("--tr", type=float, help="override the TR stored in the BOLD header")
    p.add_argument("--mesh", help="surface mesh file (needed for local regularization)")
    p.add_argument("--events", help="event file (condition,onset,duration[,amplitude])")
    p.add_argument("--nuisance", help="nuisance regressors as a T x K matrix file")
    p.add_argument("--task", help="condition tested with the t-test (default: first)")
    p.add_argument("--hrf", choices=("canonical", "+td", "+td+dd"))
    p.add_argument("--cutoff", type=float, help="DCT high-pass cutoff in Hz")
    p.add_argument("--order", type=_order, help="AR order or 'aic'")
    p.add_argument("--p-max", dest="p_max", type=int, help="largest order tried by AIC")
    p.add_argument("--regularization", choices=("local", "global", "none"))
    p.add_argument("--fwhm", type=float, help="local smoothing FWHM in mm")
    p.add_argument("--precision", choices=("ar", "appendix"),
                   help="band precision: exact AR ('ar') or unit-diagonal 'appendix'")
    p.add_argument("--appendix-literal", dest="appendix_literal", action="store_const",
                   const=True, help="whiten with U D U' instead of the square root")
    p.add_argument("--no-truncate", dest="truncate", action="store_const", const=False,
                   help="keep the full whitening matrix instead of its p-band")
    p.add_argument("--no-whiten", dest="whiten", action="store_const", const=False,
                   help="stop after OLS and the pre-whitening diagnostics")
    p.add_argument("--lags", type=int, help="Ljung-Box lags")
    p.add_argument("--lb-n", dest="lb_n", type=int, help="volumes used by Ljung-Box")
    p.add_argument("--lb-dof", dest="lb_dof", choices=("intercept", "ar"))
    p.add_argument("--lb-q", dest="lb_q", type=float, help="FDR level for Ljung-Box maps")
    p.add_argument("--correction", choices=("bonferroni", "fdr"))
    p.add_argument("--alpha", type=float, help="level of the task t-test correction")
    p.add_argument("--aci-lag", dest="aci_lag", type=int,
                   help="truncate the ACI sum at this lag (default: all lags)")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--seed", type=int)


def _config(args):
    overrides = {f: getattr(args, a) for a, f in _FIELD_FLAGS.items()
                 if getattr(args, a, None) is not None}
    if args.config:
        return PipelineConfig.from_json(args.config, overrides)
    return PipelineConfig.from_dict(overrides)


def cmd_fit(args):
    cfg = _config(args)
    bundle = run_pipeline(cfg)
    for i, s in enumerate(bundle.summaries):
        print(f"scan {i}: " + ", ".join(f"{k}={_short(v)}" for k, v in sorted(s.items())
                                         if k != "design_columns"))
    if bundle.error_rates is not None:
        er = bundle.error_rates
        print(f"FWER {er.fwer:.4f} [{er.ci_low:.4f}, {er.ci_high:.4f}] over {er.n_scans} scans")
    return 0


def cmd_compare(args):
    cfg = _config(args)
    _, aggregate = compare_strategies(cfg)
    for a in aggregate:
        print(", ".join(f"{k}={_short(v)}" for k, v in a.items()))
    return 0


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _scenario(args):
    if args.scenario:
        mesh = None
        if args.mesh:
            from .io import load_mesh
            mesh = load_mesh(args.mesh)
        try:
            scen = sim.load_scenario(args.scenario, mesh)
        except (OSError, KeyError, json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"bad scenario {args.scenario}: {exc}") from None
        return scen
    T = args.T or (1200 if args.preset == "table2" else sim.NULL_T)
    tr = args.tr or sim.NULL_TR
    if args.preset == "table2":
        return sim.table2_scenario(T, args.seed, tr)[1]
    nx, ny = args.grid
    widths = args.widths or _table2_widths(nx)
    try:
        return sim.table2_grid_scenario(nx, ny, T=T, tr=tr, seed=args.seed, widths=widths)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _table2_widths(nx):
    """Column counts per tissue class keeping the 11:3:2:11 ratio."""
    counts = np.array([c for _, c, _ in sim.TABLE2], float)
    w = np.maximum(1, np.round(counts / counts.sum() * nx)).astype(int)
    w[-1] += nx - w.sum()
    return tuple(int(x) for x in w)


def cmd_simulate(args):
    if args.scans < 1:
        raise ConfigError("--scans must be positive")
    scen = _scenario(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if scen.mesh is not None:
        save_mesh(out / "mesh.txt", scen.mesh)
    with open(out / "scenario.json", "w") as fh:
        json.dump(scen.to_dict(), fh, indent=2)
    labels = scen.labels()
    write_vertex_csv(out / "labels.csv", range(scen.V), {"tissue": labels})
    save_events(out / "events.csv", sim.boxcar_events())
    bold = []
    for i in range(args.scans):
        name = f"scan_{i:03d}.bmat"
        save_bold(out / name, sim.simulate(scen, scan=i))
        bold.append(name)
    fit_cfg = {"bold": bold, "mesh": "mesh.txt" if scen.mesh is not None else None,
               "events": "events.csv", "seed": scen.seed}
    with open(out / "config.json", "w") as fh:
        json.dump(fit_cfg, fh, indent=2)
    settings = {"command": "simulate", "preset": None if args.scenario else args.preset,
                "scenario": scen.to_dict(), "scans": args.scans, "seed": scen.seed,
                "generator": sim.GENERATOR}
    write_manifest(out, settings)
    print(f"wrote {args.scans} scan(s) of {scen.T}x{scen.V} to {out}")
    return 0


def cmd_diagnose(args):
    res = load_bold(args.residuals)
    R = res.data
    if args.lb_dof == "ar" and args.order is None:
        raise ConfigError("--lb-dof ar needs --order")
    keep_const = res.constant
    acf = empirical_acf(R, args.aci_lag)
    a = aci(acf).aci
    lb = ljung_box_field(R, args.lags, args.lb_n, args.lb_dof, p=args.order,
                         T_full=res.T, q=args.lb_q, exclude=keep_const)
    summary = {"T": res.T, "V": res.V, "mean_aci": float(np.mean(a[~keep_const]))
               if (~keep_const).any() else float("nan"),
               "q95_aci": float(np.quantile(a[~keep_const], 0.95))
               if (~keep_const).any() else float("nan"),
               "lb_significant": lb.fraction_significant, "lags": args.lags,
               "dof_mode": args.lb_dof}
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        write_vertex_csv(out / "diagnostics.csv", res.vertex_ids,
                         {"aci": a, "lb_Q": lb.statistic, "lb_dof": lb.dof,
                          "lb_p": lb.pvalue, "lb_sig": lb.significant_mask,
                          "constant": keep_const})
        save_bold(out / "acf.bmat", acf.acf)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        write_manifest(out, {"command": "diagnose", "residuals": str(args.residuals),
                             "lags": args.lags, "lb_n": args.lb_n, "lb_dof": args.lb_dof,
                             "order": args.order, "lb_q": args.lb_q,
                             "aci_lag": args.aci_lag})
    print(", ".join(f"{k}={_short(v)}" for k, v in summary.items()))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="prewhiten", description="Spatially varying AR prewhitening for vertex-wise GLMs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the full pipeline on one or more scans")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="evaluate several prewhitening strategies")
    _add_common(p)
    p.add_argument("--strategy", action="append",
                   help="strategy such as ar6-local, ar1-local@4, aic-global (repeatable)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="write synthetic AR scans with a mesh and config")
    p.add_argument("--preset", choices=("table2", "grid"), default="grid",
                   help="tissue strip on a line mesh, or the same classes on a grid")
    p.add_argument("--scenario", help="scenario JSON (overrides --preset)")
    p.add_argument("--mesh", help="mesh for a --scenario file")
    p.add_argument("--grid", nargs=2, type=int, default=(50, 20), metavar=("NX", "NY"))
    p.add_argument("--widths", nargs=4, type=int, metavar=("BG", "CSF", "GM", "WM"))
    p.add_argument("--T", type=int, help="volumes per scan")
    p.add_argument("--tr", type=float)
    p.add_argument("--scans", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="ACI and Ljung-Box maps for supplied residuals")
    p.add_argument("residuals", help="residual matrix file (T x V)")
    p.add_argument("--lags", type=int, default=20)
    p.add_argument("--lb-n", dest="lb_n", type=int, default=100)
    p.add_argument("--lb-dof", dest="lb_dof", choices=("intercept", "ar"), default="intercept")
    p.add_argument("--order", type=int, help="AR order for --lb-dof ar")
    p.add_argument("--lb-q", dest="lb_q", type=float, default=0.05)
    p.add_argument("--aci-lag", dest="aci_lag", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except PrewhitenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        # library-level input validation not already typed above
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
