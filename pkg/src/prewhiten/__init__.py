"""Spatially varying AR prewhitening for vertex-wise time-series GLMs."""

__version__ = "0.1.0"

from .arfit import (AcfField, AciField, ArField, aci, empirical_acf, fit_ar_field,
                    levinson_durbin, select_order_aic)
from .design import (DesignMatrix, HrfBasis, assemble_design, canonical_hrf,
                     convolve_events, dct_bases, hrf_derivatives)
from .errors import ConfigError, DataError, NumericError, PrewhitenError, RankError
from .glm import GlmFit, fit_gls, fit_ols, ttest
from .io import (BoldMatrix, EventSchedule, SurfaceMesh, load_bold, load_events,
                 load_mesh, save_bold, save_events, save_mesh)
from .regularize import (SmoothingOperator, build_smoother, global_average,
                         regularize_ar, smooth_field)
from .sim import (analytic_aci, gen_ar_series, null_boxcar_experiment,
                  table2_scenario)
from .stats import (ErrorRateSummary, LjungBoxResult, agresti_coull, bonferroni,
                    chi2_sf, fdr_bh, ljung_box, summarize_error_rates)
from .whiten import (WhitenOperator, apply_whitener, build_precision, build_whitener,
                     whiten_dataset)
from .pipeline import (PipelineConfig, ReportBundle, Strategy, compare_strategies,
                       prewhiten_scan, run_pipeline)
