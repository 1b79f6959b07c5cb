"""False positives under the null, with and without prewhitening.

Runs a small Monte-Carlo null experiment (pure noise, boxcar task) and
reports the Bonferroni family-wise error rate with a 95% interval.
Scan count is kept low so the script finishes in about a minute.
"""

from prewhiten.pipeline import Strategy, null_error_rates
from prewhiten.sim import null_boxcar_experiment, table2_grid_scenario

scen = table2_grid_scenario(nx=10, ny=5, widths=(4, 1, 1, 4))
exp = null_boxcar_experiment(scen, n_scans=40, seed=3)

for label, kw in (("OLS, no prewhitening", dict(whiten=False)),
                  ("AR(1)-global", dict(strategy=Strategy(1, "global"))),
                  ("AR(6)-local", dict(strategy=Strategy(6, "local")))):
    er = null_error_rates(exp, **kw)
    print(f"{label:<22} FWER {er.fwer:.3f}  [{er.ci_low:.3f}, {er.ci_high:.3f}]")

# At T=284 the AR fits come from residuals that have already lost their
# low-frequency power to the boxcar and drift regressors. The fitted spectrum
# is too low exactly where the boxcar lives, so prewhitening helps but stays
# above the nominal 0.05.
