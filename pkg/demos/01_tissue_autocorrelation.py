"""How much serial correlation does each tissue class carry?

Simulates long AR series for the four tissue classes, compares the empirical
autocorrelation index (ACI) with its analytic value, and shows which AR order
the AIC picks for each class.
"""

import numpy as np

from prewhiten.arfit import aci, empirical_acf, select_order_aic
from prewhiten.sim import TABLE2, analytic_aci, gen_ar_series

T, N = 1200, 300

print(f"{'class':<11}{'phi':<22}{'analytic':>9}{'full-lag':>10}{'lag<=60':>9}{'AIC order':>11}")
for name, _, phi in TABLE2:
    x = np.column_stack([gen_ar_series(phi, 1.0, T, seed=1, vertex=v) for v in range(N)])
    acf = empirical_acf(x)
    full = aci(acf).aci.mean()
    short = aci(acf, max_lag=60).aci.mean()
    orders = [select_order_aic(x[:, v])[0] for v in range(50)]
    print(f"{name:<11}{str(tuple(phi)):<22}{analytic_aci(phi):9.3f}{full:10.3f}{short:9.3f}"
          f"{int(np.median(orders)):>11}")

# The full-lag sum picks up roughly 0.5 of pure estimation noise at T=1200;
# truncating the sum removes most of it.
