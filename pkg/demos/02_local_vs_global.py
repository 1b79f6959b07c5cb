"""Local versus global AR prewhitening on a heterogeneous surface patch.

A 50 x 20 grid is split into background, CSF, grey-matter and white-matter
bands, each with its own AR noise. A boxcar GLM is fitted with several
prewhitening strategies and the remaining residual autocorrelation is
reported per tissue class.
"""

import numpy as np

from prewhiten.pipeline import Strategy, prewhiten_scan
from prewhiten.regularize import build_smoother
from prewhiten.sim import boxcar_design, simulate, table2_grid_scenario

scen = table2_grid_scenario(50, 20, T=284, seed=7)
bold = simulate(scen)
X = boxcar_design(284)
smoother = build_smoother(scen.mesh, 5.0)

strategies = [Strategy(0, "none"), Strategy(1, "local"), Strategy(6, "global"),
              Strategy(6, "local"), Strategy("aic", "local")]
header = "".join(f"{r.name:>12}" for r in scen.regions)
print(f"{'strategy':<20}{header}{'LB-sig':>9}")
for st in strategies:
    res = prewhiten_scan(bold, X, st, mesh=scen.mesh, smoother=smoother)
    per = "".join(f"{np.mean(res.aci_post[r.vertices]):12.3f}" for r in scen.regions)
    print(f"{st.name:<20}{per}{res.lb_post.significant_mask.mean():9.1%}")

# One global model leaves most of the CSF and grey-matter correlation in place.
# Even a smoothed AR(1) fitted locally does better on average.
