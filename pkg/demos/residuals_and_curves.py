"""Post-fit diagnostics on a small simulated data set.

Fits the Gaussian-copula / gamma model to 80 subjects, then

* computes martingale and deviance residuals (sums of squared deviance
  residuals per type are the model-comparison numbers of the report),
* exports the cumulative baseline intensities on a grid, for plotting
  elsewhere, with and without the treatment effect,
* prints relative risks with Wald intervals.
"""

import numpy as np

from copfrail import FitConfig, MHConfig, fit, generate_dataset, study_setting
from copfrail.diagnostics import deviance_residuals, export_cumulative_intensity, relative_risks

d = generate_dataset(study_setting("Gg", "II", n_subjects=80), np.random.default_rng(9))
res = fit(d, "Gg", FitConfig(seed=3, mh=MHConfig(n_s=300)))
print(f"converged: {res.converged} ({res.n_iterations} iterations)")

rep = deviance_residuals(res, d)
print("martingale residual sums (0 by construction):", rep.martingale.sum(axis=0).round(10))
print("sum of squared deviance residuals by type:", rep.ss_by_type.round(2), "total", round(rep.total, 2))
worst = np.unravel_index(np.argmax(np.abs(rep.deviance)), rep.deviance.shape)
print(f"largest |deviance|: subject {d.subject_ids[worst[0]]}, type {worst[1] + 1}, "
      f"{rep.counts[worst]} events, residual {rep.deviance[worst]:.2f}")

grid = np.linspace(0, 1, 11)
base = export_cumulative_intensity(res, grid)
treated = export_cumulative_intensity(res, grid, covariates=[1.0])
for j in range(d.n_types):
    print(f"type {j + 1}: Lambda_0 at t=0.5, 1.0: {base.values[j, 5]:.3f}, {base.values[j, 10]:.3f};"
          f" treated: {treated.values[j, 5]:.3f}, {treated.values[j, 10]:.3f}")
base.to_csv("cumulative_intensity.csv")

for r in relative_risks(res):
    print(f"{r.name}: RR {r.rr:.3f}  95% ({r.lower:.3f}, {r.upper:.3f})  p {r.p_value:.3g}")
