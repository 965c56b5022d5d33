"""A miniature replication study: bias, variance, MSE and Wald coverage.

Ten replicates of 60 subjects with two event types.  The published studies
use 200 subjects and many more replicates; the command-line ``study``
subcommand runs those.
"""

import numpy as np

from copfrail import FitConfig, MHConfig, SimConfig, run_study

cfg = SimConfig(n_subjects=60, n_types=2, model="Cg", copula_truth=1.0, alpha_truth=(0.8, 0.8),
                beta_truth=(1.0, 0.5), n_replicates=10, seed=31, setting="demo")


def progress(o):
    print(f"replicate {o.index + 1}: converged={o.converged} iterations={o.n_iterations} {o.runtime:.0f} s")


res = run_study(cfg, FitConfig(mh=MHConfig(n_s=300)), progress=progress)
print(f"\n{'parameter':10}{'truth':>7}{'mean':>8}{'bias':>8}{'var':>8}{'MSE':>8}{'CP':>6}")
for row in res.rows():
    print(f"{row['parameter']:10}{row['truth']:7.3f}{row['mean']:8.3f}{row['bias']:8.3f}{row['var']:8.3f}{row['mse']:8.3f}{row['cp']:6.2f}")
assert np.allclose(res.mse, res.bias**2 + res.var)
res.to_csv("demo_study.csv")
