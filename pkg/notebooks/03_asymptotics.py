"""
Standard errors from the Fisher information
===========================================

Every member of the family has covariance ``(A^T A)^{-1} / N``.
"""

# %%
import numpy as np

from lcmdiv import asymptotics_report, birch_diagnostics
from lcmdiv.io import load_bundled_counts, load_bundled_model

spec = load_bundled_model("coleman.json")
counts = load_bundled_counts("coleman.csv", spec.k)
theta = np.array([-2.3433, 1.7219, -0.8405, 1.5675, -2.0709, 2.2991, -0.9124, 2.0121,
                  0.5041, 0.1689, -0.8728, -0.0039])

# %% [markdown]
# Rank is one short: the eta shift direction.  Fixing eta_4 restores it.

# %%
diag = birch_diagnostics(spec, theta)
print("rank", diag.rank, "of", diag.n_params, "min cell", diag.min_cell_probability)
report = asymptotics_report(spec, theta, int(counts.sum()))
print("gauge fixed:", report.gauge_fixed)
print("se lambda", np.round(report.se[:spec.t], 4))
print("se eta   ", np.round(report.se[spec.t:], 4))

# %%
# fitted cells: delta-method covariance, rows sum to zero
print(np.abs(report.manifest_cov.sum(axis=1)).max())
print(np.round(np.sqrt(np.diag(report.manifest_cov)), 5))
