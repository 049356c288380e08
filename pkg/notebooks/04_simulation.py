"""
Monte Carlo comparison of a = 0 and a = 2/3
===========================================

Ten classes, five items.  A small run here; the bundled plans carry the
full settings.
"""

# %%
import time
from dataclasses import replace

from lcmdiv import run_study
from lcmdiv.io import bundled_path, parse_plan

path = bundled_path("section5_smoke_plan.json")
plan, config, _ = parse_plan(path.read_text(), path.parent)
plan = replace(plan, replicates=3)
print(plan.sample_sizes, plan.family_indices, plan.replicates)

# %%
t0 = time.perf_counter()
summary = run_study(plan, config)
print(f"{time.perf_counter() - t0:.1f}s")
for e in summary.entries:
    print(e.N, e.a, round(e.mse_p, 5), round(e.mse_w, 5), round(e.mse_pw, 5), e.n_failed)

# %%
print(summary.to_csv())
