"""
The power-divergence family
===========================

``phi_a`` interpolates reversed KL (a = -1), KL (a = 0) and Pearson (a = 1).
"""

# %%
import numpy as np

from lcmdiv import divergence, power_divergence, power_phi

x = np.array([0.25, 0.5, 1.0, 2.0, 4.0])
for a in (-1, -0.5, 0, 2 / 3, 1, 2):
    print(f"{a:6.3f}", np.round(power_phi(a)(x), 4))

# %% [markdown]
# Same pair, every member of the grid; the closed form agrees with the
# generic sum over cells.

# %%
p_hat = np.array([0.5, 0.5])
p = np.array([0.25, 0.75])
for a in (-1, -0.5, 0, 2 / 3, 1, 1.5, 2, 2.5, 3):
    closed = power_divergence(a, p_hat, p)
    generic = divergence(power_phi(a), p_hat, p)
    print(a, closed, closed - generic)

# %% [markdown]
# Empty cells: a model cell with no observations costs ``p * phi(0)``;
# a > -1 keeps that finite.

# %%
p_hat = np.array([1.0, 0.0])
for a in (-1, -0.5, 0, 1):
    print(a, power_divergence(a, p_hat, np.array([0.5, 0.5])))
