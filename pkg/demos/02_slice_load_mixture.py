# # The load of one slice
#
# A single slice's resource demand is modelled as a Gaussian mixture cut off
# at zero. The generator below draws the same kind of random mixture the
# benchmark uses: five components, means between 0.25 and 0.75, standard
# deviations below 0.1.

# %%
import numpy as np

from slicerisk import gmm
from slicerisk.simulate import random_scenario

rng = np.random.default_rng(7)
mix = random_scenario(rng).slice_load
for c in mix.components:
    print(f"  weight {c.weight:.3f}  mean {c.mean:.3f}  std {c.std:.4f}")

# %% [markdown]
# Density, CDF and tail all share one normalisation constant, so the
# truncated law still integrates to one.

# %%
xs = np.linspace(0, 1, 11)
print("x     pdf      cdf     tail")
for x, f, F, T in zip(xs, gmm.pdf(mix, xs), gmm.cdf(mix, xs), gmm.tail_prob(mix, xs)):
    print(f"{x:.1f}  {f:7.4f}  {F:.4f}  {T:.4f}")

# %% [markdown]
# Sampling is by rejection of negative draws. A crude text histogram of
# 20000 draws:

# %%
draws = gmm.sample(mix, rng, 20_000)
counts, edges = np.histogram(draws, bins=20, range=(0, 1))
for c, lo in zip(counts, edges):
    print(f"{lo:.2f} {'#' * int(60 * c / counts.max())}")
