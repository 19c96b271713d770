# # How many slices are running?
#
# Slice requests arrive as a Poisson stream, each slice lives for an
# exponential time, and the operator admits at most n_max at once. The
# long-run share of time spent with n slices active is the Erlang loss
# distribution. Here we compute it and check it against a simulated path.

# %%
import numpy as np

from slicerisk.queue import (BirthDeathRates, occupancy_time, simulate_lifecycle,
                             stationary_distribution)

rates = BirthDeathRates(lambda_=5.0, eta=1.0, n_max=10)
p = stationary_distribution(rates)
print("offered load:", rates.load)
for n, pn in enumerate(p):
    print(f"  P[{n:2d} active] = {pn:.4f}")

# %% [markdown]
# Blocking probability is the mass at the cap: a request arriving then is refused.

# %%
print("blocking probability:", round(p[-1], 4))

# %% [markdown]
# A Gillespie simulation of the same chain. Time-weighted occupancy should
# approach the table above as the horizon grows.

# %%
rng = np.random.default_rng(1)
for horizon in (10.0, 100.0, 1000.0, 10000.0):
    trace = simulate_lifecycle(rates, horizon, rng)
    occ = occupancy_time(trace)
    tv = 0.5 * np.abs(occ / occ.sum() - p).sum()
    print(f"horizon {horizon:>7g}: {len(trace):6d} events, TV distance {tv:.4f}")

# %%
# The trace is what an operator would log; first few rows:
print("\n".join(trace.to_csv().splitlines()[:8]))
