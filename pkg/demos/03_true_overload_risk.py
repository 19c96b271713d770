# # Ground-truth overload risk
#
# With the arrival rates and the per-slice load law known, the chance that
# total demand exceeds capacity r is a mixture over occupancy: with n
# slices active, total load is the sum of n independent slice loads. We
# estimate each conditional tail by Monte Carlo on its own random stream
# and weight by the Erlang probabilities.

# %%
import numpy as np

from slicerisk.simulate import direct_overload_risk, random_scenario, true_overload_risk

rng = np.random.default_rng(3)
spec = random_scenario(rng)
thresholds = np.linspace(2.5, 7.5, 11)
strat = true_overload_risk(spec, thresholds, 200_000, rng)

# %% [markdown]
# A cruder check draws n from the Erlang law first and then sums n loads.
# The two must agree within Monte-Carlo error.

# %%
direct = direct_overload_risk(spec, thresholds, 1_000_000, rng)
print(" r      stratified     direct      gap/SE")
for t, a, sa, b, sb in zip(thresholds, strat.risks, strat.stderr, direct.risks, direct.stderr):
    se = np.hypot(sa, sb)
    z = abs(a - b) / se if se > 0 else 0.0
    print(f"{t:4.1f}  {a:.3e}    {b:.3e}   {z:5.2f}")
