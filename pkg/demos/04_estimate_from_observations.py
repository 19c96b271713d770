# # Estimating risk from what the operator sees
#
# The operator never sees the true mixture or the true rates. It sees a log
# of slice births and deaths and a pile of per-slice load measurements. The
# estimator turns these into a risk curve in several stages; this demo walks
# through them one at a time and then compares with the oracle.

# %%
import numpy as np

from slicerisk.bench import error_rate
from slicerisk.estimate import (detect_peaks, empirical_pdf, extract_rates, fit_mixture,
                                run_pipeline, smooth)
from slicerisk.simulate import observe, random_scenario, true_overload_risk

rng = np.random.default_rng(11)
spec = random_scenario(rng)
obs = observe(spec, 5000, None, rng)
print(f"{len(obs.trace)} lifecycle events, {obs.n_obs} load samples")

# %%
lam, eta = extract_rates(obs.trace)
print(f"rates: lambda {lam:.3f} (true {spec.rates.lambda_}), eta {eta:.3f} (true {spec.rates.eta})")

# %% [markdown]
# Peak counting on the smoothed histogram guesses how many components to fit.
# Overlapping components merge into one bump, so the guess is often low.

# %%
pdf = smooth(empirical_pdf(obs.load_samples, 100), 5)
k_hat = detect_peaks(pdf, 0.05)
print("peaks found:", k_hat, "true components:", spec.slice_load.k)
fit = fit_mixture(obs.load_samples, k_hat, rng)
for c in fit.components:
    print(f"  weight {c.weight:.3f}  mean {c.mean:.3f}  std {c.std:.4f}")

# %% [markdown]
# The full pipeline adds the Erlang weighting, the Monte-Carlo composition
# of per-occupancy aggregates and their re-fit.

# %%
thresholds = np.linspace(2.5, 7.5, 41)
model, est = run_pipeline(obs, 10, thresholds, None, rng)
truth = true_overload_risk(spec, thresholds, 200_000, rng)
for i in range(0, 41, 5):
    print(f"r={thresholds[i]:.2f}  estimated {est.risks[i]:.3e}  true {truth.risks[i]:.3e}")
print("RMS relative error:", round(error_rate(est, truth), 4))
