# # A small randomized benchmark
#
# Each trial draws a new scenario, simulates the observations, runs the
# estimator and scores it against the oracle. Seeds are derived from the
# trial index, so any trial can be replayed on its own.

# %%
from slicerisk.bench import BenchConfig, run_benchmark, run_trial, sensitivity_sweep

config = BenchConfig(trials=10, oracle_samples=100_000, master_seed=1)
result = run_benchmark(config)
print(result.summary_json())

# %%
again = run_trial(config, 4)
print("trial 4 replayed:", again.error_rate == result.trials[4].error_rate)

# %% [markdown]
# Harder scenarios have more mixture components. The median error per
# component count:

# %%
for k, cell in sensitivity_sweep(config, "component_count", [1, 3, 5, 8]):
    print(f"k={k:g}: median error {cell.summary['median']:.3f}")
