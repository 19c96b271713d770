"""
slicerisk
=========

Overload-risk estimation for sliced multi-tenant networks.

Modules
-------
::

 gmm       -- Gaussian mixtures left-truncated at zero
 queue     -- Erlang loss occupancy model and lifecycle simulator
 simulate  -- random scenarios, observations and the Monte-Carlo risk oracle
 estimate  -- the estimation pipeline from observations to a risk curve
 bench     -- randomized benchmark and sensitivity sweeps
 cli       -- ``slicerisk`` command line
"""

from .gmm import GaussianComponent, TruncatedMixture
from .queue import BirthDeathRates, LifecycleTrace, simulate_lifecycle, stationary_distribution
from .simulate import (ObservationSet, RiskCurve, ScenarioSpec, observe, random_scenario,
                       true_overload_risk)
from .estimate import FittedModel, PipelineConfig, run_pipeline
from .bench import BenchConfig, run_benchmark, sensitivity_sweep

__version__ = "0.1.0"
