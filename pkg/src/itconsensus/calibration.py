"""Frozen tracking bands for the probabilistic stability checks.

The bands come from a 100-run calibration batch of the published setup
(``paper_config()``, master seed 0, ensemble runs 1000-1099, disjoint from
the runs used in checks). ``calibrate()`` regenerates them; the numbers
below are its output and must not be retuned to make a check pass.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .analysis import BandFunction, run_statistic, run_sup_statistic
from .config import SimConfig

CALIBRATION_RUNS = 100
CALIBRATION_OFFSET = 1000
PERCENTILE = 95.0

# 95th percentiles of the calibration batch from ``calibrate()``, rounded up
# to six significant digits
MEAN_BAND = 0.109643  # worst-follower mean |z_i - z_r| over the final 25 % of the horizon
SUP_BAND = 0.339333  # worst-follower sup |z_i - z_r| over the final 25 % of the horizon
TRANSIENT = 1.48673  # band(t) = SUP_BAND + TRANSIENT * exp(-t / TIME_SCALE)
TIME_SCALE = 1.0


def band_function() -> BandFunction:
    return BandFunction(SUP_BAND, TRANSIENT, TIME_SCALE)


def calibrate(cfg: SimConfig, runs: int = CALIBRATION_RUNS, offset: int = CALIBRATION_OFFSET, time_scale: float = 1.0) -> dict:
    ens = engine.run_ensemble(cfg, runs, run_offset=offset, keep_traces=False)
    t = ens.t
    mean_band = float(np.percentile(run_statistic(ens.track_err, t), PERCENTILE))
    sup_band = float(np.percentile(run_sup_statistic(ens.track_err, t), PERCENTILE))
    # smallest transient amplitude that covers the per-time percentile profile
    profile = np.percentile(np.abs(ens.track_err).max(axis=2), PERCENTILE, axis=0)
    excess = np.maximum(profile - sup_band, 0.0) * np.exp(t / time_scale)
    transient = float(np.max(excess))
    return {
        "mean_band": mean_band,
        "sup_band": sup_band,
        "transient": transient,
        "time_scale": time_scale,
        "diverged": sum(d is not None for d in ens.diverged_at),
        "profile": profile,
        "t": t,
    }
