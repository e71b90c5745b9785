"""Simulation lab for many-server queues with idle-triggered server vacations.

Pre-limit discrete-event systems, their heavy-traffic diffusion limits
(Halfin-Whitt, near-Halfin-Whitt, nondegenerate-slowdown), closed-form
heuristics and the estimators that compare them.
"""

__version__ = "0.1.0"

from .heuristics import pow0, pow_tilde, sd0, sd_tilde, steady_averages_hw, steady_averages_nds  # noqa: E402
from .limit_sim import (LimitState, ModelParams, SimConfig, Trajectory, simulate, simulate_hw,  # noqa: E402
                        simulate_near_hw, simulate_nds, simulate_reference_rbm)
from .skorokhod import SampledPath, oscillation, skorokhod_map, verify_complementarity  # noqa: E402

__all__ = [
    "LimitState", "ModelParams", "SampledPath", "SimConfig", "Trajectory", "oscillation", "pow0",
    "pow_tilde", "sd0", "sd_tilde", "simulate", "simulate_hw", "simulate_near_hw", "simulate_nds",
    "simulate_reference_rbm", "skorokhod_map", "steady_averages_hw", "steady_averages_nds",
    "verify_complementarity",
]
