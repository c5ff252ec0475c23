"""Simulator and optimiser for RIS-assisted over-the-air federated learning.

Modules
-------
channel      geometry, path loss, fading and channel realizations
aggregation  MSE-optimal transceiver policy and uplink simulation
objective    the design objective d and the convergence bounds
sca          receive beamformer and RIS phases for a fixed selection
gibbs        device selection by annealed Gibbs sampling
flsim        federated training with baselines and channel schedules
"""
from ._accel import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
