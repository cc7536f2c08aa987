"""Sparse asymmetric BS cooperation for multicell downlink beamforming.

Modules
-------
model        system model, SINR, backhaul cost and the smoothed surrogate
conic        primal-dual interior-point solver for complex block SDPs
subproblems  lifted power-minimization and projection problems
algorithm    smoothed-l0 projected gradient search over cooperation patterns
baselines    full search, link removal and reweighted group-l1
sim          PPP networks, channels and Monte Carlo harness
cli          command-line front end
"""

__version__ = "0.1.0"
