"""Stochastic day-ahead reconfiguration of active distribution networks.

Radial power flow, Monte Carlo branch reliability, PV availability scenarios
with Kantorovich reduction, and a multi-objective crow search that schedules
topology, DG, demand response and storage hour by hour.
"""

__version__ = "0.1.0"
