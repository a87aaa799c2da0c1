"""Superposed multicast/unicast transmission over Rayleigh MIMO OFDMA.

Ergodic-rate evaluation with statistical CSIT, surrogate-model power
allocation, brute-force verification oracles, and a rural-macro
system-level simulator.
"""

from .allocator import (Allocation, AllocatorOptions, ConvergenceError,
                        MODE_MULTICAST, MODE_OFF, MODE_SUPERPOSITION, MODE_UNICAST,
                        algorithm1, algorithm2, baseline_multicast_only,
                        baseline_orthogonal, baseline_unicast_only, outer_minimize,
                        solve_waterline, split_power, z1_closed_form)
from .channel import ChannelStats, MimoShape, build_channel_stats, stronger_set
from .oracle import OracleResult, brute_force_wsr, direct_covariance_solver, dof_slope
from .rates import (PhiTable, RateEstimator, RateResult, build_phi_table,
                    multicast_rate_term, phi_aux, phi_capacity, rate_tuple,
                    unicast_rate_term, with_lookup_table)
from .surrogate import SurrogateTable, alpha_lookup, fit_alpha, fit_table, surrogate_phi
from .sysim import (Drop, NetworkScenario, attach_and_link_budget,
                    drop_to_channel_stats, generate_drop, layout_sites,
                    pathloss_rma, sector_gain, shadowing_field)

__version__ = "0.1.0"
