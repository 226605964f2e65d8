"""Two-layer downlink precoding (LSFP) for multi-cell massive MIMO.

Pipeline: scenario statistics -> pilot/channel estimation -> closed-form link
statistics -> SE evaluation -> WMMSE/ADMM weight optimization -> experiment
harness with CSV/JSON reporting.
"""

from .errors import (ConfigError, ConvergenceError, InvariantError, LsfpError,
                     NumericError, StatisticsError)
from .estimation import (EW_LMMSE, LMMSE, LS, ChannelEstimate, PilotStatistics,
                         channel_estimate, pilot_observation, pilot_statistics,
                         psi_matrix)
from .harness import (ExperimentResult, SchemeSpec, emit_outputs, fronthaul_symbols,
                      parse_scheme, percentile, run_experiment, summary_dict)
from .linkstats import (LinkStatistics, closed_form_linkstats, mc_linkstats,
                        oracle_comparison, quadratic_moment, rician_moments,
                        structural_zero_mask)
from .optimizer import (DS, DS_INT, PROP_FAIR, SUM_SE, PartialSelection,
                        SolverDiagnostics, SolverOptions, SolverState,
                        admm_qcqp_solve, build_quadratic, initial_weights,
                        lpa_weights, optimal_receiver_u, select_partial_indices,
                        weight_update_d, wmmse_solve)
from .scenario import (RAYLEIGH_UNCORRELATED, RICIAN_CORRELATED, ChannelRealization,
                       ChannelStatistics, ScenarioConfig, covariance_sqrt_factors,
                       generate_network, local_scattering_covariance, sample_channels,
                       steering_vector)
from .se_eval import (LsfpWeights, SinrBreakdown, full_mask, mse_value, partial_mask,
                      power_used, sinr_all, sinr_breakdown, slp_mask,
                      spectral_efficiency)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
