"""Buffer-aided multi-antenna relay selection with a switched direct link."""

from .analysis import (complexity_report, log2det_capacity, pep_cooperative, pep_direct, qfunc,
                       sum_rate_aggregate, sum_rate_slot, theoretical_pep_curve)
from .channel import (Constellation, CsiModel, LinkVarianceProfile, build_constellation,
                      enumerate_symbol_vectors, generate_channels)
from .config import ConfigError, ExperimentConfig, parse_config
from .detection import ml_detect, ml_detect_batch
from .dtmc import dtmc_build, outage_throughput_delay, stationary_distribution
from .engine import (DirectMimo, MmdMaxLink, ProtocolEngine, QnMaxLink, SimulationConfig,
                     SwitchedMaxLink, ThresholdMaxLinkDT, run_protocol)
from .experiment import emit_results, run_experiment
from .selection import (BalancingState, decide_mode, difference_terms, metric_count,
                        min_distance_submatrix, qn_metric, select_max_link)

__version__ = "0.1.0"
