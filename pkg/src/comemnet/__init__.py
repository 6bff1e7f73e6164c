"""Continual traffic forecasting on expanding sensor networks.

Dual online/target branches, a drift-scored node sampler and a temporal
memory replay buffer, on a small numpy autodiff core.
"""

from .backbone import BackboneConfig, BackboneParams, ForecastBatch, encode_features, forward
from .branches import DualBranchModel
from .data import (DatasetManifest, ExpandingNetwork, PeriodDataset, PeriodGraph, SynthConfig,
                   build_adjacency, enforce_continuity, filter_and_interpolate, load_dataset,
                   make_windows, synth_generate, write_dataset)
from .errors import ConfigError, DivergenceError
from .evaluation import (MetricRow, VariantSpec, backward_transfer, compute_metrics,
                         forgetting_report, run_variant, run_variants)
from .numeric import Param, Tape, adamw_step, finite_diff_check
from .sampler import SamplerReport, drift_score, histogram, normalize_features, select_nodes
from .tmrb import TemporalMemoryBuffer, gated_update, topk_nodes
from .trainer import (RunState, TrainConfig, continue_run, fork_state, run_continual,
                      train_period, write_run)

__version__ = "0.1.0"
