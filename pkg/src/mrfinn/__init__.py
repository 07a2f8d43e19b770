"""MR-fingerprint reconstruction with bidirectional invertible networks.

The package simulates complex-valued fingerprints from five tissue
parameters with a two-pool relaxation model, expands parameter grids into
dictionaries, trains an invertible coupling network jointly on the
parameter->fingerprint and fingerprint->parameter maps (plus a
backward-only ablation and a fully-connected baseline), and evaluates the
trained models with accuracy tables, SNR Monte-Carlo sweeps, heat maps,
and error correlations.
"""

__version__ = "0.1.0"

from .errors import (FormatError, GridError, MrfError, NumericsError,
                     ParameterError, ScheduleError, ValidationError)
from .sequence import SequenceSchedule, default_schedule
from .simulator import (PARAM_NAMES, TissueParams, simulate_fingerprint,
                        simulate_pool, to_features, from_features)
from .dictionary import (Dictionary, GridSpec, build_dictionary, expand_grid,
                         load_dictionary, save_dictionary, split_dictionary)
from .models import (FcnModel, InnModel, build_fcn, build_inn, build_model,
                     load_checkpoint, pad_params, save_checkpoint)
from .training import (ParamScaler, TrainConfig, TrainResult, fit, fit_scaler,
                       perturb, train)
from .evaluation import (HeatMap, MetricsReport, SnrSweepResult,
                         evaluate_model, fwd_bwd_correlate, heatmap_diff,
                         metrics, noise_for_snr, snr_db, snr_sweep, spearman)

__all__ = [
    "__version__",
    "MrfError", "ValidationError", "ParameterError", "ScheduleError",
    "GridError", "FormatError", "NumericsError",
    "SequenceSchedule", "default_schedule",
    "PARAM_NAMES", "TissueParams", "simulate_pool", "simulate_fingerprint",
    "to_features", "from_features",
    "GridSpec", "Dictionary", "expand_grid", "build_dictionary",
    "split_dictionary", "save_dictionary", "load_dictionary",
    "InnModel", "FcnModel", "build_inn", "build_fcn", "build_model",
    "pad_params", "save_checkpoint", "load_checkpoint",
    "ParamScaler", "TrainConfig", "TrainResult", "fit_scaler", "perturb",
    "fit", "train",
    "MetricsReport", "SnrSweepResult", "HeatMap", "metrics", "snr_db",
    "noise_for_snr", "snr_sweep", "heatmap_diff", "spearman",
    "fwd_bwd_correlate", "evaluate_model",
]
