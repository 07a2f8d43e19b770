"""Estimation metrics and the four benchmark experiments.

All experiments evaluate frozen models on a test dictionary: per-parameter
accuracy tables, Monte-Carlo robustness sweeps over SNR, error-difference
heat maps over the (FF, T1H2O) plane, and the correlation between backward
estimation error and forward reconstruction agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dictionary import Dictionary
from .errors import ValidationError
from .rng import subrng
from .sequence import SequenceSchedule
from .simulator import (N_PARAMS, PARAM_NAMES, TissueParams,
                        simulate_fingerprint, to_features, from_features)
from .training import r_squared

MRE_GUARD = 1e-9
DEFAULT_SNR_LEVELS_DB = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)
DEFAULT_REPETITIONS = 100

HEALTHY_MUSCLE = TissueParams(ff=0.0, t1_h2o=1400.0, t1_fat=300.0,
                              delta_f=0.0, b1=1.0)


def estimate_params(model, y_features: np.ndarray) -> np.ndarray:
    """Model estimates in original parameter units, shape ``(N, M)``."""
    if model.scaler is None:
        raise ValidationError("model has no parameter scaler attached")
    return model.scaler.invert(model.estimate_scaled(y_features))


def relative_errors(x_true: np.ndarray, x_pred: np.ndarray,
                    guard: float = MRE_GUARD) -> np.ndarray:
    """Per-entry relative errors in percent; guarded entries become NaN."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    if x_true.shape != x_pred.shape:
        raise ValidationError("true and predicted shapes must match")
    denom = np.abs(x_true)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(x_pred - x_true) / denom * 100.0
    return np.where(denom < guard, np.nan, rel)


@dataclass(frozen=True)
class ParamMetrics:
    name: str
    mae: float
    mre_mean: float
    mre_sd: float
    r2: float
    n_mre_excluded: int


@dataclass(frozen=True)
class MetricsReport:
    per_param: tuple[ParamMetrics, ...]
    n_entries: int

    def __getitem__(self, name: str) -> ParamMetrics:
        for pm in self.per_param:
            if pm.name == name:
                return pm
        raise KeyError(name)

    def to_csv(self) -> str:
        lines = ["parameter,mae,mre_mean,mre_sd,r2,n_entries,n_mre_excluded"]
        for pm in self.per_param:
            lines.append(f"{pm.name},{pm.mae!r},{pm.mre_mean!r},{pm.mre_sd!r},"
                         f"{pm.r2!r},{self.n_entries},{pm.n_mre_excluded}")
        return "\n".join(lines) + "\n"


def metrics(x_true: np.ndarray, x_pred: np.ndarray,
            param_names=PARAM_NAMES, guard: float = MRE_GUARD) -> MetricsReport:
    """MAE, MRE (percent, mean +- sd) and R^2 per parameter column.

    Entries whose true value is below the guard magnitude are excluded from
    MRE (their count is reported) but still enter MAE and R^2.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    if x_true.shape != x_pred.shape or x_true.ndim != 2:
        raise ValidationError("need matching (N, M) matrices")
    if x_true.shape[1] != len(param_names):
        raise ValidationError("column count does not match parameter names")
    mae = np.mean(np.abs(x_pred - x_true), axis=0)
    rel = relative_errors(x_true, x_pred, guard)
    r2 = r_squared(x_true, x_pred)
    rows = []
    for j, name in enumerate(param_names):
        col = rel[:, j]
        valid = col[~np.isnan(col)]
        mre_mean = float(valid.mean()) if valid.size else math.nan
        mre_sd = float(valid.std(ddof=1)) if valid.size > 1 else 0.0
        rows.append(ParamMetrics(name=name, mae=float(mae[j]),
                                 mre_mean=mre_mean, mre_sd=mre_sd,
                                 r2=float(r2[j]),
                                 n_mre_excluded=int(np.isnan(col).sum())))
    return MetricsReport(per_param=tuple(rows), n_entries=x_true.shape[0])


def evaluate_model(model, test_dict: Dictionary) -> MetricsReport:
    """Noise-free accuracy of one model over a test dictionary."""
    y = to_features(test_dict.fingerprints.astype(np.complex128))
    x_pred = estimate_params(model, y)
    return metrics(test_dict.params.astype(np.float64), x_pred)


# --- SNR ---------------------------------------------------------------

def snr_db(signal_ref: float, noise_sd: float) -> float:
    """SNR in dB: ``20*log10(S/N)``."""
    if signal_ref <= 0 or noise_sd <= 0:
        raise ValidationError("signal_ref and noise_sd must be > 0")
    return 20.0 * math.log10(signal_ref / noise_sd)


def noise_for_snr(signal_ref: float, level_db: float) -> float:
    """Noise standard deviation realizing an SNR level for a reference signal."""
    if signal_ref <= 0:
        raise ValidationError("signal_ref must be > 0")
    if math.isinf(level_db):
        return 0.0
    return signal_ref / 10.0 ** (level_db / 20.0)


def signal_reference(schedule: SequenceSchedule, fat_shift_hz: float,
                     params: TissueParams = HEALTHY_MUSCLE) -> float:
    """Mean magnitude of the unperturbed reference-tissue fingerprint."""
    fp = simulate_fingerprint(params, schedule, fat_shift_hz)
    return float(np.mean(np.abs(fp)))


@dataclass(frozen=True)
class SnrSweepResult:
    model_name: str
    levels_db: tuple[float, ...]
    noise_sds: tuple[float, ...]
    repetitions: int
    mre_mean: np.ndarray  # (n_levels, M)
    mre_sd: np.ndarray    # (n_levels, M)

    def to_csv(self) -> str:
        lines = ["model,snr_db,noise_sd,parameter,mre_mean,mre_sd,repetitions"]
        for i, level in enumerate(self.levels_db):
            for j, name in enumerate(PARAM_NAMES):
                lines.append(
                    f"{self.model_name},{level!r},{self.noise_sds[i]!r},{name},"
                    f"{self.mre_mean[i, j]!r},{self.mre_sd[i, j]!r},{self.repetitions}")
        return "\n".join(lines) + "\n"


def snr_sweep(models: dict[str, object], test_dict: Dictionary,
              levels_db=DEFAULT_SNR_LEVELS_DB,
              repetitions: int = DEFAULT_REPETITIONS, seed: int = 0,
              signal_ref: float | None = None) -> dict[str, SnrSweepResult]:
    """Monte-Carlo robustness sweep over SNR levels.

    Per repetition one standard-normal draw is made (seeded by repetition
    index) and scaled to each level's noise standard deviation, so every
    model and every level sees the same underlying realizations.  Recorded
    per level and parameter: mean and sd over repetitions of the test-set
    mean relative error.
    """
    levels = [float(v) for v in levels_db]
    if not levels:
        raise ValidationError("need at least one SNR level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValidationError("SNR levels must be strictly increasing")
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    if signal_ref is None:
        signal_ref = signal_reference(test_dict.schedule, test_dict.fat_shift_hz)

    x_true = test_dict.params.astype(np.float64)
    y_clean = to_features(test_dict.fingerprints.astype(np.complex128))
    noise_sds = [noise_for_snr(signal_ref, level) for level in levels]

    rep_means = {name: np.empty((len(levels), repetitions, N_PARAMS))
                 for name in models}
    for rep in range(repetitions):
        eps = subrng(seed, "snr-noise", rep).standard_normal(y_clean.shape)
        for i, sd in enumerate(noise_sds):
            y_pert = y_clean + sd * eps
            for name, model in models.items():
                x_pred = estimate_params(model, y_pert)
                rel = relative_errors(x_true, x_pred)
                rep_means[name][i, rep] = np.nanmean(rel, axis=0)

    results = {}
    for name in models:
        means = rep_means[name].mean(axis=1)
        sds = (rep_means[name].std(axis=1, ddof=1) if repetitions > 1
               else np.zeros_like(means))
        results[name] = SnrSweepResult(
            model_name=name, levels_db=tuple(levels),
            noise_sds=tuple(noise_sds), repetitions=repetitions,
            mre_mean=means, mre_sd=sds)
    return results


# --- Heat maps ----------------------------------------------------------

HEATMAP_PARAMS = ("t1_h2o", "t1_fat")


@dataclass(frozen=True)
class HeatMap:
    parameter: str
    ff_values: np.ndarray      # rows
    t1_h2o_values: np.ndarray  # columns
    cells: np.ndarray          # (n_ff, n_t1) mean MRE_A - MRE_B, percent points
    counts: np.ndarray         # entries per cell

    def to_csv(self) -> str:
        lines = ["parameter,ff,t1_h2o,mre_diff,n_entries"]
        for i, ff in enumerate(self.ff_values):
            for j, t1 in enumerate(self.t1_h2o_values):
                lines.append(f"{self.parameter},{ff!r},{t1!r},"
                             f"{self.cells[i, j]!r},{int(self.counts[i, j])}")
        return "\n".join(lines) + "\n"


def heatmap_bins(params: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cell axes and per-entry cell indices over the (FF, T1H2O) plane."""
    params = np.asarray(params, dtype=np.float64)
    ff_values, ff_idx = np.unique(params[:, 0], return_inverse=True)
    t1_values, t1_idx = np.unique(params[:, 1], return_inverse=True)
    return ff_values, t1_values, ff_idx, t1_idx


def heatmap_diff(model_a, model_b, test_dict: Dictionary,
                 parameter: str) -> HeatMap:
    """Relative-error difference (A minus B) binned over FF x T1H2O.

    Positive cells mean model B estimated the chosen parameter more
    accurately than model A inside that cell.
    """
    if parameter not in HEATMAP_PARAMS:
        raise ValidationError(
            f"heat-map parameter must be one of {HEATMAP_PARAMS}, got {parameter!r}")
    col = PARAM_NAMES.index(parameter)
    x_true = test_dict.params.astype(np.float64)
    y = to_features(test_dict.fingerprints.astype(np.complex128))
    rel_a = relative_errors(x_true, estimate_params(model_a, y))[:, col]
    rel_b = relative_errors(x_true, estimate_params(model_b, y))[:, col]
    diff = rel_a - rel_b

    ff_values, t1_values, ff_idx, t1_idx = heatmap_bins(x_true)
    shape = (ff_values.size, t1_values.size)
    flat_idx = ff_idx * t1_values.size + t1_idx
    valid = ~np.isnan(diff)
    sums = np.bincount(flat_idx[valid], weights=diff[valid],
                       minlength=shape[0] * shape[1])
    counts = np.bincount(flat_idx[valid],
                         minlength=shape[0] * shape[1]).reshape(shape)
    cells = np.where(counts > 0, sums.reshape(shape) / np.maximum(counts, 1),
                     np.nan)
    return HeatMap(parameter=parameter, ff_values=ff_values,
                   t1_h2o_values=t1_values, cells=cells, counts=counts)


# --- Rank correlation ----------------------------------------------------

def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Rank-order correlation: Pearson correlation of average-ranked data."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("spearman needs two equal-length vectors")
    if a.size < 3:
        raise ValidationError("spearman needs at least 3 observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValidationError("spearman is undefined for constant input")
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.sum(ra * rb) / np.sqrt(np.sum(ra * ra) * np.sum(rb * rb)))


@dataclass(frozen=True)
class CorrelationResult:
    per_entry_mre: np.ndarray      # percent, mean over the M parameters
    per_entry_inner: np.ndarray    # |<y, y_hat>| on unit-normalized fingerprints
    rho: float

    def to_csv(self) -> str:
        lines = ["entry,mre_percent,inner_product"]
        for i, (mre, ip) in enumerate(zip(self.per_entry_mre, self.per_entry_inner)):
            lines.append(f"{i},{mre!r},{ip!r}")
        return "\n".join(lines) + "\n"


def normalized_inner_product(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """``|<y, y_hat>|`` of L2-normalized complex fingerprints, in [0, 1]."""
    y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.complex128))
    if y.shape != y_hat.shape:
        raise ValidationError("fingerprint shapes must match")
    norm_y = np.linalg.norm(y, axis=1)
    norm_h = np.linalg.norm(y_hat, axis=1)
    if np.any(norm_y == 0.0) or np.any(norm_h == 0.0):
        raise ValidationError("inner product undefined for zero-norm fingerprints")
    return np.abs(np.sum(y * np.conj(y_hat), axis=1)) / (norm_y * norm_h)


def fwd_bwd_correlate(model, test_dict: Dictionary) -> CorrelationResult:
    """Cycle consistency: backward estimation error vs forward agreement.

    Per entry the backward pass estimates the parameters from the clean
    fingerprint; the forward pass then re-simulates a fingerprint from the
    (zero-padded, scaled) estimate.  The per-entry mean relative error is
    correlated against the normalized inner product of true and predicted
    fingerprints.
    """
    x_true = test_dict.params.astype(np.float64)
    y_feat = to_features(test_dict.fingerprints.astype(np.complex128))
    x_scaled_hat = model.estimate_scaled(y_feat)
    x_pred = model.scaler.invert(x_scaled_hat)
    rel = relative_errors(x_true, x_pred)
    per_entry_mre = np.nanmean(rel, axis=1)

    from .models import pad_params  # local import keeps module deps one-way
    y_hat_feat = model.forward_only(pad_params(x_scaled_hat, model.dim))
    inner = normalized_inner_product(test_dict.fingerprints.astype(np.complex128),
                                     from_features(y_hat_feat))
    keep = ~np.isnan(per_entry_mre)
    rho = spearman(per_entry_mre[keep], inner[keep])
    return CorrelationResult(per_entry_mre=per_entry_mre,
                             per_entry_inner=inner, rho=rho)
