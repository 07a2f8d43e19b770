"""Bidirectional training with noise augmentation and best-epoch selection.

Parameters are affinely mapped to [0, 1] per parameter over the training
dictionary before entering any loss, so fractions and millisecond-scale
values carry equal weight.  Fingerprint features are perturbed with fresh
Gaussian noise every epoch (augmentation).  After each epoch the mean
coefficient of determination over the five parameters is computed on the
unperturbed validation set, and the best-scoring epoch's parameters are the
training result.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import Dictionary
from .errors import NumericsError, ValidationError
from .models import FcnModel, InnModel, build_model, pad_params
from .neural import AdamState, adam_step, mse
from .rng import subrng
from .simulator import N_PARAMS, PARAM_NAMES, to_features

LEARNING_RATES = (0.01, 0.001, 0.0005, 0.0001)
BATCH_SIZES = (50, 200)
DEFAULT_NOISE_SD = 0.003


@dataclass(frozen=True)
class ParamScaler:
    """Affine map of each parameter onto [0, 1] over the training ranges."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        minimum = np.asarray(self.minimum, dtype=np.float64)
        maximum = np.asarray(self.maximum, dtype=np.float64)
        if minimum.shape != maximum.shape or minimum.ndim != 1:
            raise ValidationError("scaler bounds must be equal-length vectors")
        if np.any(maximum <= minimum):
            bad = [PARAM_NAMES[i] if i < len(PARAM_NAMES) else str(i)
                   for i in np.nonzero(maximum <= minimum)[0]]
            raise ValidationError(f"degenerate parameter range for {bad}")
        object.__setattr__(self, "minimum", minimum)
        object.__setattr__(self, "maximum", maximum)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.minimum) / (self.maximum - self.minimum)

    def invert(self, x_scaled: np.ndarray) -> np.ndarray:
        x_scaled = np.asarray(x_scaled, dtype=np.float64)
        return x_scaled * (self.maximum - self.minimum) + self.minimum

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ParamScaler":
        return cls(np.asarray(data["minimum"], dtype=np.float64),
                   np.asarray(data["maximum"], dtype=np.float64))


def fit_scaler(training_params: np.ndarray) -> ParamScaler:
    """Per-parameter (min, max) over the training dictionary."""
    params = np.asarray(training_params, dtype=np.float64)
    if params.ndim != 2 or params.shape[0] < 2:
        raise ValidationError("need an (N, M) matrix with N >= 2 to fit a scaler")
    return ParamScaler(params.min(axis=0), params.max(axis=0))


def perturb(y_features: np.ndarray, noise_sd: float,
            rng: np.random.Generator) -> np.ndarray:
    """Add iid zero-mean Gaussian noise to every real/imag component."""
    if noise_sd < 0:
        raise ValidationError(f"noise_sd must be >= 0, got {noise_sd}")
    y_features = np.asarray(y_features, dtype=np.float64)
    if noise_sd == 0.0:
        return y_features.copy()
    return y_features + rng.normal(0.0, noise_sd, size=y_features.shape)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 200
    epochs: int = 80
    noise_sd: float = DEFAULT_NOISE_SD
    seed: int = 0
    model_kind: str = "inn"
    weight_forward: float = 1.0
    weight_backward: float = 1.0
    bwd_loss_dims: str = "full"     # "full": pad targets zero; "m": first M only
    perturb_forward_target: bool = True  # forward MSE against the perturbed y

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")
        if self.bwd_loss_dims not in ("full", "m"):
            raise ValidationError("bwd_loss_dims must be 'full' or 'm'")
        if self.model_kind not in ("inn", "inn_bwd", "fcn"):
            raise ValidationError(f"unknown model kind {self.model_kind!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss_fwd: float
    train_loss_bwd: float
    val_r2_mean: float
    val_r2: np.ndarray  # per parameter, scaled space


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_val_r2: float
    log: list[EpochRecord] = field(default_factory=list)


LOG_COLUMNS = ["epoch", "train_loss_fwd", "train_loss_bwd", "val_r2_mean",
               *[f"val_r2_{name}" for name in PARAM_NAMES]]


def log_to_csv(log: list[EpochRecord]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for rec in log:
        fields = [str(rec.epoch), repr(rec.train_loss_fwd), repr(rec.train_loss_bwd),
                  repr(rec.val_r2_mean)] + [repr(float(v)) for v in rec.val_r2]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def r_squared(true: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Per-column coefficient of determination ``1 - SS_res/SS_tot``."""
    true = np.asarray(true, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if true.shape != predicted.shape:
        raise ValidationError("shapes must match for R^2")
    ss_res = np.sum((true - predicted) ** 2, axis=0)
    ss_tot = np.sum((true - true.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    return np.where(ss_tot == 0.0, np.where(ss_res == 0.0, 1.0, -np.inf), r2)


def validation_r2(model, x_scaled: np.ndarray, y_features: np.ndarray) -> np.ndarray:
    """Per-parameter R^2 of the model estimates on clean fingerprints."""
    estimates = model.estimate_scaled(y_features)
    return r_squared(x_scaled, estimates)


def select_best(val_r2_means: list[float]) -> int:
    """Index of the maximal validation score; ties go to the earliest epoch."""
    best = 0
    for i, score in enumerate(val_r2_means):
        if score > val_r2_means[best]:
            best = i
    return best


def _check_finite(loss: float, epoch: int, batch: int, direction: str) -> None:
    if not np.isfinite(loss):
        raise NumericsError(
            f"non-finite {direction} loss {loss} at epoch {epoch}, batch {batch}; "
            f"try a smaller learning rate")


def _scale_grads(grads: list[np.ndarray], weight: float) -> list[np.ndarray]:
    return [weight * g for g in grads]


def _add_grads(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    return [x + y for x, y in zip(a, b)]


def fit(model, train_dict: Dictionary, val_dict: Dictionary,
        config: TrainConfig) -> TrainResult:
    """Train a prebuilt model; returns the best-epoch snapshot and the log.

    INN models optimize the sum of both direction losses per batch; backward
    -only and FCN models optimize the backward loss alone.  Deterministic
    given (model, dictionaries, config).
    """
    if train_dict.n_repetitions != val_dict.n_repetitions:
        raise ValidationError("train and validation dictionaries disagree on T")
    if train_dict.manifest.get("schedule") != val_dict.manifest.get("schedule"):
        raise ValidationError("train and validation dictionaries use different schedules")

    scaler = model.scaler
    if scaler is None:
        raise ValidationError("model needs a parameter scaler before training")

    x_train = scaler.apply(train_dict.params.astype(np.float64))
    y_train = to_features(train_dict.fingerprints.astype(np.complex128))
    x_val = scaler.apply(val_dict.params.astype(np.float64))
    y_val = to_features(val_dict.fingerprints.astype(np.complex128))

    is_inn = isinstance(model, InnModel)
    use_forward = is_inn and model.kind == "inn" and config.weight_forward != 0.0
    n = len(train_dict)
    dim = model.dim

    params = model.get_params()
    state = AdamState.for_params(params, lr=config.learning_rate)
    shuffle_rng = subrng(config.seed, "shuffle")
    noise_rng = subrng(config.seed, "noise")

    log: list[EpochRecord] = []
    best_params: list[np.ndarray] | None = None
    best_idx = -1

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        fwd_losses: list[float] = []
        bwd_losses: list[float] = []
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            x_batch = x_train[rows]
            y_batch = perturb(y_train[rows], config.noise_sd, noise_rng)
            batch_no = start // config.batch_size

            if is_inn:
                x_padded = pad_params(x_batch, dim)
                grads = None
                loss_f = np.nan
                if use_forward:
                    y_hat, caches = model.forward(x_padded)
                    target = y_batch if config.perturb_forward_target else y_train[rows]
                    loss_f, dloss = mse(y_hat, target)
                    _check_finite(loss_f, epoch, batch_no, "forward")
                    _, grads_f = model.backward(caches, dloss)
                    grads = _scale_grads(grads_f, config.weight_forward)

                x_hat, caches = model.inverse(y_batch)
                if config.bwd_loss_dims == "full":
                    loss_b, dloss = mse(x_hat, x_padded)
                else:
                    loss_b, dpart = mse(x_hat[:, :N_PARAMS], x_batch)
                    dloss = np.zeros_like(x_hat)
                    dloss[:, :N_PARAMS] = dpart
                _check_finite(loss_b, epoch, batch_no, "backward")
                _, grads_b = model.inverse_backward(caches, dloss)
                grads_b = _scale_grads(grads_b, config.weight_backward)
                grads = grads_b if grads is None else _add_grads(grads, grads_b)
            else:
                x_hat, caches = model.forward(y_batch)
                loss_b, dloss = mse(x_hat, x_batch)
                loss_f = np.nan
                _check_finite(loss_b, epoch, batch_no, "backward")
                _, grads = model.backward(caches, dloss)

            adam_step(params, grads, state)
            fwd_losses.append(loss_f)
            bwd_losses.append(loss_b)

        val_r2 = validation_r2(model, x_val, y_val)
        record = EpochRecord(
            epoch=epoch,
            train_loss_fwd=float(np.mean(fwd_losses)),
            train_loss_bwd=float(np.mean(bwd_losses)),
            val_r2_mean=float(np.mean(val_r2)),
            val_r2=val_r2,
        )
        log.append(record)
        idx = select_best([rec.val_r2_mean for rec in log])
        if idx != best_idx:
            best_idx = idx
            best_params = [p.copy() for p in params]

    model.set_params(best_params)
    return TrainResult(model=model, best_epoch=log[best_idx].epoch,
                       best_val_r2=log[best_idx].val_r2_mean, log=log)


def train(model_kind: str, train_dict: Dictionary, val_dict: Dictionary,
          config: TrainConfig) -> TrainResult:
    """Build a seeded model of ``model_kind`` and fit it."""
    config = replace(config, model_kind=model_kind)
    scaler = fit_scaler(train_dict.params.astype(np.float64))
    dim = 2 * train_dict.n_repetitions
    model = build_model(model_kind, dim, config.seed, scaler=scaler)
    if model_kind == "inn_bwd":
        config = replace(config, weight_forward=0.0)
    return fit(model, train_dict, val_dict, config)
