"""Minimal dense-network substrate with hand-written gradients.

Everything runs in float64 on 2-D batches ``(batch, features)``; 1-D inputs
are treated as a single sample.  Gradients are exact analytic expressions
and every layer is verifiable against central finite differences through
:func:`gradcheck`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ACTIVATIONS = ("relu", "linear")


@dataclass
class DenseLayer:
    """Affine layer ``act(W x + b)`` with ``W`` of shape (out, in)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValidationError("weights must be a 2-D matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValidationError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output units")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def parameter_count(self) -> int:
        return self.weights.size + self.biases.size

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.biases]


def init_dense(n_in: int, n_out: int, activation: str,
               rng: np.random.Generator) -> DenseLayer:
    """Fan-scaled uniform weights in +-sqrt(6/(in+out)), zero biases."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    weights = rng.uniform(-limit, limit, size=(n_out, n_in))
    return DenseLayer(weights, np.zeros(n_out), activation)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValidationError(f"expected 1-D or 2-D input, got shape {x.shape}")


def dense_forward(layer: DenseLayer, x: np.ndarray):
    """Returns ``(output, cache)``; the cache feeds :func:`dense_backward`."""
    xb, squeezed = _as_batch(x)
    if xb.shape[1] != layer.n_in:
        raise ValidationError(
            f"input has {xb.shape[1]} features, layer expects {layer.n_in}")
    z = xb @ layer.weights.T + layer.biases
    out = np.maximum(z, 0.0) if layer.activation == "relu" else z
    cache = (layer, xb, z, squeezed)
    return (out[0] if squeezed else out), cache


def dense_backward(cache, upstream: np.ndarray):
    """Analytic gradients: ``(input_grad, (weight_grad, bias_grad))``."""
    layer, xb, z, squeezed = cache
    up, _ = _as_batch(upstream)
    if up.shape != z.shape:
        raise ValidationError(
            f"upstream shape {up.shape} does not match output shape {z.shape}")
    dz = np.where(z > 0.0, up, 0.0) if layer.activation == "relu" else up
    weight_grad = dz.T @ xb
    bias_grad = dz.sum(axis=0)
    input_grad = dz @ layer.weights
    return (input_grad[0] if squeezed else input_grad), (weight_grad, bias_grad)


def mse(prediction: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements and its gradient in the prediction."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValidationError(
            f"prediction shape {prediction.shape} != target shape {target.shape}")
    diff = prediction - target
    n = diff.size
    loss = float(np.sum(diff * diff) / n)
    grad = (2.0 / n) * diff
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators plus step counter and hyperparameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("params, grads, and state must have equal lengths")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValidationError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class GradcheckReport:
    """Result of a finite-difference comparison, one entry per parameter block."""

    max_rel_error: float
    tolerance: float
    passed: bool
    block_errors: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        state = "pass" if self.passed else "FAIL"
        return (f"gradcheck {state}: max relative error {self.max_rel_error:.3e} "
                f"(tolerance {self.tolerance:.1e})")


def _rel_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < 1e-8:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


def gradcheck(fn, params: list[np.ndarray], tolerance: float = 1e-4,
              step: float = 1e-5) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    ``fn(params) -> (loss, grads)`` must be deterministic; only the loss is
    used for the perturbed evaluations.  Parameters are restored afterwards.
    """
    _, analytic = fn(params)
    if len(analytic) != len(params):
        raise ValidationError("fn returned a gradient list of the wrong length")
    block_errors = []
    max_err = 0.0
    for p, g in zip(params, analytic):
        worst = 0.0
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            loss_plus, _ = fn(params)
            flat[i] = orig - step
            loss_minus, _ = fn(params)
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            worst = max(worst, _rel_error(gflat[i], numeric))
        block_errors.append(worst)
        max_err = max(max_err, worst)
    return GradcheckReport(max_rel_error=max_err, tolerance=tolerance,
                           passed=max_err <= tolerance,
                           block_errors=block_errors)
