"""Two-pool (water/fat) fingerprint simulator.

The signal model is an ideally spoiled longitudinal recursion: per
repetition the longitudinal magnetization is tipped by the effective flip
angle, the transverse component is read out at the echo time with the
off-resonance phase it accrued, and the remaining longitudinal part relaxes
toward equilibrium (normalized to 1) over the repetition time.  There is no
transverse coherence between repetitions and no T2 decay.

Sensitivities carried by the model: fat fraction through linear pool
mixing, the two T1 values through the relaxation recursion, off-resonance
through echo-time phase, and flip-angle efficacy through scaling of the
nominal flip angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .sequence import SequenceSchedule

PARAM_NAMES = ("ff", "t1_h2o", "t1_fat", "delta_f", "b1")
N_PARAMS = len(PARAM_NAMES)


@dataclass(frozen=True)
class TissueParams:
    """One tissue-parameter tuple (fixed order: FF, T1H2O, T1fat, Df, B1)."""

    ff: float
    t1_h2o: float
    t1_fat: float
    delta_f: float
    b1: float

    def __post_init__(self):
        if not 0.0 <= self.ff <= 1.0:
            raise ParameterError(f"ff must lie in [0, 1], got {self.ff}")
        if self.t1_h2o <= 0.0:
            raise ParameterError(f"t1_h2o must be > 0 ms, got {self.t1_h2o}")
        if self.t1_fat <= 0.0:
            raise ParameterError(f"t1_fat must be > 0 ms, got {self.t1_fat}")
        if self.b1 <= 0.0:
            raise ParameterError(f"b1 must be > 0, got {self.b1}")
        if not all(np.isfinite(v) for v in self.as_array()):
            raise ParameterError("tissue parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.ff, self.t1_h2o, self.t1_fat,
                         self.delta_f, self.b1], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "TissueParams":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_PARAMS,):
            raise ParameterError(f"expected {N_PARAMS} parameters, got shape {values.shape}")
        return cls(*values.tolist())


def simulate_pool_batch(t1_ms, delta_f_hz, b1, schedule: SequenceSchedule) -> np.ndarray:
    """Simulate one relaxation pool for a batch of parameter values.

    Arrays ``t1_ms``, ``delta_f_hz`` and ``b1`` are broadcast against each
    other; the result has shape ``(n, T)`` complex128.  Evaluation is a
    sequential recursion over the T repetitions, vectorized over entries,
    so batched and single-entry calls produce bit-identical values.
    """
    t1 = np.atleast_1d(np.asarray(t1_ms, dtype=np.float64))
    df = np.atleast_1d(np.asarray(delta_f_hz, dtype=np.float64))
    b1 = np.atleast_1d(np.asarray(b1, dtype=np.float64))
    t1, df, b1 = np.broadcast_arrays(t1, df, b1)
    if np.any(t1 <= 0.0):
        raise ParameterError("t1 must be > 0 ms")
    if np.any(b1 <= 0.0):
        raise ParameterError("b1 must be > 0")

    n = t1.shape[0]
    n_rep = len(schedule)
    alpha = np.deg2rad(b1[:, None] * schedule.flip_angles_deg[None, :])  # (n, T)
    sin_a = np.sin(alpha)
    cos_a = np.cos(alpha)
    e1 = np.exp(-schedule.repetition_times_ms[None, :] / t1[:, None])  # (n, T)
    # TE in ms, delta_f in Hz: phase = 2*pi*f*TE/1000
    phase = np.exp(1j * (2.0 * np.pi / 1000.0)
                   * df[:, None] * schedule.echo_times_ms[None, :])

    signal = np.empty((n, n_rep), dtype=np.complex128)
    mz = np.full(n, -1.0 if schedule.invert_first else 1.0)
    for k in range(n_rep):
        signal[:, k] = mz * sin_a[:, k] * phase[:, k]
        mz = 1.0 + (mz * cos_a[:, k] - 1.0) * e1[:, k]
    return signal


def simulate_pool(t1_ms: float, delta_f_hz: float, b1: float,
                  schedule: SequenceSchedule) -> np.ndarray:
    """Complex fingerprint of a single relaxation pool, shape ``(T,)``."""
    return simulate_pool_batch(t1_ms, delta_f_hz, b1, schedule)[0]


def simulate_fingerprint_batch(params: np.ndarray, schedule: SequenceSchedule,
                               fat_shift_hz: float) -> np.ndarray:
    """Fingerprints for an ``(n, 5)`` parameter matrix, shape ``(n, T)``.

    Each fingerprint is the fat-fraction-weighted complex sum of the water
    pool (at ``delta_f``) and the fat pool (at ``delta_f + fat_shift``).
    """
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[1] != N_PARAMS:
        raise ParameterError(f"params must have shape (n, {N_PARAMS})")
    ff = params[:, 0]
    if np.any(ff < 0.0) or np.any(ff > 1.0):
        raise ParameterError("ff must lie in [0, 1]")
    water = simulate_pool_batch(params[:, 1], params[:, 3], params[:, 4], schedule)
    fat = simulate_pool_batch(params[:, 2], params[:, 3] + fat_shift_hz,
                              params[:, 4], schedule)
    return (1.0 - ff)[:, None] * water + ff[:, None] * fat


def simulate_fingerprint(params: TissueParams, schedule: SequenceSchedule,
                         fat_shift_hz: float) -> np.ndarray:
    """Complex two-pool fingerprint for one tissue-parameter tuple."""
    return simulate_fingerprint_batch(params.as_array()[None, :], schedule,
                                      fat_shift_hz)[0]


def to_features(fingerprints: np.ndarray) -> np.ndarray:
    """Concatenate real and imaginary parts: ``(.., T)`` complex -> ``(.., 2T)``."""
    fingerprints = np.asarray(fingerprints)
    return np.concatenate([fingerprints.real, fingerprints.imag],
                          axis=-1).astype(np.float64)


def from_features(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_features`: ``(.., 2T)`` real -> ``(.., T)`` complex."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[-1]
    if n % 2 != 0:
        raise ParameterError("feature vectors must have even length")
    half = n // 2
    return features[..., :half] + 1j * features[..., half:]
