"""Acquisition schedules: per-repetition flip angles, echo times, repetition times.

A schedule fixes the length ``T`` of every fingerprint simulated under it.
The default schedule is fully deterministic so that dictionaries built from
it are reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScheduleError

DEFAULT_T = 175
DEFAULT_FAT_SHIFT_HZ = -420.0  # ~ -3.3 ppm at 3 T


@dataclass(frozen=True)
class SequenceSchedule:
    """Varying acquisition schedule of length ``T``.

    flip_angles_deg : nominal flip angle per repetition, in (0, 180]
    echo_times_ms   : echo time per repetition, 0 <= TE_k <= TR_k
    repetition_times_ms : repetition time per repetition
    invert_first    : apply a 180 degree inversion before repetition 1
    """

    flip_angles_deg: np.ndarray
    echo_times_ms: np.ndarray
    repetition_times_ms: np.ndarray
    invert_first: bool = False

    def __post_init__(self):
        fa = np.asarray(self.flip_angles_deg, dtype=np.float64)
        te = np.asarray(self.echo_times_ms, dtype=np.float64)
        tr = np.asarray(self.repetition_times_ms, dtype=np.float64)
        for name, arr in (("flip_angles_deg", fa), ("echo_times_ms", te),
                          ("repetition_times_ms", tr)):
            if arr.ndim != 1:
                raise ScheduleError(f"{name} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ScheduleError(f"{name} contains non-finite values")
        if not (len(fa) == len(te) == len(tr)):
            raise ScheduleError(
                f"schedule arrays must share one length, got "
                f"{len(fa)}/{len(te)}/{len(tr)}")
        if len(fa) < 1:
            raise ScheduleError("schedule must have at least one repetition")
        if np.any(fa <= 0.0) or np.any(fa > 180.0):
            raise ScheduleError("flip angles must lie in (0, 180] degrees")
        if np.any(te < 0.0) or np.any(te > tr):
            raise ScheduleError("echo times must satisfy 0 <= TE_k <= TR_k")
        object.__setattr__(self, "flip_angles_deg", fa)
        object.__setattr__(self, "echo_times_ms", te)
        object.__setattr__(self, "repetition_times_ms", tr)
        object.__setattr__(self, "invert_first", bool(self.invert_first))

    def __len__(self) -> int:
        return len(self.flip_angles_deg)

    def to_dict(self) -> dict:
        return {
            "flip_angles_deg": self.flip_angles_deg.tolist(),
            "echo_times_ms": self.echo_times_ms.tolist(),
            "repetition_times_ms": self.repetition_times_ms.tolist(),
            "invert_first": self.invert_first,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceSchedule":
        required = {"flip_angles_deg", "echo_times_ms", "repetition_times_ms",
                    "invert_first"}
        missing = required - data.keys()
        if missing:
            raise ScheduleError(f"schedule is missing keys: {sorted(missing)}")
        return cls(
            flip_angles_deg=np.asarray(data["flip_angles_deg"], dtype=np.float64),
            echo_times_ms=np.asarray(data["echo_times_ms"], dtype=np.float64),
            repetition_times_ms=np.asarray(data["repetition_times_ms"], dtype=np.float64),
            invert_first=bool(data["invert_first"]),
        )


def default_schedule(n_repetitions: int = DEFAULT_T) -> SequenceSchedule:
    """Deterministic reference schedule.

    Flip angles ramp 5 -> 70 -> 5 degrees in a triangular pattern, echo
    times alternate 1.0/2.3 ms, repetition times are uniformly spaced over
    8..12 ms and an inversion pulse precedes the first repetition.
    """
    if n_repetitions < 1:
        raise ScheduleError("n_repetitions must be >= 1")
    k = np.arange(n_repetitions, dtype=np.float64)
    apex = (n_repetitions - 1) / 2.0
    if apex > 0:
        fa = 5.0 + 65.0 * (1.0 - np.abs(k - apex) / apex)
    else:
        fa = np.full(n_repetitions, 70.0)
    te = np.where(np.arange(n_repetitions) % 2 == 0, 1.0, 2.3)
    if n_repetitions > 1:
        tr = 8.0 + 4.0 * k / (n_repetitions - 1)
    else:
        tr = np.full(1, 10.0)
    return SequenceSchedule(fa, te, tr, invert_first=True)


def save_schedule(schedule: SequenceSchedule, path: str | Path,
                  fat_shift_hz: float = DEFAULT_FAT_SHIFT_HZ) -> None:
    """Write a schedule file (JSON: three arrays, invert flag, fat shift)."""
    payload = schedule.to_dict()
    payload["fat_shift_hz"] = float(fat_shift_hz)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_schedule(path: str | Path) -> tuple[SequenceSchedule, float]:
    """Read a schedule file, returning the schedule and its fat shift in Hz."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScheduleError(f"schedule file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScheduleError(f"schedule file {path} must hold a JSON object")
    fat_shift = float(data.pop("fat_shift_hz", DEFAULT_FAT_SHIFT_HZ))
    return SequenceSchedule.from_dict(data), fat_shift
