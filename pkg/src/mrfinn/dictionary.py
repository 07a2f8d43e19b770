"""Parameter grids and fingerprint dictionaries.

A grid lists, per tissue parameter, one or more ``(start, increment, stop)``
segments.  Expansion takes the Cartesian product of the per-parameter value
lists in fixed parameter order.  Dictionaries pair the expanded parameter
matrix with simulated fingerprints and persist as three files:

    <name>.manifest    JSON manifest (format version "1", counts, grid,
                       schedule, fat shift, creation seed, subset note)
    <name>.params.bin  float32 little-endian, row-major, N x 5
    <name>.fp.bin      float32 little-endian, row-major, N x T x (re, im)

Matrices are stored and kept in memory at 32-bit precision so that a
save/load roundtrip is the identity bit for bit; consumers upcast to
float64 where they need it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GridError, ValidationError
from .rng import subrng
from .sequence import SequenceSchedule
from .simulator import N_PARAMS, PARAM_NAMES, simulate_fingerprint_batch

FORMAT_VERSION = "1"
_SIM_CHUNK = 8192  # rows simulated per block, bounds peak float64 memory

Segment = tuple[float, float, float]


def expand_segment(segment: Segment) -> np.ndarray:
    """Values ``start + k*increment`` up to ``stop`` (half-step tolerance).

    The endpoint is included whenever it sits within half an increment of
    the lattice, so accumulated rounding cannot drop it.  Values are
    materialized from the index, never by cumulative addition.
    """
    start, inc, stop = (float(v) for v in segment)
    if not np.isfinite([start, inc, stop]).all():
        raise GridError(f"segment {segment} contains non-finite values")
    if inc <= 0.0:
        raise GridError(f"segment {segment}: increment must be > 0")
    if start > stop:
        raise GridError(f"segment {segment}: start must be <= stop")
    count = int(np.floor((stop - start) / inc + 0.5)) + 1
    return start + inc * np.arange(count, dtype=np.float64)


@dataclass(frozen=True)
class GridSpec:
    """Per-parameter segment lists, in fixed order (FF, T1H2O, T1fat, Df, B1)."""

    segments: dict[str, list[Segment]]

    def __post_init__(self):
        unknown = set(self.segments) - set(PARAM_NAMES)
        if unknown:
            raise GridError(f"unknown grid parameters: {sorted(unknown)}")
        missing = set(PARAM_NAMES) - set(self.segments)
        if missing:
            raise GridError(f"grid is missing parameters: {sorted(missing)}")
        for name, segs in self.segments.items():
            if not segs:
                raise GridError(f"parameter {name} has no segments")
            for seg in segs:
                if len(seg) != 3:
                    raise GridError(f"segment {seg} must be (start, increment, stop)")
                expand_segment(tuple(seg))  # validates

    def values(self, name: str) -> np.ndarray:
        """Values of one parameter: segment expansions concatenated in order.

        No deduplication happens, so the expanded grid size is exactly the
        product of the per-parameter segment cardinalities.
        """
        parts = [expand_segment(tuple(seg)) for seg in self.segments[name]]
        return np.concatenate(parts)

    def counts(self) -> tuple[int, ...]:
        return tuple(len(self.values(name)) for name in PARAM_NAMES)

    def to_dict(self) -> dict:
        return {name: [list(seg) for seg in self.segments[name]]
                for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        if not isinstance(data, dict):
            raise GridError("grid spec must be a mapping of parameter -> segments")
        segments = {name: [tuple(seg) for seg in segs]
                    for name, segs in data.items()}
        return cls(segments)

    @classmethod
    def load(cls, path: str | Path) -> "GridSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise GridError(f"grid file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def expand_grid(spec: GridSpec) -> np.ndarray:
    """Cartesian product of the per-parameter values, shape ``(N, 5)``.

    Order is lexicographic by parameter position then value: the first
    parameter varies slowest, the last varies fastest.
    """
    axes = [spec.values(name) for name in PARAM_NAMES]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass
class Dictionary:
    """Parameter matrix, fingerprint matrix, and provenance manifest."""

    params: np.ndarray       # (N, 5) float32
    fingerprints: np.ndarray  # (N, T) complex64
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.params.shape[0] != self.fingerprints.shape[0]:
            raise ValidationError(
                f"params rows ({self.params.shape[0]}) != fingerprint rows "
                f"({self.fingerprints.shape[0]})")
        if self.params.ndim != 2 or self.params.shape[1] != N_PARAMS:
            raise ValidationError(f"params must be (N, {N_PARAMS})")

    def __len__(self) -> int:
        return self.params.shape[0]

    @property
    def n_repetitions(self) -> int:
        return self.fingerprints.shape[1]

    @property
    def schedule(self) -> SequenceSchedule:
        return SequenceSchedule.from_dict(self.manifest["schedule"])

    @property
    def fat_shift_hz(self) -> float:
        return float(self.manifest["fat_shift_hz"])


def build_dictionary(spec: GridSpec, schedule: SequenceSchedule,
                     fat_shift_hz: float, seed: int = 0,
                     params: np.ndarray | None = None,
                     subset_note: dict | None = None) -> Dictionary:
    """Simulate one fingerprint per parameter tuple of the expanded grid.

    ``params`` overrides the expansion with an explicit subset of rows (used
    for stratified subsampling); row order always matches the given matrix.
    Simulation runs in float64 and is quantized to the 32-bit storage
    precision once, so rebuilding with identical inputs is bit-identical.
    """
    if params is None:
        params = expand_grid(spec)
    params = np.asarray(params, dtype=np.float64)
    n = params.shape[0]
    fingerprints = np.empty((n, len(schedule)), dtype=np.complex64)
    for lo in range(0, n, _SIM_CHUNK):
        hi = min(lo + _SIM_CHUNK, n)
        fingerprints[lo:hi] = simulate_fingerprint_batch(
            params[lo:hi], schedule, fat_shift_hz).astype(np.complex64)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_entries": int(n),
        "n_repetitions": len(schedule),
        "n_params": N_PARAMS,
        "param_names": list(PARAM_NAMES),
        "grid": spec.to_dict(),
        "schedule": schedule.to_dict(),
        "fat_shift_hz": float(fat_shift_hz),
        "seed": int(seed),
        "subset": subset_note,
    }
    return Dictionary(params.astype(np.float32), fingerprints, manifest)


def subsample_stratified(params: np.ndarray, target: int, seed: int,
                         strata_columns: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Indices of ~``target`` rows, evenly drawn per (FF, T1H2O) stratum.

    Every stratum keeps the same count (all of its rows if it is smaller),
    chosen by a seeded shuffle within the stratum.  Returned indices are
    ascending, so the subset preserves the parent row order.
    """
    if target < 1:
        raise ValidationError("subsample target must be >= 1")
    keys = [tuple(row) for row in params[:, list(strata_columns)]]
    strata: dict[tuple, list[int]] = {}
    for idx, key in enumerate(keys):
        strata.setdefault(key, []).append(idx)
    per_cell = max(1, int(round(target / len(strata))))
    rng = subrng(seed, "subsample")
    chosen: list[int] = []
    for key in sorted(strata):
        rows = strata[key]
        if len(rows) <= per_cell:
            chosen.extend(rows)
        else:
            pick = rng.permutation(len(rows))[:per_cell]
            chosen.extend(rows[i] for i in pick)
    return np.array(sorted(chosen), dtype=np.int64)


def split_dictionary(d: Dictionary, fraction: float,
                     seed: int) -> tuple[Dictionary, Dictionary]:
    """Seeded disjoint partition; the first part gets ``round(fraction*N)`` rows.

    Membership comes from a seeded uniform shuffle; within each part the
    parent row order is preserved.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(d)
    k = int(round(fraction * n))
    perm = subrng(seed, "split").permutation(n)
    idx_a = np.sort(perm[:k])
    idx_b = np.sort(perm[k:])

    def part(indices: np.ndarray, name: str) -> Dictionary:
        manifest = dict(d.manifest)
        manifest["n_entries"] = int(len(indices))
        manifest["subset"] = {"kind": "split", "fraction": float(fraction),
                              "seed": int(seed), "part": name,
                              "parent_n": int(n)}
        return Dictionary(d.params[indices].copy(),
                          d.fingerprints[indices].copy(), manifest)

    return part(idx_a, "a"), part(idx_b, "b")


def _paths(path: str | Path) -> tuple[Path, Path, Path]:
    base = Path(path)
    return (base.with_suffix(base.suffix + ".manifest"),
            base.with_suffix(base.suffix + ".params.bin"),
            base.with_suffix(base.suffix + ".fp.bin"))


def save_dictionary(d: Dictionary, path: str | Path) -> None:
    """Write ``<path>.manifest`` + ``<path>.params.bin`` + ``<path>.fp.bin``."""
    manifest_path, params_path, fp_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(d.manifest, indent=2, sort_keys=True) + "\n")
    params_path.write_bytes(
        np.ascontiguousarray(d.params, dtype="<f4").tobytes())
    interleaved = np.empty((len(d), d.n_repetitions, 2), dtype="<f4")
    interleaved[:, :, 0] = d.fingerprints.real
    interleaved[:, :, 1] = d.fingerprints.imag
    fp_path.write_bytes(interleaved.tobytes())


def load_dictionary(path: str | Path) -> Dictionary:
    """Load a persisted dictionary, verifying version and payload sizes."""
    manifest_path, params_path, fp_path = _paths(path)
    if not manifest_path.exists():
        raise FormatError(f"missing manifest file {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported dictionary format version {version!r} "
            f"(expected {FORMAT_VERSION!r})")
    n = int(manifest["n_entries"])
    t = int(manifest["n_repetitions"])

    params_raw = params_path.read_bytes()
    expected = n * N_PARAMS * 4
    if len(params_raw) != expected:
        raise FormatError(
            f"{params_path}: expected {expected} bytes for {n}x{N_PARAMS} "
            f"float32, found {len(params_raw)}")
    params = np.frombuffer(params_raw, dtype="<f4").reshape(n, N_PARAMS).copy()

    fp_raw = fp_path.read_bytes()
    expected = n * t * 2 * 4
    if len(fp_raw) != expected:
        raise FormatError(
            f"{fp_path}: expected {expected} bytes for {n}x{t} interleaved "
            f"complex float32, found {len(fp_raw)}")
    interleaved = np.frombuffer(fp_raw, dtype="<f4").reshape(n, t, 2)
    fingerprints = (interleaved[:, :, 0] + 1j * interleaved[:, :, 1]).astype(np.complex64)
    return Dictionary(params, fingerprints, manifest)
