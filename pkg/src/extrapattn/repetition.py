"""Frame-repetition metric and periodic attention-map utilities."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError, ShapeError
from .tensorio import read_tensors

DEFAULT_THRESHOLD = 55.0
N_STATIC_SAMPLES = 8


@dataclass
class FrameSequence:
    frames: np.ndarray
    value_range: tuple = (0.0, 255.0)

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=float)
        if arr.ndim < 2:
            raise ShapeError("frames must be at least 2-D (frame-major)")
        arr = arr.reshape(arr.shape[0], -1)
        if arr.shape[0] < 1:
            raise InvalidInputError("sequence needs at least one frame")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("frame values must be finite")
        lo, hi = self.value_range
        if not hi > lo:
            raise InvalidInputError("value_range must be increasing")
        self.frames = arr
        self.value_range = (float(lo), float(hi))

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @classmethod
    def from_container(cls, path, name="frames", value_range=(0.0, 255.0)):
        tensors = read_tensors(path)
        if name not in tensors:
            raise InvalidInputError(f"{path}: no tensor named {name!r}")
        return cls(tensors[name], value_range)

    @classmethod
    def from_manifest(cls, path):
        """Directory of raw frame files described by ``manifest.json``.

        Manifest keys: ``frames`` (file names, in order), ``shape`` (per-frame
        shape), ``dtype`` (numpy dtype string) and optional ``value_range``.
        """
        path = Path(path)
        manifest = path / "manifest.json" if path.is_dir() else path
        meta = json.loads(manifest.read_text())
        root = manifest.parent
        dt = np.dtype(meta.get("dtype", "uint8"))
        shape = tuple(meta["shape"])
        frames = []
        for fn in meta["frames"]:
            raw = np.fromfile(root / fn, dtype=dt)
            if raw.size != int(np.prod(shape)):
                raise InvalidInputError(f"{fn}: expected {np.prod(shape)} values, found {raw.size}")
            frames.append(raw.reshape(shape))
        return cls(np.stack(frames), tuple(meta.get("value_range", (0, 255))))


@dataclass
class RepetitionReport:
    is_static: bool
    norepeat_score: Optional[float]
    candidate_start: Optional[int]
    repeated_count: int
    frame_count: int
    static_distance: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def frame_distance(a, b, value_range=(0.0, 255.0), mode="rms"):
    """L2 distance between two flattened frames.

    ``rms`` is the per-pixel root-mean-square difference rescaled to a 0-255
    range, so one threshold applies at any resolution; ``raw`` is the plain
    Euclidean norm.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if mode == "raw":
        return float(np.sqrt(np.sum(diff * diff)))
    if mode != "rms":
        raise InvalidInputError(f"unknown distance mode {mode!r}")
    span = value_range[1] - value_range[0]
    return float(np.sqrt(np.mean(diff * diff)) * 255.0 / span)


def norepeat_score(
    seq: FrameSequence,
    dominant_period: int,
    threshold: float = DEFAULT_THRESHOLD,
    search_radius: Optional[int] = None,
    distance: str = "rms",
) -> RepetitionReport:
    """Static filtering followed by the repeated-frame ratio.

    Eight uniformly sampled frames whose mean pairwise distance is below
    ``threshold`` mark the video static. Otherwise the frame closest to frame
    0 within ``search_radius`` of ``dominant_period`` starts a candidate
    repeat; frame ``start + k`` is compared with frame ``k`` and each pair
    closer than ``threshold`` counts as repeated. The score is
    ``100 * (1 - repeated / frame_count)``.
    """
    n = seq.frame_count
    if n < N_STATIC_SAMPLES + 1:
        raise InvalidInputError(f"need at least {N_STATIC_SAMPLES + 1} frames, got {n}")
    if not (1 <= dominant_period < n):
        raise InvalidInputError(f"dominant_period {dominant_period} must lie in [1, {n})")
    if search_radius is None:
        search_radius = max(1, int(round(0.1 * dominant_period)))

    def dist(i, j):
        return frame_distance(seq.frames[i], seq.frames[j], seq.value_range, distance)

    sample = np.unique(np.rint(np.linspace(0, n - 1, N_STATIC_SAMPLES)).astype(int))
    static_d = float(np.mean([dist(i, j) for i, j in combinations(sample, 2)]))
    if static_d < threshold:
        return RepetitionReport(True, None, None, 0, n, static_d)

    lo = max(1, dominant_period - search_radius)
    hi = min(n - 1, dominant_period + search_radius)
    cands = range(lo, hi + 1)
    start = min(cands, key=lambda c: (dist(c, 0), c))
    repeated = sum(1 for k in range(n - start) if dist(start + k, k) < threshold)
    return RepetitionReport(False, 100.0 * (1.0 - repeated / n), start, repeated, n, static_d)


def project_periodic(seed, T: int) -> np.ndarray:
    """Average a vector over residue classes mod ``T`` (identity if already periodic)."""
    seed = np.asarray(seed, dtype=float)
    sums = np.bincount(np.arange(seed.size) % T, weights=seed, minlength=T)
    counts = np.bincount(np.arange(seed.size) % T, minlength=T)
    return (sums / counts)[np.arange(seed.size) % T]


def construct_periodic_map(L_prime: int, T: int, seed_row) -> np.ndarray:
    """Row-stochastic map with ``P[i, j] = P[i, j + T]`` and ``P[i, j] = P[i + T, j + T]``.

    Entries are ``g[(j - i) mod T] / c[i mod T]`` where ``g`` is the seed
    projected to period ``T`` and ``c`` the row normaliser. The Toeplitz
    identity ``P[i, j] = P[i + p, j + p]`` holds for every ``p`` when ``T``
    divides ``L_prime`` (then ``c`` is constant) and for multiples of ``T``
    otherwise.
    """
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    seed = np.asarray(seed_row, dtype=float)
    if seed.shape != (L_prime,):
        raise ShapeError(f"seed_row must have length {L_prime}")
    if np.any(seed < 0):
        raise InvalidInputError("seed_row must be non-negative")
    T_eff = min(T, L_prime)
    g = project_periodic(seed, T_eff)[:T_eff]
    if not np.any(g > 0):
        raise InvalidInputError("seed_row has no positive mass")
    i = np.arange(L_prime)
    offs = (i[None, :] - i[:, None]) % T_eff
    raw = g[offs]
    # row normaliser from residue counts with a correctly rounded sum, so rows
    # with equal counts (all rows when T divides L') get bit-identical values
    r = np.arange(T_eff)
    counts = np.stack([np.bincount((i - k) % T_eff, minlength=T_eff) for k in r])
    c = np.array([math.fsum(counts[k] * g) for k in r])
    if np.any(c <= 0):
        raise InvalidInputError("seed_row leaves a row with zero mass")
    return raw / c[i % T_eff][:, None]


def periodic_output_check(P, V, T: int) -> float:
    """Largest ``||O[i + T] - O[i]||_2`` over valid rows, with ``O = P V``."""
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or V.shape[0] != P.shape[1]:
        raise ShapeError("P must be square with as many columns as V has rows")
    n = P.shape[0]
    if T >= n:
        return 0.0
    O = P @ V
    return float(np.max(np.linalg.norm(O[T:] - O[:-T], axis=1)))
