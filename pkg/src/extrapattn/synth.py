"""Synthetic query/key/value generators with planted spectral structure."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attention_ref import AttentionProblem
from .errors import InvalidInputError, ShapeError
from .rope import GridShape, RopeSpec, rotate_grid


@dataclass
class PlantSpec:
    """Target statistics for a planted problem.

    ``target_amps`` has one entry per temporal plane. ``spatial_constants``
    has one entry per spatial plane and sets that plane's q.k product, so
    the pattern offset is their sum. ``phases`` (optional) rotates each key
    plane relative to its query plane.
    """

    target_amps: list
    grid: GridShape
    spatial_constants: list = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0
    phases: Optional[list] = None

    def to_dict(self):
        return {
            "target_amps": list(self.target_amps),
            "grid": self.grid.to_dict(),
            "spatial_constants": list(self.spatial_constants),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "phases": None if self.phases is None else list(self.phases),
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"target_amps", "grid", "spatial_constants", "noise_std", "seed", "phases"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidInputError(f"unknown plant-spec keys: {sorted(unknown)}")
        return cls(
            target_amps=list(d["target_amps"]),
            grid=GridShape.from_dict(d["grid"]),
            spatial_constants=list(d.get("spatial_constants", [])),
            noise_std=float(d.get("noise_std", 0.0)),
            seed=int(d.get("seed", 0)),
            phases=d.get("phases"),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def plant_pattern(ps: PlantSpec, spec: RopeSpec):
    """Pre-rotation ``(Q, K)`` whose estimated pattern has the target amplitudes.

    Each temporal plane gets ``q = (sqrt(a), 0)`` and ``k = sqrt(a) (cos b, sin b)``,
    which gives ``E1 = a cos b`` and ``E2 = -a sin b``; every token carries the
    same vectors, then i.i.d. Gaussian noise is added to all entries.
    """
    nt = spec.d_t // 2
    ns = (spec.d_h + spec.d_w) // 2
    amps = np.asarray(ps.target_amps, dtype=float)
    if amps.shape != (nt,):
        raise ShapeError(f"target_amps needs {nt} entries, got {amps.size}")
    if np.any(amps < 0):
        raise InvalidInputError("target amplitudes must be non-negative")
    consts = np.zeros(ns) if len(ps.spatial_constants) == 0 else np.asarray(ps.spatial_constants, dtype=float)
    if consts.shape != (ns,):
        raise ShapeError(f"spatial_constants needs {ns} entries, got {consts.size}")
    phases = np.zeros(nt) if ps.phases is None else np.asarray(ps.phases, dtype=float)

    q = np.zeros(spec.head_dim)
    k = np.zeros(spec.head_dim)
    root = np.sqrt(amps)
    q[0 : 2 * nt : 2] = root
    k[0 : 2 * nt : 2] = root * np.cos(phases)
    k[1 : 2 * nt : 2] = root * np.sin(phases)
    sroot = np.sqrt(np.abs(consts))
    q[2 * nt :: 2] = sroot
    k[2 * nt :: 2] = np.sign(consts) * sroot

    n = ps.grid.n_tokens
    Q = np.tile(q, (n, 1))
    K = np.tile(k, (n, 1))
    if ps.noise_std > 0:
        rng = np.random.default_rng(ps.seed)
        Q += rng.normal(0.0, ps.noise_std, Q.shape)
        K += rng.normal(0.0, ps.noise_std, K.shape)
    return Q, K


def amplitude_standard_error(amps, noise_std: float, grid: GridShape) -> np.ndarray:
    """Standard error of the pooled amplitude estimate for a planted problem.

    The pooled mean over all ordered same-location frame pairs equals
    ``(sum_t q_t) . (sum_t k_t) / T**2`` per location, so the pairs are far
    from independent. With per-entry noise ``s`` this has variance
    ``(2 a s**2 / T + 2 s**4 / T**2) / (H W)``.
    """
    amps = np.asarray(amps, dtype=float)
    T, S = grid.t_len, grid.spatial
    s2 = noise_std**2
    return np.sqrt((2 * amps * s2 / T + 2 * s2 * s2 / T**2) / S)


def make_problem(
    Q,
    K,
    value_mode: str = "random",
    grid: Optional[GridShape] = None,
    seed: int = 0,
    spec: Optional[RopeSpec] = None,
    d_v: Optional[int] = None,
    scale: Optional[float] = None,
) -> AttentionProblem:
    """Wrap queries/keys into a problem, rotating them first when ``spec`` is given.

    ``random`` values are i.i.d. standard normal; ``frame-tagged`` values give
    every token of a frame the same random signature, so periodicity in the
    attention rows shows up directly in the output.
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    if grid is None:
        grid = GridShape(Q.shape[0])
    if spec is not None:
        Q = rotate_grid(Q, grid, spec)
        K = rotate_grid(K, grid, spec)
    d_v = Q.shape[1] if d_v is None else d_v
    rng = np.random.default_rng(seed)
    if value_mode == "random":
        V = rng.standard_normal((grid.n_tokens, d_v))
    elif value_mode == "frame-tagged":
        sig = rng.standard_normal((grid.t_len, d_v))
        V = sig[grid.frame_of(np.arange(grid.n_tokens))]
    elif value_mode == "zero":
        V = np.zeros((grid.n_tokens, d_v))
    else:
        raise InvalidInputError(f"unknown value mode {value_mode!r}")
    return AttentionProblem(Q, K, V, grid, scale)


def random_problem(rng: np.random.Generator, n_tokens: int, d: int, d_v: Optional[int] = None, logit_scale: float = 1.0):
    """Gaussian problem on a 1-D grid; ``logit_scale`` stretches the query entries."""
    d_v = d if d_v is None else d_v
    Q = rng.standard_normal((n_tokens, d)) * logit_scale
    K = rng.standard_normal((n_tokens, d))
    V = rng.standard_normal((n_tokens, d_v))
    return AttentionProblem(Q, K, V, GridShape(n_tokens))


def harmonic_spec(base_period_frames: float, ratios=(8, 4, 2, 1), d_h: int = 0) -> RopeSpec:
    """Temporal frequencies ``r * 2 pi / base_period`` for integer ratios ``r``.

    ``d_h`` adds a height subspace with an exponential schedule (theta=100).
    """
    c = 2 * math.pi / base_period_frames
    freq_t = tuple(r * c for r in ratios)
    freq_h = tuple(100.0 ** (-2.0 * i / d_h) for i in range(d_h // 2)) if d_h else ()
    return RopeSpec(2 * len(freq_t), d_h, 0, freq_t, freq_h, ())
