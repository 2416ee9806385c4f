"""Multimodal rotary position embedding over a (t, h, w) token grid.

The head dimension is split into temporal, height and width subspaces, laid
out in that order. Within each subspace the 2-D plane ``(2i, 2i+1)`` is
rotated by ``freq[i] * p`` where ``p`` is the token's coordinate on that axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, ShapeError

AXES = ("t", "h", "w")


@dataclass(frozen=True)
class GridShape:
    """Latent token grid. Flat index order is t-major, then h, then w."""

    t_len: int
    h_len: int = 1
    w_len: int = 1

    def __post_init__(self):
        for name in ("t_len", "h_len", "w_len"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ShapeError(f"{name} must be a positive integer, got {v!r}")

    @property
    def spatial(self) -> int:
        return self.h_len * self.w_len

    @property
    def n_tokens(self) -> int:
        return self.t_len * self.h_len * self.w_len

    def flat(self, t, h=0, w=0):
        return (np.asarray(t) * self.h_len + h) * self.w_len + w

    def unflatten(self, idx):
        idx = np.asarray(idx)
        if np.any(idx < 0) or np.any(idx >= self.n_tokens):
            raise IndexError(f"flat index out of range for {self.n_tokens} tokens")
        t, rem = np.divmod(idx, self.spatial)
        h, w = np.divmod(rem, self.w_len)
        return t, h, w

    def frame_of(self, idx):
        """Temporal coordinate of flat index (array-friendly, no bounds check)."""
        return np.asarray(idx) // self.spatial

    def positions(self) -> np.ndarray:
        """Integer positions ``[L', 3]`` in flat order."""
        t, h, w = self.unflatten(np.arange(self.n_tokens))
        return np.stack([t, h, w], axis=1)

    def to_dict(self):
        return {"t_len": int(self.t_len), "h_len": int(self.h_len), "w_len": int(self.w_len)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["t_len"]), int(d.get("h_len", 1)), int(d.get("w_len", 1)))


@dataclass(frozen=True)
class RopeSpec:
    d_t: int
    d_h: int
    d_w: int
    freq_t: tuple
    freq_h: tuple = ()
    freq_w: tuple = ()

    def __post_init__(self):
        if self.d_t < 2:
            raise InvalidSpecError("d_t must be at least 2")
        for axis in AXES:
            d = getattr(self, f"d_{axis}")
            freqs = getattr(self, f"freq_{axis}")
            if d < 0 or d % 2:
                raise InvalidSpecError(f"d_{axis}={d} must be even and non-negative")
            if len(freqs) != d // 2:
                raise InvalidSpecError(
                    f"freq_{axis} has {len(freqs)} entries, expected {d // 2}"
                )
            arr = np.asarray(freqs, dtype=float)
            if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0)):
                raise InvalidSpecError(f"freq_{axis} must be positive and finite")
            object.__setattr__(self, f"freq_{axis}", tuple(float(f) for f in freqs))

    @property
    def head_dim(self) -> int:
        return self.d_t + self.d_h + self.d_w

    @property
    def n_planes(self) -> int:
        return self.head_dim // 2

    def plane_freqs(self) -> np.ndarray:
        """Frequency of every 2-D plane, temporal planes first."""
        return np.array(self.freq_t + self.freq_h + self.freq_w, dtype=float)

    def plane_axes(self) -> np.ndarray:
        """Axis index (0=t, 1=h, 2=w) of every plane."""
        return np.repeat([0, 1, 2], [self.d_t // 2, self.d_h // 2, self.d_w // 2])

    def to_dict(self):
        return {
            "d_t": self.d_t,
            "d_h": self.d_h,
            "d_w": self.d_w,
            "freq_t": list(self.freq_t),
            "freq_h": list(self.freq_h),
            "freq_w": list(self.freq_w),
        }

    @classmethod
    def from_dict(cls, d):
        keys = {"d_t", "d_h", "d_w", "freq_t", "freq_h", "freq_w"}
        unknown = set(d) - keys
        if unknown:
            raise InvalidSpecError(f"unknown RopeSpec keys: {sorted(unknown)}")
        return cls(
            int(d["d_t"]),
            int(d.get("d_h", 0)),
            int(d.get("d_w", 0)),
            tuple(d["freq_t"]),
            tuple(d.get("freq_h", ())),
            tuple(d.get("freq_w", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RopeSpec":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RopeSpec":
        return cls.from_json(Path(path).read_text())


def _axis_freqs(theta, d):
    if d == 0:
        return ()
    return tuple(theta ** (-2.0 * i / d) for i in range(d // 2))


def make_rope_spec(theta_t, theta_h, theta_w, d_t, d_h, d_w) -> RopeSpec:
    """Exponential frequency schedule ``theta ** (-2i/d)`` on each axis."""
    for d in (d_t, d_h, d_w):
        if d < 0 or d % 2:
            raise InvalidSpecError(f"dimension {d} must be even and non-negative")
    for theta, d in ((theta_t, d_t), (theta_h, d_h), (theta_w, d_w)):
        if d and not theta > 1:
            raise InvalidSpecError(f"theta must exceed 1, got {theta}")
    return RopeSpec(
        d_t, d_h, d_w, _axis_freqs(theta_t, d_t), _axis_freqs(theta_h, d_h), _axis_freqs(theta_w, d_w)
    )


def _angles(pos, spec):
    pos = np.asarray(pos, dtype=float)
    return pos[..., spec.plane_axes()] * spec.plane_freqs()


def apply_rope(x, pos, spec: RopeSpec, dtype=np.float64) -> np.ndarray:
    """Rotate ``x`` (``[D]`` or ``[N, D]``) at position(s) ``pos`` (``[3]`` or ``[N, 3]``)."""
    x = np.asarray(x, dtype=dtype)
    if x.shape[-1] != spec.head_dim:
        raise ShapeError(f"vector length {x.shape[-1]} != head dim {spec.head_dim}")
    pos = np.asarray(pos)
    if pos.shape[-1] != 3:
        raise ShapeError("positions must be (t, h, w) triples")
    ang = _angles(pos, spec).astype(dtype)
    c, s = np.cos(ang), np.sin(ang)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty(np.broadcast_shapes(x.shape, c.shape[:-1] + (x.shape[-1],)), dtype=dtype)
    out[..., 0::2] = c * x0 - s * x1
    out[..., 1::2] = s * x0 + c * x1
    return out


def rotate_grid(X, grid: GridShape, spec: RopeSpec, dtype=np.float64) -> np.ndarray:
    """Apply the embedding to every row of ``X`` at its grid position."""
    X = np.asarray(X)
    if X.shape[0] != grid.n_tokens:
        raise ShapeError(f"{X.shape[0]} rows for a grid of {grid.n_tokens} tokens")
    return apply_rope(X, grid.positions(), spec, dtype=dtype)


def logit_closed_form(q, k, dt, dh, dw, spec: RopeSpec) -> float:
    """Rotated logit for a key displaced by (dt, dh, dw) from the query.

    Sums ``l1 * cos(freq * delta) + l2 * sin(freq * delta)`` over planes, with
    ``l1 = q0 k0 + q1 k1`` and ``l2 = q1 k0 - q0 k1``.
    """
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if q.shape != (spec.head_dim,) or k.shape != (spec.head_dim,):
        raise ShapeError("q and k must both have length equal to the head dim")
    l1 = q[0::2] * k[0::2] + q[1::2] * k[1::2]
    l2 = q[1::2] * k[0::2] - q[0::2] * k[1::2]
    delta = np.array([dt, dh, dw], dtype=float)[spec.plane_axes()]
    ang = spec.plane_freqs() * delta
    return float(np.sum(l1 * np.cos(ang) + l2 * np.sin(ang)))


def fundamental_period(spec: RopeSpec) -> float:
    return 2.0 * math.pi / min(spec.freq_t)
