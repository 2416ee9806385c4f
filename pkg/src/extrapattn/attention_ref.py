"""Exact attention with optional decay and intervention masks.

Materialises the full ``L' x L'`` map, so it is capped to desk-scale
sequence lengths; it is the oracle for :mod:`extrapattn.attention_tiled`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decay import TEMPORAL_FRAME, DecayPolicy, displacements, lambda_block
from .errors import InvalidInputError, NumericError, ResourceError, ShapeError
from .rope import GridShape
from .spectrum import harmonic_positions

DEFAULT_CAP = 8192

MASK_KINDS = (
    "harmonic-positions",
    "out-of-window-proportion",
    "leading-fraction",
    "trailing-fraction",
    "window-only",
    "top-fraction",
)


@dataclass
class AttentionProblem:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    grid: GridShape
    scale: Optional[float] = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q)
        self.K = np.asarray(self.K)
        self.V = np.asarray(self.V)
        n = self.grid.n_tokens
        if self.Q.ndim != 2 or self.K.ndim != 2 or self.V.ndim != 2:
            raise ShapeError("Q, K and V must be matrices")
        if not (self.Q.shape[0] == self.K.shape[0] == self.V.shape[0] == n):
            raise ShapeError(f"Q, K, V must each have {n} rows")
        if self.Q.shape[1] != self.K.shape[1]:
            raise ShapeError("Q and K must share their head dimension")
        if self.scale is None:
            self.scale = 1.0 / math.sqrt(self.Q.shape[1])
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")

    @property
    def n_tokens(self) -> int:
        return self.grid.n_tokens

    def check_finite(self):
        for name in ("Q", "K", "V"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} contains NaN or Inf")


@dataclass
class RowStats:
    in_window_mass: np.ndarray
    entropy: np.ndarray


@dataclass
class AttentionOutput:
    O: np.ndarray
    P: Optional[np.ndarray] = None
    row_stats: Optional[RowStats] = None
    # rows whose every key was masked; their output is zero
    masked_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    peak_aux_bytes: Optional[int] = None


@dataclass(frozen=True)
class InterventionMask:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise InvalidInputError(f"unknown mask kind {self.kind!r}")
        for key in ("p", "fraction"):
            if key in self.params and not (0.0 <= self.params[key] <= 1.0):
                raise InvalidInputError(f"{key}={self.params[key]} must lie in [0, 1]")


def window_region(qi, kj, grid: GridShape, train_window, mode=TEMPORAL_FRAME) -> np.ndarray:
    """True where the key lies within half the training window of the query."""
    return np.abs(displacements(qi, kj, grid, mode)) <= train_window / 2.0


def _keep_top(scores, k):
    """Boolean keep-mask of the ``k`` largest entries per row (ties: lower index)."""
    order = np.argsort(-scores, axis=1, kind="stable")
    keep = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(keep, order[:, :k], True, axis=1)
    return keep


def build_intervention_mask(
    mask: InterventionMask,
    grid: GridShape,
    train_window=None,
    mode: str = TEMPORAL_FRAME,
    scores=None,
    raw_scores=None,
) -> np.ndarray:
    """Boolean ``[L', L']`` matrix, True where the entry is masked out.

    ``scores`` are the (post-decay) logits used by ``out-of-window-proportion``;
    ``raw_scores`` are the undecayed logits used by ``top-fraction`` (falls
    back to ``scores``).
    """
    kind, prm = mask.kind, mask.params
    n = grid.n_tokens
    idx = np.arange(n)

    if kind == "harmonic-positions":
        period = prm["period"]
        gamma = int(prm.get("gamma", 0))
        pos = harmonic_positions(period, grid.t_len)
        dt = np.abs(displacements(idx, idx, grid, TEMPORAL_FRAME))
        out = np.zeros((n, n), dtype=bool)
        for p in pos:
            out |= np.abs(dt - p) <= gamma
        return out

    if kind in ("leading-fraction", "trailing-fraction", "top-fraction"):
        frac = prm["fraction"]
        k = int(math.ceil(n * frac - 1e-12))
        if kind == "top-fraction":
            base = raw_scores if raw_scores is not None else scores
            if base is None:
                raise InvalidInputError("top-fraction masking needs the logit matrix")
            return ~_keep_top(np.asarray(base), k)
        keep = idx < k if kind == "leading-fraction" else idx >= n - k
        return np.broadcast_to(~keep, (n, n)).copy()

    if train_window is None:
        raise InvalidInputError(f"{kind} masking needs a training window")
    inside = window_region(idx, idx, grid, train_window, mode)
    if kind == "window-only":
        return ~inside

    # out-of-window-proportion
    p = prm.get("p", 0.0)
    rank_by = prm.get("rank_by", "score")
    out = np.zeros((n, n), dtype=bool)
    if p == 0:
        return out
    if rank_by == "score":
        if scores is None:
            raise InvalidInputError("score-ranked masking needs the logit matrix")
        key = np.where(inside, -np.inf, np.asarray(scores, dtype=float))
    elif rank_by == "position":
        key = np.where(inside, -np.inf, np.abs(displacements(idx, idx, grid, mode)).astype(float))
    else:
        raise InvalidInputError(f"unknown rank_by {rank_by!r}")
    n_out = (~inside).sum(axis=1)
    n_mask = np.floor(p * n_out + 0.5).astype(int)
    order = np.argsort(-key, axis=1, kind="stable")
    for i in range(n):
        out[i, order[i, : n_mask[i]]] = True
    return out


def row_dispersion_stats(P_row, window_region_row):
    """In-window probability mass and Shannon entropy (nats) of one row."""
    P_row = np.asarray(P_row, dtype=float)
    region = np.asarray(window_region_row, dtype=bool)
    mass = float(P_row[region].sum())
    nz = P_row[P_row > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return mass, entropy


def _row_stats(P, inside):
    total = P.sum(axis=1)
    # ratio form so fully out-of-window masking gives exactly 1.0
    mass = np.where(inside, P, 0.0).sum(axis=1) / np.where(total > 0, total, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return RowStats(in_window_mass=mass, entropy=-plogp.sum(axis=1))


def attend_reference(
    prob: AttentionProblem,
    policy: Optional[DecayPolicy] = None,
    mask: Optional[InterventionMask] = None,
    keep_map: bool = False,
    cap: int = DEFAULT_CAP,
    train_window=None,
    dtype=np.float64,
) -> AttentionOutput:
    """Softmax attention over the full logit matrix.

    The decay factor is chosen from the sign of the raw logit and applied
    after scaling; masked entries are set to ``-inf`` before the softmax.
    Row statistics are computed whenever a training window is known (from
    ``train_window`` or the policy).
    """
    n = prob.n_tokens
    if n > cap:
        raise ResourceError(f"L'={n} exceeds the reference cap {cap}; use the tiled path")
    prob.check_finite()
    Q = np.asarray(prob.Q, dtype=dtype)
    K = np.asarray(prob.K, dtype=dtype)
    V = np.asarray(prob.V, dtype=dtype)
    S = (Q * dtype(prob.scale)) @ K.T
    idx = np.arange(n)
    if policy is not None:
        S *= lambda_block(idx, idx, S >= 0, policy, prob.grid).astype(dtype)
    window = train_window if train_window is not None else (policy.train_window if policy else None)
    mode = policy.position_mode if policy is not None else TEMPORAL_FRAME
    if mask is not None:
        raw = (Q * dtype(prob.scale)) @ K.T if mask.kind == "top-fraction" else None
        m = build_intervention_mask(mask, prob.grid, window, mode, scores=S, raw_scores=raw)
        S[m] = -np.inf
    rowmax = S.max(axis=1)
    dead = ~np.isfinite(rowmax)
    rowmax[dead] = 0.0
    S -= rowmax[:, None]
    np.exp(S, out=S)
    denom = S.sum(axis=1)
    denom[dead] = 1.0
    S /= denom[:, None]
    P = S
    O = P @ V
    stats = None
    if window is not None:
        stats = _row_stats(P, window_region(idx, idx, prob.grid, window, mode))
    return AttentionOutput(O=O, P=P if keep_map else None, row_stats=stats, masked_rows=dead)
