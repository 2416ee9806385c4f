"""Position-dependent decay factors applied to positive attention logits.

A decay factor of 1 is used inside the training window (``|delta| <= L/2``)
and for negative logits. Outside the window, displacements within ``gamma``
of a nonzero multiple of the repetition period get the stronger factor
``beta``; everything else gets the strategy's base factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidPolicyError
from .rope import GridShape

TOKEN_INDEX = "token-index"
TEMPORAL_FRAME = "temporal-frame"
POSITION_MODES = (TOKEN_INDEX, TEMPORAL_FRAME)


@dataclass(frozen=True)
class Constant:
    alpha: float

    def bounds(self):
        return self.alpha, self.alpha

    def factor(self, frac):
        return np.full(np.shape(frac), float(self.alpha))


@dataclass(frozen=True)
class Linear:
    """Interpolates from ``alpha2`` at zero displacement to ``alpha1`` at ``L'``."""

    alpha1: float
    alpha2: float

    def bounds(self):
        return min(self.alpha1, self.alpha2), max(self.alpha1, self.alpha2)

    def factor(self, frac):
        return self.alpha1 * frac + self.alpha2 * (1.0 - frac)


@dataclass(frozen=True)
class Parabolic:
    alpha1: float
    alpha2: float

    def bounds(self):
        return min(self.alpha1, self.alpha2), max(self.alpha1, self.alpha2)

    def factor(self, frac):
        sq = frac * frac
        return self.alpha1 * sq + self.alpha2 * (1.0 - sq)


Strategy = Union[Constant, Linear, Parabolic]
_STRATEGIES = {"constant": Constant, "linear": Linear, "parabolic": Parabolic}


@dataclass(frozen=True)
class DecayPolicy:
    """Everything needed to evaluate the decay factor of a query/key pair.

    ``train_window`` and ``seq_len`` are measured in the unit selected by
    ``position_mode`` (frames for ``temporal-frame``, tokens otherwise).
    """

    strategy: Strategy
    train_window: int
    seq_len: int
    beta: Optional[float] = None
    gamma: int = 0
    period: Optional[float] = None
    position_mode: str = TEMPORAL_FRAME
    first_frame_factor: Optional[float] = None
    _risk_period: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self):
        lo, hi = self.strategy.bounds()
        if not (0 < lo and hi <= 1):
            raise InvalidPolicyError(f"decay factors must lie in (0, 1], got [{lo}, {hi}]")
        if self.train_window < 1 or self.seq_len < 1:
            raise InvalidPolicyError("train_window and seq_len must be positive")
        if self.gamma < 0 or int(self.gamma) != self.gamma:
            raise InvalidPolicyError("gamma must be a non-negative integer")
        if self.position_mode not in POSITION_MODES:
            raise InvalidPolicyError(f"unknown position mode {self.position_mode!r}")
        if self.beta is not None:
            if self.period is None:
                raise InvalidPolicyError("beta requires a period")
            # beta == alpha is accepted so the all-ones policy stays expressible
            if not (0 < self.beta <= lo):
                raise InvalidPolicyError(f"beta={self.beta} must lie in (0, {lo}]")
        if self.period is not None:
            if not self.period > 0:
                raise InvalidPolicyError("period must be positive")
            rp = int(round(self.period))
            if rp < 1:
                raise InvalidPolicyError(f"period {self.period} rounds to zero")
            object.__setattr__(self, "_risk_period", rp)

    @property
    def half_window(self) -> float:
        return self.train_window / 2.0

    def to_dict(self):
        kind = {Constant: "constant", Linear: "linear", Parabolic: "parabolic"}[type(self.strategy)]
        strat = {"kind": kind, **self.strategy.__dict__}
        return {
            "strategy": strat,
            "train_window": self.train_window,
            "seq_len": self.seq_len,
            "beta": self.beta,
            "gamma": self.gamma,
            "period": self.period,
            "position_mode": self.position_mode,
            "first_frame_factor": self.first_frame_factor,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        strat = dict(d.pop("strategy"))
        kind = strat.pop("kind")
        if kind not in _STRATEGIES:
            raise InvalidPolicyError(f"unknown strategy {kind!r}")
        allowed = {"train_window", "seq_len", "beta", "gamma", "period", "position_mode", "first_frame_factor"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidPolicyError(f"unknown policy keys: {sorted(unknown)}")
        return cls(strategy=_STRATEGIES[kind](**strat), **d)


def make_strategy(kind: str, alpha=None, alpha1=None, alpha2=None) -> Strategy:
    if kind == "constant":
        return Constant(alpha)
    if kind in ("linear", "parabolic"):
        return _STRATEGIES[kind](alpha1, alpha2)
    raise InvalidPolicyError(f"unknown strategy {kind!r}")


def displacement(i, j, grid: GridShape, mode: str = TEMPORAL_FRAME) -> int:
    n = grid.n_tokens
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"token index out of range for {n} tokens")
    if mode == TOKEN_INDEX:
        return int(i - j)
    if mode == TEMPORAL_FRAME:
        return int(grid.frame_of(i) - grid.frame_of(j))
    raise InvalidPolicyError(f"unknown position mode {mode!r}")


def displacements(qi, kj, grid: GridShape, mode: str) -> np.ndarray:
    """Outer displacement matrix for index vectors ``qi`` and ``kj``."""
    qi = np.asarray(qi)
    kj = np.asarray(kj)
    if mode == TEMPORAL_FRAME:
        qi, kj = grid.frame_of(qi), grid.frame_of(kj)
    return qi[:, None] - kj[None, :]


def base_factor(delta, policy: DecayPolicy):
    frac = np.abs(np.asarray(delta, dtype=float)) / policy.seq_len
    out = policy.strategy.factor(frac)
    return float(out) if np.ndim(out) == 0 else out


def in_risk_band(delta, policy: DecayPolicy):
    """True where ``|delta|`` is within gamma of a nonzero multiple of the period."""
    a = np.abs(np.asarray(delta))
    if policy.beta is None:
        return np.zeros(a.shape, dtype=bool)
    rp = policy._risk_period
    m = np.maximum(1, np.rint(a / rp))
    return np.abs(a - m * rp) <= policy.gamma


def lambda_values(delta, nonneg, policy: DecayPolicy, first_frame=None) -> np.ndarray:
    """Vectorised decay factor.

    Args:
        delta: displacement(s) in the policy's position unit.
        nonneg: True where the raw logit is >= 0.
        first_frame: optional mask of pairs touching frame 0; only consulted
            when the policy carries a first-frame override.
    """
    delta = np.asarray(delta)
    nonneg = np.broadcast_to(np.asarray(nonneg, dtype=bool), delta.shape)
    out = np.asarray(base_factor(delta, policy), dtype=float).reshape(delta.shape).copy()
    if policy.first_frame_factor is not None and first_frame is not None:
        out[np.broadcast_to(first_frame, delta.shape)] = policy.first_frame_factor
    if policy.beta is not None:
        out[in_risk_band(delta, policy)] = policy.beta
    out[(np.abs(delta) <= policy.half_window) | ~nonneg] = 1.0
    return out


def lambda_at(delta: int, logit_nonneg: bool, policy: DecayPolicy, touches_first_frame: bool = False) -> float:
    ff = touches_first_frame and policy.position_mode == TEMPORAL_FRAME
    return float(lambda_values(np.asarray(delta), logit_nonneg, policy, first_frame=np.asarray(ff)))


def lambda_block(qi, kj, nonneg, policy: DecayPolicy, grid: GridShape) -> np.ndarray:
    """Decay factors for the block of query indices ``qi`` and key indices ``kj``."""
    qi = np.asarray(qi)
    kj = np.asarray(kj)
    delta = displacements(qi, kj, grid, policy.position_mode)
    first = None
    if policy.first_frame_factor is not None and policy.position_mode == TEMPORAL_FRAME:
        first = (grid.frame_of(qi)[:, None] == 0) | (grid.frame_of(kj)[None, :] == 0)
    return lambda_values(delta, nonneg, policy, first_frame=first)


def build_lambda_row(query_index: int, key_range, signs, policy: DecayPolicy, grid: GridShape) -> np.ndarray:
    start, end = key_range
    if not (0 <= start <= end <= grid.n_tokens) or not (0 <= query_index < grid.n_tokens):
        raise IndexError("query index or key range outside the sequence")
    signs = np.asarray(signs, dtype=bool)
    if signs.shape != (end - start,):
        raise ValueError("signs must have one entry per key in the range")
    return lambda_block([query_index], np.arange(start, end), signs[None, :], policy, grid)[0]
