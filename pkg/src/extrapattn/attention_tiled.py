"""Blocked attention with online softmax and per-block decay.

Each query block streams over key/value blocks, keeping a running row
maximum, a running normaliser and an un-normalised output accumulator:

    p_new = max(p, rowmax(S))
    l     = exp(p - p_new) * l + rowsum(exp(S - p_new))
    O     = exp(p - p_new) * O + exp(S - p_new) @ V

The decay factor is chosen from the sign of the raw block logits, then
applied before the update, so no ``L' x L'`` buffer is ever built.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .attention_ref import AttentionOutput, AttentionProblem, RowStats, window_region
from .decay import TEMPORAL_FRAME, DecayPolicy, lambda_block
from .rope import GridShape


@dataclass(frozen=True)
class TileConfig:
    b_q: int = 64
    b_kv: int = 64

    def __post_init__(self):
        if self.b_q < 1 or self.b_kv < 1:
            raise ValueError("block sizes must be at least 1")


@dataclass
class RunningRowState:
    p: np.ndarray
    l: np.ndarray
    O_acc: np.ndarray

    @classmethod
    def initial(cls, rows: int, d_v: int, dtype=np.float64) -> "RunningRowState":
        return cls(
            p=np.full(rows, -np.inf, dtype=dtype),
            l=np.zeros(rows, dtype=dtype),
            O_acc=np.zeros((rows, d_v), dtype=dtype),
        )

    def finalize(self):
        """Normalised output and the mask of rows with a zero normaliser."""
        dead = ~(self.l > 0)
        denom = np.where(dead, 1.0, self.l)
        out = self.O_acc / denom[:, None]
        out[dead] = 0.0
        return out, dead


def merge_block(state: RunningRowState, S_block, V_block=None) -> RunningRowState:
    """Fold one block of (already decayed and scaled) logits into the state.

    ``V_block`` may be omitted when only the normaliser is of interest; the
    accumulator is then carried through rescaled but otherwise unchanged.
    """
    S_block = np.asarray(S_block)
    p_new = np.maximum(state.p, S_block.max(axis=1, initial=-np.inf))
    # rows that have seen only -inf keep a finite reference to avoid inf - inf
    ref = np.where(np.isfinite(p_new), p_new, 0.0)
    corr = np.exp(state.p - ref)
    P_tilde = np.exp(S_block - ref[:, None])
    l = corr * state.l + P_tilde.sum(axis=1)
    O = corr[:, None] * state.O_acc
    if V_block is not None:
        O = O + P_tilde @ V_block
    return RunningRowState(p=p_new, l=l, O_acc=O)


def apply_decay_block(S_block, query_block_range, key_block_range, signs, policy: DecayPolicy, grid: GridShape):
    """Multiply a logit block by its decay factors.

    ``signs`` is the non-negativity mask of the raw logits; the factors are
    computed from block-local index vectors only.
    """
    q0, q1 = query_block_range
    k0, k1 = key_block_range
    lam = lambda_block(np.arange(q0, q1), np.arange(k0, k1), signs, policy, grid)
    return S_block * lam


# tile-sized temporaries alive at once, in 8-byte units: logits, exp(S - p),
# decay factors and the band arithmetic behind them (displacements, their
# magnitudes, nearest multiples, masks), plus the window test and masked
# products of the row statistics. Measured peak is about 10; rounded up.
_TILE_BUFFERS = 12


def block_aux_bytes(b_q: int, b_kv: int, d: int, d_v: int, itemsize: int = 8) -> int:
    """Upper bound on transient bytes held by one query block.

    Counts the scaled query tile, cast key/value tiles, the tile-sized
    temporaries of the decay and softmax update, the ``P @ V`` product and
    the running state. Nothing here depends on the sequence length.
    """
    tile = b_q * b_kv
    width = max(itemsize, 8)
    return (
        b_q * d * itemsize
        + b_kv * (d + d_v) * itemsize
        + _TILE_BUFFERS * tile * width
        + 3 * b_q * d_v * itemsize
        + 4 * b_q * itemsize
    )


def _run_query_block(Q, K, V, scale, q0, q1, policy, grid, b_kv, dtype, lambda_hook, window=None, mode=None):
    rows = q1 - q0
    state = RunningRowState.initial(rows, V.shape[1], dtype)
    # optional streaming row statistics, rescaled like l: in-window weight and sum of w * s
    l_in = np.zeros(rows, dtype=np.float64)
    ws = np.zeros(rows, dtype=np.float64)
    # scaling folded into the query tile; casts are per tile so inputs are never copied whole
    q = Q[q0:q1].astype(dtype) * dtype(scale)
    n = K.shape[0]
    qi = np.arange(q0, q1)
    for k0 in range(0, n, b_kv):
        k1 = min(k0 + b_kv, n)
        S = q @ K[k0:k1].astype(dtype, copy=False).T
        if policy is not None:
            lam = lambda_block(qi, np.arange(k0, k1), S >= 0, policy, grid).astype(dtype)
            if lambda_hook is not None:
                lam = lambda_hook(lam, (q0, q1), (k0, k1))
            S *= lam
        new = merge_block(state, S, V[k0:k1].astype(dtype, copy=False))
        if window is not None:
            ref = np.where(np.isfinite(new.p), new.p, 0.0)
            corr = np.exp(state.p - ref)
            w = np.exp(S - ref[:, None])
            inside = window_region(qi, np.arange(k0, k1), grid, window, mode)
            l_in = corr * l_in + np.where(inside, w, 0.0).sum(axis=1)
            ws = corr * ws + np.where(w > 0, w * S, 0.0).sum(axis=1)
        state = new
    O, dead = state.finalize()
    if window is None:
        return O, dead, None, None
    l = np.where(dead, 1.0, state.l)
    mass = np.where(dead, 0.0, l_in / l)
    # entropy of softmax(s) = p + log l - sum(P s)
    ent = np.where(dead, 0.0, state.p + np.log(l) - ws / l)
    return O, dead, mass, ent


def attend_tiled(
    prob: AttentionProblem,
    policy: Optional[DecayPolicy] = None,
    cfg: TileConfig = TileConfig(),
    dtype=np.float64,
    workers: int = 1,
    lambda_hook: Optional[Callable] = None,
    train_window=None,
) -> AttentionOutput:
    """Memory-bounded equivalent of :func:`attend_reference` (no map, no masks).

    Row statistics (in-window mass, entropy) are accumulated on the fly when
    a training window is known, from ``train_window`` or the policy.
    ``lambda_hook(lam, q_range, k_range)`` can rewrite a block's decay
    factors; it exists for fault-injection tests.
    """
    prob.check_finite()
    Q, K, V = prob.Q, prob.K, prob.V
    n = prob.n_tokens
    window = train_window if train_window is not None else (policy.train_window if policy else None)
    mode = policy.position_mode if policy is not None else TEMPORAL_FRAME
    O = np.empty((n, V.shape[1]), dtype=dtype)
    dead = np.zeros(n, dtype=bool)
    mass = np.zeros(n) if window is not None else None
    ent = np.zeros(n) if window is not None else None
    starts = list(range(0, n, cfg.b_q))

    def work(q0):
        q1 = min(q0 + cfg.b_q, n)
        res = _run_query_block(Q, K, V, prob.scale, q0, q1, policy, prob.grid, cfg.b_kv, dtype, lambda_hook,
                               window, mode)
        O[q0:q1], dead[q0:q1] = res[0], res[1]
        if window is not None:
            mass[q0:q1], ent[q0:q1] = res[2], res[3]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for q0 in starts:
            work(q0)
    aux = block_aux_bytes(min(cfg.b_q, n), min(cfg.b_kv, n), Q.shape[1], V.shape[1], np.dtype(dtype).itemsize)
    stats = RowStats(mass, ent) if window is not None else None
    return AttentionOutput(O=O, row_stats=stats, masked_rows=dead, peak_aux_bytes=aux * max(1, min(workers, len(starts))))
