"""Statistical row-attention pattern and harmonic analysis.

The expected logit between a query and a key at the same spatial location
``dt`` frames apart is modelled as ``sum_i a_i cos(freq_i dt + b_i) + C``.
The coefficients are estimated from pre-rotation query/key samples; the
frequency set is then classified by how close its ratios to the lowest
frequency are to positive integers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidInputError, InvalidSpecError, NumericError, ShapeError
from .rope import GridShape, RopeSpec

EXACT_TOL = 1e-9
DEFAULT_INTEGER_TOL = 0.06

EXACT = "exact-harmonic"
APPROXIMATE = "approximate-harmonic"
INHARMONIC = "inharmonic"


@dataclass
class SpectralPattern:
    freqs: np.ndarray
    amps: np.ndarray
    phases: np.ndarray
    offset: float = 0.0
    # spread of the per-dt statistics around their pooled means (estimation only)
    e1_var: Optional[np.ndarray] = field(default=None, repr=False)
    e2_var: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.amps = np.asarray(self.amps, dtype=float)
        self.phases = np.zeros_like(self.freqs) if self.phases is None else np.asarray(self.phases, dtype=float)
        if not (self.freqs.shape == self.amps.shape == self.phases.shape) or self.freqs.ndim != 1:
            raise ShapeError("freqs, amps and phases must be 1-D and equally long")
        if np.any(self.amps < 0):
            raise InvalidInputError("amplitudes must be non-negative")
        self.offset = float(self.offset)

    def __len__(self):
        return self.freqs.size

    def __call__(self, dt):
        return evaluate_pattern(self, dt)

    def to_dict(self):
        d = {
            "freqs": self.freqs.tolist(),
            "amps": self.amps.tolist(),
            "phases": self.phases.tolist(),
            "offset": self.offset,
        }
        if self.e1_var is not None:
            d["e1_var"] = np.asarray(self.e1_var).tolist()
            d["e2_var"] = np.asarray(self.e2_var).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["freqs"],
            d["amps"],
            d.get("phases"),
            d.get("offset", 0.0),
            d.get("e1_var"),
            d.get("e2_var"),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class HarmonicReport:
    classification: str
    fundamental_freq: float
    fundamental_period: float
    dominant_index: int
    dominant_share: float
    effective_period: float
    ratios: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PatternStats:
    """Per-plane empirical statistics behind an estimated pattern.

    ``bin_e1``/``bin_e2`` hold one row per displacement in ``dts`` and one
    column per plane (temporal planes first, then spatial).
    """

    dts: np.ndarray
    counts: np.ndarray
    bin_e1: np.ndarray
    bin_e2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray


def _check_inputs(queries, keys, grid, spec):
    if spec.d_t == 0:
        raise InvalidSpecError("temporal dimension must be non-zero")
    Q = np.asarray(queries, dtype=float)
    K = np.asarray(keys, dtype=float)
    want = (grid.n_tokens, spec.head_dim)
    if Q.shape != want or K.shape != want:
        raise ShapeError(f"queries/keys must be {want}, got {Q.shape} and {K.shape}")
    return Q, K


def pattern_statistics(queries, keys, grid: GridShape, spec: RopeSpec) -> PatternStats:
    """Empirical plane statistics over all same-location (t, t + dt) pairs."""
    Q, K = _check_inputs(queries, keys, grid, spec)
    T, S = grid.t_len, grid.spatial
    Q3 = Q.reshape(T, S, -1)
    K3 = K.reshape(T, S, -1)
    dts = np.arange(-(T - 1), T)
    n_planes = spec.n_planes
    sum1 = np.empty((dts.size, n_planes))
    sum2 = np.empty((dts.size, n_planes))
    counts = np.empty(dts.size)
    for row, dt in enumerate(dts):
        if dt >= 0:
            A, B = Q3[: T - dt], K3[dt:]
        else:
            A, B = Q3[-dt:], K3[: T + dt]
        sum1[row] = np.einsum("tsi,tsi->i", A[..., 0::2], B[..., 0::2]) + np.einsum(
            "tsi,tsi->i", A[..., 1::2], B[..., 1::2]
        )
        sum2[row] = np.einsum("tsi,tsi->i", A[..., 1::2], B[..., 0::2]) - np.einsum(
            "tsi,tsi->i", A[..., 0::2], B[..., 1::2]
        )
        counts[row] = (T - abs(dt)) * S
    total = counts.sum()
    return PatternStats(
        dts=dts,
        counts=counts,
        bin_e1=sum1 / counts[:, None],
        bin_e2=sum2 / counts[:, None],
        e1=sum1.sum(axis=0) / total,
        e2=sum2.sum(axis=0) / total,
    )


def estimate_pattern(queries, keys, grid: GridShape, spec: RopeSpec) -> SpectralPattern:
    """Fit the trigonometric row pattern from pre-rotation queries and keys.

    The per-plane products are pooled over every (t, h, w, dt) pair at a
    shared spatial location, which treats the statistics as independent of
    ``dt``; their variance across ``dt`` is kept on the result.
    """
    st = pattern_statistics(queries, keys, grid, spec)
    nt = spec.d_t // 2
    e1, e2 = st.e1[:nt], st.e2[:nt]
    amps = np.hypot(e1, e2)
    phases = np.arctan2(-e2, e1)
    phases = np.where(phases <= -math.pi, math.pi, phases) + 0.0
    return SpectralPattern(
        freqs=np.array(spec.freq_t),
        amps=amps,
        phases=phases,
        offset=float(st.e1[nt:].sum()),
        e1_var=st.bin_e1[:, :nt].var(axis=0),
        e2_var=st.bin_e2[:, :nt].var(axis=0),
    )


def evaluate_pattern(p: SpectralPattern, dt):
    dt = np.asarray(dt, dtype=float)
    vals = np.cos(np.multiply.outer(dt, p.freqs) + p.phases) @ p.amps + p.offset
    return float(vals) if vals.ndim == 0 else vals


def empirical_row_pattern(q_rot, k_rot, grid: GridShape, nonneg_only=True):
    """Mean rotated logit per frame displacement, over same-location pairs.

    Returns ``(dts, means)``; with ``nonneg_only`` only ``dt >= 0`` is kept.
    """
    Q = np.asarray(q_rot, dtype=float)
    K = np.asarray(k_rot, dtype=float)
    T, S = grid.t_len, grid.spatial
    Q3 = Q.reshape(T, S, -1)
    K3 = K.reshape(T, S, -1)
    # G[t, u] = sum over locations of q(t, s) . k(u, s)
    G = np.einsum("tsd,usd->tu", Q3, K3)
    lo = 0 if nonneg_only else -(T - 1)
    dts = np.arange(lo, T)
    means = np.array([np.trace(G, offset=dt) / ((T - abs(dt)) * S) for dt in dts])
    return dts, means


def _nearest_positive_int(r):
    return np.maximum(1.0, np.rint(r))


def _passes(ratios, tol, relative):
    n = _nearest_positive_int(ratios)
    dev = np.abs(ratios - n)
    if relative:
        dev = dev / n
    return dev <= tol


def harmonic_analysis(p: SpectralPattern, integer_tol: float = DEFAULT_INTEGER_TOL) -> HarmonicReport:
    """Classify the pattern's frequency set and locate its dominant component."""
    if len(p) == 0:
        raise InvalidInputError("pattern has no frequencies")
    freqs = p.freqs
    if np.any(freqs <= 0) or not np.all(np.isfinite(freqs)):
        raise InvalidInputError("frequencies must be positive and finite")
    fmin = float(freqs.min())
    ratios = freqs / fmin
    if np.all(_passes(ratios, EXACT_TOL, relative=False)):
        cls = EXACT
    elif np.all(_passes(ratios, integer_tol, relative=True)):
        cls = APPROXIMATE
    else:
        cls = INHARMONIC
    dom = int(np.argmax(p.amps))
    total = float(p.amps.sum())
    if total > 0:
        partners = _passes(freqs / freqs[dom], integer_tol, relative=True)
        share = float(p.amps[partners].sum() / total)
    else:
        share = 0.0
    return HarmonicReport(
        classification=cls,
        fundamental_freq=fmin,
        fundamental_period=2 * math.pi / fmin,
        dominant_index=dom,
        dominant_share=min(1.0, share),
        effective_period=2 * math.pi / float(freqs[dom]),
        ratios=ratios.tolist(),
    )


def _as_array_fn(f):
    def g(x):
        y = np.asarray(f(x), dtype=float)
        if y.shape != np.shape(x):
            y = np.array([float(f(v)) for v in np.ravel(x)]).reshape(np.shape(x))
        return y

    return g


def detect_period(
    f: Union[Callable, Sequence[float], np.ndarray],
    horizon: float,
    step: float,
    eps: float,
    refine: bool = True,
) -> Optional[float]:
    """Smallest shift ``T`` in ``(0, horizon]`` with ``max |f(x + T) - f(x)| <= eps``.

    ``f`` is either a vectorised callable or a signal sampled at spacing
    ``step``. For a callable the base points span ``[0, horizon]`` and every
    lattice shift ``n * step`` is tested. A period falling between lattice
    points is found by refining the local minima of the lattice residual
    (``refine=True``); the refined value lies within one step of its lattice
    neighbour. Sampled signals are tested on the lattice only, over their
    overlapping range.
    """
    if not (horizon > 0 and step > 0):
        raise InvalidInputError("horizon and step must be positive")
    n_shift = int(math.floor(horizon / step + 1e-9))
    if callable(f):
        fn = _as_array_fn(f)
        n_base = n_shift + 1
        y = fn(np.arange(n_base + n_shift) * step)
    else:
        fn = None
        y = np.asarray(f, dtype=float)
        if y.ndim != 1:
            raise ShapeError("sampled signal must be 1-D")
        n_shift = min(n_shift, y.size - 1)
    if not np.all(np.isfinite(y)):
        raise NumericError("signal contains non-finite samples")
    if n_shift < 1:
        return None

    if fn is not None:
        resid = np.array([np.max(np.abs(y[n : n + n_base] - y[:n_base])) for n in range(1, n_shift + 1)])
    else:
        resid = np.array([np.max(np.abs(y[n:] - y[:-n])) for n in range(1, n_shift + 1)])
    resid = np.concatenate([[0.0], resid, [np.inf]])

    if fn is not None and refine:
        lip = np.max(np.abs(np.diff(y))) if y.size > 1 else 0.0
        base = np.arange(n_base) * step

        def g(shift):
            return float(np.max(np.abs(fn(base + shift) - y[:n_base])))

    for n in range(1, n_shift + 1):
        if resid[n] <= eps:
            return n * step
        if fn is None or not refine or n < 2:
            continue
        if resid[n] <= resid[n - 1] and resid[n] <= resid[n + 1] and resid[n] <= eps + 2 * lip:
            hi = min((n + 1) * step, horizon)
            res = minimize_scalar(g, bounds=((n - 1) * step, hi), method="bounded", options={"xatol": 1e-13})
            if g(res.x) <= eps:
                return float(res.x)
    return None


def harmonic_positions(report: Union[HarmonicReport, float], seq_len_frames: int, period: Optional[float] = None) -> list:
    """Frame displacements ``round(m * period)`` below ``seq_len_frames``, m >= 1.

    ``period`` defaults to the report's effective period; a bare number is
    accepted in place of the report.
    """
    if seq_len_frames < 1:
        raise InvalidInputError("seq_len_frames must be at least 1")
    if period is None:
        period = report.effective_period if isinstance(report, HarmonicReport) else float(report)
    out = []
    m = 1
    while True:
        pos = int(math.floor(m * period + 0.5))
        if pos >= seq_len_frames:
            break
        if pos >= 1 and (not out or pos != out[-1]):
            out.append(pos)
        m += 1
    return out
