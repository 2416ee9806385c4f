"""Position-dependent attention-logit decay for length extrapolation.

Reference and tiled (online-softmax) attention with decay, multimodal rotary
embeddings, spectral analysis of rotary-induced attention patterns and a
frame-repetition metric.
"""

from .rope import GridShape, RopeSpec, apply_rope, logit_closed_form, make_rope_spec
from .spectrum import (
    HarmonicReport,
    SpectralPattern,
    detect_period,
    estimate_pattern,
    evaluate_pattern,
    harmonic_analysis,
    harmonic_positions,
)
from .decay import Constant, DecayPolicy, Linear, Parabolic, base_factor, lambda_at
from .attention_ref import AttentionOutput, AttentionProblem, InterventionMask, attend_reference
from .attention_tiled import TileConfig, attend_tiled
from .repetition import FrameSequence, RepetitionReport, norepeat_score
from .synth import PlantSpec, make_problem, plant_pattern

__version__ = "0.1.0"

__all__ = [
    "AttentionOutput",
    "AttentionProblem",
    "Constant",
    "DecayPolicy",
    "FrameSequence",
    "GridShape",
    "HarmonicReport",
    "InterventionMask",
    "Linear",
    "Parabolic",
    "PlantSpec",
    "RepetitionReport",
    "RopeSpec",
    "SpectralPattern",
    "TileConfig",
    "apply_rope",
    "attend_reference",
    "attend_tiled",
    "base_factor",
    "detect_period",
    "estimate_pattern",
    "evaluate_pattern",
    "harmonic_analysis",
    "harmonic_positions",
    "lambda_at",
    "logit_closed_form",
    "make_problem",
    "make_rope_spec",
    "norepeat_score",
    "plant_pattern",
]
