"""Simulation and control synthesis for the bilinearly controlled complex
Ginzburg-Landau equation on the torus."""

__version__ = "0.1.0"

from .spectral import (
    GridSpec,
    SpectralField,
    TrigPolynomial,
    analyze,
    b_operator,
    exp_multiplier,
    gradient,
    pointwise_multiply,
    sobolev_norm,
    synthesize,
)
from .dynamics import (
    BlowUpError,
    CGLParams,
    ControlSchedule,
    ControlSegment,
    SolverConfig,
    picard_reference,
    resolve,
    stability_probe,
    standard_field,
)
from .saturation import (
    FrequencySet,
    SaturationChain,
    SubspaceBasis,
    chain_condition,
    decompose,
    grow,
    is_generator,
    is_saturating,
    saturation_chain,
    standard_frequency_set,
)
from .synthesis import (
    MollifierSpec,
    SynthesisConfig,
    conjugation_coeffs,
    execute_and_refine,
    limit_probe,
    null_control_schedule,
    phase_plan,
    same_argument_target,
)

__all__ = [
    "GridSpec",
    "SpectralField",
    "TrigPolynomial",
    "analyze",
    "b_operator",
    "exp_multiplier",
    "gradient",
    "pointwise_multiply",
    "sobolev_norm",
    "synthesize",
    "BlowUpError",
    "CGLParams",
    "ControlSchedule",
    "ControlSegment",
    "SolverConfig",
    "picard_reference",
    "resolve",
    "stability_probe",
    "standard_field",
    "FrequencySet",
    "SaturationChain",
    "SubspaceBasis",
    "chain_condition",
    "decompose",
    "grow",
    "is_generator",
    "is_saturating",
    "saturation_chain",
    "standard_frequency_set",
    "MollifierSpec",
    "SynthesisConfig",
    "conjugation_coeffs",
    "execute_and_refine",
    "limit_probe",
    "null_control_schedule",
    "phase_plan",
    "same_argument_target",
]
