"""High-frequency stability of single-loop grid-forming converters with LCL filters.

Modules: :mod:`~gfmstab.poly` (polynomial and rational algebra),
:mod:`~gfmstab.plant` (circuit, operating point, linearization),
:mod:`~gfmstab.loops` (open-loop models, active damping),
:mod:`~gfmstab.stability` (Routh, Nyquist, margins),
:mod:`~gfmstab.simulator` (nonlinear time-domain runs) and
:mod:`~gfmstab.cli`.
"""
from .errors import GfmError, InvalidInput, NumericalFailure
from .loops import (AdController, AdKind, CharCoeffs, OlModel, apply_ad, build_ap_ol,
                    build_droop_ol, build_droopI_ol, build_rap_ol, char_coeffs_lossless,
                    full_linear_model, rap_model)
from .plant import (ControlLaw, ControlParams, LinearPlant, OperatingPoint, PlantParams,
                    ResonanceProfile, linearize, resonance_frequencies, solve_operating_point,
                    to_per_unit)
from .poly import Polynomial, RationalFn, StateSpaceModel, cancel, evaluate, roots, ss_to_rational
from .stability import (MarginReport, NyquistReport, RouthReport, StabilityVerdict,
                        closed_loop_poles, margins, nyquist, routh, verdict)
from .simulator import (EventStep, FftReport, SimScenario, SimTrace, dominant_frequency,
                        simulate)

__version__ = "0.1.0"
