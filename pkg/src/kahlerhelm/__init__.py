"""Explicit Helmholtz decomposition of differential forms via the Kähler calculus."""

from .algebra import Multivector, clifford_mul, hodge_dual, interior, wedge
from .decompose import (
    CalibrationError,
    Decomposition,
    GeneralFormat,
    calibrate_constants,
    decompose_1form,
    decompose_2form,
    decompose_general,
    verify_proof_steps,
)
from .expr import ParseError, ScalarExpr, coords, gaussian, parse_expr
from .fields import FormField, codiff, ext_d, kahler_d, laplacian, load_field, parse_field
from .green import GridSpec, KernelSpec, fft_potential, greens_identity_check, potential
from .identities import run_symbolic_suite, verify_identity_chain

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "Decomposition",
    "FormField",
    "GeneralFormat",
    "GridSpec",
    "KernelSpec",
    "Multivector",
    "ParseError",
    "ScalarExpr",
    "calibrate_constants",
    "clifford_mul",
    "codiff",
    "coords",
    "decompose_1form",
    "decompose_2form",
    "decompose_general",
    "ext_d",
    "fft_potential",
    "gaussian",
    "greens_identity_check",
    "hodge_dual",
    "interior",
    "kahler_d",
    "laplacian",
    "load_field",
    "parse_expr",
    "parse_field",
    "potential",
    "run_symbolic_suite",
    "verify_identity_chain",
    "verify_proof_steps",
    "wedge",
]
