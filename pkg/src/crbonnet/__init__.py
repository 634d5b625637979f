"""Renormalized Chern-Gauss-Bonnet integrals on strictly pseudoconvex domains."""

from .domains import DomainSpec, make_builtin, parse_domain_spec
from .errors import CRBonnetError
from .jets import Jet, jet_compose, jet_determinant, jet_extract, jet_linear_solve
from .monge_ampere import (
    ApproxSolution,
    MAEvaluation,
    check_invariance_law,
    fefferman_iterate,
    monge_ampere_J,
    verify_vanishing_order,
)

__version__ = "0.1.0"

__all__ = [
    "ApproxSolution",
    "CRBonnetError",
    "DomainSpec",
    "Jet",
    "MAEvaluation",
    "check_invariance_law",
    "fefferman_iterate",
    "jet_compose",
    "jet_determinant",
    "jet_extract",
    "jet_linear_solve",
    "make_builtin",
    "monge_ampere_J",
    "parse_domain_spec",
    "verify_vanishing_order",
    "__version__",
]
