"""Exception types shared across the package."""


class CRBonnetError(Exception):
    """Base class for all package errors."""


class OrderExceeded(CRBonnetError):
    """A derivative or extraction beyond the stored jet order was requested."""


class JetOrderExhausted(OrderExceeded):
    """The jet budget is too small for an extra exterior derivative."""


class DivisionBySingular(CRBonnetError):
    """Denominator constant term below the configured epsilon."""


class BranchViolation(CRBonnetError):
    """log/sqrt/pow argument sits on the principal-branch cut."""


class SingularSystem(CRBonnetError):
    """Constant-term matrix of a jet linear system is too ill-conditioned."""


class InvalidParams(CRBonnetError):
    """Built-in domain parameters out of range."""


class PseudoconvexityLost(CRBonnetError):
    """Levi form failed positivity on the probe grid."""


class ParseError(CRBonnetError):
    """Malformed domain-spec document.

    Carries ``position`` (offset info from the underlying decoder) when
    available.
    """

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class SymmetryConflict(CRBonnetError):
    """Both (a,b,c) and (b,a,c') monomials present with c' != conj(c)."""


class OrderStall(CRBonnetError):
    """Fefferman stage failed to improve the measured vanishing order."""


class CollarTooThin(CRBonnetError):
    """A depth sample exited the domain during an order fit."""


class NotInterior(CRBonnetError):
    """Operation requires rho < 0 at the point."""


class NotOnBoundary(CRBonnetError):
    """Operation requires |rho| at roundoff at the point."""


class StageTooLow(CRBonnetError):
    """Einstein-relation checks need a Fefferman stage >= 2."""


class DegenerateFrame(CRBonnetError):
    """Gram-Schmidt pivot fell below epsilon."""


# The connection module refers to the same failure by another name.
FrameDegenerate = DegenerateFrame


class NewtonDiverged(CRBonnetError):
    """Radial boundary solve failed to converge at a node."""


class ExtrapolationUnstable(CRBonnetError):
    """Successive index estimates differ too much to extrapolate."""


class WrongDimension(CRBonnetError):
    """Density formula called with the wrong CR dimension."""


class DensityRouteMismatch(CRBonnetError):
    """The two displays of the five-dimensional density disagree."""
