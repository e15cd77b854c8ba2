"""Exception hierarchy and advisory warnings shared across the package."""


class AggError(Exception):
    """Base class for all errors raised by this package."""


# --- configuration / input validation -------------------------------------

class ParseError(AggError):
    """Malformed config text or an unknown key."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(AggError):
    """Structurally valid input with physically/logically invalid content."""


class BadExponents(ValidationError):
    """Regularity-monitor exponents below the admissible range q, r >= 2."""


class InsufficientData(ValidationError):
    """Not enough runs/records to perform the requested analysis."""


# --- numerical failures ----------------------------------------------------

class NumericalError(AggError):
    """Base class for failures of iterative solvers and state invariants."""


class NonConvergence(NumericalError):
    """Linear iteration hit its cap before reaching the target residual."""


class IncompatibleRHS(NumericalError):
    """Poisson right-hand side has a nonzero mean on a pure-Neumann/periodic grid."""


class MeanNotZero(NumericalError):
    """A zero-mean field was required (H^-1 norm) but the mean is nonzero."""


class DomainError(NumericalError):
    """Evaluation of a singular potential outside its open domain (-1, 1)."""


class NonPositiveCoefficient(ValidationError):
    """Certified positivity bounds for a()/b() polynomials are violated on [-1, 1]."""


class SeparationViolated(NumericalError):
    """Phase field reached the clamp distance from the pure phases +-1."""


class NewtonDiverged(NumericalError):
    """Newton iteration failed to reach tolerance within its iteration budget."""


class LinearSolveDiverged(NumericalError):
    """Implicit momentum solve failed to converge."""


class NotConverged(NumericalError):
    """Gradient flow did not reach the stationarity tolerance within max_T."""


class PerturbationTooLarge(ValidationError):
    """Requested stability perturbation pushes the phase field out of (-1, 1)."""


class DegenerateWindow(NumericalError):
    """Decay-fit signal hit zero inside the fit window (super-polynomial decay)."""


class RunAborted(NumericalError):
    """A trajectory aborted mid-run; carries the partial outputs."""

    def __init__(self, message, cause=None, partial=None):
        super().__init__(message)
        self.cause = cause
        self.partial = partial


# --- advisories -------------------------------------------------------------

class CflViolation(UserWarning):
    """Advisory: explicit advection ran with dt * max|v| / h > 1."""
