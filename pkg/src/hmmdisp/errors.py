"""Exception hierarchy shared by every module of the package."""


class HMMError(Exception):
    """Base class for all errors raised by :mod:`hmmdisp`."""


class InputError(HMMError):
    """Bad user input: unreadable files, malformed configs, unknown presets."""


class MeshFormatError(InputError):
    """A mesh text file could not be parsed.

    Attributes
    ----------
    lineno : int or None
        One-based line number of the offending line, when known.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class AdmissibilityError(HMMError):
    """A mesh violates one of the admissibility invariants.

    ``issues`` holds one human readable entry per violation; each entry
    names the offending cell and/or edge id.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        head = "; ".join(self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"mesh is not admissible: {head}{more}")


class ModelError(HMMError):
    """The model data are inconsistent (e.g. incompatible well rates)."""


class CoefficientError(ModelError, ValueError):
    """A coefficient violates its hypotheses (positivity, bounds, symmetry)."""


class CompatibilityError(ModelError):
    """Injection and production do not balance, so the pure Neumann
    pressure problem has no solution."""

    def __init__(self, residual, level=None):
        self.residual = residual
        self.level = level
        where = f" at level {level}" if level is not None else ""
        super().__init__(
            f"incompatible well data{where}: "
            f"integral of (q_inj - q_prod) = {residual:.6e}"
        )


class SolverError(HMMError):
    """A linear solve failed (non-convergence or breakdown)."""

    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class IncompatibleDataError(SolverError):
    """Right-hand side has a component along the kernel of a singular system."""
