"""Exception hierarchy shared by all modules."""


class HuiWalterError(Exception):
    """Base class for every error raised by this package."""


class InputError(HuiWalterError, ValueError):
    """Malformed or inconsistent caller input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownPopulationError(InputError, LookupError):
    pass


class UnsupportedArityError(InputError):
    pass


class DegenerateMarginError(InputError):
    """A contingency table has an all-zero row or column."""


class DomainError(InputError):
    """A probability parameter lies outside [0, 1]."""


class ConfigError(InputError):
    pass


class ProtocolError(InputError):
    """A stream changed shape mid-flight or mixed population modes."""


class NoLabelsError(InputError):
    pass


class InsufficientSamplesError(InputError):
    pass


class DegenerateDataError(InputError):
    pass


class DegenerateWindowError(InputError):
    pass


class NonIdentifiableError(HuiWalterError):
    """The table cannot identify all parameters (e.g. a single population)."""


class NoSolutionError(HuiWalterError):
    """An estimator could not produce an estimate for this table."""

    status = "no-solution"


class EmptyPopulationError(NoSolutionError):
    pass


class ComplexDiscriminantError(NoSolutionError):
    pass


class ZeroDiscriminantError(NoSolutionError):
    pass


class DegenerateDenominatorError(NoSolutionError):
    pass


class ImplausibleSolutionError(NoSolutionError):
    """Neither root of the closed form lands inside the unit hypercube."""

    status = "implausible"

    def __init__(self, message, candidates=(), f_values=()):
        super().__init__(message)
        self.candidates = tuple(candidates)
        self.f_values = tuple(f_values)


class SingularInformationError(HuiWalterError):
    pass
