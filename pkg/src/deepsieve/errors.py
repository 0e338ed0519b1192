"""Exception and warning types raised across the package."""


class SieveError(Exception):
    """Base class for all errors raised by deepsieve."""


class EmptySequenceSet(SieveError):
    pass


class DatasetValidationError(SieveError):
    """Raised when input rows violate the record invariants.

    ``problems`` holds one ``(row_id, message)`` pair per violation.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"row {rid}: {msg}" for rid, msg in self.problems]
        super().__init__("invalid dataset:\n  " + "\n  ".join(lines))


class DomainError(SieveError, ValueError):
    pass


class InsufficientCell(SieveError):
    pass


class NoEndpointData(SieveError):
    pass


class MissingPrior(SieveError):
    pass


class InternalError(SieveError):
    pass


class NoEventsForType(SieveError):
    pass


class SingularInformation(SieveError):
    pass


class DegenerateVariance(SieveError):
    pass


class DegenerateMissingness(SieveError):
    pass


class MissingArmData(SieveError):
    pass


class ConfigError(SieveError):
    pass


class SieveWarning(UserWarning):
    """Base class for recoverable conditions; the CLI maps these to exit code 2."""


class BoundaryFit(SieveWarning):
    pass


class ConvergenceWarning(SieveWarning):
    pass


class PriorFallbackWarning(SieveWarning):
    pass


class SeparationWarning(SieveWarning):
    pass


class SmallEventMassWarning(SieveWarning):
    pass


class PseudoInverseWarning(SieveWarning):
    pass


class BootstrapUnstable(SieveWarning):
    pass


class FlooredWeightsWarning(SieveWarning):
    pass


class DegenerateTable(SieveWarning):
    pass


class ImpossibleTruncation(SieveError):
    pass
