"""Exception hierarchy shared across the package."""


class InfluenceAuditError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(InfluenceAuditError, ValueError):
    """An array argument has the wrong dimension or length."""


class ConfigurationError(InfluenceAuditError, ValueError):
    """An option or combination of options is invalid."""


class EmptyDataError(InfluenceAuditError, ValueError):
    pass


class DataError(InfluenceAuditError, ValueError):
    """Non-finite or otherwise invalid values in a dataset."""


class IngestionError(InfluenceAuditError, ValueError):
    """A CSV file could not be parsed; carries the offending location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class InsufficientDataError(InfluenceAuditError, ValueError):
    pass


class UnsupportedTaskError(InfluenceAuditError, ValueError):
    pass


class DivergenceError(InfluenceAuditError, RuntimeError):
    """Training produced a non-finite cost."""

    def __init__(self, epoch, tag=None):
        where = f" ({tag})" if tag else ""
        super().__init__(f"training diverged at epoch {epoch}{where}")
        self.epoch = epoch
        self.tag = tag


class SingularCurvatureError(InfluenceAuditError, ArithmeticError):
    def __init__(self, min_eigenvalue):
        super().__init__(
            f"curvature matrix is singular (smallest eigenvalue {min_eigenvalue:.3e})"
        )
        self.min_eigenvalue = min_eigenvalue


class IndefiniteCurvatureError(InfluenceAuditError, ArithmeticError):
    """Conjugate gradients met a direction of non-positive curvature."""


class ScaleTooSmallError(InfluenceAuditError, ArithmeticError):
    """The LiSSA recursion is diverging; the scale must be increased."""


class TuningError(InfluenceAuditError, RuntimeError):
    def __init__(self, residuals):
        detail = ", ".join(f"{s:g}: {r:.3e}" for s, r in residuals.items())
        super().__init__(f"no LiSSA scale converged; residuals by scale: {detail}")
        self.residuals = residuals


class UndefinedCorrelationError(InfluenceAuditError, ValueError):
    pass


class TrialError(InfluenceAuditError, RuntimeError):
    """Wraps a failure inside one trial of an experiment."""

    def __init__(self, trial, tag, cause):
        super().__init__(f"trial {trial} failed in {tag}: {cause}")
        self.trial = trial
        self.tag = tag
        self.cause = cause
