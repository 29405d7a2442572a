"""Exception hierarchy shared by all ambical modules."""


class AmbicalError(Exception):
    """Base class for every error raised by ambical."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class InputError(AmbicalError, ValueError):
    kind = "input_error"


class DomainError(AmbicalError, ValueError):
    kind = "domain_error"


class OptimizationError(AmbicalError, RuntimeError):
    """Raised when an objective or gradient becomes non-finite.

    ``where`` carries the offending temperature (scalar search) or the
    iteration index (vector search).
    """

    kind = "optimization_error"

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where

    def to_dict(self):
        out = super().to_dict()
        out["where"] = self.where
        return out


class LoadError(AmbicalError, ValueError):
    kind = "load_error"

    def __init__(self, message, line=None, record_id=None):
        super().__init__(message)
        self.line = line
        self.record_id = record_id

    def __str__(self):
        msg = super().__str__()
        if self.line is not None:
            msg = f"line {self.line}: {msg}"
        return msg

    def to_dict(self):
        out = super().to_dict()
        out["line"] = self.line
        out["record_id"] = self.record_id
        return out


class SplitError(AmbicalError, ValueError):
    kind = "split_error"


class TrainingError(AmbicalError, RuntimeError):
    kind = "training_error"
