"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the pipeline copies
into ``report.json`` when a run aborts.
"""


class BranchlineError(Exception):
    code = "error"


class InvalidArgument(BranchlineError, ValueError):
    code = "invalid-argument"


class DegenerateInterval(BranchlineError, ValueError):
    code = "degenerate-interval"


class InvalidData(BranchlineError, ValueError):
    code = "invalid-data"


class RangeError(BranchlineError, ValueError):
    code = "range-error"


class PlanInvalid(BranchlineError, ValueError):
    code = "plan-invalid"


class InvalidInput(BranchlineError, ValueError):
    code = "invalid-input"


class InvalidProblem(BranchlineError, ValueError):
    code = "invalid-problem"


class PreconditionError(BranchlineError, ValueError):
    code = "precondition"


class DisconnectedStructure(BranchlineError, ValueError):
    code = "disconnected-structure"


class ConfigError(BranchlineError, ValueError):
    code = "config-error"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataFileError(BranchlineError, OSError):
    code = "io-error"

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
