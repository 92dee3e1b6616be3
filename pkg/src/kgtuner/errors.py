"""Exception types raised across the package."""


class KGTunerError(Exception):
    """Base class for all package errors."""


class ParseError(KGTunerError):
    """A triple file contains a malformed line."""

    def __init__(self, path, line_number, line):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{self.path}:{line_number}: expected 3 tab-separated tokens, got {line!r}")


class InvalidDatasetError(KGTunerError):
    pass


class EmptySubgraphError(KGTunerError):
    pass


class UnsupportedModelError(KGTunerError):
    pass


class UnsupportedCombinationError(KGTunerError):
    pass


class ConfigValidationError(KGTunerError):
    """Raised when a configuration fails validation; carries every violation."""

    def __init__(self, violations):
        self.violations = list(violations)
        text = [f"{v['name']}: {v['message']}" if isinstance(v, dict) else str(v) for v in self.violations]
        super().__init__("; ".join(text))


class TrialDivergence(KGTunerError):
    """Non-finite loss or gradient encountered during training."""

    def __init__(self, batch_index, what="gradient"):
        self.batch_index = batch_index
        super().__init__(f"non-finite {what} at batch {batch_index}")


class StageFailure(KGTunerError):
    pass
