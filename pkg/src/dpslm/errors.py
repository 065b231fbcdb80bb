"""Exception hierarchy. Every error carries a machine-readable ``category``."""


class DpslmError(Exception):
    category = "error"

    def __init__(self, message, category=None):
        super().__init__(message)
        if category is not None:
            self.category = category


class FormatError(DpslmError):
    """A file could not be parsed (bad magic, truncated payload, bad JSON, ...)."""

    category = "format"


class ValidationError(DpslmError):
    """A value violates a type invariant."""

    category = "invalid"


class ConfigError(DpslmError):
    category = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(DpslmError):
    """Inputs are well-formed but cannot support the requested computation."""

    category = "data"
