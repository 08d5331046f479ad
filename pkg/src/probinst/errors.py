"""Error classes with stable codes, used by the CLI for machine-readable failures."""


class ProbinstError(Exception):
    code = "E_PROBINST"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        return {"error": self.code, "message": str(self), **self.details}


class ShapeMismatchError(ProbinstError, ValueError):
    code = "E_SHAPE"


class NpyFormatError(ProbinstError, ValueError):
    """Raised for malformed array files. ``field`` names the offending header entry."""

    code = "E_NPY_FORMAT"

    def __init__(self, message, field):
        super().__init__(message, field=field)
        self.field = field


class ConfigError(ProbinstError, ValueError):
    code = "E_CONFIG"


class MissingInputError(ProbinstError, FileNotFoundError):
    code = "E_MISSING"


class EmptyInputError(ProbinstError, ValueError):
    code = "E_EMPTY"
