"""Exception hierarchy shared by all colonforest modules."""


class ColonForestError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ColonForestError, ValueError):
    pass


class DegenerateGeometryError(ColonForestError, ArithmeticError):
    """Raised when a point configuration cannot define a rigid alignment.

    ``iteration`` is set when the failure happened inside ICP, ``frame``
    when it happened while processing a stream of shapes.
    """

    def __init__(self, message, iteration=None, frame=None):
        super().__init__(message)
        self.iteration = iteration
        self.frame = frame

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.frame is not None:
            where.append(f"frame {self.frame}")
        if self.iteration is not None:
            where.append(f"ICP iteration {self.iteration}")
        return f"{msg} ({', '.join(where)})" if where else msg


class ParseError(ColonForestError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedVersionError(ParseError):
    pass


class StructuralIntegrityError(ParseError):
    """A model file whose node lists do not describe valid trees."""


class ConfigError(ColonForestError):
    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
