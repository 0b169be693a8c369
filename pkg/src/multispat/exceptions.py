"""Exception hierarchy shared across the package."""


class InvalidGeometryError(ValueError):
    """A polygon or mesh violates its geometric invariants."""


class ParseError(ValueError):
    """A text input could not be parsed.

    ``line`` is the 1-based line number of the offending input, when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class StructuralError(ValueError):
    """Stacked data blocks do not line up."""


class AssemblyError(ValueError):
    """A latent model cannot be assembled from its effects and stack."""


class DataError(ValueError):
    """Observed data violate a model requirement (e.g. nonpositive exposure)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge.

    ``last`` holds the last iterate (or optimizer trace) for diagnostics.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
