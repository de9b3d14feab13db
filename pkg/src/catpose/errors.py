"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class DegenerateConfigurationError(InvalidInputError):
    """Point configuration is rank deficient (collinear, coincident, zero extent)."""


class ParseError(InvalidInputError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class FitFailureError(RuntimeError):
    """RANSAC found no hypothesis with enough inliers. ``best`` holds the best attempt."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
