"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class ParseError(ValueError):
    """Raised when a data or config file is malformed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class UnsupportedModeError(RuntimeError):
    """Raised when an operation needs data that is not available (e.g. true labels)."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, epoch, batch, message):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")
