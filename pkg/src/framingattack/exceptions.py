class FormatError(ValueError):
    """A binary file (dataset, checkpoint or framing) could not be decoded."""

    def __init__(self, reason: str, path=None):
        self.reason = reason
        self.path = None if path is None else str(path)
        super().__init__(reason if path is None else f"{path}: {reason}")


class GeometryError(ValueError):
    """Framing geometry does not match the images or composition strategy it is used with."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
