"""Exception hierarchy shared across the package.

Everything raised on bad data or bad models derives from :class:`WigError`,
which lets the command line map failures to stable exit codes.
"""


class WigError(Exception):
    """Base class for data, model and configuration failures."""


class ShapeError(WigError, ValueError):
    pass


class NonFiniteError(WigError, ValueError):
    pass


class FormatError(WigError, ValueError):
    """A file could not be parsed; the message names the offending field."""


class TrainingDivergedError(WigError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class ConfigError(WigError, ValueError):
    pass


class DegenerateError(WigError, ValueError):
    pass
