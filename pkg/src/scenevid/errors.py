"""Exception hierarchy shared across the package."""


class ScenevidError(Exception):
    """Base class for all package errors."""


class ConfigError(ScenevidError, ValueError):
    """Invalid configuration (camera, schedule, trajectory kind, ...)."""


class ContractError(ScenevidError, ValueError):
    """A caller violated a function's shape or value preconditions."""


class NumericError(ScenevidError, ArithmeticError):
    """A denoiser produced non-finite output."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingError(NumericError):
    """Training diverged."""


class SceneParseError(ConfigError):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<scene>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.path = path


class DependencyError(ScenevidError):
    """An upstream stage artifact is missing or stale."""

    def __init__(self, message, command=None):
        super().__init__(message)
        self.command = command
