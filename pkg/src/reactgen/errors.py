"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, file/parse errors -> 3,
numeric/training failures -> 4.
"""


class ReactgenError(Exception):
    pass


class ContractError(ReactgenError, ValueError):
    """A caller violated an operation's precondition (shapes, ranges, ...)."""


class ConfigError(ReactgenError, ValueError):
    """Invalid or inconsistent run configuration."""


class MotionIOError(ReactgenError, IOError):
    """Malformed motion or record file; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(ReactgenError, IOError):
    """Corrupt checkpoint file (bad magic, truncation, checksum mismatch)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointMismatchError(ReactgenError, ValueError):
    """Checkpoint is well-formed but incompatible with the requested config."""


class TrainingError(ReactgenError, RuntimeError):
    """Training diverged or produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
