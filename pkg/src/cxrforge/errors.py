from __future__ import annotations


class ForgeError(Exception):
    """Base class for errors raised by cxrforge."""

    exit_code = 2


class InputError(ForgeError, ValueError):
    """An argument violates an operation's precondition."""


class FormatError(ForgeError, ValueError):
    """A source file or encoded value is malformed."""

    def __init__(self, reason: str, path: str | None = None, line: int | None = None) -> None:
        self.reason = reason
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{reason}")


class UnknownDatasetError(ForgeError, KeyError):
    def __str__(self) -> str:
        return f"no adapter registered for dataset {self.args[0]!r}"


class DuplicateRecordError(ForgeError):
    pass


class ConversationError(ForgeError):
    """A record cannot be rendered with the requested task template."""


class LabelerError(ForgeError):
    pass


class MixtureError(ForgeError):
    pass


class ConfigError(ForgeError):
    pass


class ValidationFailed(ForgeError):
    exit_code = 1
