"""Exception types shared across the package.

Each maps to a distinct CLI exit code so batch callers can tell data
problems apart from contract misuse and training failures.
"""


class TkgError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ParseError(TkgError):
    """A dataset file line could not be parsed."""

    exit_code = 2

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line_number is not None:
                prefix += f"{line_number}:"
            prefix += " "
        super().__init__(prefix + message)


class ContractViolation(TkgError):
    """An operation was called outside its documented contract."""

    exit_code = 3


class TrainingDiverged(TkgError):
    """Loss became non-finite during optimization."""

    exit_code = 4
