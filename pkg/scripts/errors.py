"""
Exception and warning types shared by every module.

Each error carries a short `category` string; the command-line front end
prints it as `error [<category>]: <message>` and exits with status 1.
"""


class ClvError(Exception):
    """Base class for all toolkit failures."""

    category = "error"


class DomainError(ClvError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    category = "domain"


class InputError(ClvError, ValueError):
    """Malformed or inconsistent input data."""

    category = "input"


class FormatError(InputError):
    """Input text is missing required columns or is not parseable."""

    category = "format"


class DuplicateIdError(InputError):
    category = "duplicate-id"

    def __init__(self, transaction_id):
        self.transaction_id = transaction_id
        super().__init__(f"Duplicate transaction_id: {transaction_id!r}")


class NumericError(ClvError, ArithmeticError):
    """A numerical routine failed (non-finite values, series non-convergence)."""

    category = "numeric"

    def __init__(self, message, terms=None):
        self.terms = terms
        super().__init__(message)


class FitError(ClvError, RuntimeError):
    """Maximum-likelihood fit failed; `best_params` holds the best point found, if any."""

    category = "fit"

    def __init__(self, message, best_params=None):
        self.best_params = best_params
        super().__init__(message)


class NumericWarning(UserWarning):
    pass


class CorrelationWarning(UserWarning):
    pass
