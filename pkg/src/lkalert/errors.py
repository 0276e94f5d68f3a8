"""Common error base class; concrete errors live next to the code that raises them."""


class LKAlertError(Exception):
    """Base class for all package errors. The CLI maps these to exit code 1."""
