"""Exceptions raised by shrinkage_inverse"""


class ShrinkageError(Exception):
    """Base error; carries the process exit code used by the CLI"""
    exit_code = 1


class InputError(ShrinkageError):
    """Missing or unreadable input file"""
    exit_code = 2


class ValidationError(ShrinkageError):
    """Bad configuration or violated precondition"""
    exit_code = 3


class NumericalError(ShrinkageError):
    """A solver failed or a numerical safeguard was triggered"""
    exit_code = 4
