"""Defines the exceptions used in the copulapde package."""


class CopulaPDEException(Exception):
    """copulapde root exception class."""

    def __str__(self):
        """Return the exception's class name."""
        retval = super(CopulaPDEException, self).__str__()
        return retval or self.__class__.__name__


class ConfigError(CopulaPDEException):
    """Invalid configuration value, from a file or the command line."""


class ContractError(CopulaPDEException):
    """A precondition of an operation does not hold."""


class DomainError(ContractError):
    """A math function received a value outside of its domain."""


class NumericError(CopulaPDEException):
    """A computation produced a non-finite or undefined value."""


class DataError(CopulaPDEException):
    """Input data cannot be used as requested."""
