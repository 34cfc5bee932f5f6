"""Exception hierarchy shared by every module."""


class BSPDELabError(Exception):
    """Base class for all errors raised by the package."""


class UsageError(BSPDELabError, ValueError):
    """Bad arguments: shape mismatch, out-of-range parameter, wrong level."""


class ResourceLimitError(BSPDELabError):
    """A configured storage cap would be exceeded."""


class ConfigurationError(BSPDELabError):
    """A numerical precondition on the problem setup does not hold."""


class DataError(BSPDELabError, ValueError):
    """Input data are not finite."""


class UnsupportedConfigurationError(BSPDELabError):
    """The requested problem lies outside what the method covers."""


class ConfigFileError(ConfigurationError):
    """An experiment config is malformed; the message names the file, line and field."""
