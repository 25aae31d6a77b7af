"""Exception types shared across the package."""


class QsdlabError(Exception):
    """Base class for package errors."""


class ConfigError(QsdlabError):
    """Invalid or incomplete experiment configuration."""


class NumericError(QsdlabError):
    """A numerical routine failed or produced unusable output."""
