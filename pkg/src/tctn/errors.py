"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class ConfigurationError(ValueError):
    """Invalid hyperparameter, argument, or run configuration."""


class NumericError(ArithmeticError):
    """A forward or backward pass produced non-finite values."""


class DataFormatError(ValueError):
    """A file does not conform to its declared binary format."""


class OracleError(RuntimeError):
    """A verification oracle was used outside its validity conditions."""
