"""Kernel backend selection.

The hot inner loops (3D temporal convolution, temporal attention) exist in
two implementations: numba @njit loops and vectorized pure numpy. The
``TCTN_BACKEND`` environment variable picks one at import time:

    TCTN_BACKEND=numba   force numba (error if numba is missing)
    TCTN_BACKEND=numpy   force the pure-numpy fallback
    unset                numba when importable, numpy otherwise
"""

import os

from .errors import ConfigurationError

_ENV_VAR = "TCTN_BACKEND"


def _detect() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ConfigurationError(
            f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        if choice == "numba":
            raise ConfigurationError(
                f"{_ENV_VAR}=numba requested but numba is not importable"
            ) from None
        return "numpy"


BACKEND: str = _detect()


def backend_name() -> str:
    """Active kernel backend, 'numba' or 'numpy'."""
    return BACKEND
