"""Hot numeric kernels with a numba and a pure-numpy lane.

The active lane is chosen once at import via tctn.backend (TCTN_BACKEND
environment variable). Both lanes implement identical contracts; see
numpy_impl for the reference semantics.
"""

from ..backend import BACKEND

if BACKEND == "numba":
    from .numba_impl import (
        attn_grad_pv,
        attn_grad_qk,
        attn_output,
        attn_probs,
        conv3d_forward,
        conv3d_grad_input,
        conv3d_grad_kernel,
    )
else:
    from .numpy_impl import (
        attn_grad_pv,
        attn_grad_qk,
        attn_output,
        attn_probs,
        conv3d_forward,
        conv3d_grad_input,
        conv3d_grad_kernel,
    )

__all__ = [
    "attn_grad_pv",
    "attn_grad_qk",
    "attn_output",
    "attn_probs",
    "conv3d_forward",
    "conv3d_grad_input",
    "conv3d_grad_kernel",
]
