"""Kernel backend selection.

The hot numeric kernels exist twice: a numba @njit build and a pure-numpy
fallback. The PROPSHIELD_BACKEND environment variable picks one ("numba"
or "numpy"); unset, numba is used when importable. Both expose the same
functions, so everything above this package is backend-agnostic.
"""

import os

_choice = os.environ.get("PROPSHIELD_BACKEND", "").strip().lower()
if _choice not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"PROPSHIELD_BACKEND must be 'numba' or 'numpy', got {_choice!r}"
    )

if _choice in ("", "numba"):
    try:
        from .numba_backend import (  # noqa: F401
            forward, grad_loss, grad_inputs, vjp_probs, hvp, sgd_epoch,
            layer_offsets, LOG_CLAMP,
        )
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from .numpy_backend import (  # noqa: F401
            forward, grad_loss, grad_inputs, vjp_probs, hvp, sgd_epoch,
            layer_offsets, LOG_CLAMP,
        )
        BACKEND = "numpy"
else:
    from .numpy_backend import (  # noqa: F401
        forward, grad_loss, grad_inputs, vjp_probs, hvp, sgd_epoch,
        layer_offsets, LOG_CLAMP,
    )
    BACKEND = "numpy"
