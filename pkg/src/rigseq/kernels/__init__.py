"""Kernel backend selection.

Two interchangeable implementations exist: a compiled Cython extension
(``_core``) and a pure numpy fallback (``_numpy``). The environment
variable RIGSEQ_BACKEND picks one at import time ("compiled", "numpy",
or "auto"; auto prefers compiled and silently falls back). Callers must
access kernels as attributes of this module (``kernels.sigmoid``) so
that ``use_backend`` rebinding is visible everywhere.
"""

import os

from . import _numpy

_FUNCS = (
    "sigmoid",
    "sigmoid_grad",
    "tanh",
    "tanh_grad",
    "softmax_rows",
    "softmax_rows_grad",
    "lstm_point_fwd",
    "lstm_point_bwd",
    "topk_rows",
    "adam_update",
)

backend_name = "numpy"


def _compiled_module():
    from . import _core

    return _core


def use_backend(name):
    """Bind the named backend ("numpy" or "compiled") into this module.

    Returns the backend name actually bound. Raises ImportError if the
    compiled extension is requested but absent.
    """
    global backend_name
    if name == "numpy":
        mod = _numpy
    elif name == "compiled":
        mod = _compiled_module()
    else:
        raise ValueError(
            f"unknown kernel backend {name!r}: expected 'numpy', 'compiled', or 'auto'"
        )
    here = globals()
    for fn in _FUNCS:
        here[fn] = getattr(mod, fn)
    backend_name = mod.BACKEND_NAME
    return backend_name


def available_backends():
    names = ["numpy"]
    try:
        _compiled_module()
    except ImportError:
        pass
    else:
        names.append("compiled")
    return names


_requested = os.environ.get("RIGSEQ_BACKEND", "auto")
if _requested == "auto":
    try:
        use_backend("compiled")
    except ImportError:
        use_backend("numpy")
else:
    use_backend(_requested)
