"""Recurrent units with learned cell, input, and hidden-state selection.

Submodules import lazily so the command line entry point can pin BLAS
thread counts before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "cli",
    "config",
    "kernels",
    "recurrent",
    "tasks",
    "training",
)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
