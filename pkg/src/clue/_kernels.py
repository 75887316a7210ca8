"""Pick the tree kernels at import time.

The compiled ``_ctree`` extension is preferred; setting ``CLUE_PURE_PYTHON=1``
or a missing build falls back to the numpy kernels in ``_pytree``.
"""

import os
from types import SimpleNamespace

from . import _pytree

python_kernels = SimpleNamespace(name="python", best_split=_pytree.best_split, predict_forest=_pytree.predict_forest)

try:
    from . import _ctree
except ImportError:  # extension not built
    compiled_kernels = None
else:
    compiled_kernels = SimpleNamespace(name="cython", best_split=_ctree.best_split, predict_forest=_ctree.predict_forest)

if compiled_kernels is not None and os.environ.get("CLUE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    active = compiled_kernels
else:
    active = python_kernels

BACKEND = active.name


def get_kernels(name: str | None = None) -> SimpleNamespace:
    """Kernel namespace by name ("cython" or "python"); ``None`` gives the active one."""
    if name is None:
        return active
    if name == "python":
        return python_kernels
    if name == "cython":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not available; reinstall with a C compiler")
        return compiled_kernels
    raise ValueError(f"unknown kernel backend {name!r}")
