"""Backend selection for the simulation kernel.

The compiled extension is used when importable, unless ``LGK_BACKEND=python``
forces the pure-Python fallback.
"""

import os

from . import _kernel_py

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None

BACKENDS = {"python": _kernel_py}
if _kernel_c is not None:
    BACKENDS["cython"] = _kernel_c


def default_backend() -> str:
    forced = os.environ.get("LGK_BACKEND")
    if forced:
        if forced not in BACKENDS:
            raise ValueError(f"LGK_BACKEND={forced!r} unavailable; have {sorted(BACKENDS)}")
        return forced
    return "cython" if "cython" in BACKENDS else "python"


def get_kernel(name: str | None = None):
    return BACKENDS[name or default_backend()]
