"""Kernel selection: compiled ``_core`` when importable, else ``_pycore``.

Set ``FABREG_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("FABREG_PURE_PYTHON"):
    from . import _pycore as kernels
else:
    try:
        from . import _core as kernels
    except ImportError:
        from . import _pycore as kernels

BACKEND = "compiled" if kernels.__name__.endswith("_core") else "python"
