"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementations in ``_kernels_py`` are used. Set
``ARTIFIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("ARTIFIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

sample_affine = _impl.sample_affine
winding_numbers = _impl.winding_numbers
closest_points = _impl.closest_points

__all__ = ["BACKEND", "sample_affine", "winding_numbers", "closest_points"]
