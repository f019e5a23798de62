"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; ``DRIFTIO_PURE_PYTHON=1``
forces the pure-Python fallback.
"""
import os

from . import _fallback

if os.environ.get("DRIFTIO_PURE_PYTHON", "") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

project_polytope = _impl.project_polytope
pgd_quadratic = _impl.pgd_quadratic
nnls = _impl.nnls
kkt_batch = _impl.kkt_batch

__all__ = ["BACKEND", "project_polytope", "pgd_quadratic", "nnls", "kkt_batch"]
