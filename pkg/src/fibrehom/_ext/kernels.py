"""Element-loop kernels: compiled extension when built, numpy otherwise.

Set ``FIBREHOM_PURE_PYTHON=1`` to force the fallback.
"""
import os

BACKEND = "python"
if os.environ.get("FIBREHOM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from fibrehom._ext._kernels import (periodic_tridiag_apply, seg_bloch_entries,
                                            tri_bloch_entries)
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass
if BACKEND == "python":
    from fibrehom._ext._kernels_py import (periodic_tridiag_apply, seg_bloch_entries,
                                           tri_bloch_entries)

__all__ = ["BACKEND", "periodic_tridiag_apply", "seg_bloch_entries", "tri_bloch_entries"]
