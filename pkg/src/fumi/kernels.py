"""Hot-loop kernels, compiled when the extension is built.

``BACKEND`` is ``"cython"`` when :mod:`fumi._kernels` imports and ``"python"``
otherwise.  Setting ``FUMI_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _fallback

if os.environ.get("FUMI_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    project_simplex_columns = _compiled.project_simplex_columns
    woodbury_combine = _compiled.woodbury_combine
else:
    BACKEND = "python"
    project_simplex_columns = _fallback.project_simplex_columns
    woodbury_combine = _fallback.woodbury_combine

__all__ = ["BACKEND", "project_simplex_columns", "woodbury_combine"]
