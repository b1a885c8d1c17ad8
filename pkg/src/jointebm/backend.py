"""Kernel backend selection.

Tries the compiled extension first and falls back to the pure-NumPy kernels.
``JOINTEBM_BACKEND=python`` forces the fallback, ``JOINTEBM_BACKEND=compiled``
insists on the extension (raising if it is missing). Both backends expose the
same three functions with identical semantics.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_FORCE = os.environ.get("JOINTEBM_BACKEND", "").strip().lower()
if _FORCE not in ("", "python", "compiled"):
    raise RuntimeError(f"JOINTEBM_BACKEND must be 'python' or 'compiled', got {_FORCE!r}")

_compiled = None
if _FORCE != "python":
    try:
        from . import _speedups as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
if _FORCE == "compiled" and _compiled is None:
    raise ImportError("JOINTEBM_BACKEND=compiled but the compiled extension is not available")

_active = _compiled if _compiled is not None else _kernels_py


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def has_compiled() -> bool:
    return _compiled is not None


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel extension is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _as_c(x, dtype=np.float64):
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not arr.flags.writeable:  # broadcast views are read-only; kernels take buffers
        arr = arr.copy()
    return arr


def mlp_logits(ws, bs, x):
    return _active.mlp_logits([_as_c(w) for w in ws], [_as_c(b) for b in bs], _as_c(x))


def joint_energy_grad(ws, bs, x, y):
    return _active.joint_energy_grad(
        [_as_c(w) for w in ws], [_as_c(b) for b in bs], _as_c(x), _as_c(y, np.int64)
    )


def semicond_energy_grad(ws, bs, x, cond_idx, cond_val):
    return _active.semicond_energy_grad(
        [_as_c(w) for w in ws],
        [_as_c(b) for b in bs],
        _as_c(x),
        _as_c(cond_idx, np.int64),
        _as_c(cond_val, np.int64),
    )
