"""Kernel backend selection: numpy reference or the compiled extension.

The env var ICC_KERNELS picks the backend at import time: "python" forces
the reference, "compiled" requires icclab._core, anything else ("auto",
unset) prefers the extension when present. `use_backend` rebinds at
runtime; call sites must access kernels through this module namespace
(`kernels.causal_softmax(...)`) so the rebinding takes effect.
"""

from __future__ import annotations

import os

from . import reference
from .reference import LN_EPS  # numeric constant shared by both backends

_EXPORTED = (
    "causal_softmax",
    "causal_softmax_backward",
    "layernorm_forward",
    "layernorm_backward",
    "gelu_forward",
    "gelu_backward",
)

_backends = {"python": reference}
try:
    from icclab import _core as _compiled

    _backends["compiled"] = _compiled
except ImportError:
    _compiled = None

_active = "python"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_backends))


def active_backend() -> str:
    return _active


def use_backend(name: str) -> str:
    """Bind the module-level kernel functions to one backend; returns its name."""
    global _active
    if name not in _backends:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    mod = _backends[name]
    for fn in _EXPORTED:
        globals()[fn] = getattr(mod, fn)
    _active = name
    return name


_requested = os.environ.get("ICC_KERNELS", "auto").lower()
if _requested == "auto":
    use_backend("compiled" if "compiled" in _backends else "python")
elif _requested in ("python", "compiled"):
    use_backend(_requested)  # raises for "compiled" when the ext is missing
else:
    raise ValueError(f"ICC_KERNELS must be 'python', 'compiled', or 'auto', got {_requested!r}")
