"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy versions in ``_fallback`` are used. Set ``SEDS_KERNELS=python`` to force
the fallback or ``SEDS_KERNELS=compiled`` to fail loudly when the extension is
missing.
"""

import os

from . import _fallback

_choice = os.environ.get("SEDS_KERNELS", "auto").lower()

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backends():
    """Map of available backend name -> kernel module."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def interp_gather_forward(seq, pos, length):
    return _impl.interp_gather_forward(seq, pos, length)


def interp_gather_backward(seq, pos, length, grad_out):
    return _impl.interp_gather_backward(seq, pos, length, grad_out)


def fine_grained_forward(sim, clip_mask, word_mask):
    return _impl.fine_grained_forward(sim, clip_mask, word_mask)


def fine_grained_backward(sim, clip_mask, word_mask, cache, grad_scores):
    return _impl.fine_grained_backward(sim, clip_mask, word_mask, cache, grad_scores)
