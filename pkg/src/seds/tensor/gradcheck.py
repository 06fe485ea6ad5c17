"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, default_dtype


@dataclass
class GradcheckResult:
    max_rel_err: float
    n_checked: int
    passed: bool
    n_refined: int = 0


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6, idx=None) -> np.ndarray:
    """d fn() / d x by central differences (only at ``idx`` if given)."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = float(fn().data)
        flat[i] = old - eps
        fm = float(fn().data)
        flat[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-5,
    eps: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    noise_factor: float = 10.0,
) -> GradcheckResult:
    """Compare backward() gradients of the scalar ``fn()`` against finite differences.

    Inputs must be float64. Central differences carry a roundoff error of
    about ``machine_eps * |f| / eps``; call that (times ``noise_factor``) the
    noise level. Entries large enough for the noise to stay below ``tol``
    relative are checked entrywise against ``tol``; smaller entries must match
    to within the noise level. The norm-wise relative error of each input's
    whole gradient must also be below ``tol``. The reported error is the worst
    of the entrywise and norm-wise relative errors.

    An entry that fails at step ``eps`` is re-measured at eps/10 and eps/100.
    A step that straddles a kink (ReLU, clip, wrap) gives a biased difference
    that disappears as the step shrinks, while a wrong gradient stays wrong.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("gradcheck requires float64 inputs")
        x.grad = None
    with default_dtype(np.float64):
        out = fn()
        out.backward()
        noise = noise_factor * np.finfo(np.float64).eps * max(1.0, abs(float(out.data))) / eps
        worst, n, refined = 0.0, 0, 0
        for x in inputs:
            analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
            size = x.size
            if max_entries is not None and size > max_entries:
                rng = rng or np.random.default_rng(0)
                idx = np.sort(rng.choice(size, max_entries, replace=False))
            else:
                idx = np.arange(size)
            numeric = numerical_grad(fn, x, eps, idx).reshape(-1)[idx]
            a = analytic.reshape(-1)[idx]
            bad = _failing(a, numeric, tol, noise)
            for k in np.flatnonzero(bad):
                for shrink in (10.0, 100.0):
                    h = eps / shrink
                    num_k = numerical_grad(fn, x, h, [idx[k]]).reshape(-1)[idx[k]]
                    if not _failing(a[k:k + 1], np.array([num_k]), tol, noise * shrink)[0]:
                        numeric[k] = a[k] if abs(a[k] - num_k) <= noise * shrink else num_k
                        refined += 1
                        break
            diff = np.abs(a - numeric)
            resolvable = np.maximum(np.abs(a), np.abs(numeric)) >= noise / tol
            if np.any(diff[~resolvable] > noise):
                return GradcheckResult(float("inf"), n + len(idx), False, refined)
            entry = rel_error(a[resolvable], numeric[resolvable])
            scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
            normwise = float(np.linalg.norm(a - numeric) / scale) if scale > noise else 0.0
            worst = max(worst, float(entry.max(initial=0.0)), normwise)
            n += len(idx)
    return GradcheckResult(worst, n, worst < tol, refined)


def _failing(a: np.ndarray, numeric: np.ndarray, tol: float, noise: float) -> np.ndarray:
    diff = np.abs(a - numeric)
    big = np.maximum(np.abs(a), np.abs(numeric)) >= noise / tol
    return np.where(big, diff > tol * np.maximum(np.abs(a), np.abs(numeric)), diff > noise)
