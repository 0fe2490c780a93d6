"""Central finite-difference gradients, used to validate the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tape, Tensor, backward, no_record


def numerical_grad(f: Callable[[], float], param: Tensor, h: float = 1e-5,
                   indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param.data`` in place.

    Only the entries in ``indices`` are computed when given (others left 0).
    """
    grad = np.zeros_like(param.data)
    it = indices if indices is not None else list(np.ndindex(param.shape))
    for idx in it:
        old = param.data[idx]
        param.data[idx] = old + h
        fp = f()
        param.data[idx] = old - h
        fm = f()
        param.data[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), taken elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, seed: int = 0,
                    floor: float = 1e-6) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` must rebuild the scalar output from ``params`` on each call.  With
    ``max_entries`` a seeded random subset of each parameter's entries is
    probed instead of all of them.
    """
    with Tape() as tape:
        out = fn()
    grads = backward(tape, out, leaves=params)

    def scalar():
        with no_record():
            return float(fn().data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        all_idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            idx = [all_idx[i] for i in sorted(pick)]
        else:
            idx = all_idx
        num = numerical_grad(scalar, p, h=h, indices=idx)
        sel = tuple(np.array(idx).T) if idx else ()
        ana = grads[p][sel] if idx else np.zeros(0)
        worst = max(worst, relative_error(ana, num[sel] if idx else np.zeros(0), floor=floor))
    return worst
