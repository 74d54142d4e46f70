"""Finite-difference gradient checking.

The reference derivative is a central difference computed in float64.  The
reported figure for each checked tensor is

    max over elements of |analytic - numeric| / (|numeric| + 1e-8)

so callers can assert a single threshold per tensor.  ``component_limit``
caps how many elements of each tensor are probed (chosen by the supplied
rng); exhaustive checking is the default.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional

import numpy as np

from .tensor import Tensor


def numeric_grad_entry(loss_fn: Callable[[], Tensor], t: Tensor, flat_index: int,
                       eps: float) -> float:
    flat = t.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + eps
    hi = float(loss_fn().data)
    flat[flat_index] = orig - eps
    lo = float(loss_fn().data)
    flat[flat_index] = orig
    return (hi - lo) / (2.0 * eps)


def max_rel_error(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    eps: float = 1e-5,
    component_limit: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    zero_floor: float = 1e-9,
) -> Dict[str, float]:
    """Compare analytic grads of loss_fn against central differences.

    loss_fn must rebuild the graph on every call (define-by-run), reading the
    current contents of the tensors in ``tensors``.  All of them should be
    float64 for the stated tolerances to be meaningful.

    When analytic and numeric values both fall below ``zero_floor`` they are
    counted as agreeing on an exact zero.  Without this, analytically
    invariant directions (e.g. a bias that a downstream softmax cancels) would
    compare two flavours of roundoff noise against the 1e-8 denominator floor.
    """
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, t in tensors.items():
        if t.grad is None:
            analytic[name] = np.zeros_like(t.data)
        else:
            analytic[name] = t.grad.copy()

    errors = {}
    for name, t in tensors.items():
        n = t.data.size
        if component_limit is not None and component_limit < n:
            if rng is None:
                raise ValueError("component_limit set but no rng supplied")
            picks = rng.choice(n, size=component_limit, replace=False)
        else:
            picks = range(n)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in picks:
            num = numeric_grad_entry(loss_fn, t, int(i), eps)
            a = a_flat[int(i)]
            if abs(a) < zero_floor and abs(num) < zero_floor:
                continue
            rel = abs(a - num) / (abs(num) + 1e-8)
            worst = max(worst, rel)
        errors[name] = worst
    return errors
