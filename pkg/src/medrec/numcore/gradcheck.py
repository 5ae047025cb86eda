"""Finite-difference verification of tape gradients.

Central differences (f(x+h) - f(x-h)) / 2h on float64; every trainable layer
in the model package is expected to pass at max relative error < 1e-4.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tape, Tensor

BuildFn = Callable[[Tape, list[Tensor]], Tensor]


def _eval(build: BuildFn, arrays: list[np.ndarray]) -> float:
    tape = Tape(training=False, dtype=np.float64)
    tensors = [tape.tensor(a, requires_grad=True) for a in arrays]
    out = build(tape, tensors)
    val = float(out.data)
    if not np.isfinite(val):
        raise NonFiniteError("gradcheck: function returned non-finite value")
    return val


def gradcheck(build: BuildFn, points: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Compare tape gradients of a scalar-valued ``build`` against central
    finite differences at ``points``.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|,
    |numeric|).
    """
    arrays = [np.asarray(p, dtype=np.float64) for p in points]

    tape = Tape(training=False, dtype=np.float64)
    tensors = [tape.tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(tape, tensors)
    if out.data.ndim != 0 and out.data.size != 1:
        raise ShapeError("gradcheck: function must be scalar-valued")
    tape.backward(out)
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.copy()
                for a, t in zip(arrays, tensors)]

    max_err = 0.0
    for i, base in enumerate(arrays):
        flat = base.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = _eval(build, arrays)
            flat[j] = orig - h
            f_minus = _eval(build, arrays)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i].ravel()[j]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
