"""Shared test utilities, chiefly finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from textdet import tensor as T


def max_rel_err(make_loss: Callable[[], T.Tensor], tensors: Sequence[T.Tensor],
                h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``make_loss`` must rebuild the scalar loss from ``tensors`` on every call.
    Error per tensor is max |analytic - numeric| / max(|analytic|, |numeric|,
    1e-5), and the maximum over all tensors is returned. The 1e-5 floor sits
    above central-difference cancellation noise (about |loss| * eps / h) so
    genuinely zero gradients, like a key bias under softmax shift invariance,
    compare equal instead of dividing noise by noise.
    """
    for t in tensors:
        assert t.data.dtype == np.float64, "gradient checks run in 64-bit mode"
        t.grad = None
    T.backward(make_loss())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    worst = 0.0
    for t, ref in zip(tensors, analytic):
        numeric = np.zeros_like(t.data)
        for i in range(t.data.size):
            keep = t.data.flat[i]
            t.data.flat[i] = keep + h
            hi = float(make_loss().data)
            t.data.flat[i] = keep - h
            lo = float(make_loss().data)
            t.data.flat[i] = keep
            numeric.flat[i] = (hi - lo) / (2.0 * h)
        scale = max(float(np.abs(ref).max(initial=0.0)),
                    float(np.abs(numeric).max(initial=0.0)), 1e-5)
        worst = max(worst, float(np.abs(ref - numeric).max(initial=0.0)) / scale)
    return worst


def param_tensor(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True,
                    dtype=np.float64)


def fixed_projection(rng: np.random.Generator, shape) -> Callable[[T.Tensor], T.Tensor]:
    """Project to a scalar through one fixed random direction; catches
    permuted or misplaced gradient entries that a plain sum would miss.
    The direction is drawn once so repeated calls see the same loss."""
    r = rng.standard_normal(shape)

    def apply(out: T.Tensor) -> T.Tensor:
        return T.sum_all(T.mul(out, T.constant(r, like=out)))

    return apply


def to_float64(module) -> None:
    """Cast every parameter of an nn-style module in place."""
    for p in module.params("m").values():
        p.data = p.data.astype(np.float64)
