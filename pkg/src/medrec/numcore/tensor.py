"""Dense-tensor core with tape-based reverse-mode automatic differentiation.

A :class:`Tape` records every operation in execution order, so the op list is
already topologically sorted; :meth:`Tape.backward` walks it once in reverse.
Training runs in float32, gradient checks in float64 (pass ``dtype``).
Tapes are single-threaded; tensors are immutable once recorded.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class DetachedGraphError(ValueError):
    """backward() was called on a tensor the tape never produced."""


class Tensor:
    """A dense array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], None]):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tape:
    """Records ops for one forward pass and replays them backwards.

    ``training`` gates dropout; ``rng`` drives dropout masks so a seeded tape
    is fully reproducible.
    """

    def __init__(self, training: bool = False, dtype=np.float32,
                 rng: np.random.Generator | None = None):
        self.nodes: list[_Node] = []
        self.training = training
        self.dtype = np.dtype(dtype)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._produced: set[int] = set()

    # ------------------------------------------------------------------ core

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        arr = np.asarray(data, dtype=self.dtype)
        t = Tensor(arr, requires_grad=requires_grad)
        self._produced.add(id(t))
        return t

    def constant(self, data) -> Tensor:
        return self.tensor(data, requires_grad=False)

    def _record(self, kind: str, out_data: np.ndarray,
                inputs: tuple[Tensor, ...],
                backward: Callable[[np.ndarray], None]) -> Tensor:
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError(f"{kind} produced non-finite values")
        out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
        self._produced.add(id(out))
        self.nodes.append(_Node(out, inputs, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and accumulate gradients for every
        requires_grad tensor reachable from ``loss``."""
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced or not loss.requires_grad:
            raise DetachedGraphError("loss is not attached to this tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.out.grad is not None and node.out.requires_grad:
                node.backward(node.out.grad)

    # ------------------------------------------------------- elementwise ops

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
        return self._record("add", a.data + b.data, (a, b), bwd)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"sub: {a.shape} vs {b.shape}")
        def bwd(g):
            _accum(a, g)
            _accum(b, -g)
        return self._record("sub", a.data - b.data, (a, b), bwd)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}")
        def bwd(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        return self._record("mul", a.data * b.data, (a, b), bwd)

    def add_scalar(self, a: Tensor, c: float) -> Tensor:
        def bwd(g):
            _accum(a, g)
        return self._record("add_scalar", a.data + self.dtype.type(c), (a,), bwd)

    def mul_scalar(self, a: Tensor, c: float) -> Tensor:
        c = self.dtype.type(c)
        def bwd(g):
            _accum(a, g * c)
        return self._record("mul_scalar", a.data * c, (a,), bwd)

    def scale(self, a: Tensor, s: Tensor) -> Tensor:
        """Multiply ``a`` elementwise by a scalar tensor ``s`` (learnable)."""
        if s.data.size != 1:
            raise ShapeError(f"scale: scalar expected, got shape {s.shape}")
        def bwd(g):
            _accum(a, g * s.data)
            _accum(s, np.sum(g * a.data).reshape(s.shape))
        return self._record("scale", a.data * s.data, (a, s), bwd)

    def reciprocal(self, a: Tensor) -> Tensor:
        out = 1.0 / a.data
        def bwd(g):
            _accum(a, -g * out * out)
        return self._record("reciprocal", out, (a,), bwd)

    def clip_min(self, a: Tensor, c: float) -> Tensor:
        """max(a, c) elementwise; subgradient 0 where a <= c."""
        mask = a.data > c
        def bwd(g):
            _accum(a, g * mask)
        return self._record("clip_min", np.maximum(a.data, self.dtype.type(c)), (a,), bwd)

    # ------------------------------------------------------------ activations

    def sigmoid(self, a: Tensor) -> Tensor:
        x = a.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        def bwd(g):
            _accum(a, g * out * (1.0 - out))
        return self._record("sigmoid", out, (a,), bwd)

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)
        def bwd(g):
            _accum(a, g * (1.0 - out * out))
        return self._record("tanh", out, (a,), bwd)

    def leaky_relu(self, a: Tensor, slope: float = 0.2) -> Tensor:
        x = a.data
        out = np.where(x > 0, x, slope * x)
        def bwd(g):
            _accum(a, g * np.where(x > 0, 1.0, slope).astype(x.dtype))
        return self._record("leaky_relu", out, (a,), bwd)

    def elu(self, a: Tensor, alpha: float = 1.0) -> Tensor:
        x = a.data
        neg = alpha * np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        def bwd(g):
            _accum(a, g * np.where(x > 0, 1.0, neg + alpha).astype(x.dtype))
        return self._record("elu", out, (a,), bwd)

    def softplus(self, a: Tensor) -> Tensor:
        x = a.data
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        def bwd(g):
            sig = np.empty_like(x)
            pos = x >= 0
            sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
            ex = np.exp(x[~pos])
            sig[~pos] = ex / (1.0 + ex)
            _accum(a, g * sig)
        return self._record("softplus", out, (a,), bwd)

    # ------------------------------------------------------------- structure

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
            raise ShapeError(f"matmul: unsupported ranks {ad.ndim} x {bd.ndim}")
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        out = ad @ bd
        def bwd(g):
            if ad.ndim == 1 and bd.ndim == 1:     # dot -> scalar
                _accum(a, g * bd)
                _accum(b, g * ad)
            elif ad.ndim == 1:                     # (k,) @ (k,n) -> (n,)
                _accum(a, bd @ g)
                _accum(b, np.outer(ad, g))
            elif bd.ndim == 1:                     # (m,k) @ (k,) -> (m,)
                _accum(a, np.outer(g, bd))
                _accum(b, ad.T @ g)
            else:                                  # (m,k) @ (k,n) -> (m,n)
                _accum(a, g @ bd.T)
                _accum(b, ad.T @ g)
        return self._record("matmul", out, (a, b), bwd)

    def transpose(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose: 2-D expected, got {a.shape}")
        def bwd(g):
            _accum(a, g.T)
        return self._record("transpose", a.data.T.copy(), (a,), bwd)

    def concat(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts or any(p.data.ndim != 1 for p in parts):
            raise ShapeError("concat: expects 1-D tensors")
        sizes = [p.data.size for p in parts]
        offsets = np.cumsum([0] + sizes)
        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, g[lo:hi])
        return self._record("concat", np.concatenate([p.data for p in parts]),
                            tuple(parts), bwd)

    def stack(self, parts: Sequence[Tensor]) -> Tensor:
        """Stack equal-length vectors into a (k, d) matrix."""
        if not parts or any(p.data.ndim != 1 for p in parts):
            raise ShapeError("stack: expects 1-D tensors")
        if len({p.data.size for p in parts}) != 1:
            raise ShapeError("stack: length mismatch")
        def bwd(g):
            for i, p in enumerate(parts):
                _accum(p, g[i])
        return self._record("stack", np.stack([p.data for p in parts]),
                            tuple(parts), bwd)

    def hconcat(self, parts: Sequence[Tensor]) -> Tensor:
        """Concatenate (n, d_i) matrices along columns."""
        if not parts or any(p.data.ndim != 2 for p in parts):
            raise ShapeError("hconcat: expects 2-D tensors")
        if len({p.data.shape[0] for p in parts}) != 1:
            raise ShapeError("hconcat: row-count mismatch")
        widths = [p.data.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)
        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, g[:, lo:hi])
        return self._record("hconcat", np.concatenate([p.data for p in parts], axis=1),
                            tuple(parts), bwd)

    def flatten(self, a: Tensor) -> Tensor:
        shape = a.shape
        def bwd(g):
            _accum(a, g.reshape(shape))
        return self._record("flatten", a.data.reshape(-1).copy(), (a,), bwd)

    def rowscale(self, mat: Tensor, vec: Tensor) -> Tensor:
        """out[i] = mat[i] * vec[i] for a (m, d) matrix and (m,) vector."""
        if mat.data.ndim != 2 or vec.data.ndim != 1 or mat.shape[0] != vec.shape[0]:
            raise ShapeError(f"rowscale: {mat.shape} vs {vec.shape}")
        def bwd(g):
            _accum(mat, g * vec.data[:, None])
            _accum(vec, np.sum(g * mat.data, axis=1))
        return self._record("rowscale", mat.data * vec.data[:, None], (mat, vec), bwd)

    def gather(self, table: Tensor, idx: np.ndarray) -> Tensor:
        """Row lookup (embedding lookup): out[i] = table[idx[i]]."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError("gather: 1-D index expected")
        if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
            raise ShapeError("gather: index out of range")
        def bwd(g):
            if table.requires_grad:
                if table.grad is None:
                    table.grad = np.zeros_like(table.data)
                np.add.at(table.grad, idx, g)
        return self._record("gather", table.data[idx], (table,), bwd)

    def scatter_add(self, values: Tensor, idx: np.ndarray, n: int) -> Tensor:
        """out[j] = sum of values[i] over i with idx[i] == j."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.shape[0] != values.data.shape[0]:
            raise ShapeError("scatter_add: index/value length mismatch")
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ShapeError("scatter_add: index out of range")
        out = np.zeros((n,) + values.data.shape[1:], dtype=values.data.dtype)
        np.add.at(out, idx, values.data)
        def bwd(g):
            _accum(values, g[idx])
        return self._record("scatter_add", out, (values,), bwd)

    # ------------------------------------------------------------ reductions

    def sum(self, a: Tensor, axis: int | None = None) -> Tensor:
        out = np.sum(a.data, axis=axis)
        def bwd(g):
            if axis is None:
                _accum(a, np.full_like(a.data, 1.0) * g)
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())
        return self._record("sum", out, (a,), bwd)

    def mean(self, a: Tensor, axis: int | None = None) -> Tensor:
        n = a.data.size if axis is None else a.data.shape[axis]
        out = np.mean(a.data, axis=axis)
        def bwd(g):
            if axis is None:
                _accum(a, np.full_like(a.data, 1.0 / n) * g)
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape) / n)
        return self._record("mean", out, (a,), bwd)

    # --------------------------------------------------------------- softmax

    def softmax(self, a: Tensor, axis: int = -1) -> Tensor:
        x = a.data
        shifted = x - np.max(x, axis=axis, keepdims=True)
        ex = np.exp(shifted)
        out = ex / np.sum(ex, axis=axis, keepdims=True)
        def bwd(g):
            dot = np.sum(g * out, axis=axis, keepdims=True)
            _accum(a, out * (g - dot))
        return self._record("softmax", out, (a,), bwd)

    def segment_softmax(self, logits: Tensor, segments: np.ndarray,
                        n_segments: int) -> Tensor:
        """Softmax of ``logits`` within each segment id (for edge attention)."""
        seg = np.asarray(segments, dtype=np.int64)
        x = logits.data
        if x.ndim != 1 or seg.shape != x.shape:
            raise ShapeError("segment_softmax: 1-D logits and matching segments")
        seg_max = np.full(n_segments, -np.inf, dtype=x.dtype)
        np.maximum.at(seg_max, seg, x)
        ex = np.exp(x - seg_max[seg])
        seg_sum = np.zeros(n_segments, dtype=x.dtype)
        np.add.at(seg_sum, seg, ex)
        out = ex / seg_sum[seg]
        def bwd(g):
            dot = np.zeros(n_segments, dtype=x.dtype)
            np.add.at(dot, seg, g * out)
            _accum(logits, out * (g - dot[seg]))
        return self._record("segment_softmax", out, (logits,), bwd)

    # --------------------------------------------------------------- dropout

    def dropout(self, a: Tensor, p: float) -> Tensor:
        """Inverted dropout: zero a fraction p and scale survivors by 1/(1-p).
        Identity when the tape is in eval mode or p == 0."""
        if not (0.0 <= p < 1.0):
            raise ValueError(f"dropout: p must be in [0, 1), got {p}")
        if not self.training or p == 0.0:
            def bwd_id(g):
                _accum(a, g)
            return self._record("dropout", a.data.copy(), (a,), bwd_id)
        keep = (self.rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
        def bwd(g):
            _accum(a, g * keep)
        return self._record("dropout", a.data * keep, (a,), bwd)
