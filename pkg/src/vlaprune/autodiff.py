"""Reverse-mode automatic differentiation over dense numpy arrays.

This is not a general autodiff system. It provides exactly the operations
the pruning pipeline and the toy testbed compose: dense products, row
softmax, RMS normalization, elementwise arithmetic, gathers, and reductions,
all in double precision.

Recording is opt-in. Operations accept plain ``numpy.ndarray`` inputs and
return plain arrays (no tape, no overhead), or :class:`Tensor` handles bound
to an explicit :class:`GradientContext`, in which case the operation is
recorded and :meth:`GradientContext.backward` later produces gradients by
walking the tape in reverse. Mixing tensors from two different contexts is
an error; mixing a tensor with a raw array lifts the array onto the
tensor's context as a constant.

Every operation checks its output for NaN/Inf and raises
``FloatingPointError`` if any appears: non-finite values are an error state,
never silently propagated.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

RMS_EPS = 1e-6  # added inside the square root to guard all-zero rows


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class _Node:
    __slots__ = ("value", "parents", "vjps", "forward_fn", "is_const")

    def __init__(self, value, parents, vjps, forward_fn, is_const):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.forward_fn = forward_fn
        self.is_const = is_const


class Tensor:
    """Handle to one recorded value on a :class:`GradientContext`."""

    __slots__ = ("ctx", "index")

    def __init__(self, ctx: "GradientContext", index: int):
        self.ctx = ctx
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.ctx._nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ctx._nodes[self.index].value.shape

    @property
    def grad(self) -> np.ndarray | None:
        """Adjoint from the most recent backward pass, or None if unreached."""
        return self.ctx.grad(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class GradientContext:
    """A tape of recorded operations with per-node adjoint buffers.

    Single-owner: one context must not be shared across concurrent calls.
    Replaying the tape (:meth:`replay`) recomputes every recorded value from
    the leaves and checks bit-exact agreement with what was stored, which
    pins down hidden nondeterminism in the forward pass.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._adjoints: list[np.ndarray | None] | None = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _append(self, node: _Node) -> Tensor:
        self._nodes.append(node)
        return Tensor(self, len(self._nodes) - 1)

    def tensor(self, value) -> Tensor:
        """Record a differentiable leaf. The value is copied."""
        arr = np.array(value, dtype=float)
        _require_finite(arr, "tensor")
        return self._append(_Node(arr, (), (), None, False))

    def constant(self, value) -> Tensor:
        """Record a non-differentiable leaf. The value is copied."""
        arr = np.array(value, dtype=float)
        _require_finite(arr, "constant")
        return self._append(_Node(arr, (), (), None, True))

    def backward(self, loss: Tensor) -> None:
        """Accumulate adjoints of ``loss`` w.r.t. every recorded node.

        The loss must be a scalar recorded on this context. Gradients are
        then available through :meth:`grad` / ``Tensor.grad``.
        """
        if not isinstance(loss, Tensor) or loss.ctx is not self:
            raise ValueError("loss is not recorded on this context")
        if loss.value.shape != ():
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.value.shape}"
            )
        adjoints: list[np.ndarray | None] = [None] * len(self._nodes)
        adjoints[loss.index] = np.ones(())
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            if g is None:
                continue
            node = self._nodes[i]
            for parent, vjp in zip(node.parents, node.vjps):
                if vjp is None or self._nodes[parent].is_const:
                    continue
                contrib = vjp(g)
                held = adjoints[parent]
                # never accumulate in place: vjp outputs may alias node values
                adjoints[parent] = contrib if held is None else held + contrib
        self._adjoints = adjoints

    def grad(self, t: Tensor) -> np.ndarray | None:
        if self._adjoints is None:
            return None
        if t.ctx is not self:
            raise ValueError("tensor belongs to a different context")
        g = self._adjoints[t.index]
        if g is None:
            return None
        return np.broadcast_to(g, t.value.shape) if g.shape != t.value.shape else g

    def replay(self) -> bool:
        """Re-run the tape forward; True iff every value is reproduced bit-exactly."""
        recomputed: list[np.ndarray] = []
        for node in self._nodes:
            if node.forward_fn is None:
                recomputed.append(node.value)
                continue
            out = node.forward_fn(*(recomputed[p] for p in node.parents))
            if not np.array_equal(out, node.value):
                return False
            recomputed.append(out)
        return True


# ---------------------------------------------------------------------------
# recording machinery


def value_of(x) -> np.ndarray:
    """The plain ndarray behind ``x``, whether or not it is a Tensor."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=float)


def _require_finite(value: np.ndarray, op: str) -> None:
    # cheap probe first: any Inf/NaN poisons the sum; the probe itself may
    # overflow on huge finite values, which is exactly what it is there for
    with np.errstate(over="ignore", invalid="ignore"):
        poisoned = value.size and not np.isfinite(value.sum())
    if poisoned and not np.isfinite(value).all():
        raise FloatingPointError(f"non-finite values produced by {op}")


def _context_of(*args) -> GradientContext | None:
    ctx = None
    for a in args:
        if isinstance(a, Tensor):
            if ctx is None:
                ctx = a.ctx
            elif a.ctx is not ctx:
                raise ValueError("operands belong to different gradient contexts")
    return ctx


def _finish(
    op: str,
    out: np.ndarray,
    operands: Sequence,
    vjps: Sequence[Callable | None],
    forward_fn: Callable,
):
    """Finiteness-check ``out`` and record it if any operand carries a tape."""
    _require_finite(out, op)
    ctx = _context_of(*operands)
    if ctx is None:
        return out
    parents = []
    for a in operands:
        if isinstance(a, Tensor):
            parents.append(a.index)
        else:
            parents.append(ctx.constant(a).index)
    all_const = all(ctx._nodes[p].is_const for p in parents)
    return ctx._append(_Node(out, tuple(parents), tuple(vjps), forward_fn, all_const))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# operations


def matmul(a, b):
    """Dense product of two 2-D matrices."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {av.shape} x {bv.shape}")
    return _finish(
        "matmul",
        av @ bv,
        (a, b),
        (lambda g: g @ bv.T, lambda g: av.T @ g),
        lambda x, y: x @ y,
    )


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _finish(
        "add",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(g, bv.shape),
        ),
        lambda x, y: x + y,
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _finish(
        "sub",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(-g, bv.shape),
        ),
        lambda x, y: x - y,
    )


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _finish(
        "mul",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * bv, av.shape),
            lambda g: _unbroadcast(g * av, bv.shape),
        ),
        lambda x, y: x * y,
    )


def transpose(a):
    av = value_of(a)
    if av.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D matrix, got {av.shape}")
    return _finish(
        "transpose",
        av.T.copy(),
        (a,),
        (lambda g: g.T,),
        lambda x: x.T.copy(),
    )


def softmax_rows(a):
    """Row-wise softmax of a 2-D matrix, stabilized by max subtraction."""
    av = value_of(a)
    if av.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D matrix, got {av.shape}")

    def fwd(x):
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    out = fwd(av)

    def vjp(g):
        return out * (g - (g * out).sum(axis=1, keepdims=True))

    return _finish("softmax_rows", out, (a,), (vjp,), fwd)


def rms_normalize(a, gain):
    """Scale each row to unit root-mean-square, then multiply by ``gain``.

    ``gain`` is a length-d vector matching the row dimension. A small
    epsilon inside the square root guards all-zero rows.
    """
    av, gv = value_of(a), value_of(gain)
    if av.ndim != 2:
        raise ShapeError(f"rms_normalize expects a 2-D matrix, got {av.shape}")
    if gv.ndim != 1 or gv.shape[0] != av.shape[1]:
        raise ShapeError(
            f"gain length {gv.shape} does not match row dimension {av.shape[1]}"
        )
    d = av.shape[1]

    def fwd(x, w):
        scale = 1.0 / np.sqrt((x * x).mean(axis=1, keepdims=True) + RMS_EPS)
        return x * scale * w

    scale = 1.0 / np.sqrt((av * av).mean(axis=1, keepdims=True) + RMS_EPS)
    out = av * scale * gv

    def vjp_a(g):
        inner = (g * gv * av).sum(axis=1, keepdims=True)
        return g * gv * scale - av * (scale**3 / d) * inner

    def vjp_gain(g):
        return (g * av * scale).sum(axis=0)

    return _finish("rms_normalize", out, (a, gain), (vjp_a, vjp_gain), fwd)


def tanh(a):
    av = value_of(a)
    out = np.tanh(av)
    return _finish("tanh", out, (a,), (lambda g: g * (1.0 - out * out),), np.tanh)


def sum_all(a):
    """Sum of all entries, as a scalar (0-d)."""
    av = value_of(a)
    return _finish(
        "sum_all",
        np.asarray(av.sum()),
        (a,),
        (lambda g: g * np.ones_like(av),),
        lambda x: np.asarray(x.sum()),
    )


def mean_all(a):
    """Mean of all entries, as a scalar (0-d)."""
    av = value_of(a)
    n = av.size
    return _finish(
        "mean_all",
        np.asarray(av.mean()),
        (a,),
        (lambda g: g * np.full_like(av, 1.0 / n),),
        lambda x: np.asarray(x.mean()),
    )


def take_rows(a, indices):
    """Gather rows of a 2-D matrix by integer index (repeats allowed)."""
    av = value_of(a)
    if av.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D matrix, got {av.shape}")
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1:
        raise ShapeError("indices must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= av.shape[0]):
        raise IndexError(f"row index out of range for {av.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _finish("take_rows", av[idx], (a,), (vjp,), lambda x: x[idx])


def concat_rows(*parts):
    """Stack 2-D matrices with equal column counts along the row axis."""
    if not parts:
        raise ValueError("concat_rows needs at least one part")
    values = [value_of(p) for p in parts]
    cols = {v.shape[1] for v in values if v.ndim == 2}
    if any(v.ndim != 2 for v in values) or len(cols) != 1:
        raise ShapeError(
            f"concat_rows expects 2-D parts with equal columns, got "
            f"{[v.shape for v in values]}"
        )
    offsets = np.cumsum([0] + [v.shape[0] for v in values])

    def make_vjp(k):
        return lambda g: g[offsets[k] : offsets[k + 1]]

    return _finish(
        "concat_rows",
        np.concatenate(values, axis=0),
        parts,
        tuple(make_vjp(k) for k in range(len(values))),
        lambda *xs: np.concatenate(xs, axis=0),
    )


def detach(a):
    """Stop-gradient: same forward value, no adjoint flows through."""
    if not isinstance(a, Tensor):
        return value_of(a)
    return a.ctx._append(
        _Node(a.value, (a.index,), (None,), lambda x: x, True)
    )


def sample_uniform_noise(shape, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. draws from the half-open interval [0, alpha).

    ``alpha = 0`` returns an exact zero matrix without consuming the
    generator. The result is a plain array and is never differentiated.
    """
    if alpha < 0:
        raise ValueError(f"noise upper bound must be non-negative, got {alpha}")
    if alpha == 0:
        return np.zeros(shape)
    return rng.random(shape) * alpha
