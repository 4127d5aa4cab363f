"""Dense float tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous row-major numpy array (f32 for models, f64 for
gradient-check builds). Differentiable ops record their parents and a VJP
closure on the result; ``backward`` replays the graph in reverse topological
order and returns gradients for every reachable named parameter.

Tensors are immutable values once constructed; training code mutates
parameter ``.data`` in place between graph builds, never inside one.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, InvalidShape, InvalidSplit, NotScalar, ShapeMismatch
from .rng import Xoshiro256

DTYPES = {"f32": np.float32, "f64": np.float64}

# Set False around pure-inference forwards to skip tape construction.
_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 name: str | None = None):
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = np.ascontiguousarray(data)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return "f32" if self.data.dtype == np.float32 else "f64"

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{tag})"

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)


GradMap = dict  # parameter name -> Tensor of the same shape


def _record(out: Tensor, parents: Sequence[Tensor],
            vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=like.data.dtype)
    return Tensor(arr)


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # Broadcasting is restricted to scalar-with-tensor.
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeMismatch(f"{op}: dtypes {a.dtype} and {b.dtype}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to the (scalar or equal) operand shape."""
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape).astype(grad.dtype)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def make(shape: Sequence[int], init: str = "zero", *, value: float = 0.0,
         seed: int = 0, dtype: str = "f32", requires_grad: bool = False,
         name: str | None = None, rng: Xoshiro256 | None = None) -> Tensor:
    """Deterministically construct a tensor.

    init: "zero" | "constant" (uses ``value``) | "gaussian" (uses ``seed`` or
    an explicit ``rng`` stream). Gaussian content is bit-reproducible for a
    given seed.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise InvalidShape(f"extents must be >= 1, got {shape}")
    np_dtype = DTYPES[dtype]
    if init == "zero":
        data = np.zeros(shape, dtype=np_dtype)
    elif init == "constant":
        data = np.full(shape, value, dtype=np_dtype)
    elif init == "gaussian":
        stream = rng if rng is not None else Xoshiro256(seed, "make.gaussian")
        data = np.empty(shape, dtype=np.float64)
        stream.fill_gauss(data)
        data = data.astype(np_dtype)
    else:
        raise InvalidShape(f"unknown init {init!r}")
    if not np.all(np.isfinite(data)):
        raise InvalidShape("construction produced non-finite values")
    return Tensor(data, requires_grad=requires_grad, name=name)


def from_array(arr, dtype: str = "f32", requires_grad: bool = False,
               name: str | None = None) -> Tensor:
    return Tensor(np.asarray(arr, dtype=DTYPES[dtype]),
                  requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b),
                   lambda g: (_reduce_to(g * b.data, a.shape),
                              _reduce_to(g * a.data, b.shape)))


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "div")
    out = Tensor(a.data / b.data)
    return _record(out, (a, b),
                   lambda g: (_reduce_to(g / b.data, a.shape),
                              _reduce_to(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e)
    return _record(out, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def maximum(a: Tensor, c: float) -> Tensor:
    """Elementwise max with a scalar constant; gradient flows where a > c."""
    mask = a.data > c
    out = Tensor(np.where(mask, a.data, a.data.dtype.type(c)))
    return _record(out, (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only through unclamped entries."""
    mask = (a.data > lo) & (a.data < hi)
    out = Tensor(np.clip(a.data, lo, hi))
    return _record(out, (a,), lambda g: (g * mask,))


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims,
                        dtype=a.data.dtype))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), a.shape).astype(g.dtype),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).astype(g.dtype),)

    return _record(out, (a,), vjp)


def tmean(a: Tensor) -> Tensor:
    n = a.data.dtype.type(a.size)
    out = Tensor(np.mean(a.data, dtype=a.data.dtype).reshape(()))
    return _record(out, (a,),
                   lambda g: (np.broadcast_to(g.reshape(()) / n, a.shape).astype(g.dtype),))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched contraction over the last axis of a and second-last of b.

    Leading batch extents must match or be absent on one side.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents {a.shape} x {b.shape}")
    batch_a, batch_b = a.shape[:-2], b.shape[:-2]
    if batch_a and batch_b and batch_a != batch_b:
        raise ShapeMismatch(f"matmul batch extents {batch_a} vs {batch_b}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        # Sum out batch dims that were broadcast from an unbatched operand.
        if ga.ndim > a.data.ndim:
            ga = ga.sum(axis=tuple(range(ga.ndim - a.data.ndim)))
        if gb.ndim > b.data.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
        return ga.astype(g.dtype), gb.astype(g.dtype)

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# Relayout
# ---------------------------------------------------------------------------

def reshape(a: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != a.size:
        raise InvalidShape(f"view {a.shape} -> {new_shape} changes element count")
    old_shape = a.shape
    out = Tensor(a.data.reshape(new_shape))
    return _record(out, (a,), lambda g: (g.reshape(old_shape),))


def transpose(a: Tensor, axis_i: int, axis_j: int) -> Tensor:
    nd = a.data.ndim
    if not (-nd <= axis_i < nd and -nd <= axis_j < nd):
        raise InvalidShape(f"transpose axes ({axis_i},{axis_j}) out of range for {a.shape}")
    out = Tensor(np.ascontiguousarray(np.swapaxes(a.data, axis_i, axis_j)))
    return _record(out, (a,),
                   lambda g: (np.ascontiguousarray(np.swapaxes(g, axis_i, axis_j)),))


def flatten_from(a: Tensor, axis: int) -> Tensor:
    """Collapse all axes from ``axis`` onward into one."""
    tail = int(np.prod(a.shape[axis:]))
    return reshape(a, a.shape[:axis] + (tail,))


def split(a: Tensor, axis: int, parts: int) -> list[Tensor]:
    extent = a.shape[axis]
    if parts < 1 or extent % parts != 0:
        raise InvalidSplit(f"cannot split extent {extent} into {parts} parts")
    chunk = extent // parts
    outs = []
    for j in range(parts):
        sl = [slice(None)] * a.data.ndim
        sl[axis] = slice(j * chunk, (j + 1) * chunk)
        piece = Tensor(np.ascontiguousarray(a.data[tuple(sl)]))

        def vjp(g, _j=j):
            full = np.zeros(a.shape, dtype=g.dtype)
            s = [slice(None)] * full.ndim
            s[axis] = slice(_j * chunk, (_j + 1) * chunk)
            full[tuple(s)] = g
            return (full,)

        outs.append(_record(piece, (a,), vjp))
    return outs


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise InvalidShape("concat of empty list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[:axis] + t.shape[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ShapeMismatch(f"concat shapes {ref} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    extents = [t.shape[axis] for t in tensors]

    def vjp(g):
        grads = []
        start = 0
        for e in extents:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + e)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
            start += e
        return tuple(grads)

    return _record(out, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# Custom-op hook used by nn/ssm kernels
# ---------------------------------------------------------------------------

def custom_op(out_data: np.ndarray, parents: Sequence[Tensor],
              vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap a kernel result as a tape node with a hand-written VJP."""
    return _record(Tensor(out_data), parents, vjp)


# ---------------------------------------------------------------------------
# Parameters and reverse pass
# ---------------------------------------------------------------------------

class ParamStore:
    """Named, ordered trainable tensors plus non-trainable buffers.

    ``buffers`` holds plain arrays (norm running statistics) that persist in
    checkpoints but are excluded from parameter counts and optimization.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.no_decay: set[str] = set()

    def add(self, name: str, tensor: Tensor, no_decay: bool = False) -> Tensor:
        if name in self.params:
            raise InvalidShape(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self.params[name] = tensor
        if no_decay:
            self.no_decay.add(name)
        return tensor

    def add_buffer(self, name: str, arr: np.ndarray) -> np.ndarray:
        self.buffers[name] = arr
        return arr

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)


def backward(out: Tensor) -> GradMap:
    """Reverse-mode gradients of a recorded scalar.

    Returns a map from parameter name to a gradient Tensor for every named
    ``requires_grad`` leaf reachable from ``out``. Unnamed reachable leaves
    are differentiated too but keyed by object in the internal walk only.
    """
    if out.size != 1:
        raise NotScalar(f"backward from tensor of shape {out.shape}")

    # Iterative topological order (graphs can be deep).
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    result: GradMap = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        elif node.requires_grad and node.name is not None:
            prev = result.get(node.name)
            result[node.name] = Tensor(g if prev is None else prev.data + g)
    return result


def grads_for(out: Tensor, store: ParamStore) -> GradMap:
    """Backward pass returning zero grads for unreachable store entries."""
    gmap = backward(out)
    for name, p in store.items():
        if name not in gmap:
            gmap[name] = Tensor(np.zeros_like(p.data))
    return gmap


def finite_diff(f: Callable[[], Tensor], at: ParamStore, eps: float = 1e-5,
                names: Iterable[str] | None = None) -> GradMap:
    """Central-difference gradients of ``f`` w.r.t. parameters in ``at``.

    ``f`` must be a deterministic closure reading the store; it is evaluated
    2N times for N coordinates. Independent of the tape by construction.
    """
    if eps <= 0:
        raise DomainError("finite_diff needs eps > 0")
    targets = list(names) if names is not None else at.names()
    out: GradMap = {}
    for name in targets:
        param = at[name]
        flat = param.data.reshape(-1)
        grad = np.zeros_like(flat, dtype=np.float64)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * eps)
        out[name] = Tensor(grad.reshape(param.shape).astype(param.data.dtype))
    return out
