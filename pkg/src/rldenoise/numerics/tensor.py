"""Reverse-mode autodiff over whole-tensor numpy operations.

Everything runs in float64. A Tensor produced by an op records its input
tensors and a backward closure; ``backward()`` on a scalar loss walks the
recorded graph once and accumulates d(loss)/d(node) into ``.grad`` for
every node that requires gradients. Repeated backward calls accumulate
unless grads are zeroed in between.

A recorded graph must stay on one logical thread; independent graphs may
run in parallel.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self) -> "no_grad":
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc) -> bool:
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(node) into .grad across the recorded graph.

        Without an explicit seed the tensor must be scalar (a loss).
        Raises RuntimeError when called on a tensor that neither requires
        gradients nor was produced by a recorded computation.
        """
        if not self.requires_grad:
            raise RuntimeError(
                "backward() called on a tensor that is not attached to a recorded graph"
            )
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar tensor")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ValueError("seed shape must match tensor shape")

        # All graph nodes stay alive through `topo`, so id() keys are stable.
        topo = _topological_order(self)
        flow: dict[int, np.ndarray] = {id(self): seed}
        for node in topo:
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # Leaf: this is where gradients accumulate across calls.
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flow:
                    flow[pid] = flow[pid] + pg
                else:
                    flow[pid] = pg

    # -- operator sugar over the basic arithmetic ops ------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor) -> list:
    """Reverse post-order of the graph rooted at ``root`` (consumers first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, recording the graph edge when gradients are on."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _reduce_to(shape: tuple, g: np.ndarray) -> np.ndarray:
    """Undo scalar broadcasting of a 0-d operand."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _reduce_to(a.data.shape, g), _reduce_to(b.data.shape, g)

    return make_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _reduce_to(a.data.shape, g), _reduce_to(b.data.shape, -g)

    return make_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return _reduce_to(a.data.shape, g * b.data), _reduce_to(b.data.shape, g * a.data)

    return make_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    # Only same-shape and scalar-with-array combinations are supported.
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(
            f"{name}: operand shapes {a.data.shape} and {b.data.shape} do not match"
        )
