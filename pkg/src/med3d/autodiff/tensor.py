"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray plus an optional gradient and a closure that
propagates an incoming output gradient to the tensor's parents.  Ops (in
``functional``) build the graph implicitly; ``backward`` topologically
sorts it from the loss and runs each node's rule exactly once.  Training
paths run float32; gradient checking builds float64 tensors through the
same code.
"""

from __future__ import annotations

import numpy as np

from ..errors import NotScalar


class Tensor:
    """Dense array node in a reverse-mode differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        """Sum an incoming gradient into this node (fan-out accumulates)."""
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other: Tensor) -> Tensor:
        from . import functional as F
        return F.add(self, other)


def make_op(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording parents and the backward rule.

    ``backward_fn(grad)`` must return one gradient array (or None) per
    parent, in order.  The graph edge is dropped entirely when no parent
    needs gradients, so inference builds no tape.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor, params: list[Tensor] | None = None) -> list[Tensor]:
    """Backpropagate from a scalar loss.

    Gradients accumulate over fan-out in reverse topological order and are
    summed into ``.grad`` of every reachable tensor that requires them.
    When ``params`` is given, parameters the loss does not depend on get a
    zero gradient and are returned so callers can report them.
    """
    if loss.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                parent.accumulate_grad(g)

    disconnected: list[Tensor] = []
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
                disconnected.append(p)
    return disconnected
