"""Dense float64 tensors with reverse-mode differentiation.

Define-by-run: every differentiable op builds a node holding its parents
and a backward closure. Calling ``backward`` on a scalar loss walks the
recorded graph once in reverse topological order and accumulates gradients
into every leaf tensor that has ``requires_grad`` set.

All values are 64-bit floats. Any op that produces a NaN or Inf raises
``NonFiniteError`` immediately rather than letting the poison propagate.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced (or received) a NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Malformed computation record (non-scalar seed, unreachable loss, ...)."""


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """N-dimensional float64 array, optionally tracked for gradients.

    Leaf tensors (no parents) with ``requires_grad=True`` receive their
    gradient in ``.grad`` after a backward pass. Interior nodes carry the
    backward closure recorded by the op that produced them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result; records the graph edge only if a parent needs grad.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    parent, each already reduced to the parent's shape.
    """
    _check_finite(data, "op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def topo_order(root: Tensor) -> list[Tensor]:
    """Reverse-mode visitation order: every node's parents precede it."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Gradients add across fan-out within the graph, and add across repeated
    backward calls (use ``zero_grad`` between steps).
    """
    if loss.data.ndim != 0:
        raise GraphError("backward seed must be a scalar loss")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any requires_grad tensor")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, "backward gradient")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        elif node.requires_grad:
            # requires_grad leaf: deposit the accumulated gradient.
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                node.grad = node.grad + g
