"""Dense tensors with tape-free reverse-mode autodiff.

Every forward op returns a new :class:`Tensor` whose ``node`` records the
inputs and a closure mapping the output gradient to input gradients. The
graph for a loss is recovered by walking those links, so each call to
:func:`backward` sees a fresh, acyclic :class:`Graph`.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)


class TensorError(ValueError):
    """Base class for tensor engine errors."""


class DimensionError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class NonScalarLossError(TensorError):
    pass


class DetachedGraphError(TensorError):
    pass


_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_counter = contextvars.ContextVar("mac_counter", default=None)
_scope = contextvars.ContextVar("mac_scope", default="other")


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording backward closures."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class MacCounter:
    """Accumulates multiply-adds reported by matmul, linear and conv2d."""

    def __init__(self):
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def add(self, n: int) -> None:
        self.by_scope[_scope.get()] += int(n)


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Instrument all ops run inside the block; confined to this context."""
    counter = MacCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    token = _scope.set(name)
    try:
        yield
    finally:
        _scope.reset(token)


def record_macs(n: int) -> None:
    counter = _counter.get()
    if counter is not None:
        counter.add(n)


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-d float32/float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}{op})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, check finiteness and attach the backward closure."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    data.flags.writeable = False
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward)
    return out


@dataclass
class Graph:
    """Topologically ordered nodes reachable from one output tensor."""

    output: Tensor
    nodes: list[tuple[Tensor, Node]] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        graph = cls(output)
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                graph.nodes.append((t, t.node))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return graph

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Graph | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Returns the gradients contributed by this call, keyed by leaf tensor.
    """
    if loss.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        raise DetachedGraphError("loss is not attached to any recorded graph")
    if graph is None:
        graph = Graph.from_output(loss)
    elif graph.output is not loss:
        raise DetachedGraphError("graph was recorded for a different output")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for t, node in reversed(graph.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(node.inputs, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.node is None:
                leaves[key] = parent

    out = {}
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        out[leaf] = g
    return out
