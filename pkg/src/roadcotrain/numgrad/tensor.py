"""Tensor type and the reverse-mode tape.

Every primitive returns a fresh :class:`Tensor`. When at least one input
requires a gradient the output carries a :class:`Node` describing how to push
an upstream gradient back to its inputs; :func:`backward` walks those nodes
in reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class NumgradError(ValueError):
    """Base class for contract violations raised by numgrad."""


class DimensionError(NumgradError):
    pass


class ContractError(NumgradError):
    pass


class NonFiniteError(NumgradError):
    pass


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if not np.isfinite(arr).all():
        raise NonFiniteError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


class Tensor:
    """Dense float64 array with optional gradient tracking.

    The payload is read-only after construction; only ``grad`` changes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # Internal fast path: arr is freshly computed and owned by the caller.
        if not isinstance(arr, np.ndarray):
            arr = np.asarray(arr, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("primitive produced NaN or Inf")
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


def _raise_not_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {list(t.shape)}")


@dataclass(eq=False)
class Node:
    """One primitive application recorded on the tape."""

    op: str
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out`` as a Tensor and attach a node when any input needs grad."""
    needs = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        result._node = Node(op, tuple(inputs), backward_fn)
    return result


class ComputationGraph:
    """Topologically ordered view of the tape reachable from one output."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = _topological_order(output)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.is_leaf and t.requires_grad]

    def ops(self) -> list[str]:
        return [t._node.op for t in self.nodes if t._node is not None]


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in reversed(t._node.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, graph: ComputationGraph | None = None) -> list[Tensor]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Repeated calls keep adding to the existing leaf gradients. Returns the
    leaves that received a gradient.
    """
    if loss.size != 1:
        _raise_not_scalar(loss)
    if not loss.requires_grad:
        return []
    if graph is None or graph.output is not loss:
        graph = ComputationGraph(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: list[Tensor] = []
    for t in reversed(graph.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            touched.append(t)
            continue
        in_grads = t._node.backward(g)
        for parent, pg in zip(t._node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return touched


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
