"""Traversal of recorded computations and the gradient entry points."""

from typing import Callable, Dict, List, Sequence, Union

import numpy as np

from .tensor import Tensor, UnsupportedPrimitiveError, as_tensor, constant


class LeafNotInTraceError(ValueError):
    """Raised when a gradient is requested for a tensor the output does not depend on."""


class NonScalarOutputError(ValueError):
    """Raised when differentiating an output with more than one element."""


class Trace:
    """Recorded computation ending in ``output``, in topological order (inputs first)."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)
        self._ids = {id(node) for node in self.nodes}

    @staticmethod
    def _toposort(output: Tensor) -> List[Tensor]:
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._ids

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node.is_leaf]

    def primitive_counts(self) -> Dict[str, int]:
        counts = {}
        for node in self.nodes:
            if node.op is not None:
                counts[node.op.name] = counts.get(node.op.name, 0) + 1
        return counts

    def replay(self, substitutions: Dict[int, np.ndarray]) -> np.ndarray:
        """Re-evaluate the output with some leaves replaced.

        Args:
            substitutions: Maps ``id(leaf)`` to the new leaf value.
        """
        values = {}
        for node in self.nodes:
            if node.is_leaf:
                values[id(node)] = np.asarray(
                    substitutions.get(id(node), node.data), dtype=np.float64
                )
            else:
                values[id(node)] = node.op.forward(
                    *(values[id(p)] for p in node.parents), **node.params
                )
        return values[id(self.output)]

    def depends_on(self, sources: Sequence[Tensor]) -> set:
        """Ids of nodes that (transitively) depend on any of ``sources``."""
        relevant = {id(s) for s in sources}
        for node in self.nodes:
            if any(id(p) in relevant for p in node.parents):
                relevant.add(id(node))
        return relevant


def grad(
    output: Tensor,
    wrt: Union[Tensor, Sequence[Tensor]],
    create_graph: bool = True,
) -> Union[Tensor, List[Tensor]]:
    """Gradient of a scalar ``output`` with respect to ``wrt``.

    With ``create_graph`` the returned gradients are themselves recorded and can be
    differentiated again.
    """
    single = isinstance(wrt, Tensor)
    sources = [wrt] if single else list(wrt)
    if output.size != 1:
        raise NonScalarOutputError(
            f"can only differentiate scalar outputs, got shape {output.shape}"
        )
    trace = Trace(output)
    for source in sources:
        if source not in trace:
            raise LeafNotInTraceError(
                f"tensor of shape {source.shape} is not part of the computation"
            )

    relevant = trace.depends_on(sources)
    cotangents = {id(output): Tensor(np.ones(output.shape))}
    for node in reversed(trace.nodes):
        g = cotangents.get(id(node))
        if g is None or node.is_leaf:
            continue
        needs = [id(p) in relevant for p in node.parents]
        if not any(needs):
            continue
        if node.op.vjp is None:
            raise UnsupportedPrimitiveError(
                f"primitive '{node.op.name}' has no derivative"
            )
        for parent, need, cotangent in zip(node.parents, needs, node.op.vjp(g, node, needs)):
            if not need or cotangent is None:
                continue
            previous = cotangents.get(id(parent))
            cotangents[id(parent)] = cotangent if previous is None else previous + cotangent

    results = []
    for source in sources:
        g = cotangents.get(id(source))
        if g is None:
            g = Tensor(np.zeros(source.shape))
        elif not create_graph:
            g = constant(g)
        results.append(g)
    return results[0] if single else results


def value_and_grad(fn: Callable[[Tensor], Tensor], create_graph: bool = False):
    """Turn ``fn`` into a function returning ``(value, gradient)`` as numpy data."""

    def wrapped(x):
        x = constant(x)
        value = fn(x)
        g = grad(value, x, create_graph=create_graph)
        return value.item(), g.data

    return wrapped


def hvp_capable_grad(outer: Callable[[Tensor], Tensor], x) -> Tensor:
    """Gradient of ``outer(x)`` with respect to ``x``.

    ``outer`` may itself call :func:`grad` with ``create_graph=True`` (for example to
    compute a parameter gradient at ``x``), in which case this is a second order
    derivative through that gradient.
    """
    x = as_tensor(x)
    if x.size == 0:
        raise ValueError("cannot differentiate with respect to an empty tensor")
    x = constant(x)
    value = outer(x)
    return grad(value, x, create_graph=False)
