"""Define-by-run graphs over the primitive registry.

A `Graph` is built fresh for each evaluation: leaves first, then primitive
applications in the order they are added (which is therefore a topological
order), then one designated output. There is no mutation API beyond
appending.
"""

import logging
import torch

from dataclasses import dataclass, field

from ..errors import GraphError, NonFiniteError, ShapeError
from .ops import PRIMITIVES


logger = logging.getLogger(__name__)

GradientMap = dict[str, torch.Tensor]


@dataclass(frozen=True)
class Leaf:
    name: str
    requires_grad: bool


@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)


class Graph:
    def __init__(self):
        self.leaves: dict[str, Leaf] = {}
        self.nodes: list[Node] = []
        self.output: str | None = None

    def _check_new_name(self, name: str) -> None:
        if name in self.leaves or any(n.name == name for n in self.nodes):
            raise GraphError(f"name '{name}' is already used in this graph")

    def _known(self, name: str) -> bool:
        return name in self.leaves or any(n.name == name for n in self.nodes)

    def leaf(self, name: str, requires_grad: bool = True) -> str:
        self._check_new_name(name)
        self.leaves[name] = Leaf(name, requires_grad)
        return name

    def constant(self, name: str) -> str:
        return self.leaf(name, requires_grad=False)

    def apply(self, op: str, *inputs: str, name: str | None = None, **attrs) -> str:
        if op not in PRIMITIVES:
            raise GraphError(f"unknown primitive '{op}'")

        for i in inputs:
            if not self._known(i):
                raise GraphError(f"input '{i}' of {op} is not defined before it is used")

        name = name or f"{op}_{len(self.nodes)}"
        self._check_new_name(name)

        self.nodes.append(Node(name, op, tuple(inputs), dict(attrs)))
        return name

    def set_output(self, name: str) -> str:
        if not self._known(name):
            raise GraphError(f"output '{name}' is not defined")
        self.output = name
        return name


def _bind(graph: Graph, bindings: dict, track: bool) -> dict[str, torch.Tensor]:
    missing = [name for name in graph.leaves if name not in bindings]
    if missing:
        raise GraphError(f"leaves not bound: {', '.join(missing)}")

    values = {}
    for name, leaf in graph.leaves.items():
        value = torch.as_tensor(bindings[name], dtype=torch.float64).detach().clone()
        if track and leaf.requires_grad:
            value.requires_grad_(True)
        values[name] = value

    return values


def _run(graph: Graph, values: dict[str, torch.Tensor]) -> torch.Tensor:
    if graph.output is None:
        raise GraphError("graph has no designated output")

    for node in graph.nodes:
        args = [values[i] for i in node.inputs]

        try:
            out = PRIMITIVES[node.op](*args, **node.attrs)
        except ShapeError as e:
            raise ShapeError(f"node '{node.name}': {e.detail}") from e
        except RuntimeError as e:
            raise ShapeError(f"node '{node.name}' ({node.op}): {e}") from e

        if not torch.isfinite(out).all():
            raise NonFiniteError(f"node '{node.name}' ({node.op}) produced non-finite values")

        values[node.name] = out

    return values[graph.output]


def eval_graph(graph: Graph, bindings: dict) -> torch.Tensor:
    with torch.no_grad():
        return _run(graph, _bind(graph, bindings, track=False))


def backward(graph: Graph, bindings: dict) -> GradientMap:
    """Reverse-mode gradients of the scalar output for every leaf.

    Constant leaves and leaves the output does not depend on get zeros.
    """
    values = _bind(graph, bindings, track=True)
    out = _run(graph, values)

    if out.numel() != 1:
        raise GraphError(f"backward needs a scalar output, '{graph.output}' has shape {tuple(out.shape)}")

    wrt = [name for name, leaf in graph.leaves.items() if leaf.requires_grad]
    grads = ()
    if wrt and out.requires_grad:
        grads = torch.autograd.grad(out.reshape(()), [values[n] for n in wrt], allow_unused=True)

    result: GradientMap = {name: torch.zeros_like(values[name]) for name in graph.leaves}
    for name, g in zip(wrt, grads):
        if g is not None:
            result[name] = g.detach()

    return result
