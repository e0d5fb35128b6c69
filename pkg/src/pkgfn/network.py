"""Function-network structure, evaluation semantics and observation history.

Nodes are indexed from 0 in code. Node ``k`` consumes the outputs of its
parents (in the listed order) followed by the controllable input components
``input_indices[k]``; that concatenation is the node input ``z_k``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import tomli_w

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .gp import NodeDataset


class NetworkSpecError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """DAG of node functions.

    ``costs`` holds one positive constant or callable ``c(z) -> float`` per
    node. ``outcome`` optionally maps the vector of node outputs (last axis)
    to the objective; by default the objective is the last node's output.
    ``parent_ranges[k]``, when given, is a ``(len(parents[k]), 2)`` box of
    known parent outputs: node ``k`` may then be probed anywhere in that box
    instead of only at previously realized parent outputs.
    """

    parents: tuple
    input_indices: tuple
    bounds: np.ndarray
    costs: tuple
    outcome: Optional[Callable] = None
    parent_ranges: Optional[tuple] = None
    allow_shared_inputs: bool = False
    names: Optional[tuple] = None

    def __post_init__(self):
        parents = tuple(tuple(int(j) for j in p) for p in self.parents)
        inputs = tuple(tuple(int(i) for i in s) for s in self.input_indices)
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "input_indices", inputs)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "costs", tuple(self.costs))
        if self.parent_ranges is None:
            object.__setattr__(self, "parent_ranges", (None,) * len(parents))
        else:
            pr = tuple(None if r is None else np.asarray(r, float).reshape(-1, 2)
                       for r in self.parent_ranges)
            object.__setattr__(self, "parent_ranges", pr)
        self.validate()

    @property
    def K(self) -> int:
        return len(self.parents)

    @property
    def d(self) -> int:
        return self.bounds.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    def node_dim(self, k: int) -> int:
        return len(self.parents[k]) + len(self.input_indices[k])

    def children(self, k: int) -> list:
        return [c for c in range(self.K) if k in self.parents[c]]

    def descendants(self, k: int) -> set:
        out, stack = set(), [k]
        while stack:
            for c in self.children(stack.pop()):
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def validate(self) -> None:
        K = self.K
        if K < 1:
            raise NetworkSpecError("network needs at least one node")
        if len(self.input_indices) != K or len(self.costs) != K or len(self.parent_ranges) != K:
            raise NetworkSpecError("parents, input_indices, costs and parent_ranges must have one entry per node")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise NetworkSpecError("lower bound above upper bound")
        seen = {}
        for k in range(K):
            for j in self.parents[k]:
                if not 0 <= j < k:
                    raise NetworkSpecError(f"node {k} has parent {j}; nodes must be topologically ordered")
            if len(set(self.parents[k])) != len(self.parents[k]):
                raise NetworkSpecError(f"node {k} lists a parent twice")
            for i in self.input_indices[k]:
                if not 0 <= i < self.d:
                    raise NetworkSpecError(f"node {k} uses input {i} outside 0..{self.d - 1}")
                if i in seen and not self.allow_shared_inputs:
                    raise NetworkSpecError(f"nodes {seen[i]} and {k} share input component {i}")
                seen[i] = k
            if self.node_dim(k) == 0:
                raise NetworkSpecError(f"node {k} has no inputs")
            r = self.parent_ranges[k]
            if r is not None and r.shape[0] != len(self.parents[k]):
                raise NetworkSpecError(f"parent_ranges[{k}] must have one row per parent")
            c = self.costs[k]
            if not callable(c) and not float(c) > 0:
                raise NetworkSpecError(f"cost of node {k} must be positive")
        sinks = [k for k in range(K) if not self.children(k)]
        if self.outcome is None and sinks != [K - 1]:
            raise NetworkSpecError(f"expected the last node to be the unique sink, found sinks {sinks}")

    def cost(self, k: int, z=None) -> float:
        c = self.costs[k]
        value = float(c(z)) if callable(c) else float(c)
        if not value > 0:
            raise NetworkSpecError(f"cost of node {k} at {z} is not positive")
        return value

    def total_cost(self, x=None) -> float:
        return sum(self.cost(k) for k in range(self.K))

    def objective(self, y):
        """Objective from node outputs stacked on the last axis."""
        y = np.asarray(y, dtype=float)
        if self.outcome is None:
            return y[..., self.K - 1]
        return self.outcome(y)

    def node_input(self, k: int, parent_outputs, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([np.asarray(parent_outputs, float).reshape(-1),
                               x[list(self.input_indices[k])]])

    def in_bounds(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def with_costs(self, costs: Sequence) -> "NetworkSpec":
        return NetworkSpec(self.parents, self.input_indices, self.bounds, tuple(costs),
                           self.outcome, self.parent_ranges, self.allow_shared_inputs, self.names)

    def to_dict(self) -> dict:
        """Plain-data form of the network (TOML friendly, 1-based node labels)."""
        nodes = []
        for k in range(self.K):
            node = {
                "id": k + 1,
                "parents": [j + 1 for j in self.parents[k]],
                "inputs": [i + 1 for i in self.input_indices[k]],
                "cost": self.cost(k),
            }
            if self.names:
                node["name"] = self.names[k]
            if self.parent_ranges[k] is not None:
                node["parent_ranges"] = self.parent_ranges[k].tolist()
            nodes.append(node)
        return {"bounds": self.bounds.tolist(), "node": nodes,
                "allow_shared_inputs": self.allow_shared_inputs}

    @classmethod
    def from_dict(cls, doc: dict, outcome=None) -> "NetworkSpec":
        nodes = sorted(doc["node"], key=lambda n: n["id"])
        return cls(
            parents=[[j - 1 for j in n.get("parents", [])] for n in nodes],
            input_indices=[[i - 1 for i in n.get("inputs", [])] for n in nodes],
            bounds=np.asarray(doc["bounds"], float),
            costs=[float(n["cost"]) for n in nodes],
            outcome=outcome,
            parent_ranges=[n.get("parent_ranges") for n in nodes],
            allow_shared_inputs=bool(doc.get("allow_shared_inputs", False)),
            names=tuple(n["name"] for n in nodes) if all("name" in n for n in nodes) else None,
        )


def dumps_toml(spec: NetworkSpec) -> str:
    return tomli_w.dumps(spec.to_dict())


def loads_toml(text: str, outcome=None) -> NetworkSpec:
    return NetworkSpec.from_dict(tomllib.loads(text), outcome)


@dataclass(frozen=True)
class CandidateInput:
    node: int
    parent_outputs: tuple
    controllable: np.ndarray

    def z(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.parent_outputs, float),
                               np.asarray(self.controllable, float).reshape(-1)])


@dataclass(frozen=True)
class ParentBox:
    """Continuous candidate set of parent outputs (known output ranges)."""

    bounds: np.ndarray


@dataclass
class NetworkHistory:
    """Per-node observations with provenance.

    ``provenance[k][m]`` lists ``(parent, index)`` pairs naming the stored
    parent observations that fed the ``m``-th observation of node ``k``
    (empty for probes of setting-2 nodes at unrealized parent values).
    """

    spec: NetworkSpec
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    iteration: int = 0
    spent: float = 0.0

    def __post_init__(self):
        K = self.spec.K
        if not self.inputs:
            self.inputs = [[] for _ in range(K)]
            self.outputs = [[] for _ in range(K)]
            self.provenance = [[] for _ in range(K)]

    def record(self, k: int, z, y: float, refs=()) -> int:
        self.inputs[k].append(np.asarray(z, dtype=float).copy())
        self.outputs[k].append(float(y))
        self.provenance[k].append(tuple(refs))
        return len(self.outputs[k]) - 1

    def count(self, k: int) -> int:
        return len(self.outputs[k])

    def dataset(self, k: int) -> NodeDataset:
        dim = self.spec.node_dim(k)
        if not self.outputs[k]:
            return NodeDataset.empty(dim)
        return NodeDataset(np.vstack(self.inputs[k]).reshape(-1, dim), np.asarray(self.outputs[k]))

    def distinct_outputs(self, k: int) -> list:
        """Distinct stored outputs of node ``k`` in first-seen order (exact equality)."""
        seen, out = set(), []
        for v in self.outputs[k]:
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out

    def index_of(self, k: int, value: float) -> int:
        return self.outputs[k].index(float(value))

    def copy(self) -> "NetworkHistory":
        return NetworkHistory(
            self.spec, [list(a) for a in self.inputs], [list(a) for a in self.outputs],
            [list(a) for a in self.provenance], self.iteration, self.spent,
        )


NodeOracle = Callable[[int, np.ndarray], float]


def full_evaluate(spec: NetworkSpec, truth: NodeOracle, x, history: Optional[NetworkHistory] = None):
    """Evaluate every node at design ``x`` in topological order.

    Observed outputs (noisy, if the oracle is noisy) are what downstream
    nodes receive. All K observations are recorded when ``history`` is given.
    """
    x = np.asarray(x, dtype=float)
    if not spec.in_bounds(x):
        raise PreconditionError(f"x={x} outside the domain")
    ys, idx = [], []
    for k in range(spec.K):
        z = spec.node_input(k, [ys[j] for j in spec.parents[k]], x)
        y = float(truth(k, z))
        ys.append(y)
        if history is not None:
            idx.append(history.record(k, z, y, [(j, idx[j]) for j in spec.parents[k]]))
            history.spent += spec.cost(k, z)
    return ys


def enumerate_candidates(spec: NetworkSpec, history: NetworkHistory, k: int):
    """Parent-output tuples available to node ``k``.

    Root nodes get a single empty tuple; a node with an unobserved parent
    gets an empty list; a node with known parent ranges gets a
    :class:`ParentBox`.
    """
    if spec.parent_ranges[k] is not None:
        return ParentBox(spec.parent_ranges[k])
    parents = spec.parents[k]
    if not parents:
        return [()]
    pools = [history.distinct_outputs(j) for j in parents]
    if any(not p for p in pools):
        return []
    return [tuple(t) for t in itertools.product(*pools)]


def partial_evaluate(spec: NetworkSpec, truth: NodeOracle, history: NetworkHistory,
                     c: CandidateInput) -> float:
    """Evaluate a single node at a candidate and record it."""
    k = c.node
    parents = spec.parents[k]
    ctrl = np.asarray(c.controllable, float).reshape(-1)
    if len(c.parent_outputs) != len(parents) or ctrl.shape[0] != len(spec.input_indices[k]):
        raise PreconditionError(f"candidate does not match the arity of node {k}")
    ii = list(spec.input_indices[k])
    if np.any(ctrl < spec.lower[ii] - 1e-12) or np.any(ctrl > spec.upper[ii] + 1e-12):
        raise PreconditionError("controllable inputs outside the domain")
    refs = []
    box = spec.parent_ranges[k]
    for pos, (j, v) in enumerate(zip(parents, c.parent_outputs)):
        if box is not None:
            if not box[pos, 0] - 1e-12 <= v <= box[pos, 1] + 1e-12:
                raise PreconditionError(f"parent value {v} outside the known range of node {j}")
            if v in history.outputs[j]:
                refs.append((j, history.index_of(j, v)))
            continue
        if float(v) not in history.outputs[j]:
            raise PreconditionError(f"parent output {v} of node {j} was never observed")
        refs.append((j, history.index_of(j, v)))
    z = c.z()
    y = float(truth(k, z))
    history.record(k, z, y, refs)
    history.spent += spec.cost(k, z)
    return y
