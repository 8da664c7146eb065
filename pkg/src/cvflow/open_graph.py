"""Open graphs: a weighted symmetric adjacency matrix with input and output sets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .field_linalg import (
    Field,
    Matrix,
    ModField,
    NotPrimeError,
    RealField,
    field_from_json,
)

Vertex = Union[str, int]


class GraphError(ValueError):
    code = "invalid_graph"


class MalformedDocument(GraphError):
    code = "malformed_document"


class AsymmetricAdjacency(GraphError):
    code = "asymmetric_adjacency"


class NonzeroDiagonal(GraphError):
    code = "nonzero_diagonal"


class UnknownVertex(GraphError):
    code = "unknown_vertex"


class DuplicateVertex(GraphError):
    code = "duplicate_vertex"


class DuplicateEdge(GraphError):
    code = "duplicate_edge"


class ZeroWeightEdge(GraphError):
    code = "zero_weight_edge"


class NonPrimeModulus(GraphError):
    code = "non_prime_modulus"


class OrderError(GraphError):
    code = "order_error"


@dataclass(frozen=True, eq=False)
class OpenGraph:
    vertices: tuple[str, ...]
    field: Field
    adjacency: np.ndarray
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]

    def __post_init__(self) -> None:
        verts = tuple(str(v) for v in self.vertices)
        if len(set(verts)) != len(verts):
            raise DuplicateVertex("vertex labels must be unique")
        adj = self.field.array(self.adjacency)
        n = len(verts)
        if adj.shape != (n, n):
            raise MalformedDocument(f"adjacency has shape {adj.shape}, expected {(n, n)}")
        if self.field.nonzero_mask(np.diag(adj)).any():
            bad = int(np.flatnonzero(self.field.nonzero_mask(np.diag(adj)))[0])
            raise NonzeroDiagonal(f"vertex {verts[bad]!r} has a nonzero self-weight")
        asym = self.field.nonzero_mask(self.field.reduce(adj - adj.T))
        if asym.any():
            j, k = (int(x) for x in np.argwhere(asym)[0])
            raise AsymmetricAdjacency(f"weights ({verts[j]},{verts[k]}) and ({verts[k]},{verts[j]}) differ")
        if self.field.kind == "real":
            adj = np.where(self.field.nonzero_mask(adj), adj, 0.0)
        adj = adj.copy()
        adj.setflags(write=False)
        for name in ("inputs", "outputs"):
            idx = tuple(sorted({int(i) for i in getattr(self, name)}))
            for i in idx:
                if not 0 <= i < n:
                    raise UnknownVertex(f"{name[:-1]} index {i} is not a vertex")
            object.__setattr__(self, name, idx)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def build(
        cls,
        field: Field,
        vertices: Sequence[str],
        edges: Iterable[tuple[str, str, object]],
        inputs: Iterable[str] = (),
        outputs: Iterable[str] = (),
    ) -> "OpenGraph":
        verts = [str(v) for v in vertices]
        if len(set(verts)) != len(verts):
            raise DuplicateVertex("vertex labels must be unique")
        pos = {v: i for i, v in enumerate(verts)}
        adj = np.zeros((len(verts), len(verts)), dtype=field.dtype)
        seen: set[frozenset] = set()
        for u, v, w in edges:
            u, v = str(u), str(v)
            for x in (u, v):
                if x not in pos:
                    raise UnknownVertex(f"edge endpoint {x!r} is not a vertex")
            if u == v:
                raise NonzeroDiagonal(f"self-loop on {u!r}")
            key = frozenset((u, v))
            if key in seen:
                raise DuplicateEdge(f"edge {u}-{v} listed more than once")
            seen.add(key)
            weight = field.scalar(w)
            if field.is_zero(weight):
                raise ZeroWeightEdge(f"edge {u}-{v} has zero weight")
            adj[pos[u], pos[v]] = weight
            adj[pos[v], pos[u]] = weight

        def resolve(items, what):
            out = []
            for x in items:
                if str(x) not in pos:
                    raise UnknownVertex(f"{what} {x!r} is not a vertex")
                out.append(pos[str(x)])
            return out

        return cls(tuple(verts), field, adj, tuple(resolve(inputs, "input")), tuple(resolve(outputs, "output")))

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self, v: Vertex) -> int:
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            if 0 <= int(v) < self.n:
                return int(v)
            raise UnknownVertex(f"vertex index {v} out of range")
        try:
            return self.vertices.index(str(v))
        except ValueError:
            raise UnknownVertex(f"unknown vertex {v!r}") from None

    def label(self, i: int) -> str:
        return self.vertices[i]

    def labels(self, idx: Iterable[int]) -> list[str]:
        return [self.vertices[i] for i in idx]

    def weight(self, j: Vertex, k: Vertex):
        w = self.adjacency[self.index(j), self.index(k)]
        return w.item()

    def neighbour_indices(self, j: Vertex) -> list[int]:
        row = self.adjacency[self.index(j)]
        return [int(k) for k in np.flatnonzero(self.field.nonzero_mask(row))]

    def edges(self) -> list[tuple[int, int, object]]:
        """Edges ``(j, k, weight)`` with ``j < k`` in index order."""
        out = []
        mask = self.field.nonzero_mask(self.adjacency)
        for j, k in zip(*np.nonzero(np.triu(mask, 1))):
            out.append((int(j), int(k), self.adjacency[j, k].item()))
        return out

    @property
    def non_outputs(self) -> list[int]:
        outs = set(self.outputs)
        return [v for v in range(self.n) if v not in outs]

    def replace(self, *, adjacency=None, inputs=None, outputs=None, field=None) -> "OpenGraph":
        return OpenGraph(
            self.vertices,
            self.field if field is None else field,
            self.adjacency if adjacency is None else adjacency,
            self.inputs if inputs is None else tuple(inputs),
            self.outputs if outputs is None else tuple(outputs),
        )

    def without(self, removed: Iterable[int], outputs: Iterable[int]) -> "OpenGraph":
        """Drop the vertices ``removed`` and set the outputs (given as old indices)."""
        gone = set(removed)
        keep = [v for v in range(self.n) if v not in gone]
        remap = {old: new for new, old in enumerate(keep)}
        adj = self.adjacency[np.ix_(keep, keep)]
        return OpenGraph(
            tuple(self.vertices[v] for v in keep),
            self.field,
            adj,
            tuple(remap[i] for i in self.inputs if i in remap),
            tuple(remap[o] for o in outputs),
        )

    def with_field(self, field: Field) -> "OpenGraph":
        """Reinterpret the weights in another field (weights must be representable)."""
        if field == self.field:
            return self
        adj = field.array(self.adjacency)
        if field.kind == "mod":
            for j, k, w in self.edges():
                if field.is_zero(adj[j, k]):
                    raise ZeroWeightEdge(
                        f"edge {self.vertices[j]}-{self.vertices[k]} weight {w} vanishes in {field.describe()}"
                    )
        return OpenGraph(self.vertices, field, adj, self.inputs, self.outputs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OpenGraph):
            return NotImplemented
        return (
            self.vertices == other.vertices
            and self.field == other.field
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and np.array_equal(self.adjacency, other.adjacency)
        )

    def __hash__(self) -> int:
        return hash((self.vertices, self.field, self.inputs, self.outputs, self.adjacency.tobytes()))

    def __repr__(self) -> str:
        return (
            f"OpenGraph({self.field.describe()}, vertices={list(self.vertices)}, "
            f"edges={[(self.vertices[j], self.vertices[k], w) for j, k, w in self.edges()]}, "
            f"inputs={self.labels(self.inputs)}, outputs={self.labels(self.outputs)})"
        )


def neighbours(g: OpenGraph, j: Vertex) -> set[str]:
    return {g.vertices[k] for k in g.neighbour_indices(j)}


@dataclass(frozen=True)
class VertexOrder:
    """A total order over some vertices, earliest first, stored as indices."""

    sequence: tuple[int, ...]

    def __post_init__(self) -> None:
        seq = tuple(int(v) for v in self.sequence)
        if len(set(seq)) != len(seq):
            raise OrderError("vertex order contains duplicates")
        object.__setattr__(self, "sequence", seq)

    @classmethod
    def of(cls, g: OpenGraph, vertices: Iterable[Vertex]) -> "VertexOrder":
        return cls(tuple(g.index(v) for v in vertices))

    def position(self, v: int) -> int:
        try:
            return self.sequence.index(v)
        except ValueError:
            raise OrderError(f"vertex {v} is not in the order") from None

    def past(self, targets: Iterable[int]) -> tuple[int, ...]:
        """Every ordered vertex up to and including the latest target."""
        last = max(self.position(t) for t in targets)
        return self.sequence[: last + 1]


def correction_columns(g: OpenGraph, past: Iterable[int]) -> list[int]:
    """Unmeasured non-input vertices, ascending: the columns of a correction matrix."""
    excluded = set(past) | set(g.inputs)
    return [v for v in range(g.n) if v not in excluded]


def correction_submatrix(g: OpenGraph, past: Sequence[int]) -> tuple[Matrix, list[int]]:
    cols = correction_columns(g, past)
    rows = list(past)
    data = g.adjacency[np.ix_(rows, cols)] if rows and cols else np.zeros((len(rows), len(cols)), dtype=g.field.dtype)
    return Matrix(g.field, data), cols


def correction_matrix(g: OpenGraph, order: VertexOrder | Sequence[Vertex], target) -> Matrix:
    """Rows: the past of ``target`` in order; columns: unmeasured non-inputs ascending."""
    if not isinstance(order, VertexOrder):
        order = VertexOrder.of(g, order)
    if isinstance(target, (str, int, np.integer)):
        targets = [g.index(target)]
    else:
        targets = [g.index(t) for t in target]
    if not targets:
        raise OrderError("empty correction target")
    past = order.past(targets)
    return correction_submatrix(g, past)[0]


def _weight_json(field: Field, w):
    return float(w) if field.kind == "real" else int(w)


def serialize(g: OpenGraph) -> dict:
    return {
        "field": g.field.to_json(),
        "vertices": list(g.vertices),
        "edges": [
            {"u": g.vertices[j], "v": g.vertices[k], "w": _weight_json(g.field, w)} for j, k, w in g.edges()
        ],
        "inputs": g.labels(g.inputs),
        "outputs": g.labels(g.outputs),
    }


def dumps(g: OpenGraph) -> str:
    return json.dumps(serialize(g), indent=2) + "\n"


def load_graph(document: Union[Mapping, str]) -> OpenGraph:
    """Build a validated graph from a parsed document or a JSON string."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(document, Mapping):
        raise MalformedDocument("graph document must be a JSON object")
    for key in ("field", "vertices"):
        if key not in document:
            raise MalformedDocument(f"missing key {key!r}")
    try:
        field = field_from_json(document["field"])
    except NotPrimeError as exc:
        raise NonPrimeModulus(str(exc)) from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise MalformedDocument(f"bad field descriptor: {exc}") from None
    vertices = document["vertices"]
    if not isinstance(vertices, list):
        raise MalformedDocument("'vertices' must be a list")
    inputs = document.get("inputs", [])
    outputs = document.get("outputs", [])
    if "adjacency" in document:
        if "edges" in document:
            raise MalformedDocument("give either 'edges' or 'adjacency', not both")
        verts = [str(v) for v in vertices]
        pos = {v: i for i, v in enumerate(verts)}
        for what, items in (("input", inputs), ("output", outputs)):
            for x in items:
                if str(x) not in pos:
                    raise UnknownVertex(f"{what} {x!r} is not a vertex")
        try:
            adj = field.array(document["adjacency"])
        except (TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad adjacency matrix: {exc}") from None
        return OpenGraph(
            tuple(verts), field, adj, tuple(pos[str(x)] for x in inputs), tuple(pos[str(x)] for x in outputs)
        )
    edges = []
    for n, e in enumerate(document.get("edges", [])):
        if not isinstance(e, Mapping) or "u" not in e or "v" not in e:
            raise MalformedDocument(f"edge #{n} must be an object with 'u' and 'v'")
        w = e.get("w", 1)
        if isinstance(w, bool) or not isinstance(w, (int, float)):
            raise MalformedDocument(f"edge #{n} weight must be a number")
        try:
            field.scalar(w)
        except ValueError as exc:
            raise MalformedDocument(f"edge #{n}: {exc}") from None
        edges.append((e["u"], e["v"], w))
    return OpenGraph.build(field, vertices, edges, inputs, outputs)


def read_graph(path: str) -> OpenGraph:
    with open(path, encoding="utf-8") as fh:
        return load_graph(fh.read())


__all__ = [
    "OpenGraph",
    "resolve_angles",
    "VertexOrder",
    "GraphError",
    "MalformedDocument",
    "AsymmetricAdjacency",
    "NonzeroDiagonal",
    "UnknownVertex",
    "DuplicateVertex",
    "DuplicateEdge",
    "ZeroWeightEdge",
    "NonPrimeModulus",
    "OrderError",
    "neighbours",
    "correction_matrix",
    "correction_columns",
    "correction_submatrix",
    "serialize",
    "dumps",
    "load_graph",
    "read_graph",
    "RealField",
    "ModField",
]


def resolve_angles(g: OpenGraph, angles: Mapping | None) -> dict[int, tuple]:
    """Measurement parameters keyed by vertex index, padded to a triple ``(a, b, c)``."""
    out: dict[int, tuple] = {}
    for v, params in (angles or {}).items():
        triple = tuple(params)
        if len(triple) > 3:
            raise MalformedDocument(f"vertex {v!r} has {len(triple)} measurement parameters, at most 3 allowed")
        out[g.index(v)] = triple + (0,) * (3 - len(triple))
    return out
