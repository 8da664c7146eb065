"""Circuit extraction from open graphs with a flow.

Layers are peeled from the last-measured one backwards. For the current layer
the stored correction vectors drive column operations on the correction
matrix until every vector has a single support vertex; each operation is a
weighted CX among current outputs and rewires the graph accordingly. What is
left is a causal flow for that layer, whose arcs become teleportation (``J``)
gates; the vertices they land on are removed, the layer becomes the new output
set and the procedure repeats until only the inputs remain.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from .field_linalg import ColumnOp, Field, field_from_json
from .flow import CausalFlow, FlowResult, verify_flow
from .open_graph import OpenGraph, resolve_angles


class ExtractionError(ValueError):
    code = "extraction_failed"


class IoMismatch(ExtractionError):
    """Extraction needs exactly as many inputs as outputs."""

    code = "io_mismatch"


class InvalidFlow(ExtractionError):
    code = "invalid_flow"


class CoverMismatch(ExtractionError):
    code = "cover_mismatch"


@dataclass(frozen=True)
class Gate:
    """``J`` on one wire, ``CZ`` on two, or ``CX`` with ``wires = (control, target)``."""

    kind: str
    wires: tuple[int, ...]
    weight: object
    params: tuple = ()
    vertices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        arity = {"J": 1, "CZ": 2, "CX": 2}
        if self.kind not in arity:
            raise ExtractionError(f"unknown gate kind {self.kind!r}")
        if len(self.wires) != arity[self.kind]:
            raise ExtractionError(f"{self.kind} acts on {arity[self.kind]} wire(s)")
        if len(set(self.wires)) != len(self.wires):
            raise ExtractionError(f"{self.kind} wires must be distinct")


@dataclass(frozen=True)
class Section:
    layer: int
    start: int
    stop: int


@dataclass(frozen=True)
class Circuit:
    field: Field
    wires: tuple[tuple[int, ...], ...]
    gates: tuple[Gate, ...]
    sections: tuple[Section, ...]
    vertex_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for g in self.gates:
            for w in g.wires:
                if not 0 <= w < len(self.wires):
                    raise ExtractionError(f"gate {g} references missing wire {w}")
            if g.kind == "J" and self.field.is_zero(g.weight):
                raise ExtractionError("J weight must be invertible")

    @property
    def width(self) -> int:
        return len(self.wires)

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)

    def section_gates(self, s: Section) -> tuple[Gate, ...]:
        return self.gates[s.start : s.stop]

    def label(self, v: int) -> str:
        return self.vertex_labels[v] if self.vertex_labels else str(v)


@dataclass(frozen=True)
class PathCover:
    paths: tuple[tuple[int, ...], ...]
    arc_weights: Mapping[tuple[int, int], object] = dc_field(default_factory=dict)

    def wire_of(self) -> dict[int, int]:
        return {v: w for w, path in enumerate(self.paths) for v in path}

    def arcs(self) -> list[tuple[int, int]]:
        return [(p[i], p[i + 1]) for p in self.paths for i in range(len(p) - 1)]

    def problems(self, g: OpenGraph) -> list[str]:
        """Violations of the path-cover conditions; empty for a valid cover."""
        out = []
        seen: dict[int, int] = {}
        for w, path in enumerate(self.paths):
            for v in path:
                if v in seen:
                    out.append(f"vertex {g.label(v)} lies on paths {seen[v]} and {w}")
                seen[v] = w
        missing = set(range(g.n)) - set(seen)
        if missing:
            out.append(f"vertices {g.labels(sorted(missing))} are not covered")
        ins, outs = set(g.inputs), set(g.outputs)
        for path in self.paths:
            for pos, v in enumerate(path):
                if v in ins and pos != 0:
                    out.append(f"input {g.label(v)} is not the start of its path")
                if v in outs and pos != len(path) - 1:
                    out.append(f"output {g.label(v)} is not the end of its path")
        for arc in self.arcs():
            w = self.arc_weights.get(arc)
            if w is None or g.field.is_zero(w):
                out.append(f"arc {g.label(arc[0])}->{g.label(arc[1])} has no edge")
        return out


# ---------------------------------------------------------------- peeling


@dataclass(frozen=True)
class TriangularisedLayer:
    """Outcome of rewriting the last-measured layer into causal form.

    ``graph`` is the rewired graph (edges among current outputs removed and listed
    in ``stripped``); ``ops`` are the column operations in the order applied and
    ``cx_gates`` the matching ``(control, target, weight)`` triples in time order;
    ``causal_map`` sends each layer vertex to its single correction vertex and
    ``vectors`` holds every stored correction vector after the operations.
    """

    graph: OpenGraph
    layer: tuple[int, ...]
    stripped: tuple[tuple[int, int, object], ...]
    ops: tuple[ColumnOp, ...]
    cx_gates: tuple[tuple[int, int, object], ...]
    causal_map: Mapping[int, int]
    j_weights: Mapping[int, object]
    vectors: Mapping[int, Mapping[int, object]]


def _dense_vectors(g: OpenGraph, fr: FlowResult) -> dict[int, np.ndarray]:
    fld = g.field
    out = {}
    for j in fr.measured():
        vec = np.zeros(g.n, dtype=fld.dtype)
        for col, amount in fr.vector(j).items():
            vec[col] = fld.scalar(amount)
        out[j] = vec
    return out


def _triangularise(
    g: OpenGraph, adj: np.ndarray, alive: set[int], outputs: set[int], layer: dict[int, int], vectors: dict
):
    """Peel layer 1 in place; returns (stripped, ops, causal_map, j_weights)."""
    fld = g.field
    stripped = []
    outs = sorted(outputs)
    for a_pos, u in enumerate(outs):
        for v in outs[a_pos + 1 :]:
            if not fld.is_zero(adj[u, v]):
                stripped.append((u, v, adj[u, v].item()))
                adj[u, v] = adj[v, u] = 0
    members = sorted(v for v, k in layer.items() if k == 1)
    measured = sorted(v for v in alive if v not in outputs)
    ops: list[ColumnOp] = []
    pivots: dict[int, int] = {}
    pending = list(members)

    def support(j):
        return [int(c) for c in np.flatnonzero(fld.nonzero_mask(vectors[j]))]

    while pending:
        j = min(pending, key=lambda v: (len(support(v)), v))
        pending.remove(j)
        cols = support(j)
        free = [c for c in cols if c not in pivots.values()]
        if not free:
            raise InvalidFlow(f"correction vector of {g.label(j)} lies in the span of earlier pivots")
        t = free[0]
        ct = vectors[j][t]
        for k in cols:
            if k == t:
                continue
            s = fld.scalar(vectors[j][k] * fld.inv(ct)) if fld.kind == "mod" else vectors[j][k] / ct
            ops.append(ColumnOp.add_scaled(t, k, s))
            for vec in vectors.values():
                vec[k] = vec[k] - s * vec[t]
                fld.clean(vec)
            adj[t, :] = adj[t, :] + s * adj[k, :]
            adj[:, t] = adj[t, :]
            adj[t, t] = 0
            fld.clean(adj)
        pivots[j] = t
    j_weights = {}
    for j, t in pivots.items():
        col = adj[measured, t]
        want = np.zeros(len(measured), dtype=fld.dtype)
        want[measured.index(j)] = fld.inv(vectors[j][t])
        diff = fld.clean(fld.reduce(col - want))
        if fld.nonzero_mask(diff).any():
            raise InvalidFlow(f"vertex {g.label(t)} is not a causal successor of {g.label(j)} after rewriting")
        j_weights[j] = adj[j, t].item()
    return stripped, ops, pivots, j_weights


def triangularise_layer(g: OpenGraph, fr: FlowResult) -> TriangularisedLayer:
    """Rewrite the last-measured layer ``L_1`` of ``fr`` into causal form."""
    _require_flow(g, fr)
    adj = g.adjacency.copy()
    vectors = _dense_vectors(g, fr)
    stripped, ops, cmap, jw = _triangularise(
        g, adj, set(range(g.n)), set(g.outputs), dict(fr.layer), vectors
    )
    cx = tuple((op.target, op.source, op.scalar) for op in reversed(ops))
    sparse = {
        j: {int(c): vec[c].item() for c in np.flatnonzero(g.field.nonzero_mask(vec))} for j, vec in vectors.items()
    }
    return TriangularisedLayer(
        g.replace(adjacency=adj),
        tuple(fr.layer_members(1)),
        tuple(stripped),
        tuple(ops),
        cx,
        dict(cmap),
        jw,
        sparse,
    )


@dataclass(frozen=True)
class _Stage:
    layer_index: int
    members: tuple[int, ...]
    stripped: tuple
    ops: tuple[ColumnOp, ...]
    causal_map: Mapping[int, int]
    j_weights: Mapping[int, object]


def _require_flow(g: OpenGraph, fr: FlowResult) -> None:
    if fr is None:
        raise InvalidFlow("the graph has no flow")
    if fr.field != g.field:
        raise InvalidFlow("flow and graph are over different fields")
    problems = verify_flow(g, fr)
    if problems:
        raise InvalidFlow("; ".join(problems))


def _require_square(g: OpenGraph) -> None:
    if len(g.inputs) != len(g.outputs):
        raise IoMismatch(f"extraction needs |I| = |O|, got |I| = {len(g.inputs)} and |O| = {len(g.outputs)}")


def _peel(g: OpenGraph, fr: FlowResult) -> list[_Stage]:
    """All stages, ``L_1`` first; the final stage has no members and carries the input CZs."""
    _require_square(g)
    _require_flow(g, fr)
    adj = g.adjacency.copy()
    vectors = _dense_vectors(g, fr)
    alive = set(range(g.n))
    outputs = set(g.outputs)
    layer = {v: k for v, k in fr.layer.items()}
    stages = []
    for k in range(1, fr.depth + 1):
        stripped, ops, cmap, jw = _triangularise(g, adj, alive, outputs, layer, vectors)
        stages.append(_Stage(k, tuple(sorted(cmap)), tuple(stripped), tuple(ops), cmap, jw))
        removed = set(cmap.values())
        for t in removed:
            adj[t, :] = 0
            adj[:, t] = 0
        alive -= removed
        outputs = (outputs - removed) | set(cmap)
        for j in cmap:
            del vectors[j]
        for vec in vectors.values():
            vec[list(removed)] = 0
        layer = {v: lv - 1 for v, lv in layer.items() if v in alive}
    if alive != outputs or alive != set(g.inputs):
        raise InvalidFlow("peeling did not end on the inputs")
    final = []
    ins = sorted(alive)
    for a_pos, u in enumerate(ins):
        for v in ins[a_pos + 1 :]:
            if not g.field.is_zero(adj[u, v]):
                final.append((u, v, adj[u, v].item()))
    stages.append(_Stage(fr.depth + 1, (), tuple(final), (), {}, {}))
    return stages


def _cover_from_successors(g: OpenGraph, succ: Mapping[int, int], weights: Mapping[tuple[int, int], object]):
    paths = []
    for i in g.inputs:
        path = [i]
        while path[-1] in succ:
            path.append(succ[path[-1]])
            if len(path) > g.n:
                raise CoverMismatch("successor map has a cycle")
        paths.append(tuple(path))
    cover = PathCover(tuple(paths), dict(weights))
    problems = cover.problems(g)
    if problems:
        raise CoverMismatch("; ".join(problems))
    return cover


def _cover_from_stages(g: OpenGraph, stages: Sequence[_Stage]) -> PathCover:
    succ: dict[int, int] = {}
    weights = {}
    for st in stages:
        for j, t in st.causal_map.items():
            succ[j] = t
            weights[(j, t)] = st.j_weights[j]
    return _cover_from_successors(g, succ, weights)


def build_path_cover(g: OpenGraph, fr: FlowResult) -> PathCover:
    """One path per input, following the causal arcs found while peeling layers."""
    return _cover_from_stages(g, _peel(g, fr))


def _cz_gates(stripped, wire) -> list[Gate]:
    out = []
    for u, v, w in sorted(stripped, key=lambda e: (e[0], e[1])):
        out.append(Gate("CZ", (wire[u], wire[v]), w, (), (u, v)))
    return out


def extract_circuit(g: OpenGraph, fr: FlowResult, angles: Mapping | None = None) -> Circuit:
    """A circuit on ``|I|`` wires equal, up to global phase, to the corrected pattern.

    Sections follow measurement order: the section of layer ``k`` holds the CZ
    gates on the wires entering it, then the ``J`` gates of layer ``k``, then
    its CX gates in reverse order of the column operations.
    """
    params = resolve_angles(g, angles)
    stages = _peel(g, fr)
    cover = _cover_from_stages(g, stages)
    wire = cover.wire_of()
    gates: list[Gate] = []
    sections: list[Section] = []
    # stages[k-1] is layer k; stages[-1] holds the CZs among the inputs
    for k in range(fr.depth, 0, -1):
        st = stages[k - 1]
        start = len(gates)
        gates += _cz_gates(stages[k].stripped, wire)
        for j in st.members:
            t = st.causal_map[j]
            gates.append(Gate("J", (wire[j],), st.j_weights[j], params.get(j, (0, 0, 0)), (j, t)))
        for op in reversed(st.ops):
            gates.append(Gate("CX", (wire[op.target], wire[op.source]), op.scalar, (), (op.target, op.source)))
        if k == 1:
            gates += _cz_gates(stages[0].stripped, wire)
        sections.append(Section(k, start, len(gates)))
    if fr.depth == 0:
        gates += _cz_gates(stages[0].stripped, wire)
        sections.append(Section(0, 0, len(gates)))
    return Circuit(g.field, cover.paths, tuple(gates), tuple(sections), tuple(g.vertices))


def spt(g: OpenGraph, cf: CausalFlow, angles: Mapping | None = None) -> Circuit:
    """Star pattern transformation of a causal flow: one wire per flow path.

    Each arc ``j -> f(j)`` becomes ``J(A[j, f(j)])``; every other edge becomes a CZ
    placed once both endpoints exist on their wires and before either is measured.
    """
    _require_square(g)
    params = resolve_angles(g, angles)
    succ = dict(cf.f)
    for j, t in succ.items():
        if g.field.is_zero(g.adjacency[j, t]):
            raise CoverMismatch(f"flow arc {g.label(j)}->{g.label(t)} is not an edge")
    cover = _cover_from_successors(g, succ, {(j, t): g.adjacency[j, t].item() for j, t in succ.items()})
    wire = cover.wire_of()
    arcs = {frozenset(a) for a in succ.items()}
    gates: list[Gate] = []
    present: set[int] = set()

    def arrive(v: int) -> None:
        for u in sorted(present):
            w = g.adjacency[u, v]
            if not g.field.is_zero(w) and frozenset((u, v)) not in arcs:
                a, b = sorted((u, v))
                gates.append(Gate("CZ", (wire[a], wire[b]), w.item(), (), (a, b)))
        present.add(v)

    for i in g.inputs:
        arrive(i)
    sections = []
    depth = cf.depth
    for k in range(depth, 0, -1):
        start = len(gates)
        for j in sorted(v for v, lv in cf.layer.items() if lv == k):
            if j not in present:
                raise CoverMismatch(f"vertex {g.label(j)} is measured before it exists")
            gates.append(Gate("J", (wire[j],), g.adjacency[j, succ[j]].item(), params.get(j, (0, 0, 0)), (j, succ[j])))
            present.discard(j)
            arrive(succ[j])
        sections.append(Section(k, start, len(gates)))
    if sections:
        sections[0] = Section(sections[0].layer, 0, sections[0].stop)
    else:
        sections.append(Section(0, 0, len(gates)))
    return Circuit(g.field, cover.paths, tuple(gates), tuple(sections), tuple(g.vertices))


# ---------------------------------------------------------------- output


def _num(fld: Field, x):
    return int(x) if fld.kind == "mod" else float(x)


def circuit_to_json(c: Circuit) -> dict:
    fld = c.field
    gates = []
    for g in c.gates:
        doc = {"kind": g.kind, "wires": list(g.wires), "weight": _num(fld, g.weight)}
        if g.kind == "J":
            doc["params"] = [p if isinstance(p, (int, float)) else float(p) for p in g.params]
        if g.vertices:
            doc["vertices"] = [c.label(v) for v in g.vertices]
        gates.append(doc)
    return {
        "field": fld.to_json(),
        "wires": [{"index": w, "path": [c.label(v) for v in path]} for w, path in enumerate(c.wires)],
        "gates": gates,
        "sections": [{"layer": s.layer, "start": s.start, "stop": s.stop} for s in c.sections],
    }


def circuit_from_json(doc: Mapping) -> Circuit:
    """Inverse of :func:`circuit_to_json`; vertex labels become the index space."""
    fld = field_from_json(doc["field"])
    labels: list[str] = []
    index: dict[str, int] = {}

    def idx(label: str) -> int:
        if label not in index:
            index[label] = len(labels)
            labels.append(label)
        return index[label]

    wires = tuple(tuple(idx(v) for v in w["path"]) for w in doc["wires"])
    gates = []
    for gd in doc["gates"]:
        weight = fld.scalar(gd["weight"])
        verts = tuple(idx(v) for v in gd.get("vertices", ()))
        gates.append(Gate(gd["kind"], tuple(gd["wires"]), weight, tuple(gd.get("params", ())), verts))
    sections = tuple(Section(s["layer"], s["start"], s["stop"]) for s in doc["sections"])
    return Circuit(fld, wires, tuple(gates), sections, tuple(labels))


def _fmt(fld: Field, x) -> str:
    return str(int(x)) if fld.kind == "mod" else f"{float(x):.6g}"


def render_ascii(c: Circuit) -> str:
    """Wire diagram: one column per gate, ``||`` between sections."""
    fld = c.field
    names = [f"q{w} " for w in range(c.width)]
    pad = max((len(n) for n in names), default=0)
    rows = [n.ljust(pad) + "-" for n in names]
    boundaries = {s.start for s in c.sections[1:]}
    for pos, g in enumerate(c.gates):
        if pos in boundaries:
            rows = [r + "||-" for r in rows]
        cells = ["-"] * c.width
        w = _fmt(fld, g.weight)
        if g.kind == "J":
            cells[g.wires[0]] = f"J({w})"
        else:
            lo, hi = sorted(g.wires)
            for q in range(lo + 1, hi):
                cells[q] = "|"
            if g.kind == "CZ":
                cells[g.wires[0]] = cells[g.wires[1]] = f"Z({w})"
            else:
                cells[g.wires[0]] = "*"
                cells[g.wires[1]] = f"X({w})"
        width = max(len(x) for x in cells)
        rows = [r + x.center(width, "-") + "-" for r, x in zip(rows, cells)]
    legend = [f"q{w}: " + " -> ".join(c.label(v) for v in path) for w, path in enumerate(c.wires)]
    return "\n".join(rows + [""] + legend) + "\n"
