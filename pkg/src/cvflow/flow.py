"""Flow finding and correction synthesis for open graphs.

The generalised finder grows layers from the outputs backwards: in each round
every not-yet-layered vertex whose correction equation is solvable (treating all
not-yet-layered vertices as already measured) joins the current layer. Over
``Z_2`` this decides g-flow; over ``R`` or ``Z_d`` it decides CV-flow / ``Z_d``-flow
in the layered form used throughout this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping

import numpy as np

from .field_linalg import Field, FieldScalar, Matrix, solve_many
from .open_graph import OpenGraph, Vertex, VertexOrder, correction_submatrix


class NotMeasured(ValueError):
    """The vertex is an output, so it has no correction."""


class UnknownLayer(ValueError):
    pass


@dataclass(frozen=True)
class FlowResult:
    field: Field
    layer: Mapping[int, int]
    corrections: Mapping[int, Mapping[int, Mapping[int, object]]]

    @property
    def depth(self) -> int:
        return max(self.layer.values(), default=0)

    def layer_of(self, v: int) -> int:
        return self.layer[v]

    def layer_members(self, k: int) -> list[int]:
        return sorted(v for v, lv in self.layer.items() if lv == k)

    def measured(self) -> list[int]:
        return self.measurement_order()

    def measurement_order(self) -> list[int]:
        """Measured vertices, highest layer first, ascending index inside a layer."""
        out: list[int] = []
        for k in range(self.depth, 0, -1):
            out.extend(self.layer_members(k))
        return out

    def induced_order(self) -> list[list[int]]:
        """Layers in measurement order (``L_N`` first)."""
        return [self.layer_members(k) for k in range(self.depth, 0, -1)]

    def vector(self, j: int) -> dict[int, object]:
        k = self.layer.get(j, 0)
        if k == 0:
            raise NotMeasured(f"vertex {j} is not measured")
        return dict(self.corrections[k][j])

    def past(self, k: int) -> list[int]:
        """Vertices measured no later than layer ``k``, in measurement order."""
        return [v for v in self.measurement_order() if self.layer[v] >= k]

    def unmeasured_after(self, k: int) -> list[int]:
        return sorted(v for v, lv in self.layer.items() if lv < k)


@dataclass(frozen=True)
class CausalFlow:
    f: Mapping[int, int]
    layer: Mapping[int, int]

    @property
    def depth(self) -> int:
        return max(self.layer.values(), default=0)


@dataclass(frozen=True)
class CorrectionTerm:
    axis: str
    vertex: int
    amount: object


@dataclass(frozen=True)
class CorrectionOp:
    terms: tuple[CorrectionTerm, ...] = dc_field(default=())

    def is_empty(self) -> bool:
        return not self.terms

    def amounts(self, axis: str) -> dict[int, object]:
        return {t.vertex: t.amount for t in self.terms if t.axis == axis}

    def __len__(self) -> int:
        return len(self.terms)


def find_flow(g: OpenGraph) -> FlowResult | None:
    """Layered generalised-flow search; ``None`` when no flow exists."""
    fld = g.field
    layer: dict[int, int] = {o: 0 for o in g.outputs}
    corrections: dict[int, dict[int, dict[int, object]]] = {}
    k = 1
    while True:
        pending = [v for v in range(g.n) if v not in layer]
        if not pending:
            return FlowResult(fld, dict(layer), corrections)
        mat, cols = correction_submatrix(g, pending)
        rhs = np.eye(len(pending), dtype=np.int64)
        solutions = solve_many(mat, rhs)
        found: dict[int, dict[int, object]] = {}
        for v, sol in zip(pending, solutions):
            if sol is None:
                continue
            found[v] = _sparse(fld, cols, sol)
        if not found:
            return None
        for v in found:
            layer[v] = k
        corrections[k] = found
        k += 1


def _sparse(fld: Field, cols: list[int], vec: np.ndarray) -> dict[int, object]:
    mask = fld.nonzero_mask(vec)
    return {cols[i]: vec[i].item() for i in np.flatnonzero(mask)}


def find_causal_flow(g: OpenGraph) -> CausalFlow | None:
    """Greedy layered search for a causal flow (single-vertex corrections)."""
    layer: dict[int, int] = {o: 0 for o in g.outputs}
    f: dict[int, int] = {}
    inputs = set(g.inputs)
    nbrs = [g.neighbour_indices(v) for v in range(g.n)]
    k = 1
    while len(layer) < g.n:
        chosen: dict[int, int] = {}
        for u in sorted(layer):
            if u in inputs:
                continue
            outside = [x for x in nbrs[u] if x not in layer]
            if len(outside) == 1 and outside[0] not in chosen:
                chosen[outside[0]] = u
        if not chosen:
            return None
        for v, u in chosen.items():
            f[v] = u
            layer[v] = k
        k += 1
    return CausalFlow(dict(sorted(f.items())), dict(layer))


def causal_to_flow(g: OpenGraph, cf: CausalFlow) -> FlowResult:
    """The single-support correction vectors a causal flow induces."""
    fld = g.field
    corrections: dict[int, dict[int, dict[int, object]]] = {}
    for v, u in cf.f.items():
        inv = fld.inv(g.adjacency[v, u])
        corrections.setdefault(cf.layer[v], {})[v] = {u: inv}
    return FlowResult(fld, dict(cf.layer), corrections)


def layer_decomposition(fr: FlowResult) -> list[list[int]]:
    """``[L_1, ..., L_N]`` where ``L_1`` is measured last."""
    return [fr.layer_members(k) for k in range(1, fr.depth + 1)]


def layer_matrix(g: OpenGraph, fr: FlowResult, k: int) -> tuple[Matrix, list[int], list[int]]:
    """Correction matrix of layer ``k``: rows are its past, columns the unmeasured non-inputs."""
    past = fr.past(k)
    mat, cols = correction_submatrix(g, past)
    return mat, past, cols


def dense_vector(fr: FlowResult, j: int, cols: list[int]) -> np.ndarray:
    vec = fr.vector(j)
    return fr.field.array([vec.get(c, 0) for c in cols])


def verify_flow(g: OpenGraph, fr: FlowResult) -> list[str]:
    """Problems found when re-multiplying every stored vector; empty when sound."""
    problems: list[str] = []
    fld = g.field
    measured = set(g.non_outputs)
    if set(fr.layer) != set(range(g.n)):
        problems.append("layer map does not cover every vertex")
    for v in range(g.n):
        lv = fr.layer.get(v)
        if lv is None:
            continue
        if v in measured and lv < 1:
            problems.append(f"measured vertex {v} has layer {lv}")
        if v not in measured and lv != 0:
            problems.append(f"output {v} has layer {lv}")
    for k in range(1, fr.depth + 1):
        mat, past, cols = layer_matrix(g, fr, k)
        for j in fr.layer_members(k):
            extra = set(fr.vector(j)) - set(cols)
            if extra:
                problems.append(f"vector of {j} touches non-correctable vertices {sorted(extra)}")
                continue
            got = mat @ dense_vector(fr, j, cols)
            want = np.zeros(len(past), dtype=fld.dtype)
            want[past.index(j)] = 1
            diff = fld.reduce(got - want)
            if fld.kind == "real":
                ok = float(np.max(np.abs(diff), initial=0.0)) <= fld.eps * 2
            else:
                ok = not diff.any()
            if not ok:
                problems.append(f"vector of {j} does not solve its correction equation")
    return problems


def _outcome(fld: Field, m) -> object:
    if isinstance(m, FieldScalar):
        if m.field != fld:
            raise ValueError("outcome lies in a different field")
        return m.value
    return fld.scalar(m)


def _accumulate(g: OpenGraph, fr: FlowResult, j: int, m, xs: dict, zs: dict) -> None:
    fld = g.field
    k = fr.layer.get(j, 0)
    if k == 0:
        raise NotMeasured(f"vertex {g.vertices[j]!r} is not measured")
    m = _outcome(fld, m)
    if fld.is_zero(m):
        return
    unmeasured = fr.unmeasured_after(k)
    for col, coeff in fr.vector(j).items():
        amount = coeff * m
        xs[col] = xs.get(col, 0) - amount
        for ell in unmeasured:
            a = g.adjacency[col, ell].item()
            if a:
                zs[ell] = zs.get(ell, 0) - a * amount


def _to_op(fld: Field, xs: dict, zs: dict) -> CorrectionOp:
    terms = []
    for axis, amounts in (("X", xs), ("Z", zs)):
        for v in sorted(amounts):
            amt = fld.scalar(amounts[v]) if fld.kind == "mod" else float(amounts[v])
            if not fld.is_zero(amt):
                terms.append(CorrectionTerm(axis, v, amt))
    return CorrectionOp(tuple(terms))


def correction_for(g: OpenGraph, fr: FlowResult, j: Vertex, m) -> CorrectionOp:
    """Reduced correction for outcome ``m`` at ``j``: ``X_k(-m c_k)`` and ``Z_l(-m sum_k A[k,l] c_k)``."""
    xs: dict[int, object] = {}
    zs: dict[int, object] = {}
    _accumulate(g, fr, g.index(j), m, xs, zs)
    return _to_op(g.field, xs, zs)


def simultaneous_correction(g: OpenGraph, fr: FlowResult, k: int, outcomes: Mapping) -> CorrectionOp:
    """Product of the corrections of every vertex in layer ``k``, amounts summed per vertex."""
    if not 1 <= k <= fr.depth:
        raise UnknownLayer(f"layer {k} does not exist (depth {fr.depth})")
    members = fr.layer_members(k)
    resolved = {g.index(v): m for v, m in outcomes.items()}
    stray = set(resolved) - set(members)
    if stray:
        raise UnknownLayer(f"vertices {sorted(stray)} are not in layer {k}")
    xs: dict[int, object] = {}
    zs: dict[int, object] = {}
    for j in members:
        _accumulate(g, fr, j, resolved.get(j, 0), xs, zs)
    return _to_op(g.field, xs, zs)


def measurement_order(fr: FlowResult) -> VertexOrder:
    return VertexOrder(tuple(fr.measurement_order()))


def flow_to_json(g: OpenGraph, fr: FlowResult) -> dict:
    return {
        "depth": fr.depth,
        "layers": [g.labels(layer) for layer in layer_decomposition(fr)],
        "corrections": {
            g.vertices[j]: {g.vertices[c]: _json_num(fr.field, a) for c, a in sorted(fr.vector(j).items())}
            for j in sorted(fr.measured())
        },
    }


def _json_num(fld: Field, x):
    return float(x) if fld.kind == "real" else int(x)


def flow_from_json(g: OpenGraph, doc: Mapping) -> FlowResult:
    """Rebuild a flow from its report form (used to feed hand-edited corrections)."""
    layer = {o: 0 for o in g.outputs}
    corrections: dict[int, dict[int, dict[int, object]]] = {}
    for k, members in enumerate(doc["layers"], start=1):
        for label in members:
            j = g.index(label)
            layer[j] = k
            vec = doc["corrections"][label]
            corrections.setdefault(k, {})[j] = {g.index(c): g.field.scalar(a) for c, a in vec.items()}
    return FlowResult(g.field, layer, corrections)


def correction_gate_count(g: OpenGraph, fr: FlowResult) -> int:
    """Upper bound on displacement terms over all measured vertices (one outcome each)."""
    total = 0
    for j in fr.measured():
        total += len(correction_for(g, fr, j, 1))
    return total


def is_runnable(g: OpenGraph, fr: FlowResult) -> bool:
    """No correction touches an input X-wise or a vertex measured no later than its source."""
    inputs = set(g.inputs)
    for j in fr.measured():
        op = correction_for(g, fr, j, 1)
        for t in op.terms:
            if fr.layer[t.vertex] >= fr.layer[j]:
                return False
            if t.axis == "X" and t.vertex in inputs:
                return False
    return True
