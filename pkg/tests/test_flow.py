import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvflow.field_linalg import FieldScalar, ModField, RealField
from cvflow.fixtures import adder_chain, gflow_not_cvflow, hexagon, line_graph, single_output
from cvflow.flow import (
    FlowResult,
    NotMeasured,
    UnknownLayer,
    causal_to_flow,
    correction_for,
    correction_gate_count,
    find_causal_flow,
    find_flow,
    flow_from_json,
    flow_to_json,
    is_runnable,
    layer_decomposition,
    measurement_order,
    simultaneous_correction,
    verify_flow,
)
from cvflow.open_graph import OpenGraph
from conftest import random_open_graph
from oracles import brute_force_gflow


def test_line_graph_flow():
    g = line_graph(ModField(3), weights=(1, 2))
    fr = find_flow(g)
    assert fr.depth == 2
    assert layer_decomposition(fr) == [[1], [0]]
    assert fr.vector(0) == {1: 1}
    assert fr.vector(1) == {2: 2}  # 2 * 2 = 1 mod 3
    assert fr.measurement_order() == [0, 1]
    assert measurement_order(fr).sequence == (0, 1)


def test_outputs_only_graph_has_empty_flow():
    fr = find_flow(single_output())
    assert fr.depth == 0 and fr.measured() == []


def test_outputs_have_no_vector():
    fr = find_flow(line_graph())
    with pytest.raises(NotMeasured):
        fr.vector(2)


def test_isolated_measured_vertex_has_no_flow():
    g = OpenGraph.build(RealField(), ["a", "o"], [], [], ["o"])
    assert find_flow(g) is None
    assert find_causal_flow(g) is None


def test_hexagon_real_vs_binary():
    fr = find_flow(hexagon(RealField()))
    assert fr is not None and fr.depth == 1
    assert find_flow(hexagon(ModField(2))) is None
    assert find_flow(hexagon(ModField(3))) is not None


def test_separation_fixture():
    assert find_flow(gflow_not_cvflow(ModField(2))) is not None
    assert find_flow(gflow_not_cvflow(RealField())) is None
    assert find_flow(gflow_not_cvflow(ModField(3))) is None


def test_adder_is_one_layer_with_staircase_causal_flow():
    g = adder_chain(4, RealField())
    fr = find_flow(g)
    assert fr.depth == 1
    cf = find_causal_flow(g)
    assert cf is not None and cf.depth == 4
    assert {g.vertices[v]: g.vertices[u] for v, u in cf.f.items()} == {f"i{k}": f"o{k}" for k in range(1, 5)}


def test_causal_to_flow_is_valid():
    g = line_graph(ModField(5), weights=(2, 3))
    fr = causal_to_flow(g, find_causal_flow(g))
    assert verify_flow(g, fr) == []
    assert fr.vector(0) == {1: 3}


def test_verify_flow_reports_corruption():
    g = hexagon(RealField())
    fr = find_flow(g)
    j = fr.measured()[0]
    bad = {k: {v: {c: a * 2 for c, a in vec.items()} for v, vec in layer.items()} for k, layer in fr.corrections.items()}
    broken = FlowResult(fr.field, fr.layer, bad)
    assert any("does not solve" in p for p in verify_flow(g, broken))
    assert verify_flow(g, FlowResult(fr.field, {**fr.layer, j: 0}, fr.corrections))


def test_correction_for_line_graph():
    g = line_graph(ModField(5), weights=(1, 1))
    fr = find_flow(g)
    op = correction_for(g, fr, "i", 2)
    assert op.amounts("X") == {1: 3}
    assert op.amounts("Z") == {2: 3}
    assert correction_for(g, fr, "i", 0).is_empty()
    with pytest.raises(NotMeasured):
        correction_for(g, fr, "o", 1)


def test_correction_accepts_field_scalars():
    g = line_graph(ModField(5))
    fr = find_flow(g)
    assert correction_for(g, fr, "i", FieldScalar(2, ModField(5))) == correction_for(g, fr, "i", 2)
    with pytest.raises(ValueError):
        correction_for(g, fr, "i", FieldScalar(2, ModField(3)))


def test_simultaneous_correction_errors():
    g = adder_chain(3, ModField(5))
    fr = find_flow(g)
    with pytest.raises(UnknownLayer):
        simultaneous_correction(g, fr, 2, {})
    with pytest.raises(UnknownLayer):
        simultaneous_correction(g, fr, 1, {"o1": 1})


def test_real_correction_amounts():
    g = hexagon(RealField())
    fr = find_flow(g)
    op = simultaneous_correction(g, fr, 1, {"v1": 1.0})
    assert set(op.amounts("X")) == {g.index(o) for o in ("o1", "o2", "o3")}


def test_json_round_trip():
    g = hexagon(RealField())
    fr = find_flow(g)
    again = flow_from_json(g, flow_to_json(g, fr))
    assert verify_flow(g, again) == []
    assert again.layer == fr.layer


def test_runnable_and_gate_count():
    g = adder_chain(3, ModField(5))
    fr = find_flow(g)
    assert is_runnable(g, fr)
    assert correction_gate_count(g, fr) > 0


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 1_000_000), st.sampled_from([2, 3, 5]), st.integers(2, 8), st.integers(1, 2))
def test_found_flows_are_sound(seed, d, n, io):
    g = random_open_graph(np.random.default_rng(seed), d, n, min(io, n // 2))
    fr = find_flow(g)
    if fr is None:
        return
    assert verify_flow(g, fr) == []
    assert set(fr.layer) == set(range(g.n))
    assert is_runnable(g, fr)


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 1_000_000), st.sampled_from([2, 3, 5]), st.integers(2, 8))
def test_causal_flow_implies_generalised_flow(seed, d, n):
    g = random_open_graph(np.random.default_rng(seed), d, n, 1)
    cf = find_causal_flow(g)
    if cf is None:
        return
    assert find_flow(g) is not None
    assert verify_flow(g, causal_to_flow(g, cf)) == []
    # every measured vertex is corrected by a neighbour measured strictly later
    for v, u in cf.f.items():
        assert g.adjacency[v, u] != 0
        assert cf.layer[u] < cf.layer[v]


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 1_000_000), st.integers(2, 8))
def test_flow_depth_never_exceeds_causal_depth(seed, n):
    g = random_open_graph(np.random.default_rng(seed), 3, n, 1)
    cf = find_causal_flow(g)
    if cf is None:
        return
    assert find_flow(g).depth <= cf.depth


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 1_000_000), st.integers(2, 5), st.integers(0, 2), st.integers(1, 2))
def test_binary_finder_agrees_with_brute_force(seed, n, ins, outs):
    rng = np.random.default_rng(seed)
    g = random_open_graph(rng, 2, n, 1, density=0.5)
    perm = rng.permutation(n)
    g = g.replace(inputs=tuple(int(v) for v in perm[:ins]), outputs=tuple(int(v) for v in perm[n - outs :]))
    assert (find_flow(g) is not None) == brute_force_gflow(g.adjacency.tolist(), g.inputs, g.outputs)
