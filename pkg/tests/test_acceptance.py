"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary under "acceptance criteria".
"""

import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, random_open_graph
from cvflow.extract import IoMismatch, build_path_cover, extract_circuit, triangularise_layer
from cvflow.field_linalg import Matrix, ModField, RealField, rref
from cvflow.fixtures import adder_chain, appendix_matrices, gflow_not_cvflow, hexagon, single_output
from cvflow.flow import find_flow, simultaneous_correction
from cvflow.open_graph import OpenGraph, correction_submatrix
from cvflow.qudit_sim import (
    GateOp,
    QuditState,
    circuit_action,
    circuit_unitary_in_output_order,
    gate_unitary,
    h_inverse_matrix,
    h_matrix,
    omega,
    prepare_graph_state,
    run_circuit,
    run_mbqc,
    states_equal_up_to_phase,
    verify_against_circuit,
    verify_against_target,
    x_matrix,
    z_matrix,
)
from oracles import (
    brute_force_gflow,
    cramer_solve,
    entangler,
    enumerate_solutions,
    modular_rref,
    rational_rref,
)

FIDELITY_TOL = 1e-9


@contextmanager
def criterion(number: int, detail: str):
    ACCEPTANCE_RESULTS[number] = (False, detail)
    yield
    ACCEPTANCE_RESULTS[number] = (True, detail)


def best_time(fn, repeats: int = 7) -> float:
    fn()
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


# ---------------------------------------------------------------- 1


def test_criterion_1_separation_matrices_have_identity_rref():
    with criterion(1, "both 4x4 systems reduce to I4 over R, case 2 also over Z2; fixture has no CV-flow; < 1 ms"):
        mats = appendix_matrices()
        g_real = gflow_not_cvflow(RealField())
        identity = [[int(i == j) for j in range(4)] for i in range(4)]

        order = [g_real.index(v) for v in ("c", "u1", "u2", "u3")]
        block, _ = correction_submatrix(g_real, order)
        for rows in mats.values():
            assert np.array_equal(block.data, np.array([r[:3] for r in rows], dtype=float))

        def decide():
            for rows in mats.values():
                assert rref(Matrix(RealField(), rows)).matrix.equals(Matrix.identity(RealField(), 4))
            binary = rref(Matrix(ModField(2), mats["outer_last"]))
            assert binary.matrix.equals(Matrix.identity(ModField(2), 4))
            assert find_flow(g_real) is None

        elapsed = best_time(decide)
        for rows in mats.values():
            assert rational_rref(rows) == identity
        assert modular_rref(mats["outer_last"], 2) == identity
        # over Z2 the centre-last system is consistent; (1, 1, 1) is the g-flow's correction set
        centre = mats["centre_last"]
        assert enumerate_solutions([r[:3] for r in centre], [r[3] for r in centre], 2) == [(1, 1, 1)]
        assert find_flow(gflow_not_cvflow(ModField(2))) is not None
        assert elapsed < 1e-3, f"{elapsed * 1e3:.3f} ms"


@pytest.mark.xfail(strict=True, reason="over Z2 the centre-last system is consistent, so its RREF is not I4")
def test_criterion_1_binary_centre_last_rref_is_identity():
    key = "1-Z2"
    ACCEPTANCE_RESULTS[key] = (False, "centre-last system over Z2 reduces to [I3 | 1; 0], not I4 (expected failure)")
    rows = appendix_matrices()["centre_last"]
    assert rref(Matrix(ModField(2), rows)).matrix.equals(Matrix.identity(ModField(2), 4))
    ACCEPTANCE_RESULTS[key] = (True, "centre-last system over Z2 reduces to I4")


# ---------------------------------------------------------------- 2


def test_criterion_2_hexagon_separation():
    with criterion(2, "hexagon: R vector (-1/2, 1/2, 1/2) for the last vertex; no Z2 solution"):
        g = hexagon(RealField())
        fr = find_flow(g)
        assert fr is not None and fr.depth == 1
        measured = [g.index(v) for v in ("v1", "v2", "v3")]
        outputs = [g.index(o) for o in ("o1", "o2", "o3")]
        a = g.adjacency[np.ix_(measured, outputs)].astype(int).tolist()

        last = g.index("v3")
        rhs = [0, 0, 1]
        oracle = cramer_solve(a, rhs)
        assert oracle == [-0.5, 0.5, 0.5]
        vec = fr.vector(last)
        got = [vec.get(o, 0.0) for o in outputs]
        assert np.allclose(got, [float(x) for x in oracle], atol=1e-12)
        for m in (1.0, -2.5, 3.0):
            op = simultaneous_correction(g, fr, 1, {"v3": m})
            amounts = op.amounts("X")
            assert np.allclose([amounts[o] for o in outputs], [-m * float(x) for x in oracle])

        for k in range(3):
            assert enumerate_solutions(a, [int(i == k) for i in range(3)], 2) == []
        assert find_flow(hexagon(ModField(2))) is None


# ---------------------------------------------------------------- 3

D_ADDER = 5


def _fourier_columns(d: int, n: int, xs: np.ndarray) -> np.ndarray:
    """``H^{(x)n}|x>`` for each digit vector row of ``xs`` (little-endian columns)."""
    h = h_matrix(d)
    cols = h[:, xs[:, 0]]
    for k in range(1, n):
        cols = (h[:, xs[:, k]][:, None, :] * cols[None, :, :]).reshape(-1, xs.shape[0])
    return cols


def _prefix_index(d: int, xs: np.ndarray) -> np.ndarray:
    prefix = np.cumsum(xs, axis=1) % d
    return (prefix * d ** np.arange(xs.shape[1])).sum(axis=1)


def _digits(d: int, n: int, idx: np.ndarray) -> np.ndarray:
    return (idx[:, None] // d ** np.arange(n)) % d


def _adder_target(d: int, n: int) -> np.ndarray:
    """Dense ``Perm (H^dagger)^{(x)n}``: Fourier-encoded inputs to prefix sums."""
    dim = d**n
    xs = _digits(d, n, np.arange(dim))
    h_inv = np.eye(1)
    for _ in range(n):
        h_inv = np.kron(h_inverse_matrix(d), h_inv)
    out = np.empty_like(h_inv)
    out[_prefix_index(d, xs)] = h_inv
    return out


def _adder_structure(n: int):
    g = adder_chain(n, ModField(D_ADDER))
    fr = find_flow(g)
    assert fr is not None and fr.depth == 1
    ins = [g.index(f"i{k}") for k in range(1, n + 1)]
    outs = [g.index(f"o{k}") for k in range(1, n + 1)]
    for ms in itertools.product(range(D_ADDER), repeat=n):
        op = simultaneous_correction(g, fr, 1, dict(zip(ins, ms)))
        prefix = np.cumsum(ms) % D_ADDER
        assert op.amounts("X") == {o: int(-c) % D_ADDER for o, c in zip(outs, prefix) if c}
        assert op.amounts("Z") == {}

    c = extract_circuit(g, fr)
    assert c.width == n
    assert [tuple(w) for w in c.wires] == [(i, o) for i, o in zip(ins, outs)]
    assert [(gate.wires, gate.weight) for gate in c.gates if gate.kind == "J"] == [((k,), 1) for k in range(n)]
    assert [(gate.wires, gate.weight) for gate in c.gates if gate.kind == "CX"] == [
        ((k, k + 1), 1) for k in range(n - 1)
    ]
    assert c.count("CZ") == 0
    return g, fr, c


def _circuit_fidelity_chunked(c, n: int, chunk: int = 625) -> float:
    """Circuit vs the adder map over every basis input, streamed in column blocks."""
    d = D_ADDER
    overlap, norm_got, norm_want = 0j, 0.0, 0.0
    for start in range(0, d**n, chunk):
        xs = _digits(d, n, np.arange(start, min(start + chunk, d**n)))
        got = circuit_action(c, d, _fourier_columns(d, n, xs))
        overlap += got[_prefix_index(d, xs), np.arange(xs.shape[0])].sum()
        norm_got += float(np.vdot(got, got).real)
        norm_want += xs.shape[0]
    return abs(overlap) / np.sqrt(norm_got * norm_want)


def test_criterion_3_adder():
    detail = (
        "adder N=2..6: 1 layer, prefix-sum corrections, N-wire staircase, circuit exact at d=5; "
        "MBQC all branches at d=5 for N<=4, sampled branches at N=5, exhaustive at d=2,3 for N=6"
    )
    with criterion(3, detail):
        timings = {}
        for n in range(2, 7):
            g, fr, c = _adder_structure(n)
            if n <= 5:
                target = _adder_target(D_ADDER, n)
                assert np.allclose(circuit_unitary_in_output_order(c, g), target, atol=1e-10)
            else:
                assert _circuit_fidelity_chunked(c, n) >= 1 - FIDELITY_TOL

            if n <= 4:
                start = time.perf_counter()
                v = verify_against_target(g, fr, target)
                timings[n] = time.perf_counter() - start
                assert v.exhaustive and len(v.branches) == D_ADDER**n
            elif n == 5:
                v = verify_against_target(g, fr, target, policy="sample:6:2024")
                assert len(v.branches) == 6
            else:
                for d in (2, 3):
                    small = adder_chain(n, ModField(d))
                    v = verify_against_target(small, find_flow(small), _adder_target(d, n))
                    assert v.exhaustive and v.passed and v.deterministic
                continue
            assert v.passed and v.deterministic and v.uniform_probabilities
            assert v.min_fidelity >= 1 - FIDELITY_TOL

        # the last wire carries the sum of the Fourier-encoded inputs
        g, fr, c = _adder_structure(3)
        for xs in ([1, 2, 3], [4, 4, 4], [0, 3, 1]):
            psi = QuditState(D_ADDER, 3, _fourier_columns(D_ADDER, 3, np.array([xs]))[:, 0])
            expected = QuditState.basis(D_ADDER, list(np.cumsum(xs) % D_ADDER))
            for record in run_mbqc(g, fr, input_state=psi):
                assert states_equal_up_to_phase(record.state, expected)

        assert timings[4] < 10.0, f"N=4 took {timings[4]:.2f} s"


# ---------------------------------------------------------------- 4


def test_criterion_4_random_pattern_equivalence():
    with criterion(4, ">= 50 random Z_d graphs: MBQC == extracted circuit on every branch, deterministic; < 5 min"):
        rng = np.random.default_rng(7)
        start = time.perf_counter()
        accepted, with_cx, by_d = 0, 0, {2: 0, 3: 0, 5: 0}
        while accepted < 60:
            d = int(rng.choice([2, 3, 5]))
            n = int(rng.integers(4, 9))
            io = int(rng.integers(1, 3))
            g = random_open_graph(rng, d, n, io)
            fr = find_flow(g)
            if fr is None:
                continue
            angles = {v: tuple(int(x) for x in rng.integers(0, d, 3)) for v in fr.measured()}
            c = extract_circuit(g, fr, angles)
            v = verify_against_circuit(g, fr, c, angles)
            assert v.exhaustive and len(v.branches) == d ** len(fr.measured())
            assert v.passed and v.min_fidelity >= 1 - FIDELITY_TOL
            assert v.deterministic and v.uniform_probabilities

            if d ** len(fr.measured()) <= 2000:
                psi = QuditState.random(d, len(g.inputs), rng)
                out = run_circuit(c, d, psi)
                order = np.argsort([w[-1] for w in c.wires])
                out_t = np.transpose(out.tensor(), order) if len(order) > 1 else out.tensor()
                want = QuditState.from_tensor(d, out_t)
                for record in run_mbqc(g, fr, angles, input_state=psi):
                    assert states_equal_up_to_phase(record.state, want)

            accepted += 1
            by_d[d] += 1
            with_cx += c.count("CX") > 0
        elapsed = time.perf_counter() - start
        assert all(count > 0 for count in by_d.values())
        assert with_cx > 0
        assert elapsed < 300, f"{elapsed:.1f} s"


# ---------------------------------------------------------------- 5


def test_criterion_5_gate_algebra():
    with criterion(5, "Weyl/Fourier relations <= 1e-12; controlled-stabiliser commutation <= 1e-10"):
        for d in (2, 3, 5):
            x, z, h, h_inv = x_matrix(d), z_matrix(d), h_matrix(d), h_inverse_matrix(d)
            eye = np.eye(d)
            checks = [
                (np.linalg.matrix_power(x, d), eye),
                (np.linalg.matrix_power(z, d), eye),
                (z @ x, omega(d) * x @ z),
                (h @ z @ h_inv, x),
                (h @ x @ h_inv, np.linalg.inv(z)),
            ]
            for got, want in checks:
                assert np.max(np.abs(got - want)) <= 1e-12

        rng = np.random.default_rng(11)
        for d in (2, 3, 5):
            for _ in range(10):
                n = int(rng.integers(3, 5 if d == 5 else 6))
                g = random_open_graph(rng, d, n, 1, density=0.6).replace(inputs=())
                adj = g.adjacency
                a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
                w = int(rng.integers(1, d))
                edges = [GateOp("CZ", (j, k), (int(adj[j, k]),)) for j, k, _ in g.edges()]
                e_g = gate_unitary(d, n, edges)
                assert np.allclose(e_g, entangler(d, adj.tolist()))
                cx = gate_unitary(d, n, [GateOp("CX", (a, b), (w,))])
                # CZ from the control onto every neighbour of the target, plus a
                # quadratic phase on the control when control and target are adjacent
                cz_n = [
                    GateOp("CZ", (a, k), ((w * int(adj[b, k])) % d,))
                    for k in range(n)
                    if k not in (a, b) and adj[b, k]
                ]
                if adj[a, b]:
                    cz_n.append(GateOp("DiagPoly", (a,), (0, (w * int(adj[a, b])) % d, 0)))
                cz_mat = gate_unitary(d, n, cz_n)
                assert np.max(np.abs(cx @ cz_mat @ e_g - e_g @ cx)) <= 1e-10
                state = prepare_graph_state(g).amplitudes
                assert np.max(np.abs(cx @ cz_mat @ state - state)) <= 1e-10


# ---------------------------------------------------------------- 6


def _cluster(rows: int, cols: int, rng: np.random.Generator, field) -> OpenGraph:
    names = [f"q{r}_{c}" for c in range(cols) for r in range(rows)]
    idx = {name: i for i, name in enumerate(names)}
    edges = [(f"q{r}_{c}", f"q{r}_{c + 1}", 1) for r in range(rows) for c in range(cols - 1)]
    edges += [
        (f"q{r}_{c}", f"q{r + 1}_{c}", 1)
        for c in range(1, cols - 1, 2)
        for r in range(rows - 1)
        if rng.random() < 0.5
    ]
    ins = [f"q{r}_0" for r in range(rows)]
    outs = [f"q{r}_{cols - 1}" for r in range(rows)]
    assert len(idx) == rows * cols
    return OpenGraph.build(field, names, edges, ins, outs)


def _sparse(n: int, rng: np.random.Generator, field, degree: float = 3.0) -> OpenGraph:
    adj = np.zeros((n, n))
    for j in range(n):
        for k in range(j + 1, n):
            if rng.random() < degree / n:
                adj[j, k] = adj[k, j] = 1
    return OpenGraph(tuple(f"v{i}" for i in range(n)), field, adj, tuple(range(10)), tuple(range(n - 10, n)))


def test_criterion_6_structural_invariants():
    with criterion(6, "identity block after triangularisation; disjoint covers with |I| paths; io_mismatch; 100 vertices < 5 s"):
        rng = np.random.default_rng(13)
        g = hexagon(RealField(), measured_are_inputs=True)
        graphs = [g, hexagon(ModField(3), measured_are_inputs=True)]
        while len(graphs) < 40:
            d = int(rng.choice([2, 3, 5]))
            cand = random_open_graph(rng, d, int(rng.integers(4, 9)), int(rng.integers(1, 3)))
            if find_flow(cand) is not None:
                graphs.append(cand)
        for g in graphs:
            fr = find_flow(g)
            t = triangularise_layer(g, fr)
            fld = t.graph.field
            rows = list(t.layer)
            cols = [t.causal_map[j] for j in rows]
            block = t.graph.adjacency[np.ix_(rows, cols)]
            scale = fld.array([t.vectors[j][t.causal_map[j]] for j in rows])
            product = fld.reduce(block * scale[None, :])
            assert np.allclose(product, np.eye(len(rows)), atol=1e-9)
            cover = build_path_cover(g, fr)
            flat = [v for p in cover.paths for v in p]
            assert len(flat) == len(set(flat)) == g.n
            assert len(cover.paths) == len(g.inputs)
            assert cover.problems(g) == []

        for bad in (single_output(), gflow_not_cvflow(ModField(2))):
            try:
                extract_circuit(bad, find_flow(bad))
            except IoMismatch as exc:
                assert exc.code == "io_mismatch"
            else:
                raise AssertionError("extraction accepted |I| != |O|")

        for field in (ModField(2), RealField(), ModField(5)):
            for graph in (_sparse(100, rng, field), _cluster(10, 10, rng, field)):
                start = time.perf_counter()
                fr = find_flow(graph)
                assert time.perf_counter() - start < 5.0
            assert fr is not None and fr.depth == 9


# ---------------------------------------------------------------- 7


def test_criterion_7_gflow_brute_force_agreement():
    with criterion(7, ">= 200 unweighted graphs on <= 6 vertices: Z2 finder == exhaustive g-flow; < 2 min"):
        rng = np.random.default_rng(17)
        start = time.perf_counter()
        agree, positives = 0, 0
        for _ in range(240):
            n = int(rng.integers(2, 7))
            adj = np.zeros((n, n), dtype=int)
            for j in range(n):
                for k in range(j + 1, n):
                    if rng.random() < 0.5:
                        adj[j, k] = adj[k, j] = 1
            perm = rng.permutation(n)
            ins = tuple(int(v) for v in perm[: int(rng.integers(0, 3))])
            outs = tuple(int(v) for v in rng.permutation(n)[: int(rng.integers(1, min(3, n) + 1))])
            g = OpenGraph(tuple(f"v{i}" for i in range(n)), ModField(2), adj, ins, outs)
            found = find_flow(g) is not None
            assert found == brute_force_gflow(adj.tolist(), ins, outs), (adj.tolist(), ins, outs)
            agree += 1
            positives += found
        elapsed = time.perf_counter() - start
        assert agree >= 200 and 0 < positives < agree
        assert elapsed < 120, f"{elapsed:.1f} s"
