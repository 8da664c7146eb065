"""Built-in graphs used by the demos and the test-suite.

The two separation graphs are reconstructions from their correction matrices:
their drawings are not available as data, so the edge sets below are the
smallest ones reproducing the stated matrices.
"""

from __future__ import annotations

from .field_linalg import Field, ModField, RealField
from .open_graph import OpenGraph


def line_graph(field: Field | None = None, weights=(1, 1)) -> OpenGraph:
    """``i - m - o`` with ``I = {i}``, ``O = {o}``."""
    field = field or RealField()
    return OpenGraph.build(field, ["i", "m", "o"], [("i", "m", weights[0]), ("m", "o", weights[1])], ["i"], ["o"])


def single_output(field: Field | None = None) -> OpenGraph:
    """One vertex, no inputs, which is an output."""
    return OpenGraph.build(field or RealField(), ["v"], [], [], ["v"])


def hexagon(field: Field | None = None, measured_are_inputs: bool = False) -> OpenGraph:
    """Unit-weight 6-cycle alternating measured vertices ``v1..v3`` and outputs ``o1..o3``.

    ``o1`` sits between ``v1`` and ``v2``, ``o2`` between ``v2`` and ``v3``, ``o3``
    between ``v3`` and ``v1``. Reconstructed fixture.
    """
    field = field or RealField()
    edges = [("v1", "o1", 1), ("o1", "v2", 1), ("v2", "o2", 1), ("o2", "v3", 1), ("v3", "o3", 1), ("o3", "v1", 1)]
    inputs = ["v1", "v2", "v3"] if measured_are_inputs else []
    return OpenGraph.build(field, ["v1", "v2", "v3", "o1", "o2", "o3"], edges, inputs, ["o1", "o2", "o3"])


def gflow_not_cvflow(field: Field | None = None) -> OpenGraph:
    """Centre ``c`` and outer vertices ``u1..u3`` measured; outputs ``o1..o3``.

    The centre touches every other vertex; ``u1`` touches ``o1, o2``, ``u2``
    touches ``o1, o3`` and ``u3`` touches ``o2, o3``. Reconstructed fixture.
    """
    field = field or RealField()
    edges = [("c", x, 1) for x in ("u1", "u2", "u3", "o1", "o2", "o3")]
    edges += [("u1", "o1", 1), ("u1", "o2", 1), ("u2", "o1", 1), ("u2", "o3", 1), ("u3", "o2", 1), ("u3", "o3", 1)]
    return OpenGraph.build(field, ["c", "u1", "u2", "u3", "o1", "o2", "o3"], edges, [], ["o1", "o2", "o3"])


def adder_chain(n: int, field: Field | None = None) -> OpenGraph:
    """Inputs ``i1..iN`` and outputs ``o1..oN``; ``i_k - o_k`` has weight 1, ``i_k - o_(k-1)`` weight -1.

    With every input in one layer the correction vectors are prefix sums of the
    outcomes, and the pattern maps Fourier-encoded integers to their prefix sums.
    """
    if n < 1:
        raise ValueError("the chain needs at least one input")
    field = field or RealField()
    ins = [f"i{k}" for k in range(1, n + 1)]
    outs = [f"o{k}" for k in range(1, n + 1)]
    edges = [(ins[k], outs[k], 1) for k in range(n)]
    edges += [(ins[k], outs[k - 1], -1) for k in range(1, n)]
    return OpenGraph.build(field, ins + outs, edges, ins, outs)


def two_layer(field: Field | None = None) -> OpenGraph:
    """Inputs ``a1, a2``, middle ``b1, b2``, outputs ``c1, c2``; two layers and no causal flow over ``Z_5``.

    The middle layer needs a two-term correction, so extraction emits CX gates.
    """
    field = field or ModField(5)
    edges = [
        ("a1", "b1", 1),
        ("a1", "b2", 3),
        ("a2", "b1", 3),
        ("a2", "b2", 2),
        ("b1", "b2", 1),
        ("b1", "c1", 3),
        ("b2", "c2", 2),
    ]
    return OpenGraph.build(field, ["a1", "a2", "b1", "b2", "c1", "c2"], edges, ["a1", "a2"], ["c1", "c2"])


def appendix_matrices() -> dict[str, list[list[int]]]:
    """Augmented systems ``[A | b]`` for the two last-vertex cases of :func:`gflow_not_cvflow`."""
    block = [[1, 1, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]]
    centre_last = [row + [b] for row, b in zip(block, (1, 0, 0, 0))]
    outer_last = [row + [b] for row, b in zip(block, (0, 1, 0, 0))]
    return {"centre_last": centre_last, "outer_last": outer_last}
