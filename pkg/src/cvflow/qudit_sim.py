"""Dense state-vector simulation of prime-dimension qudits.

Conventions: ``X|n> = |n+1>``, ``Z|n> = w^n |n>`` with ``w = exp(2 pi i / d)``, and
``H|n> = d^(-1/2) sum_k w^(-k n) |k>``, which is the sign for which
``H Z H^-1 = X`` and ``H X H^-1 = Z^-1`` hold. Flattened amplitude vectors are
little-endian: qudit ``q`` contributes ``digit_q * d**q`` to the index.

Internally states are tensors with one axis per qudit (axis ``q`` is qudit ``q``)
plus an optional trailing batch axis, so that a whole basis of inputs, or every
measurement branch at once, can be pushed through in a single pass.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Mapping, Sequence

import numpy as np

from .field_linalg import is_prime
from .flow import FlowResult
from .open_graph import OpenGraph, resolve_angles

EXHAUSTIVE_BRANCH_LIMIT = 2_000_000
TENSOR_ELEMENT_LIMIT = 1 << 24
DEFAULT_TOL = 1e-9


class SimulationError(ValueError):
    code = "simulation_error"


class BranchBudgetExceeded(SimulationError):
    code = "branch_budget"


def omega(d: int) -> complex:
    return np.exp(2j * np.pi / d)


def _check_d(d: int) -> None:
    if not is_prime(int(d)):
        raise SimulationError(f"qudit dimension {d} is not prime")


# ---------------------------------------------------------------- states


@dataclass(frozen=True, eq=False)
class QuditState:
    d: int
    n: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.size != self.d**self.n:
            raise SimulationError(f"{amps.size} amplitudes for {self.n} qudits of dimension {self.d}")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, d: int, digits: Sequence[int]) -> "QuditState":
        n = len(digits)
        amps = np.zeros(d**n, dtype=np.complex128)
        amps[sum((int(x) % d) * d**q for q, x in enumerate(digits))] = 1.0
        return cls(d, n, amps)

    @classmethod
    def random(cls, d: int, n: int, rng: np.random.Generator) -> "QuditState":
        v = rng.normal(size=d**n) + 1j * rng.normal(size=d**n)
        return cls(d, n, v / np.linalg.norm(v))

    @classmethod
    def from_tensor(cls, d: int, tensor: np.ndarray) -> "QuditState":
        return cls(d, tensor.ndim, to_vector(tensor))

    def tensor(self) -> np.ndarray:
        return to_tensor(self.amplitudes, self.d, self.n)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "QuditState":
        nrm = self.norm
        if nrm == 0:
            raise SimulationError("cannot normalise the zero vector")
        return QuditState(self.d, self.n, self.amplitudes / nrm)

    def tensor_product(self, other: "QuditState") -> "QuditState":
        """``self`` on the low qudits, ``other`` above them."""
        return QuditState(self.d, self.n + other.n, np.kron(other.amplitudes, self.amplitudes))


def to_vector(tensor: np.ndarray) -> np.ndarray:
    """Qudit-ordered tensor to little-endian vector."""
    return np.ascontiguousarray(np.transpose(tensor, tuple(reversed(range(tensor.ndim))))).reshape(-1)


def to_tensor(vec: np.ndarray, d: int, n: int) -> np.ndarray:
    return np.transpose(np.asarray(vec).reshape((d,) * n), tuple(reversed(range(n))))


def states_equal_up_to_phase(a: QuditState, b: QuditState, tol: float = DEFAULT_TOL) -> bool:
    if a.d != b.d or a.n != b.n:
        raise SimulationError("states have different shapes")
    na, nb = a.norm, b.norm
    if na == 0 or nb == 0:
        return False
    return abs(np.vdot(a.amplitudes, b.amplitudes)) / (na * nb) >= 1 - tol


# ---------------------------------------------------------------- gates


def x_matrix(d: int, power: int = 1) -> np.ndarray:
    return np.roll(np.eye(d, dtype=np.complex128), power % d, axis=0)


def z_matrix(d: int, power: int = 1) -> np.ndarray:
    return np.diag(omega(d) ** ((power * np.arange(d)) % d))


def h_matrix(d: int) -> np.ndarray:
    k = np.arange(d)
    return omega(d) ** (-np.outer(k, k) % d) / np.sqrt(d)


def h_inverse_matrix(d: int) -> np.ndarray:
    return h_matrix(d).conj().T


def m_matrix(d: int, w: int) -> np.ndarray:
    if w % d == 0:
        raise SimulationError("multiplication weight must be invertible")
    out = np.zeros((d, d), dtype=np.complex128)
    n = np.arange(d)
    out[(w * n) % d, n] = 1.0
    return out


def diag_poly_phases(d: int, a=0, b=0, c=0) -> np.ndarray:
    n = np.arange(d, dtype=np.float64)
    return np.exp(2j * np.pi * (a * n + b * n**2 + c * n**3) / d)


def diag_poly_matrix(d: int, a=0, b=0, c=0) -> np.ndarray:
    return np.diag(diag_poly_phases(d, a, b, c))


def cz_matrix(d: int, w: int = 1) -> np.ndarray:
    """Two-qudit ``CZ(w)``; qudit 0 is the low digit."""
    m, n = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    phases = omega(d) ** ((w * m * n) % d)
    return np.diag(to_vector(phases))


def cx_matrix(d: int, w: int = 1) -> np.ndarray:
    """Two-qudit ``CX(w)|m>|n> = |m>|n + w m>`` with qudit 0 the control."""
    out = np.zeros((d * d, d * d), dtype=np.complex128)
    for m in range(d):
        for n in range(d):
            out[m + d * ((n + w * m) % d), m + d * n] = 1.0
    return out


@dataclass(frozen=True)
class GateOp:
    """A primitive gate: ``X``/``Z`` (power), ``H``, ``Hinv``, ``M`` (weight), ``CZ``/``CX`` (weight), ``DiagPoly`` (a, b, c)."""

    kind: str
    targets: tuple[int, ...]
    params: tuple = ()

    def __post_init__(self) -> None:
        arity = {"X": 1, "Z": 1, "H": 1, "Hinv": 1, "M": 1, "DiagPoly": 1, "CZ": 2, "CX": 2}
        if self.kind not in arity:
            raise SimulationError(f"unknown gate {self.kind!r}")
        if len(self.targets) != arity[self.kind]:
            raise SimulationError(f"{self.kind} acts on {arity[self.kind]} qudit(s)")
        if arity[self.kind] == 2 and self.targets[0] == self.targets[1]:
            raise SimulationError(f"{self.kind} needs two distinct qudits")


def apply_single(t: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(u, t, axes=([1], [axis])), 0, axis)


def _axis_shape(ndim: int, axis: int, size: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = size
    return tuple(shape)


def apply_phases(t: np.ndarray, phases: np.ndarray, axis: int) -> np.ndarray:
    return t * phases.reshape(_axis_shape(t.ndim, axis, phases.size))


def apply_cz(t: np.ndarray, d: int, w: int, a: int, b: int) -> np.ndarray:
    n = np.arange(d)
    phase = omega(d) ** ((w * np.outer(n, n)) % d)
    shape = [1] * t.ndim
    shape[a] = d
    shape[b] = d
    if a > b:
        phase = phase.T
    return t * phase.reshape(shape)


def apply_cx(t: np.ndarray, d: int, w: int, control: int, target: int) -> np.ndarray:
    out = np.empty_like(t)
    tax = target if target < control else target - 1
    for m in range(d):
        sl = [slice(None)] * t.ndim
        sl[control] = m
        out[tuple(sl)] = np.roll(t[tuple(sl)], (w * m) % d, axis=tax)
    return out


def apply_gate(t: np.ndarray, d: int, gate: GateOp) -> np.ndarray:
    k, q, p = gate.kind, gate.targets, gate.params
    if k == "X":
        return np.roll(t, int(p[0] if p else 1) % d, axis=q[0])
    if k == "Z":
        return apply_phases(t, np.diag(z_matrix(d, int(p[0] if p else 1))), q[0])
    if k == "H":
        return apply_single(t, h_matrix(d), q[0])
    if k == "Hinv":
        return apply_single(t, h_inverse_matrix(d), q[0])
    if k == "M":
        return apply_single(t, m_matrix(d, int(p[0])), q[0])
    if k == "DiagPoly":
        return apply_phases(t, diag_poly_phases(d, *p), q[0])
    if k == "CZ":
        return apply_cz(t, d, int(p[0] if p else 1) % d, q[0], q[1])
    return apply_cx(t, d, int(p[0] if p else 1) % d, q[0], q[1])


def apply_gates(state: QuditState, gates: Sequence[GateOp]) -> QuditState:
    t = state.tensor()
    for g in gates:
        t = apply_gate(t, state.d, g)
    return QuditState.from_tensor(state.d, t)


def gate_unitary(d: int, n: int, gates: Sequence[GateOp]) -> np.ndarray:
    """Dense ``d^n x d^n`` matrix of a gate sequence (little-endian)."""
    t = _basis_batch(d, n)
    for g in gates:
        t = apply_gate(t, d, g)
    return _tensor_to_matrix(t, n)


def gate_action(d: int, n: int, gates: Sequence[GateOp], columns: np.ndarray) -> np.ndarray:
    """Apply a gate sequence to each column of a little-endian ``(d^n, batch)`` matrix."""
    columns = np.asarray(columns, dtype=np.complex128)
    if columns.ndim != 2 or columns.shape[0] != d**n:
        raise SimulationError(f"columns must have shape ({d ** n}, batch), got {columns.shape}")
    if n == 0:
        return columns.copy()
    t = np.transpose(columns.reshape((d,) * n + (columns.shape[1],)), tuple(reversed(range(n))) + (n,))
    for g in gates:
        t = apply_gate(t, d, g)
    return _tensor_to_matrix(t, n)


def _tensor_to_matrix(t: np.ndarray, n: int) -> np.ndarray:
    """Qudit axes plus trailing batch axis to a ``(d^n, batch)`` matrix."""
    perm = tuple(reversed(range(n))) + (n,)
    return np.ascontiguousarray(np.transpose(t, perm)).reshape(-1, t.shape[-1])


def _basis_batch(d: int, n: int) -> np.ndarray:
    """Tensor with ``n`` qudit axes and a batch axis enumerating the computational basis."""
    eye = np.eye(d**n, dtype=np.complex128)
    if n == 0:
        return eye.reshape(1)
    t = eye.reshape((d,) * n + (d**n,))
    return np.transpose(t, tuple(reversed(range(n))) + (n,))


# ---------------------------------------------------------------- graph states and MBQC


def _field_d(g: OpenGraph) -> int:
    if g.field.kind != "mod":
        raise SimulationError("simulation needs a graph over a prime field Z_d")
    return g.field.d


def _initial_tensor(g: OpenGraph, inputs: np.ndarray) -> np.ndarray:
    """``inputs`` has one axis per input qudit plus a batch axis; returns vertex axes plus batch."""
    d = _field_d(g)
    n_in = len(g.inputs)
    others = [v for v in range(g.n) if v not in set(g.inputs)]
    size = d ** g.n * inputs.shape[-1]
    if size > TENSOR_ELEMENT_LIMIT:
        raise BranchBudgetExceeded(f"state tensor of {size} amplitudes exceeds the limit {TENSOR_ELEMENT_LIMIT}")
    plus = np.full(d, 1 / np.sqrt(d), dtype=np.complex128)
    t = inputs
    for _ in others:
        t = np.multiply.outer(t, plus)
    # axes: inputs..., batch, others...  -> vertex order, batch last
    order = list(g.inputs) + others
    t = np.moveaxis(t, n_in, -1)
    src = list(range(n_in + len(others)))
    perm = [0] * g.n
    for axis, v in zip(src, order):
        perm[v] = axis
    return np.transpose(t, perm + [g.n])


def _entangle(g: OpenGraph, t: np.ndarray) -> np.ndarray:
    d = g.field.d
    for j, k, w in g.edges():
        t = apply_cz(t, d, int(w), j, k)
    return t


def prepare_graph_state(g: OpenGraph, input_state: QuditState | None = None) -> QuditState:
    """Inputs from ``input_state`` (ascending vertex order), others ``H|0>``, then every ``CZ``."""
    d = _field_d(g)
    if input_state is None:
        input_state = QuditState.basis(d, [0] * len(g.inputs))
    if input_state.d != d:
        raise SimulationError(f"input has dimension {input_state.d}, graph is over Z_{d}")
    if input_state.n != len(g.inputs):
        raise SimulationError(f"input has {input_state.n} qudits, graph has {len(g.inputs)} inputs")
    batch = input_state.tensor()[..., None] if input_state.n else input_state.amplitudes.reshape(1)
    t = _entangle(g, _initial_tensor(g, batch))
    return QuditState.from_tensor(d, t[..., 0])


Angles = Mapping


@dataclass(frozen=True)
class BranchRecord:
    outcomes: tuple[tuple[int, int], ...]
    probability: float
    state: QuditState


@dataclass(frozen=True)
class BranchMaps:
    """Per-branch linear maps from the inputs to the outputs.

    ``maps[b]`` has shape ``(d^|O|, batch)`` where the batch is either the whole
    computational basis of the inputs or one given input state; ``outcomes[b]``
    lists the outcome of each vertex of ``measured`` (measurement order).
    """

    d: int
    measured: tuple[int, ...]
    outputs: tuple[int, ...]
    outcomes: np.ndarray
    maps: np.ndarray
    exhaustive: bool

    @property
    def probabilities(self) -> np.ndarray:
        """Born probabilities for the batch state (maximally mixed for the basis batch)."""
        return np.sum(np.abs(self.maps) ** 2, axis=(1, 2)) / self.maps.shape[-1]


def parse_branch_policy(policy) -> tuple[str, int, int]:
    if policy in (None, "exhaustive"):
        return ("exhaustive", 0, 0)
    if isinstance(policy, tuple):
        return policy
    parts = str(policy).split(":")
    if len(parts) == 3 and parts[0] == "sample":
        try:
            count, seed = int(parts[1]), int(parts[2])
        except ValueError:
            raise SimulationError(f"malformed branch policy {policy!r}") from None
        if count < 1:
            raise SimulationError("sample count must be positive")
        if seed < 0:
            raise SimulationError("sample seed must be non-negative")
        return ("sample", count, seed)
    raise SimulationError(f"unknown branch policy {policy!r}; use 'exhaustive' or 'sample:N:SEED'")


@dataclass(frozen=True)
class _Pattern:
    """A flow pattern compiled to per-vertex readout matrices and correction shifts."""

    d: int
    n: int
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    measured: tuple[int, ...]
    steps: tuple[tuple[str, object], ...]
    readout: Mapping[int, np.ndarray]
    xs: Mapping[int, tuple[tuple[int, int], ...]]
    zs: Mapping[int, tuple[tuple[int, int], ...]]
    phase: np.ndarray


def _compile(g: OpenGraph, fr: FlowResult | None, angles: Angles | None) -> _Pattern:
    d = _field_d(g)
    if fr is None:
        raise SimulationError("no flow supplied for the pattern")
    if set(fr.layer) != set(range(g.n)):
        raise SimulationError("flow does not cover the graph")
    params = resolve_angles(g, angles)
    h = h_matrix(d)
    inputs = set(g.inputs)
    steps: list[tuple[str, object]] = []
    readout, xs, zs = {}, {}, {}
    for k in range(fr.depth, 0, -1):
        members = fr.layer_members(k)
        unmeasured = fr.unmeasured_after(k)
        for j in members:
            steps.append(("measure", j))
            readout[j] = h * diag_poly_phases(d, *params.get(j, (0, 0, 0)))[None, :]
            vec = {c: int(a) % d for c, a in fr.vector(j).items()}
            if inputs & set(vec):
                raise SimulationError(f"correction of vertex {g.label(j)} shifts an input")
            xs[j] = tuple(sorted(vec.items()))
            zl = []
            for ell in unmeasured:
                z = sum(int(g.adjacency[c, ell]) * a for c, a in vec.items()) % d
                if z:
                    zl.append((ell, z))
            zs[j] = tuple(zl)
            # corrections only touch lower layers, so applying them before the rest
            # of the layer is measured is equivalent and keeps the tensor small
            steps.append(("correct", (j,)))
    if d**g.n > TENSOR_ELEMENT_LIMIT:
        raise BranchBudgetExceeded(f"{d}^{g.n} amplitudes exceed the limit {TENSOR_ELEMENT_LIMIT}")
    expo = np.zeros((d,) * g.n, dtype=np.int64)
    n = np.arange(d)
    for a, b, w in g.edges():
        expo += (int(w) * np.outer(n, n)).reshape(
            tuple(d if ax in (a, b) else 1 for ax in range(g.n))
        )
    phase = omega(d) ** (expo % d)
    return _Pattern(
        d, g.n, g.inputs, g.outputs, tuple(fr.measurement_order()), tuple(steps), readout, xs, zs, phase
    )


# Tensor axes carry labels: ("v", v) value of vertex v, ("d", v) value of input v
# that still equals its batch index, ("m", v) outcome of v, ("b", v) batch index of
# input v, ("B", 0) an explicit batch axis.


def _basis_start(pat: _Pattern):
    others = pat.n - len(pat.inputs)
    t = pat.phase * (pat.d ** (-others / 2))
    ins = set(pat.inputs)
    return t, [("d", v) if v in ins else ("v", v) for v in range(pat.n)]


def _state_start(pat: _Pattern, state: np.ndarray):
    """``state`` has one axis per input (ascending) and a trailing batch axis."""
    d = pat.d
    ins = list(pat.inputs)
    others = [v for v in range(pat.n) if v not in set(ins)]
    t = state.reshape(state.shape + (1,) * len(others)) * d ** (-len(others) / 2)
    t = np.broadcast_to(t, state.shape + (d,) * len(others))
    src = ins + ["B"] + others
    perm = [src.index(v) for v in range(pat.n)] + [len(ins)]
    t = np.transpose(t, perm) * pat.phase[..., None]
    return t, [("v", v) for v in range(pat.n)] + [("B", 0)]


def _measure(pat: _Pattern, t: np.ndarray, labels: list, j: int, fixed: int | None):
    rows = pat.readout[j] if fixed is None else pat.readout[j][fixed : fixed + 1]
    labels = list(labels)
    if ("v", j) in labels:
        ax = labels.index(("v", j))
        t = np.tensordot(t, rows, axes=([ax], [1]))
        labels.pop(ax)
        labels.append(("m", j))
    else:
        ax = labels.index(("d", j))
        shape = [1] * (t.ndim + 1)
        shape[ax] = pat.d
        shape[-1] = rows.shape[0]
        t = t[..., None] * rows.T.reshape(shape)
        labels[ax] = ("b", j)
        labels.append(("m", j))
    return t, labels


def _value_axis(labels: list, v: int) -> int:
    return labels.index(("v", v)) if ("v", v) in labels else labels.index(("d", v))


def _roll_into(dst: np.ndarray, src: np.ndarray, shifts: Sequence[int], axes: Sequence[int]) -> None:
    """``dst[...] = np.roll(src, shifts, axes)`` without an intermediate copy."""
    pieces = [((slice(None), slice(None)),)]
    for s, ax in zip(shifts, axes):
        n = src.shape[ax]
        if s == 0:
            continue
        pieces = [p + (((ax, slice(s, None)), (ax, slice(0, n - s))),) for p in pieces] + [
            p + (((ax, slice(0, s)), (ax, slice(n - s, None))),) for p in pieces
        ]
    for piece in pieces:
        d_idx = [slice(None)] * src.ndim
        s_idx = [slice(None)] * src.ndim
        for (ax_d, sl_d), (_, sl_s) in piece[1:]:
            d_idx[ax_d] = sl_d
            s_idx[ax_d] = sl_s
        dst[tuple(d_idx)] = src[tuple(s_idx)]


def _correct(pat: _Pattern, t: np.ndarray, labels: list, j: int, values: Sequence[int]) -> np.ndarray:
    """``X^(-c m) Z^(-A c m)`` conditioned on the outcome axis of ``j``."""
    d = pat.d
    m_ax = labels.index(("m", j))
    values = np.asarray(values, dtype=np.int64)
    if pat.xs[j]:
        axes = [labels.index(("v", c)) for c, _ in pat.xs[j]]
        sub_axes = [a - (a > m_ax) for a in axes]
        out = np.empty_like(t)
        for idx, m in enumerate(values):
            shifts = [(-a * int(m)) % d for _, a in pat.xs[j]]
            sl = tuple(idx if ax == m_ax else slice(None) for ax in range(t.ndim))
            _roll_into(out[sl], t[sl], shifts, sub_axes)
        t = out
    if pat.zs[j]:
        expo = np.zeros((1,) * t.ndim, dtype=np.int64)
        mv = values.reshape(_axis_shape(t.ndim, m_ax, len(values)))
        for ell, z in pat.zs[j]:
            nv = np.arange(d).reshape(_axis_shape(t.ndim, _value_axis(labels, ell), d))
            expo = expo + (-z * mv) * nv
        t *= omega(d) ** (expo % d)
    return t


def _expand_outputs(pat: _Pattern, t: np.ndarray, labels: list):
    """Split inputs that are also outputs into a value axis and a batch axis."""
    labels = list(labels)
    for o in pat.outputs:
        if ("d", o) in labels:
            ax = labels.index(("d", o))
            shape = [1] * (t.ndim + 1)
            shape[ax] = pat.d
            shape[-1] = pat.d
            t = t[..., None] * np.eye(pat.d).reshape(shape)
            labels[ax] = ("v", o)
            labels.append(("b", o))
    return t, labels


def _grouped(pat: _Pattern, t: np.ndarray, labels: list, fixed: Mapping[int, int]):
    """``(flat, rest_labels, branch_index)`` with ``flat`` of shape ``(rest, branches)``.

    Outcome axes are moved last (a no-op for the usual layout, so no copy is made)
    and ``branch_index`` gives the little-endian branch number of each column.
    """
    t, labels = _expand_outputs(pat, t, labels)
    m_axes = [a for a, lab in enumerate(labels) if lab[0] == "m"]
    rest = [a for a in range(t.ndim) if a not in m_axes]
    perm = rest + m_axes
    if perm != list(range(t.ndim)):
        t = np.transpose(t, perm)
    t = np.ascontiguousarray(t)
    m_shape = [t.shape[len(rest) + i] for i in range(len(m_axes))]
    count = int(np.prod(m_shape, dtype=np.int64))
    flat = t.reshape(-1, count)
    position = {j: pos for pos, j in enumerate(pat.measured)}
    idx = np.full(count, sum(m * pat.d ** position[j] for j, m in fixed.items()), dtype=np.int64)
    if m_axes:
        grid = np.indices(m_shape).reshape(len(m_axes), -1)
        for row, a in zip(grid, m_axes):
            j = labels[a][1]
            if j not in fixed:
                idx += row * pat.d ** position[j]
    return flat, [labels[a] for a in rest], idx


def _canonical_labels(pat: _Pattern, explicit_batch: bool) -> list:
    """Axis labels of a map reshaped from a little-endian ``(output, input)`` matrix."""
    out = [("v", o) for o in reversed(pat.outputs)]
    return out + ([("B", 0)] if explicit_batch else [("b", i) for i in reversed(pat.inputs)])


def _block(pat: _Pattern, t: np.ndarray, labels: list, fixed: Mapping[int, int]):
    """Branch indices and ``(branch, output, batch)`` maps for a finished tensor."""
    flat, rest, idx = _grouped(pat, t, labels, fixed)
    want = _canonical_labels(pat, ("B", 0) in rest)
    shape = [pat.d if lab[0] != "B" else -1 for lab in rest]
    arr = flat.T.reshape([len(idx)] + shape)
    arr = np.transpose(arr, [0] + [1 + rest.index(lab) for lab in want])
    return idx, np.ascontiguousarray(arr).reshape(len(idx), pat.d ** len(pat.outputs), -1)


def _explore(pat: _Pattern, t, labels, step: int, fixed: dict, budget: int, emit) -> None:
    """Depth-first over outcomes: keep outcomes as axes until the tensor would exceed ``budget``."""
    while step < len(pat.steps):
        kind, arg = pat.steps[step]
        if kind == "measure":
            j = arg
            grows = ("d", j) in labels
            if j not in fixed and grows and t.size * pat.d > budget:
                for m in range(pat.d):
                    _explore(pat, t, labels, step, {**fixed, j: m}, budget, emit)
                return
            t, labels = _measure(pat, t, labels, j, fixed.get(j))
        else:
            for j in arg:
                t = _correct(pat, t, labels, j, [fixed[j]] if j in fixed else range(pat.d))
        step += 1
    emit(t, labels, fixed)


def _sample_outcomes(pat: _Pattern, state: np.ndarray, rng: np.random.Generator) -> dict[int, int]:
    """Born-sample one outcome per measured vertex, layer by layer, for an explicit input state."""
    t, labels = _state_start(pat, state)
    fixed: dict[int, int] = {}
    for kind, arg in pat.steps:
        if kind == "measure":
            t, labels = _measure(pat, t, labels, arg, None)
            ax = labels.index(("m", arg))
            probs = np.sum(np.abs(t) ** 2, axis=tuple(a for a in range(t.ndim) if a != ax))
            m = int(rng.choice(pat.d, p=probs / probs.sum()))
            fixed[arg] = m
            t = np.take(t, [m], axis=ax)
        else:
            for j in arg:
                t = _correct(pat, t, labels, j, [fixed[j]])
    return fixed


def _input_batch(pat: _Pattern, input_state: QuditState | None):
    if input_state is None:
        return None
    if input_state.d != pat.d or input_state.n != len(pat.inputs):
        raise SimulationError("input state does not match the graph's inputs")
    if input_state.n == 0:
        return input_state.amplitudes.reshape(1)
    return input_state.tensor()[..., None]


def _matrix_batch(pat: _Pattern, inputs: np.ndarray) -> np.ndarray:
    """Columns of a little-endian ``(input, batch)`` matrix as a tensor with ascending input axes."""
    n = len(pat.inputs)
    inputs = np.asarray(inputs, dtype=complex)
    if inputs.ndim != 2 or inputs.shape[0] != pat.d**n:
        raise SimulationError(f"inputs must have shape ({pat.d ** n}, batch), got {inputs.shape}")
    t = inputs.reshape((pat.d,) * n + (inputs.shape[1],))
    return np.ascontiguousarray(np.transpose(t, tuple(reversed(range(n))) + (n,)))


def _stream(pat: _Pattern, policy, batch: np.ndarray | None, emit, workers: int = 1) -> bool:
    """Feed every requested branch block to ``emit``; returns whether the run was exhaustive."""
    kind, count, seed = parse_branch_policy(policy)
    start = (lambda: _basis_start(pat)) if batch is None else (lambda: _state_start(pat, batch))
    if kind == "exhaustive":
        if pat.d ** len(pat.measured) > EXHAUSTIVE_BRANCH_LIMIT:
            raise BranchBudgetExceeded(
                f"{pat.d}^{len(pat.measured)} branches exceed the exhaustive limit "
                f"{EXHAUSTIVE_BRANCH_LIMIT}; use sample:N:SEED"
            )
        t, labels = start()
        _explore(pat, t, labels, 0, {}, TENSOR_ELEMENT_LIMIT, emit)
        return True

    def pick(ss) -> dict[int, int]:
        rng = np.random.default_rng(ss)
        if batch is not None:
            state = batch
        else:
            shape = (pat.d,) * len(pat.inputs)
            v = rng.normal(size=shape) + 1j * rng.normal(size=shape)
            state = (v / np.linalg.norm(v))[..., None]
        return _sample_outcomes(pat, state, rng)

    seeds = np.random.SeedSequence(seed).spawn(count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            choices = list(pool.map(pick, seeds))
    else:
        choices = [pick(ss) for ss in seeds]
    for fixed in choices:
        t, labels = start()
        _explore(pat, t, labels, 0, fixed, TENSOR_ELEMENT_LIMIT, emit)
    return False


def branch_maps(
    g: OpenGraph,
    fr: FlowResult,
    angles: Angles | None = None,
    policy="exhaustive",
    input_state: QuditState | None = None,
    workers: int = 1,
) -> BranchMaps:
    """Every requested branch of the corrected pattern as an explicit map.

    Without ``input_state`` the batch is the whole input basis, so ``maps[b]`` is
    the branch's linear map. Sampled branches are listed in sampling order.
    """
    pat = _compile(g, fr, angles)
    batch = 1 if input_state is not None else pat.d ** len(pat.inputs)
    blocks: list[tuple[np.ndarray, np.ndarray]] = []

    def emit(t, labels, fixed):
        blocks.append(_block(pat, t, labels, fixed))

    exhaustive = _stream(pat, policy, _input_batch(pat, input_state), emit, workers)
    total = sum(arr.size for _, arr in blocks)
    if total > TENSOR_ELEMENT_LIMIT * 4:
        raise BranchBudgetExceeded(f"{total} map entries are too many to hold; use verify functions instead")
    idx = np.concatenate([i for i, _ in blocks])
    maps = np.concatenate([a for _, a in blocks]).reshape(len(idx), -1, batch)
    if exhaustive:
        order = np.argsort(idx, kind="stable")
        idx, maps = idx[order], maps[order]
    digits = ((idx[:, None] // pat.d ** np.arange(len(pat.measured))) % pat.d).astype(np.int64)
    return BranchMaps(pat.d, pat.measured, pat.outputs, digits, maps, exhaustive)


def run_mbqc(
    g: OpenGraph,
    fr: FlowResult,
    angles: Angles | None = None,
    branch_policy="exhaustive",
    input_state: QuditState | None = None,
    workers: int = 1,
) -> list[BranchRecord]:
    """Measure layer by layer with corrections; one record per branch with the normalised output state."""
    d = _field_d(g)
    if input_state is None:
        input_state = QuditState.basis(d, [0] * len(g.inputs))
    bm = branch_maps(g, fr, angles, branch_policy, input_state=input_state, workers=workers)
    records = []
    n_out = len(g.outputs)
    for outcome, vec in zip(bm.outcomes, bm.maps[:, :, 0]):
        prob = float(np.vdot(vec, vec).real)
        state = vec / np.sqrt(prob) if prob > 0 else vec
        records.append(
            BranchRecord(tuple(zip(bm.measured, (int(x) for x in outcome))), prob, QuditState(d, n_out, state))
        )
    return records


# ---------------------------------------------------------------- circuits


def circuit_gate_ops(circuit, d: int) -> list[GateOp]:
    """Expand circuit gates into primitives; ``J(w, a, b, c)`` is ``DiagPoly`` then ``H`` then ``M(-1/w)``."""
    ops: list[GateOp] = []
    for gate in circuit.gates:
        if gate.kind == "J":
            w = int(gate.weight) % d
            if w == 0:
                raise SimulationError("J weight is not invertible")
            (q,) = gate.wires
            ops.append(GateOp("DiagPoly", (q,), tuple(gate.params)))
            ops.append(GateOp("H", (q,)))
            ops.append(GateOp("M", (q,), ((-pow(w, -1, d)) % d,)))
        elif gate.kind == "M":
            w = int(gate.weight) % d
            if w == 0:
                raise SimulationError("M weight is not invertible")
            ops.append(GateOp("M", tuple(gate.wires), (w,)))
        elif gate.kind in ("CZ", "CX"):
            ops.append(GateOp(gate.kind, tuple(gate.wires), (int(gate.weight) % d,)))
        else:
            raise SimulationError(f"unknown circuit gate {gate.kind!r}")
    return ops


def run_circuit(circuit, d: int, input_state: QuditState) -> QuditState:
    _check_d(d)
    if input_state.n != circuit.width:
        raise SimulationError(f"circuit has {circuit.width} wires, input has {input_state.n} qudits")
    return apply_gates(input_state, circuit_gate_ops(circuit, d))


def circuit_unitary(circuit, d: int) -> np.ndarray:
    _check_d(d)
    return gate_unitary(d, circuit.width, circuit_gate_ops(circuit, d))


def circuit_action(circuit, d: int, columns: np.ndarray) -> np.ndarray:
    """The circuit applied to selected input columns, digits in wire order."""
    _check_d(d)
    return gate_action(d, circuit.width, circuit_gate_ops(circuit, d), columns)


def circuit_unitary_in_output_order(circuit, g: OpenGraph) -> np.ndarray:
    """Circuit matrix with output digits ordered by ascending output vertex."""
    d = _field_d(g)
    u = circuit_unitary(circuit, d)
    n = circuit.width
    if n == 0:
        return u
    ends = [wire[-1] for wire in circuit.wires]
    out_pos = {v: p for p, v in enumerate(g.outputs)}
    t = u.reshape((d,) * n + (u.shape[1],))  # axes: wire n-1 ... wire 0, batch
    t = np.transpose(t, tuple(reversed(range(n))) + (n,))  # axes: wire 0..n-1, batch
    perm = [0] * n
    for w, v in enumerate(ends):
        perm[out_pos[v]] = w
    t = np.transpose(t, perm + [n])
    return _tensor_to_matrix(t, n)


@dataclass(frozen=True)
class BranchCheck:
    outcomes: tuple[int, ...]
    probability: float
    fidelity: float


@dataclass(frozen=True)
class Verification:
    d: int
    measured: tuple[int, ...]
    exhaustive: bool
    tol: float
    branches: tuple[BranchCheck, ...]
    passed: bool
    deterministic: bool
    uniform_probabilities: bool
    probability_total: float

    @property
    def min_fidelity(self) -> float:
        return min((b.fidelity for b in self.branches), default=1.0)


def _fidelity(overlap: np.ndarray, norm2: np.ndarray, ref2: float) -> np.ndarray:
    denom = np.sqrt(norm2 * ref2)
    fid = np.where(denom > 0, np.abs(overlap) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.minimum(fid, 1.0)


def verify_against_target(
    g: OpenGraph,
    fr: FlowResult,
    target: np.ndarray,
    angles: Angles | None = None,
    policy="exhaustive",
    tol: float = DEFAULT_TOL,
    workers: int = 1,
    inputs: np.ndarray | None = None,
) -> Verification:
    """Compare every branch map with ``target`` up to one global phase.

    By default the map is checked on the whole input basis and ``target`` is the
    ``(output, input)`` matrix. With ``inputs`` of shape ``(input, batch)`` only
    those columns are fed in and ``target`` holds their images, shape
    ``(output, batch)``; this keeps wide registers within memory. Digits are
    little-endian in ascending vertex order on both sides. Branch blocks are
    reduced as they are produced, so the maps are never held all at once.
    """
    pat = _compile(g, fr, angles)
    d = pat.d
    dim_out = d ** len(pat.outputs)
    if inputs is None:
        batch = None
        cols = d ** len(pat.inputs)
        start = partial(_basis_start, pat)
    else:
        batch = _matrix_batch(pat, inputs)
        cols = batch.shape[-1]
        start = partial(_state_start, pat, batch)
    if target.shape != (dim_out, cols):
        raise SimulationError(f"target has shape {target.shape}, expected {(dim_out, cols)}")
    canon = _canonical_labels(pat, batch is not None)
    shape = (d,) * len(pat.outputs) + ((d,) * len(pat.inputs) if batch is None else (cols,))
    tgt = np.ascontiguousarray(target).reshape(shape).conj()
    t2 = float(np.vdot(tgt, tgt).real)
    captured = []
    zero = {j: 0 for j in pat.measured}
    _explore(pat, *start(), 0, zero, TENSOR_ELEMENT_LIMIT, lambda *args: captured.append(args))
    ref_flat, ref_labels, _ = _grouped(pat, *captured[0])
    ref = ref_flat.reshape([cols if lab[0] == "B" else d for lab in ref_labels]).conj()
    r2 = float(np.vdot(ref, ref).real)
    parts: list[tuple[np.ndarray, ...]] = []

    def emit(t, labels, fixed):
        flat, rest, idx = _grouped(pat, t, labels, fixed)
        tg = np.transpose(tgt, [canon.index(lab) for lab in rest]).reshape(-1)
        rf = np.transpose(ref, [ref_labels.index(lab) for lab in rest]).reshape(-1)
        real = flat.view(np.float64)
        norm2 = np.einsum("gk,gk->k", real, real).reshape(-1, 2).sum(axis=1)
        both = np.stack([tg, rf]) @ flat
        parts.append((idx, both[0], both[1], norm2))

    exhaustive = _stream(pat, policy, batch, emit, workers)
    idx = np.concatenate([p[0] for p in parts])
    over = np.concatenate([p[1] for p in parts])
    rover = np.concatenate([p[2] for p in parts])
    norm2 = np.concatenate([p[3] for p in parts])
    if exhaustive:
        order = np.argsort(idx, kind="stable")
        idx, over, rover, norm2 = idx[order], over[order], rover[order], norm2[order]
    fid = _fidelity(over, norm2, t2)
    pair = _fidelity(rover, norm2, r2)
    probs = norm2 / (cols if batch is None else float(np.vdot(inputs, inputs).real))
    expected = float(d) ** (-len(pat.measured))
    uniform = bool(np.all(np.abs(probs - expected) <= 1e-9))
    digits = (idx[:, None] // d ** np.arange(len(pat.measured))) % d
    checks = tuple(
        BranchCheck(tuple(int(x) for x in o), float(p), float(f)) for o, p, f in zip(digits, probs, fid)
    )
    return Verification(
        d,
        pat.measured,
        exhaustive,
        tol,
        checks,
        bool(np.all(fid >= 1 - tol)),
        bool(np.all(pair >= 1 - tol)),
        uniform,
        float(probs.sum()),
    )


def verify_against_circuit(
    g: OpenGraph,
    fr: FlowResult,
    circuit,
    angles: Angles | None = None,
    policy="exhaustive",
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> Verification:
    """Every branch of the corrected pattern against the circuit, over the whole input basis."""
    if len(g.inputs) != len(g.outputs):
        raise SimulationError("the pattern is not square (|I| != |O|)")
    return verify_against_target(
        g, fr, circuit_unitary_in_output_order(circuit, g), angles, policy, tol, workers
    )
