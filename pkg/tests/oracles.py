"""Independent brute-force reference implementations.

Nothing here imports the package: exact rational arithmetic, exhaustive
enumeration and explicit Kronecker products stand in for the optimised code.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def rational_rref(rows):
    """Reduced row echelon form over the rationals with exact fractions."""
    m = [[Fraction(x) for x in row] for row in rows]
    if not m:
        return m
    pivot_row = 0
    for col in range(len(m[0])):
        found = next((r for r in range(pivot_row, len(m)) if m[r][col] != 0), None)
        if found is None:
            continue
        m[pivot_row], m[found] = m[found], m[pivot_row]
        lead = m[pivot_row][col]
        m[pivot_row] = [x / lead for x in m[pivot_row]]
        for r in range(len(m)):
            if r != pivot_row and m[r][col] != 0:
                factor = m[r][col]
                m[r] = [a - factor * b for a, b in zip(m[r], m[pivot_row])]
        pivot_row += 1
        if pivot_row == len(m):
            break
    return m


def modular_rref(rows, p: int):
    """Reduced row echelon form over ``Z_p`` by plain integer arithmetic."""
    m = [[x % p for x in row] for row in rows]
    if not m:
        return m
    pivot_row = 0
    for col in range(len(m[0])):
        found = next((r for r in range(pivot_row, len(m)) if m[r][col]), None)
        if found is None:
            continue
        m[pivot_row], m[found] = m[found], m[pivot_row]
        inv = pow(m[pivot_row][col], -1, p)
        m[pivot_row] = [(x * inv) % p for x in m[pivot_row]]
        for r in range(len(m)):
            if r != pivot_row and m[r][col]:
                factor = m[r][col]
                m[r] = [(a - factor * b) % p for a, b in zip(m[r], m[pivot_row])]
        pivot_row += 1
        if pivot_row == len(m):
            break
    return m


def _det(m):
    """Exact determinant by cofactor expansion (fine for the tiny systems used here)."""
    if len(m) == 1:
        return m[0][0]
    return sum(
        (-1) ** c * m[0][c] * _det([row[:c] + row[c + 1 :] for row in m[1:]]) for c in range(len(m))
    )


def cramer_solve(a, b):
    """Unique rational solution of a square system, or ``None`` if singular."""
    a = [[Fraction(x) for x in row] for row in a]
    b = [Fraction(x) for x in b]
    det = _det(a)
    if det == 0:
        return None
    out = []
    for c in range(len(a)):
        swapped = [row[:c] + [b[r]] + row[c + 1 :] for r, row in enumerate(a)]
        out.append(_det(swapped) / det)
    return out


def enumerate_solutions(a, b, p: int):
    """Every ``x`` in ``Z_p^n`` with ``a x = b``, found by trying them all."""
    n = len(a[0]) if a else 0
    found = []
    for x in itertools.product(range(p), repeat=n):
        if all(sum(r * v for r, v in zip(row, x)) % p == rhs % p for row, rhs in zip(a, b)):
            found.append(x)
    return found


def odd_neighbourhood(adj, subset):
    """Vertices adjacent to an odd number of members of ``subset`` (unweighted)."""
    n = len(adj)
    return {v for v in range(n) if sum(1 for u in subset if adj[u][v]) % 2 == 1}


def brute_force_gflow(adj, inputs, outputs) -> bool:
    """Decide g-flow existence over every measurement order and every correction subset.

    For a fixed order a vertex ``i`` is correctable when some set ``g`` of
    non-input vertices measured strictly after ``i`` (outputs count as never
    measured) has ``Odd(g)`` meeting ``{i}`` together with everything measured
    before ``i`` in exactly ``{i}``.
    """
    n = len(adj)
    inputs, outputs = set(inputs), set(outputs)
    measured = [v for v in range(n) if v not in outputs]
    for order in itertools.permutations(measured):
        position = {v: k for k, v in enumerate(order)}
        ok = True
        for i in order:
            earlier = {v for v in order if position[v] < position[i]}
            later = [v for v in range(n) if v not in inputs and v != i and v not in earlier]
            correctable = False
            for size in range(1, len(later) + 1):
                for g in itertools.combinations(later, size):
                    if odd_neighbourhood(adj, g) & (earlier | {i}) == {i}:
                        correctable = True
                        break
                if correctable:
                    break
            if not correctable:
                ok = False
                break
        if ok:
            return True
    return False


# ---------------------------------------------------------------- dense qudit algebra


def omega(d: int) -> complex:
    return np.exp(2j * np.pi / d)


def shift(d: int) -> np.ndarray:
    return np.roll(np.eye(d), 1, axis=0)


def clock(d: int) -> np.ndarray:
    return np.diag(omega(d) ** np.arange(d))


def embed(d: int, n: int, op: np.ndarray, qudit: int) -> np.ndarray:
    """Single-qudit operator on ``qudit`` of ``n``; qudit 0 is the least significant digit."""
    out = np.eye(1)
    for q in reversed(range(n)):
        out = np.kron(out, op if q == qudit else np.eye(d))
    return out


def digits_of(index: int, d: int, n: int) -> list[int]:
    return [(index // d**q) % d for q in range(n)]


def controlled_shift(d: int, n: int, control: int, target: int, weight: int) -> np.ndarray:
    """``|..x_c..x_t..> -> |..x_c..x_t + w x_c..>`` built entry by entry."""
    dim = d**n
    out = np.zeros((dim, dim))
    for col in range(dim):
        x = digits_of(col, d, n)
        x[target] = (x[target] + weight * x[control]) % d
        out[sum(v * d**q for q, v in enumerate(x)), col] = 1
    return out


def diagonal_phase(d: int, n: int, exponent) -> np.ndarray:
    """``diag(omega^exponent(x))`` for an integer-valued function of the digits."""
    return np.diag([omega(d) ** (exponent(digits_of(i, d, n)) % d) for i in range(d**n)])


def entangler(d: int, adj) -> np.ndarray:
    """Dense ``E_G = prod CZ(A_jk)`` over the edges of a weighted graph."""
    n = len(adj)
    return diagonal_phase(
        d, n, lambda x: sum(int(adj[j][k]) * x[j] * x[k] for j in range(n) for k in range(j + 1, n))
    )


def plus_state(d: int, n: int) -> np.ndarray:
    return np.full(d**n, d ** (-n / 2), dtype=complex)
