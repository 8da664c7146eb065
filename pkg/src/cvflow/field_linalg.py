"""Linear algebra over the reals (with a zero tolerance) and over prime fields.

Matrices are dense numpy arrays tagged with a field descriptor. Real matrices
use ``float64``; prime-field matrices use ``int64`` residues in ``[0, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence, Union

import numpy as np

DEFAULT_EPS = 1e-9


class NotPrimeError(ValueError):
    """A modulus that is not prime was supplied."""


class DimensionMismatch(ValueError):
    """Operand shapes are incompatible (a usage error, not an unsolvable system)."""


class ColumnIndexError(IndexError):
    """A column operation referenced a column outside the matrix."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    k = 3
    while k * k <= n:
        if n % k == 0:
            return False
        k += 2
    return True


@dataclass(frozen=True)
class RealField:
    eps: float = DEFAULT_EPS
    kind: str = dc_field(default="real", init=False)

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"real tolerance must be positive, got {self.eps!r}")

    dtype = np.float64

    def array(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64)

    def reduce(self, arr: np.ndarray) -> np.ndarray:
        return arr

    def clean(self, arr: np.ndarray) -> np.ndarray:
        arr[np.abs(arr) <= self.eps] = 0.0
        return arr

    def is_zero(self, x) -> bool:
        return abs(float(x)) <= self.eps

    def nonzero_mask(self, arr: np.ndarray) -> np.ndarray:
        return np.abs(arr) > self.eps

    def inv(self, x):
        if self.is_zero(x):
            raise ZeroDivisionError(f"{x!r} is zero within tolerance {self.eps}")
        return 1.0 / float(x)

    def neg(self, x):
        return -float(x)

    def scalar(self, x) -> float:
        return float(x)

    def to_json(self) -> dict:
        return {"kind": "real", "eps": self.eps}

    def describe(self) -> str:
        return f"R(eps={self.eps:g})"


@dataclass(frozen=True)
class ModField:
    d: int
    kind: str = dc_field(default="mod", init=False)

    def __post_init__(self) -> None:
        if isinstance(self.d, bool) or not isinstance(self.d, (int, np.integer)):
            raise NotPrimeError(f"modulus must be an integer, got {self.d!r}")
        if not is_prime(int(self.d)):
            raise NotPrimeError(f"modulus {self.d} is not prime")
        object.__setattr__(self, "d", int(self.d))

    dtype = np.int64

    def array(self, values) -> np.ndarray:
        arr = np.asarray(values)
        if arr.dtype.kind == "f":
            rounded = np.rint(arr)
            if not np.array_equal(rounded, arr):
                raise ValueError("non-integer value for a prime-field element")
            arr = rounded
        return np.mod(arr.astype(np.int64), self.d)

    def reduce(self, arr: np.ndarray) -> np.ndarray:
        np.mod(arr, self.d, out=arr)
        return arr

    def clean(self, arr: np.ndarray) -> np.ndarray:
        return self.reduce(arr)

    def is_zero(self, x) -> bool:
        return int(x) % self.d == 0

    def nonzero_mask(self, arr: np.ndarray) -> np.ndarray:
        return np.mod(arr, self.d) != 0

    def inv(self, x):
        if self.is_zero(x):
            raise ZeroDivisionError(f"{x} has no inverse modulo {self.d}")
        return pow(int(x) % self.d, -1, self.d)

    def neg(self, x):
        return (-int(x)) % self.d

    def scalar(self, x) -> int:
        if isinstance(x, float):
            if x != round(x):
                raise ValueError(f"non-integer value {x} for a prime-field element")
            x = int(round(x))
        return int(x) % self.d

    def to_json(self) -> dict:
        return {"kind": "mod", "d": self.d}

    def describe(self) -> str:
        return f"Z_{self.d}"


Field = Union[RealField, ModField]


def field_from_json(doc: dict) -> Field:
    kind = doc.get("kind")
    if kind == "real":
        return RealField(float(doc.get("eps", DEFAULT_EPS)))
    if kind == "mod":
        if "d" not in doc:
            raise ValueError("mod field requires a modulus 'd'")
        return ModField(doc["d"])
    raise ValueError(f"unknown field kind {kind!r}")


@dataclass(frozen=True)
class FieldScalar:
    """A single field element; arithmetic stays inside its field."""

    value: Union[float, int]
    field: Field

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", self.field.scalar(self.value))

    def _coerce(self, other) -> Union[float, int]:
        if isinstance(other, FieldScalar):
            if other.field != self.field:
                raise ValueError("mixing elements of different fields")
            return other.value
        return self.field.scalar(other)

    def __add__(self, other):
        return FieldScalar(self.value + self._coerce(other), self.field)

    __radd__ = __add__

    def __sub__(self, other):
        return FieldScalar(self.value - self._coerce(other), self.field)

    def __rsub__(self, other):
        return FieldScalar(self._coerce(other) - self.value, self.field)

    def __mul__(self, other):
        return FieldScalar(self.value * self._coerce(other), self.field)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldScalar(self.field.neg(self.value), self.field)

    def inverse(self) -> "FieldScalar":
        return FieldScalar(self.field.inv(self.value), self.field)

    def __truediv__(self, other):
        return self * FieldScalar(self._coerce(other), self.field).inverse()

    def is_zero(self) -> bool:
        return self.field.is_zero(self.value)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldScalar):
            try:
                other = FieldScalar(other, self.field)
            except (TypeError, ValueError):
                return NotImplemented
        return self.field == other.field and (self - other).is_zero()

    def __hash__(self) -> int:
        return hash((self.field, self.value)) if self.field.kind == "mod" else hash(self.field)


@dataclass(frozen=True, eq=False)
class Matrix:
    field: Field
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = self.field.array(self.data)
        if arr.ndim != 2:
            raise DimensionMismatch(f"matrix data must be 2-D, got shape {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_rows(cls, field: Field, rows: Sequence[Sequence], cols: int | None = None) -> "Matrix":
        if len(rows) == 0:
            return cls(field, np.zeros((0, cols or 0)))
        return cls(field, rows)

    @classmethod
    def identity(cls, field: Field, n: int) -> "Matrix":
        return cls(field, np.eye(n, dtype=np.int64))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def tolist(self) -> list:
        return self.data.tolist()

    def __matmul__(self, other):
        if isinstance(other, Matrix):
            if other.field != self.field:
                raise ValueError("mixing matrices over different fields")
            if self.cols != other.rows:
                raise DimensionMismatch(f"cannot multiply {self.shape} by {other.shape}")
            return Matrix(self.field, self.field.reduce(self.data @ other.data))
        vec = self.field.array(other)
        if vec.shape[0] != self.cols:
            raise DimensionMismatch(f"cannot multiply {self.shape} by vector of length {vec.shape[0]}")
        return self.field.reduce(self.data @ vec)

    def equals(self, other: "Matrix") -> bool:
        if other.field != self.field or other.shape != self.shape:
            return False
        diff = self.field.reduce(self.data - other.data)
        return not self.field.nonzero_mask(diff).any()

    def __repr__(self) -> str:
        return f"Matrix({self.field.describe()}, {self.data.tolist()})"


@dataclass(frozen=True)
class RrefResult:
    matrix: Matrix
    pivot_columns: tuple[int, ...]
    rank: int

    def __iter__(self):
        return iter((self.matrix, list(self.pivot_columns), self.rank))


def _rref_array(fld: Field, arr: np.ndarray, pivot_limit: int | None = None) -> tuple[np.ndarray, list[int]]:
    """Row-reduce ``arr`` in place; pivots are only sought in the first ``pivot_limit`` columns."""
    rows, cols = arr.shape
    limit = cols if pivot_limit is None else pivot_limit
    pivots: list[int] = []
    r = 0
    real = fld.kind == "real"
    for c in range(limit):
        if r == rows:
            break
        column = arr[r:, c]
        if real:
            p = int(np.argmax(np.abs(column)))
            if abs(column[p]) <= fld.eps:
                continue
        else:
            nz = np.flatnonzero(column)
            if nz.size == 0:
                continue
            p = int(nz[0])
        p += r
        if p != r:
            arr[[r, p]] = arr[[p, r]]
        inv = fld.inv(arr[r, c])
        if real:
            arr[r] *= inv
            arr[r, c] = 1.0
            factors = arr[:, c].copy()
            factors[r] = 0.0
            arr -= np.outer(factors, arr[r])
            arr[:, c] = 0.0
            arr[r, c] = 1.0
            fld.clean(arr)
        else:
            arr[r] = (arr[r] * inv) % fld.d
            factors = arr[:, c].copy()
            factors[r] = 0
            arr -= np.outer(factors, arr[r])
            np.mod(arr, fld.d, out=arr)
        pivots.append(c)
        r += 1
    return arr, pivots


def rref(m: Matrix) -> RrefResult:
    """Reduced row echelon form, pivot columns and rank of ``m``."""
    if m.rows == 0 or m.cols == 0:
        return RrefResult(m, (), 0)
    arr = m.data.copy()
    arr, pivots = _rref_array(m.field, arr)
    return RrefResult(Matrix(m.field, arr), tuple(pivots), len(pivots))


def _residual_ok(fld: Field, a: np.ndarray, x: np.ndarray, b: np.ndarray) -> bool:
    if fld.kind != "real":
        return True
    bound = fld.eps * (1.0 + (np.max(np.abs(b)) if b.size else 0.0))
    resid = a @ x - b
    return resid.size == 0 or float(np.max(np.abs(resid))) <= bound


def solve_many(a: Matrix, rhs: np.ndarray) -> list[np.ndarray | None]:
    """Solve ``a x = rhs[:, k]`` for every column ``k`` with a single elimination.

    Each entry is the particular solution with free variables set to zero, or
    ``None`` when that right-hand side is inconsistent.
    """
    fld = a.field
    b = fld.array(rhs)
    if b.ndim != 2 or b.shape[0] != a.rows:
        raise DimensionMismatch(f"right-hand side shape {b.shape} does not match {a.rows} rows")
    n, k = a.cols, b.shape[1]
    aug = np.concatenate([a.data, b], axis=1).astype(fld.dtype, copy=True)
    aug, pivots = _rref_array(fld, aug, pivot_limit=n)
    rank = len(pivots)
    out: list[np.ndarray | None] = []
    for j in range(k):
        col = aug[:, n + j]
        if fld.nonzero_mask(col[rank:]).any():
            out.append(None)
            continue
        x = np.zeros(n, dtype=fld.dtype)
        for row, pc in enumerate(pivots):
            x[pc] = col[row]
        if fld.kind == "real":
            fld.clean(x)
        if not _residual_ok(fld, a.data, x, b[:, j]):
            out.append(None)
            continue
        out.append(x)
    return out


def solve(a: Matrix, b: Iterable) -> np.ndarray | None:
    """One solution of ``a x = b`` (free variables zero), or ``None`` if inconsistent."""
    vec = a.field.array(list(b) if not isinstance(b, np.ndarray) else b)
    if vec.ndim != 1 or vec.shape[0] != a.rows:
        raise DimensionMismatch(f"vector of length {vec.shape} does not match {a.rows} rows")
    return solve_many(a, vec.reshape(-1, 1))[0]


@dataclass(frozen=True)
class ColumnOp:
    """``swap(i, j)`` or ``add_scaled(target, source, s)``: column[target] += s * column[source]."""

    kind: str
    first: int
    second: int
    scalar: Union[float, int, None] = None

    def __post_init__(self) -> None:
        if self.kind not in ("swap", "add_scaled"):
            raise ValueError(f"unknown column operation {self.kind!r}")
        if self.kind == "add_scaled":
            if self.first == self.second:
                raise ValueError("add_scaled needs distinct target and source columns")
            if self.scalar is None or self.scalar == 0:
                raise ValueError("add_scaled needs a nonzero scalar")

    @classmethod
    def swap(cls, i: int, j: int) -> "ColumnOp":
        return cls("swap", i, j)

    @classmethod
    def add_scaled(cls, target: int, source: int, scalar) -> "ColumnOp":
        return cls("add_scaled", target, source, scalar)

    @property
    def target(self) -> int:
        return self.first

    @property
    def source(self) -> int:
        return self.second

    def inverse(self) -> "ColumnOp":
        if self.kind == "swap":
            return self
        return ColumnOp.add_scaled(self.first, self.second, -self.scalar)

    def elementary(self, fld: Field, n: int) -> Matrix:
        """The ``n x n`` matrix ``E`` such that applying this op equals right-multiplying by ``E``."""
        return apply_column_ops(Matrix.identity(fld, n), [self])


def apply_column_ops(m: Matrix, ops: Sequence[ColumnOp]) -> Matrix:
    fld = m.field
    arr = m.data.copy()
    for op in ops:
        for idx in (op.first, op.second):
            if not 0 <= idx < m.cols:
                raise ColumnIndexError(f"column {idx} out of range for {m.cols} columns")
        if op.kind == "swap":
            arr[:, [op.first, op.second]] = arr[:, [op.second, op.first]]
        else:
            s = fld.scalar(op.scalar)
            if fld.is_zero(s):
                raise ValueError(f"scalar {op.scalar} vanishes in {fld.describe()}")
            arr[:, op.first] = arr[:, op.first] + s * arr[:, op.second]
            fld.reduce(arr)
    return Matrix(fld, arr)
