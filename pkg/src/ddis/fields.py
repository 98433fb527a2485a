"""Uniform grids on the unit square, scalar fields and the Dirichlet sine basis.

Conventions
-----------
* A Dirichlet grid of resolution ``R`` stores the ``R x R`` interior nodes
  ``x_j = j h`` (``j = 1..R``) with ``h = 1/(R+1)``; boundary values are
  implicitly zero.  A periodic grid stores ``x_j = j h`` (``j = 0..R-1``) with
  ``h = 1/R``.
* Arrays are row-major with the row index running over ``y``:
  ``values[iy, ix]``.
* The sine basis is ``phi_mn(x, y) = 2 sin(m pi x) sin(n pi y)``, which is
  exactly orthonormal under the grid inner product ``h^2 sum f g``.  Sine
  coefficients use the same axis order as fields: ``coeffs[n-1, m-1]`` is the
  coefficient of ``phi_mn`` (``m`` along ``x``, ``n`` along ``y``).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import FormatError, InvalidArgument, UnsupportedBoundary

__all__ = [
    "Boundary",
    "GridSpec",
    "Field",
    "SineCoeffs",
    "make_grid",
    "sine_forward",
    "sine_inverse",
    "sine_basis",
    "field_norm_l2",
    "inner",
    "dirichlet_eigenvalues",
    "write_ddf1",
    "read_ddf1",
    "encode_ddf1",
    "decode_ddf1",
]


class Boundary(enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"

    @property
    def code(self) -> int:
        return 0 if self is Boundary.DIRICHLET else 1

    @classmethod
    def from_code(cls, code: int) -> "Boundary":
        try:
            return {0: cls.DIRICHLET, 1: cls.PERIODIC}[code]
        except KeyError:
            raise FormatError(f"unknown boundary code {code}") from None


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if isinstance(self.resolution, bool) or int(self.resolution) != self.resolution:
            raise InvalidArgument(f"resolution must be an integer, got {self.resolution!r}")
        if self.resolution < 2:
            raise InvalidArgument(f"resolution must be >= 2, got {self.resolution}")
        if not isinstance(self.boundary, Boundary):
            object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def h(self) -> float:
        if self.boundary is Boundary.DIRICHLET:
            return 1.0 / (self.resolution + 1)
        return 1.0 / self.resolution

    @property
    def shape(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    @property
    def size(self) -> int:
        return self.resolution * self.resolution

    def coords(self) -> np.ndarray:
        """1D node coordinates along either axis."""
        R = self.resolution
        if self.boundary is Boundary.DIRICHLET:
            return np.arange(1, R + 1) * self.h
        return np.arange(R) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` node arrays with ``Y`` varying along rows."""
        c = self.coords()
        X, Y = np.meshgrid(c, c, indexing="xy")
        return X, Y

    def require_dirichlet(self, what: str = "operation") -> None:
        if self.boundary is not Boundary.DIRICHLET:
            raise UnsupportedBoundary(f"{what} requires a Dirichlet grid, got {self.boundary.value}")


def make_grid(resolution: int, boundary: Boundary | str = Boundary.DIRICHLET) -> GridSpec:
    return GridSpec(resolution, Boundary(boundary))


def _frozen(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.size != shape[0] * shape[1]:
        raise InvalidArgument(f"expected {shape[0] * shape[1]} values, got {arr.size}")
    arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("field values must be finite")
    arr.flags.writeable = False
    return arr


class Field:
    """Immutable real scalar field on a :class:`GridSpec`.

    Supports ``+``, ``-`` between fields on the same grid and scaling by
    real numbers.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        self.grid = grid
        self.values = _frozen(values, grid.shape)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Field":
        X, Y = grid.mesh()
        return cls(grid, fn(X, Y))

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _check(self, other: "Field") -> None:
        if not isinstance(other, Field):
            raise InvalidArgument(f"expected a Field, got {type(other).__name__}")
        if other.grid != self.grid:
            raise InvalidArgument(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            return NotImplemented
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.grid, self.values / float(scalar))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field(R={self.grid.resolution}, {self.grid.boundary.value})"


class SineCoeffs:
    """Coefficients in the orthonormal Dirichlet sine basis."""

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: GridSpec, coeffs):
        grid.require_dirichlet("SineCoeffs")
        self.grid = grid
        self.coeffs = _frozen(coeffs, grid.shape)

    def mode(self, m: int, n: int) -> float:
        """Coefficient of ``phi_mn`` (``m`` along x, ``n`` along y)."""
        return float(self.coeffs[n - 1, m - 1])

    @classmethod
    def unit(cls, grid: GridSpec, m: int, n: int) -> "SineCoeffs":
        c = np.zeros(grid.shape)
        c[n - 1, m - 1] = 1.0
        return cls(grid, c)


def sine_forward(f: Field) -> SineCoeffs:
    f.grid.require_dirichlet("sine_forward")
    # orthonormal DST-I is 2/(R+1) sum f sin sin; the phi-basis adds a factor h
    c = scipy.fft.dstn(f.values, type=1, norm="ortho") * f.grid.h
    return SineCoeffs(f.grid, c)


def sine_inverse(c: SineCoeffs) -> Field:
    v = scipy.fft.idstn(c.coeffs, type=1, norm="ortho") / c.grid.h
    return Field(c.grid, v)


def sine_basis(grid: GridSpec, m: int, n: int) -> Field:
    """Samples of ``2 sin(m pi x) sin(n pi y)`` on the grid nodes."""
    return Field.from_function(grid, lambda X, Y: 2.0 * np.sin(m * np.pi * X) * np.sin(n * np.pi * Y))


def dirichlet_eigenvalues(grid: GridSpec) -> np.ndarray:
    """``pi^2 (m^2 + n^2)`` laid out like sine coefficients."""
    k = np.arange(1, grid.resolution + 1)
    return np.pi**2 * (k[None, :] ** 2 + k[:, None] ** 2)


def field_norm_l2(f: Field) -> float:
    """Grid-weighted L2 norm ``sqrt(h^2 sum v^2)``."""
    return float(f.grid.h * np.sqrt(np.sum(f.values**2)))


def inner(f: Field, g: Field) -> float:
    """Grid-weighted inner product ``h^2 sum f g``."""
    f._check(g)
    return float(f.grid.h**2 * np.sum(f.values * g.values))


# --- DDF1 binary format -----------------------------------------------------

_MAGIC = b"DDF1"
_HEADER = struct.Struct("<4sIIB3x")


def encode_ddf1(f: Field) -> bytes:
    rows, cols = f.values.shape
    head = _HEADER.pack(_MAGIC, rows, cols, f.grid.boundary.code)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def decode_ddf1(data: bytes) -> Field:
    if len(data) < _HEADER.size:
        raise FormatError("truncated DDF1 header")
    magic, rows, cols, code = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if rows != cols:
        raise FormatError(f"non-square field {rows}x{cols}")
    need = _HEADER.size + 8 * rows * cols
    if len(data) != need:
        raise FormatError(f"DDF1 payload has {len(data)} bytes, expected {need}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return Field(GridSpec(rows, Boundary.from_code(code)), values)


def write_ddf1(path, f: Field) -> None:
    Path(path).write_bytes(encode_ddf1(f))


def read_ddf1(path) -> Field:
    return decode_ddf1(Path(path).read_bytes())
