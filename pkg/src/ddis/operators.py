"""Spectral forward operators for Poisson/Helmholtz and the fitted diagonal surrogate.

Every operator here is diagonal in the Dirichlet sine basis, so ``apply``
multiplies sine coefficients by a fixed multiplier array and the adjoint
(vector-Jacobian product) multiplies by the very same array.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from .errors import FormatError, InvalidArgument, ResonanceError
from .fields import Field, GridSpec, SineCoeffs, dirichlet_eigenvalues, read_ddf1, sine_forward, sine_inverse, write_ddf1

__all__ = [
    "Task",
    "POISSON",
    "helmholtz",
    "OperatorHandle",
    "PairedDataset",
    "solve_poisson",
    "solve_helmholtz",
    "exact_operator",
    "operator_apply",
    "operator_vjp",
    "fit_spectral_surrogate",
    "pde_residual",
    "residual_symbol",
]

RESONANCE_TOL = 1e-9


@dataclass(frozen=True)
class Task:
    """PDE task: ``"poisson"`` (lap u = a) or ``"helmholtz"`` (lap u + k^2 u = a)."""

    kind: str = "poisson"
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poisson", "helmholtz"):
            raise InvalidArgument(f"unknown task {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"task": self.kind}
        if self.kind == "helmholtz":
            d["k"] = self.k
        return d


POISSON = Task("poisson")


def helmholtz(k: float = 1.0) -> Task:
    return Task("helmholtz", float(k))


def residual_symbol(task: Task, grid: GridSpec) -> np.ndarray:
    """Spectral symbol ``D_mn`` of the differential operator (``-lambda`` or ``k^2 - lambda``)."""
    lam = dirichlet_eigenvalues(grid)
    if task.kind == "poisson":
        return -lam
    return task.k**2 - lam


def _exact_multipliers(task: Task, grid: GridSpec) -> np.ndarray:
    sym = residual_symbol(task, grid)
    bad = np.abs(sym) < RESONANCE_TOL
    if np.any(bad):
        n, m = np.argwhere(bad)[0]
        raise ResonanceError(task.k, (int(m) + 1, int(n) + 1))
    return 1.0 / sym


class OperatorHandle:
    """A linear forward map ``a -> u`` with its exact adjoint.

    Parameters
    ----------
    kind : {"poisson", "helmholtz", "surrogate"}
    grid : GridSpec
        Dirichlet grid the operator acts on.
    multipliers : ndarray, shape (R, R)
        Sine-coefficient multipliers (same layout as :class:`SineCoeffs`).
    k : float
        Helmholtz wavenumber (ignored otherwise).
    meta : dict
        Fit metadata for surrogates (task, cutoff, lambda, warnings).
    """

    def __init__(self, kind: str, grid: GridSpec, multipliers, k: float = 0.0, meta: dict | None = None):
        if kind not in ("poisson", "helmholtz", "surrogate"):
            raise InvalidArgument(f"unknown operator kind {kind!r}")
        grid.require_dirichlet("OperatorHandle")
        mult = np.array(multipliers, dtype=np.float64, copy=True)
        if mult.shape != grid.shape:
            raise InvalidArgument(f"multipliers must have shape {grid.shape}, got {mult.shape}")
        if not np.all(np.isfinite(mult)):
            raise InvalidArgument("multipliers must be finite")
        mult.flags.writeable = False
        self.kind = kind
        self.grid = grid
        self.multipliers = mult
        self.k = float(k)
        self.meta = dict(meta or {})

    @classmethod
    def poisson(cls, grid: GridSpec) -> "OperatorHandle":
        return cls("poisson", grid, _exact_multipliers(POISSON, grid))

    @classmethod
    def helmholtz(cls, grid: GridSpec, k: float = 1.0) -> "OperatorHandle":
        return cls("helmholtz", grid, _exact_multipliers(helmholtz(k), grid), k=k)

    @classmethod
    def surrogate(cls, grid: GridSpec, multipliers, **meta) -> "OperatorHandle":
        return cls("surrogate", grid, multipliers, meta=meta)

    # flat-vector interface used by the samplers; leading batch axes allowed
    def matvec(self, x: np.ndarray) -> np.ndarray:
        # the h scalings of forward/inverse cancel
        x = np.asarray(x, dtype=np.float64)
        c = scipy.fft.dstn(x.reshape(x.shape[:-1] + self.grid.shape), type=1, norm="ortho", axes=(-2, -1))
        out = scipy.fft.idstn(c * self.multipliers, type=1, norm="ortho", axes=(-2, -1))
        return out.reshape(x.shape)

    rmatvec = matvec

    def norm_bound(self) -> float:
        """Spectral norm (largest ``|multiplier|``)."""
        return float(np.max(np.abs(self.multipliers)))

    def apply(self, a: Field) -> Field:
        if a.grid != self.grid:
            raise InvalidArgument(f"grid mismatch: operator {self.grid} vs field {a.grid}")
        c = sine_forward(a)
        return sine_inverse(SineCoeffs(self.grid, c.coeffs * self.multipliers))

    # diagonal real symbol in an orthonormal basis: self-adjoint
    vjp = apply

    def save(self, path) -> None:
        """Write multipliers as DDF1 plus a ``.json`` sidecar next to it."""
        path = Path(path)
        write_ddf1(path, Field(self.grid, self.multipliers))
        side = {"kind": self.kind}
        side.update({k: v for k, v in self.meta.items() if k != "warnings"})
        if self.kind == "helmholtz":
            side["k"] = self.k
        path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True))

    @classmethod
    def load(cls, path) -> "OperatorHandle":
        path = Path(path)
        f = read_ddf1(path)
        try:
            side = json.loads(path.with_suffix(".json").read_text())
            kind = side.pop("kind")
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"missing or malformed operator sidecar: {exc}") from exc
        k = side.pop("k", 0.0)
        return cls(kind, f.grid, f.values, k=k, meta=side)

    def __repr__(self):
        return f"OperatorHandle({self.kind!r}, R={self.grid.resolution})"


def exact_operator(task: Task, grid: GridSpec) -> OperatorHandle:
    if task.kind == "poisson":
        return OperatorHandle.poisson(grid)
    return OperatorHandle.helmholtz(grid, task.k)


def solve_poisson(a: Field) -> Field:
    a.grid.require_dirichlet("solve_poisson")
    return OperatorHandle.poisson(a.grid).apply(a)


def solve_helmholtz(a: Field, k: float) -> Field:
    a.grid.require_dirichlet("solve_helmholtz")
    return OperatorHandle.helmholtz(a.grid, k).apply(a)


def operator_apply(op: OperatorHandle, a: Field) -> Field:
    return op.apply(a)


def operator_vjp(op: OperatorHandle, residual: Field) -> Field:
    return op.vjp(residual)


class PairedDataset:
    """Paired ``(a, u)`` samples on a single Dirichlet grid."""

    def __init__(self, pairs: Sequence[tuple[Field, Field]]):
        pairs = list(pairs)
        if pairs:
            grid = pairs[0][0].grid
            for a, u in pairs:
                if a.grid != grid or u.grid != grid:
                    raise InvalidArgument("all pairs must share one grid")
        self.pairs = pairs

    @property
    def grid(self) -> GridSpec:
        if not self.pairs:
            raise InvalidArgument("empty dataset has no grid")
        return self.pairs[0][0].grid

    def __len__(self):
        return len(self.pairs)


def fit_spectral_surrogate(
    data: PairedDataset,
    mode_cutoff: int,
    lambda_phys: float = 0.0,
    task: Task = POISSON,
) -> OperatorHandle:
    """Least-squares fit of a diagonal sine-basis multiplier.

    Per retained mode the objective

        sum_j (m a_j - u_j)^2 + lambda_phys * (D m - 1)^2

    is minimised in closed form, where ``D`` is the spectral symbol of the
    PDE.  The physics term is the squared residual ``Res(L(phi), phi)`` of a
    unit-energy probe of that mode, so it needs no paired data; with
    ``lambda_phys = inf`` the fit is the data-free solution ``m = 1/D``.
    Modes with ``max(m, n) > mode_cutoff`` are zero.
    """
    if len(data) == 0:
        raise InvalidArgument("cannot fit a surrogate to an empty dataset")
    grid = data.grid
    R = grid.resolution
    if not 1 <= mode_cutoff <= R:
        raise InvalidArgument(f"mode_cutoff must lie in [1, {R}], got {mode_cutoff}")
    if not lambda_phys >= 0:
        raise InvalidArgument("lambda_phys must be nonnegative")

    A = np.stack([sine_forward(a).coeffs for a, _ in data.pairs])
    U = np.stack([sine_forward(u).coeffs for _, u in data.pairs])
    energy = np.sum(A * A, axis=0)
    cross = np.sum(A * U, axis=0)
    D = residual_symbol(task, grid)

    meta = {"task": task.kind, "mode_cutoff": int(mode_cutoff), "lambda_phys": float(lambda_phys)}
    if task.kind == "helmholtz":
        meta["k"] = task.k
    if np.isinf(lambda_phys):
        mult = 1.0 / D
    else:
        num = cross + lambda_phys * D
        den = energy + lambda_phys * D * D
        # energy at round-off level relative to the strongest mode counts as absent
        ill = den <= 1e-24 * max(float(den.max()), 1e-300)
        mult = np.where(ill, 0.0, num / np.where(ill, 1.0, den))
        n_ill = int(np.count_nonzero(ill[:mode_cutoff, :mode_cutoff]))
        if n_ill:
            msg = f"{n_ill} retained mode(s) have zero data energy; multiplier set to 0"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            meta["warnings"] = [msg]

    keep = np.zeros(grid.shape, dtype=bool)
    keep[:mode_cutoff, :mode_cutoff] = True
    mult = np.where(keep, mult, 0.0)
    return OperatorHandle.surrogate(grid, mult, **meta)


def pde_residual(task: Task, a: Field, u: Field) -> Field:
    """Spectrally evaluated ``lap u - a`` (Poisson) or ``lap u + k^2 u - a`` (Helmholtz)."""
    if a.grid != u.grid:
        raise InvalidArgument(f"grid mismatch: {a.grid} vs {u.grid}")
    a.grid.require_dirichlet("pde_residual")
    D = residual_symbol(task, a.grid)
    res = D * sine_forward(u).coeffs - sine_forward(a).coeffs
    return sine_inverse(SineCoeffs(a.grid, res))
