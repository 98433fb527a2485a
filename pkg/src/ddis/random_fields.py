"""Gaussian random fields, white noise, observation masks and noisy point observations.

All randomness flows through :class:`numpy.random.Generator` objects backed by
the counter-based Philox4x64 bit generator (see :func:`make_rng`), so a fixed
seed and call sequence yields bit-identical output on every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .fields import Boundary, Field, GridSpec, SineCoeffs, dirichlet_eigenvalues, sine_inverse

__all__ = [
    "GrfSpec",
    "POISSON_PRIOR",
    "ObservationSet",
    "make_rng",
    "spawn_seed",
    "sample_white",
    "sample_grf",
    "grf_eigenvalues",
    "sample_mask",
    "observe",
]


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_seed(seed: int, index: int) -> int:
    """Deterministic 64-bit child seed ``hash(seed, index)``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True)
class GrfSpec:
    """Covariance ``amplitude * (-Laplacian + tau I)^(-alpha)`` in the Dirichlet sine basis."""

    tau: float = 9.0
    alpha: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if not self.alpha >= 0:
            raise InvalidArgument(f"alpha must be nonnegative, got {self.alpha}")
        if not self.amplitude > 0:
            raise InvalidArgument(f"amplitude must be positive, got {self.amplitude}")


POISSON_PRIOR = GrfSpec(tau=9.0, alpha=2.0)


def grf_eigenvalues(grid: GridSpec, spec: GrfSpec) -> np.ndarray:
    """Covariance eigenvalues ``c_mn`` laid out like sine coefficients."""
    return spec.amplitude * (dirichlet_eigenvalues(grid) + spec.tau) ** (-spec.alpha)


def sample_white(grid: GridSpec, rng: np.random.Generator) -> Field:
    return Field(grid, rng.standard_normal(grid.shape))


def sample_grf(grid: GridSpec, spec: GrfSpec, rng: np.random.Generator) -> Field:
    grid.require_dirichlet("sample_grf")
    xi = rng.standard_normal(grid.shape)
    return sine_inverse(SineCoeffs(grid, np.sqrt(grf_eigenvalues(grid, spec)) * xi))


def sample_mask(grid: GridSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct flat indices drawn uniformly without replacement."""
    count = int(count)
    if count < 0 or count > grid.size:
        raise InvalidArgument(f"mask count must lie in [0, {grid.size}], got {count}")
    return np.sort(rng.choice(grid.size, size=count, replace=False)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Sparse point observations ``u_obs = M u + eps`` on a grid."""

    grid: GridSpec
    indices: np.ndarray
    values: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.float64).ravel()
        if idx.shape != val.shape:
            raise InvalidArgument("indices and values must have equal length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.grid.size):
            raise InvalidArgument(f"observation index out of range [0, {self.grid.size})")
        if np.unique(idx).size != idx.size:
            raise InvalidArgument("observation indices must be distinct")
        if not np.all(np.isfinite(val)):
            raise InvalidArgument("observation values must be finite")
        if not self.noise_sigma >= 0:
            raise InvalidArgument("noise_sigma must be nonnegative")
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return int(self.indices.size)

    def scaled(self, factor: float) -> "ObservationSet":
        """Same mask with values and noise level multiplied by ``factor``."""
        return ObservationSet(self.grid, self.indices, self.values * factor, self.noise_sigma * abs(factor))

    def embed(self, residual: np.ndarray) -> np.ndarray:
        """Zero-extend a length-``len(self)`` vector to the full flat grid (``M^T r``)."""
        out = np.zeros(self.grid.size)
        out[self.indices] = residual
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "resolution": self.grid.resolution,
                "boundary": self.grid.boundary.value,
                "noise_sigma": float(self.noise_sigma),
                "points": [{"index": int(i), "value": float(v)} for i, v in zip(self.indices, self.values)],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ObservationSet":
        try:
            doc = json.loads(text)
            grid = GridSpec(int(doc["resolution"]), Boundary(doc["boundary"]))
            pts = doc["points"]
            idx = [int(p["index"]) for p in pts]
            val = [float(p["value"]) for p in pts]
            return cls(grid, np.array(idx, dtype=np.int64), np.array(val), float(doc["noise_sigma"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidArgument):
                raise
            raise FormatError(f"malformed observation JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ObservationSet":
        return cls.from_json(Path(path).read_text())


def observe(u: Field, indices, noise_sigma: float, rng: np.random.Generator) -> ObservationSet:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= u.grid.size):
        raise InvalidArgument(f"observation index out of range [0, {u.grid.size})")
    if noise_sigma < 0:
        raise InvalidArgument("noise_sigma must be nonnegative")
    vals = u.flat()[idx]
    if noise_sigma > 0:
        vals = vals + noise_sigma * rng.standard_normal(idx.size)
    return ObservationSet(u.grid, idx, vals, float(noise_sigma))
