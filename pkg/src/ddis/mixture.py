"""Closed-form empirical Gaussian-mixture score models.

Under the variance-exploding convention ``x_t = x_0 + sigma eps`` the
noised empirical distribution of ``N`` training samples ``x_0^(n)`` is the
isotropic mixture ``p(x) = (1/N) sum_n N(x; x_0^(n), sigma^2 I)``.  Its
score, Tweedie denoiser, responsibilities and their gradients all have
closed forms, evaluated here in the log domain.

Vectors may carry leading batch axes: ``x`` of shape ``(..., d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import FormatError, InvalidArgument
from .fields import Field, GridSpec, read_ddf1, write_ddf1
from .random_fields import ObservationSet

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "karras_levels",
    "MixtureScoreModel",
    "OverlapDiagnostic",
    "log_density",
    "empirical_score",
    "tweedie_denoise",
    "tweedie_vjp",
    "ode_denoise",
    "responsibilities",
    "responsibility_grad",
    "cross_block_guidance",
    "overlap_diagnostic",
    "score_approximation_error",
]


def karras_levels(sigma_max: float, sigma_min: float, rho: float, n: int) -> np.ndarray:
    """``n`` levels interpolated linearly in ``sigma^(1/rho)`` from ``sigma_max`` to ``sigma_min``."""
    ramp = np.linspace(0.0, 1.0, n)
    hi, lo = sigma_max ** (1.0 / rho), sigma_min ** (1.0 / rho)
    levels = (hi + ramp * (lo - hi)) ** rho
    levels[0], levels[-1] = sigma_max, sigma_min
    return levels


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    sigma_min: float
    sigma_max: float
    rho: float
    steps: int
    sigmas: np.ndarray  # length steps + 1, terminal entry 0

    def __len__(self):
        return self.steps

    def to_dict(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max, "rho": self.rho, "steps": self.steps}


def make_schedule(sigma_min: float = 0.002, sigma_max: float = 80.0, rho: float = 7.0, steps: int = 18) -> NoiseSchedule:
    if not 0 < sigma_min < sigma_max:
        raise InvalidArgument(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if not rho > 0:
        raise InvalidArgument(f"rho must be positive, got {rho}")
    if int(steps) != steps or steps < 2:
        raise InvalidArgument(f"steps must be an integer >= 2, got {steps}")
    steps = int(steps)
    sig = np.append(karras_levels(sigma_max, sigma_min, rho, steps), 0.0)
    if not np.all(np.diff(sig) < 0):
        raise InvalidArgument("schedule is not strictly decreasing")
    sig.flags.writeable = False
    return NoiseSchedule(float(sigma_min), float(sigma_max), float(rho), steps, sig)


class MixtureScoreModel:
    """Empirical mixture over coefficient-only or joint ``(a, u)`` samples.

    Parameters
    ----------
    centers : array_like, shape (N, d)
        Clean training samples, one per row.  For ``space="joint"`` each row
        is ``concat(a, u)`` with the ``a``-block first.
    space : {"coeff", "joint"}
    grid : GridSpec, optional
        Grid of each block when the vectors are flattened fields.
    """

    def __init__(self, centers, space: str = "coeff", grid: GridSpec | None = None):
        C = np.array(centers, dtype=np.float64, copy=True)
        if C.ndim == 1:
            C = C[:, None]
        if C.ndim != 2 or C.shape[0] < 1:
            raise InvalidArgument("centers must be a nonempty (N, d) array")
        if space not in ("coeff", "joint"):
            raise InvalidArgument(f"space must be 'coeff' or 'joint', got {space!r}")
        if not np.all(np.isfinite(C)):
            raise InvalidArgument("centers must be finite")
        if space == "joint" and C.shape[1] % 2:
            raise InvalidArgument("joint centers need an even dimension (a and u blocks)")
        if grid is not None:
            block = C.shape[1] // (2 if space == "joint" else 1)
            if block != grid.size:
                raise InvalidArgument(f"center blocks have size {block}, grid needs {grid.size}")
        C.flags.writeable = False
        self.centers = C
        self.space = space
        self.grid = grid

    @classmethod
    def from_fields(cls, fields) -> "MixtureScoreModel":
        fields = list(fields)
        if not fields:
            raise InvalidArgument("need at least one center")
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise InvalidArgument("all centers must share one grid")
        return cls(np.stack([f.flat() for f in fields]), "coeff", grid)

    @classmethod
    def from_pairs(cls, pairs) -> "MixtureScoreModel":
        pairs = list(pairs)
        if not pairs:
            raise InvalidArgument("need at least one center")
        grid = pairs[0][0].grid
        if any(a.grid != grid or u.grid != grid for a, u in pairs):
            raise InvalidArgument("all centers must share one grid")
        return cls(np.stack([np.concatenate([a.flat(), u.flat()]) for a, u in pairs]), "joint", grid)

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def split(self) -> int:
        """Length of the ``a``-block (``dim`` for coefficient-only models)."""
        return self.dim // 2 if self.space == "joint" else self.dim

    def block_slice(self, block: str) -> slice:
        block = block.upper()
        if block == "FULL":
            return slice(0, self.dim)
        if self.space != "joint":
            raise InvalidArgument(f"block {block!r} requires a joint model")
        if block == "A":
            return slice(0, self.split)
        if block == "U":
            return slice(self.split, self.dim)
        raise InvalidArgument(f"unknown block {block!r}")

    def save(self, directory) -> None:
        """Write each center as DDF1 files plus ``manifest.json``."""
        if self.grid is None:
            raise InvalidArgument("only grid-backed models can be serialized")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        R = self.grid.resolution
        for n, c in enumerate(self.centers):
            if self.space == "joint":
                write_ddf1(d / f"center_{n:05d}_a.ddf", Field(self.grid, c[: self.split]))
                write_ddf1(d / f"center_{n:05d}_u.ddf", Field(self.grid, c[self.split :]))
            else:
                write_ddf1(d / f"center_{n:05d}.ddf", Field(self.grid, c))
        manifest = {"space": self.space, "n_centers": self.n_centers, "resolution": R}
        (d / "manifest.json").write_text(json.dumps(manifest))

    @classmethod
    def load(cls, directory) -> "MixtureScoreModel":
        d = Path(directory)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
            space, n = manifest["space"], int(manifest["n_centers"])
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"bad model manifest: {exc}") from exc
        if space == "joint":
            pairs = [(read_ddf1(d / f"center_{i:05d}_a.ddf"), read_ddf1(d / f"center_{i:05d}_u.ddf")) for i in range(n)]
            model = cls.from_pairs(pairs)
        else:
            model = cls.from_fields(read_ddf1(d / f"center_{i:05d}.ddf") for i in range(n))
        if model.grid.resolution != int(manifest["resolution"]):
            raise FormatError("manifest resolution does not match center files")
        return model


def _check_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    return float(sigma)


def _log_phi(model: MixtureScoreModel, x: np.ndarray, sigma: float) -> np.ndarray:
    """Unnormalised component log-densities ``-|x - x_n|^2 / (2 sigma^2)``, shape (..., N)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise InvalidArgument(f"x has dimension {x.shape[-1]}, model has {model.dim}")
    diff = x[..., None, :] - model.centers
    return -np.einsum("...nd,...nd->...n", diff, diff) / (2.0 * sigma * sigma)


def log_density(model: MixtureScoreModel, x, sigma: float) -> np.ndarray:
    """``log (1/N) sum_n N(x; x_n, sigma^2 I)`` including normalisation."""
    sigma = _check_sigma(sigma)
    lp = _log_phi(model, x, sigma)
    return logsumexp(lp, axis=-1) - np.log(model.n_centers) - 0.5 * model.dim * np.log(2 * np.pi * sigma**2)


def responsibilities(model: MixtureScoreModel, x, sigma: float) -> np.ndarray:
    sigma = _check_sigma(sigma)
    return softmax(_log_phi(model, x, sigma), axis=-1)


def tweedie_denoise(model: MixtureScoreModel, x, sigma: float) -> np.ndarray:
    """Posterior mean ``E[x_0 | x] = sum_n w_n x_n`` (equal to ``x + sigma^2 s(x)``)."""
    return responsibilities(model, x, sigma) @ model.centers


def empirical_score(model: MixtureScoreModel, x, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (tweedie_denoise(model, x, sigma) - x) / (sigma * sigma)


def tweedie_vjp(model: MixtureScoreModel, x, sigma: float, v) -> np.ndarray:
    """``J^T v`` for the denoiser Jacobian ``J = d x0hat / dx``.

    ``J = Cov_w(x_n) / sigma^2`` is symmetric, so this is also ``J v``.
    """
    sigma = _check_sigma(sigma)
    w = responsibilities(model, x, sigma)
    dev = model.centers - (w @ model.centers)[..., None, :]
    proj = np.einsum("...nd,...d->...n", dev, np.asarray(v, dtype=np.float64))
    return np.einsum("...n,...nd->...d", w * proj, dev) / (sigma * sigma)


def ode_denoise(model: MixtureScoreModel, x, sigma: float, steps: int = 1, sigma_min: float = 1e-3, rho: float = 7.0):
    """Clean estimate from ``x`` at level ``sigma`` via a short deterministic solve.

    Runs ``steps - 1`` DDIM updates ``x <- x0hat + (s'/s)(x - x0hat)`` along a
    power-interpolated ladder from ``sigma`` to ``sigma_min`` and returns the
    Tweedie estimate at the last level.  ``steps <= 1`` is plain Tweedie.
    """
    x = np.asarray(x, dtype=np.float64)
    if steps <= 1 or sigma <= sigma_min:
        return tweedie_denoise(model, x, sigma)
    levels = karras_levels(sigma, sigma_min, rho, steps)
    for s, s_next in zip(levels[:-1], levels[1:]):
        x0 = tweedie_denoise(model, x, s)
        x = x0 + (s_next / s) * (x - x0)
    return tweedie_denoise(model, x, levels[-1])


def responsibility_grad(model: MixtureScoreModel, x, sigma: float, n: int, block: str = "full") -> np.ndarray:
    """Gradient of ``w_n`` restricted to a block.

    ``grad w_n = w_n (grad log phi_n - sum_j w_j grad log phi_j)
    = w_n (x_n - x0hat) / sigma^2``.
    """
    sl = model.block_slice(block)
    if not 0 <= n < model.n_centers:
        raise InvalidArgument(f"component index {n} out of range")
    w = responsibilities(model, x, sigma)
    x0 = w @ model.centers
    return w[..., n, None] * (model.centers[n, sl] - x0[..., sl]) / (sigma * sigma)


def _all_responsibility_grads(model, w, x0, sigma, sl):
    return w[..., :, None] * (model.centers[:, sl] - x0[..., None, sl]) / (sigma * sigma)


def cross_block_guidance(model: MixtureScoreModel, x, sigma: float, obs: ObservationSet):
    """Scale-free guidance ``g = J^T M^T r`` split into ``(g_a, g_u)``.

    ``M`` selects observed entries of the ``u``-block and
    ``r = u_obs - M u0hat``.  The ``a``-block equals
    ``sigma^2 (d_a s_u)^T M^T r = sum_n (grad_a w_n) <u_n, M^T r>``; the
    ``u``-block equals ``(I + sigma^2 d_u s_u)^T M^T r``.

    Returns
    -------
    g_a, g_u : ndarray
    r : ndarray
        The observation residual.
    """
    if model.space != "joint":
        raise InvalidArgument("cross_block_guidance requires a joint model")
    sigma = _check_sigma(sigma)
    sa, su = model.block_slice("A"), model.block_slice("U")
    if len(obs) and obs.indices.max() >= model.split:
        raise InvalidArgument("observation indices must address the u-block")
    x = np.asarray(x, dtype=np.float64)
    w = responsibilities(model, x, sigma)
    x0 = w @ model.centers
    r = obs.values - x0[..., su][..., obs.indices]
    U = model.centers[:, su]
    # <u_n, M^T r> only involves observed entries
    proj = np.einsum("nk,...k->...n", U[:, obs.indices], r)
    dwa = _all_responsibility_grads(model, w, x0, sigma, sa)
    dwu = _all_responsibility_grads(model, w, x0, sigma, su)
    g_a = np.einsum("...nd,...n->...d", dwa, proj)
    g_u = np.einsum("...nd,...n->...d", dwu, proj)
    return g_a, g_u, r


@dataclass(frozen=True)
class OverlapDiagnostic:
    eta: float
    min_pair_gap: float
    G: float
    dominant: int


def overlap_diagnostic(model: MixtureScoreModel, x, sigma: float, block: str | None = None) -> OverlapDiagnostic:
    """Local-dominance ratio, pairwise squared-distance gap and gradient bound at one point.

    ``eta = sum_{j != k} phi_j / phi_k`` for the dominant component ``k``;
    ``min_pair_gap = min_{p<q} | |x-x_p|^2 - |x-x_q|^2 |`` (``inf`` for a
    single component); ``G = max_j |grad_block log phi_j|`` with ``block``
    defaulting to ``"A"`` for joint models and ``"full"`` otherwise.
    """
    sigma = _check_sigma(sigma)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument("overlap_diagnostic takes a single point")
    if block is None:
        block = "A" if model.space == "joint" else "full"
    sl = model.block_slice(block)
    lp = _log_phi(model, x, sigma)
    k = int(np.argmax(lp))
    others = np.delete(lp, k) - lp[k]
    eta = float(np.sum(np.exp(others))) if others.size else 0.0
    d2 = -2.0 * sigma * sigma * lp
    if model.n_centers > 1:
        gaps = np.abs(d2[:, None] - d2[None, :])
        gap = float(np.min(gaps[np.triu_indices(model.n_centers, 1)]))
    else:
        gap = float("inf")
    G = float(np.max(np.linalg.norm(x[sl] - model.centers[:, sl], axis=1)) / (sigma * sigma))
    return OverlapDiagnostic(eta, gap, G, k)


def score_approximation_error(model: MixtureScoreModel, x=None, sigma: float | None = None) -> float:
    """Sup-norm gap between the score used and the empirical score; zero by construction."""
    return 0.0
