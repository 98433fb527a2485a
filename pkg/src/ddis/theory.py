"""Numerical checks of covariance collapse under a point constraint and of the
guidance-attenuation inequalities for joint mixture models.

Covariance collapse: for the preconditioned Langevin SDE

    dx = -Sigma (C^{-1}(x - x0) + e_i (x_i - c) / s2) dt + sqrt(2) Sigma^{1/2} dW

the stationary covariance is ``B^{-1}`` with ``B = C^{-1} + e_i e_i^T / s2``,
and by Sherman-Morrison ``B^{-1} = C - (C e_i)(C e_i)^T / (s2 + C_ii)``, so
row ``i`` is ``C`` scaled by ``s2 / (s2 + C_ii)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, StabilityError
from .fields import GridSpec
from .mixture import MixtureScoreModel, cross_block_guidance, _log_phi, responsibilities
from .random_fields import GrfSpec, grf_eigenvalues
from .samplers import VectorObservations, ideal_daps_step_gaussian

__all__ = [
    "CovarianceMatrix",
    "StationaryEstimate",
    "constrained_precision",
    "stationary_covariance_closed_form",
    "lyapunov_residual",
    "em_stationary_covariance",
    "stability_bound",
    "simulate_constrained_langevin",
    "AttenuationRow",
    "AttenuationReport",
    "attenuation_sweep",
    "random_joint_model",
    "time_marginal_invariance",
]


class CovarianceMatrix:
    """Symmetric positive-definite matrix with a cached symmetric square root."""

    def __init__(self, entries, sym_tol: float = 1e-12):
        C = np.array(entries, dtype=np.float64, copy=True)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
            raise InvalidArgument(f"covariance must be a square matrix, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidArgument("covariance entries must be finite")
        scale = max(float(np.max(np.abs(C))), 1e-300)
        if np.max(np.abs(C - C.T)) > sym_tol * scale:
            raise InvalidArgument("covariance is not symmetric")
        C = 0.5 * (C + C.T)
        evals, evecs = np.linalg.eigh(C)
        if evals[0] <= 0:
            raise InvalidArgument(f"covariance is not positive definite (min eigenvalue {evals[0]:.3e})")
        C.flags.writeable = False
        self.entries = C
        self.eigenvalues = evals
        self._evecs = evecs

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def sqrt(self) -> np.ndarray:
        return (self._evecs * np.sqrt(self.eigenvalues)) @ self._evecs.T

    def inverse(self) -> np.ndarray:
        return (self._evecs / self.eigenvalues) @ self._evecs.T

    @classmethod
    def identity(cls, d: int) -> "CovarianceMatrix":
        return cls(np.eye(d))

    @classmethod
    def from_grf_slice(cls, resolution: int, spec: GrfSpec, dim: int, row: int | None = None,
                       start: int | None = None, normalise: bool = False) -> "CovarianceMatrix":
        """Covariance of a :func:`sample_grf` field at ``dim`` adjacent nodes of one grid row.

        Exact for the truncated sine expansion used by the sampler:
        ``C_jk = sum_mn c_mn phi_mn(p_j) phi_mn(p_k)``.  With ``normalise`` the
        result is rescaled to unit diagonal (a correlation matrix).
        """
        grid = GridSpec(resolution)
        R = grid.resolution
        if not 1 <= dim <= R:
            raise InvalidArgument(f"dim must lie in [1, {R}]")
        row = R // 2 if row is None else int(row)
        start = (R - dim) // 2 if start is None else int(start)
        if not (0 <= row < R and 0 <= start and start + dim <= R):
            raise InvalidArgument("slice lies outside the grid")
        c = grf_eigenvalues(grid, spec)  # c[n-1, m-1]
        k = np.arange(1, R + 1)
        xs = grid.coords()[start:start + dim]
        y = grid.coords()[row]
        sx = np.sin(np.pi * np.outer(k, xs))  # (m, j)
        sy = np.sin(np.pi * k * y)  # (n,)
        # sum_n c_nm 4 sin^2(n pi y) gives a per-m weight
        wm = 4.0 * (sy**2) @ c
        C = (sx * wm[:, None]).T @ sx
        if normalise:
            d = np.sqrt(np.diag(C))
            C = C / np.outer(d, d)
        return cls(0.5 * (C + C.T))


@dataclass
class StationaryEstimate:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int
    burn_in: int
    cov_stderr: np.ndarray | None = None


def _as_matrix(M) -> np.ndarray:
    return M.entries if isinstance(M, CovarianceMatrix) else np.asarray(M, dtype=np.float64)


def _check_index(i: int, d: int) -> int:
    if isinstance(i, bool) or int(i) != i or not 0 <= i < d:
        raise InvalidArgument(f"index {i} out of range for dimension {d}")
    return int(i)


def constrained_precision(C: CovarianceMatrix, i: int, sigma_s2: float) -> np.ndarray:
    """``B = C^{-1} + e_i e_i^T / sigma_s2``."""
    i = _check_index(i, C.dim)
    if not sigma_s2 > 0:
        raise InvalidArgument("sigma_s2 must be positive")
    B = C.inverse().copy()
    B[i, i] += 1.0 / sigma_s2
    return 0.5 * (B + B.T)


def stationary_covariance_closed_form(C: CovarianceMatrix, i: int, sigma_s2: float) -> CovarianceMatrix:
    """Rank-one corrected covariance ``C - (C e_i)(C e_i)^T / (sigma_s2 + C_ii)``."""
    i = _check_index(i, C.dim)
    if not sigma_s2 > 0:
        raise InvalidArgument("sigma_s2 must be positive")
    Ce = C.entries[:, i]
    S = C.entries - np.outer(Ce, Ce) / (sigma_s2 + C.entries[i, i])
    # row/column i is exactly the scaled prior row; keep it bit-clean
    shrink = sigma_s2 / (sigma_s2 + C.entries[i, i])
    S[i, :] = shrink * Ce
    S[:, i] = shrink * Ce
    return CovarianceMatrix(S)


def lyapunov_residual(Sigma, B, Sigma_inf) -> float:
    """``|Sigma B S + S B Sigma - 2 Sigma|_F / |2 Sigma|_F`` for ``S = Sigma_inf``."""
    Sg, Bm, S = _as_matrix(Sigma), _as_matrix(B), _as_matrix(Sigma_inf)
    if not (Sg.ndim == Bm.ndim == S.ndim == 2) or not (Sg.shape == Bm.shape == S.shape) or Sg.shape[0] != Sg.shape[1]:
        raise InvalidArgument(f"dimension mismatch: {Sg.shape}, {Bm.shape}, {S.shape}")
    res = Sg @ Bm @ S + S @ Bm @ Sg - 2.0 * Sg
    return float(np.linalg.norm(res) / np.linalg.norm(2.0 * Sg))


def _drift_matrix(Sigma: CovarianceMatrix, B: np.ndarray) -> np.ndarray:
    return Sigma.entries @ B


def stability_bound(Sigma: CovarianceMatrix, B: np.ndarray) -> float:
    """Euler-Maruyama stability limit ``2 / lambda_max(Sigma B)``."""
    # Sigma B is similar to Sigma^{1/2} B Sigma^{1/2}: real positive spectrum
    s = Sigma.sqrt()
    lam = np.linalg.eigvalsh(s @ B @ s)
    return 2.0 / float(lam[-1])


def em_stationary_covariance(Sigma: CovarianceMatrix, B: np.ndarray, dt: float) -> np.ndarray:
    """Exact stationary covariance of the Euler-Maruyama chain (discrete Lyapunov).

    Solves ``S = A S A^T + 2 dt Sigma`` with ``A = I - dt Sigma B``; the gap
    to ``B^{-1}`` is the time-discretisation bias.
    """
    from scipy.linalg import solve_discrete_lyapunov

    A = np.eye(B.shape[0]) - dt * _drift_matrix(Sigma, B)
    S = solve_discrete_lyapunov(A, 2.0 * dt * Sigma.entries)
    return 0.5 * (S + S.T)


def simulate_constrained_langevin(
    C: CovarianceMatrix,
    Sigma: CovarianceMatrix | None,
    i: int,
    c: float,
    sigma_s2: float,
    dt: float,
    steps: int,
    burn_in: int,
    rng: np.random.Generator,
    x0=None,
    n_chains: int = 1,
    block: int = 2048,
) -> StationaryEstimate:
    """Euler-Maruyama simulation of the point-constrained preconditioned Langevin SDE.

    Runs ``n_chains`` independent chains for ``steps`` iterations each,
    started at the stationary mean, and pools the post-burn-in iterates.
    ``x0`` is the prior mean (default 0), ``c`` the constrained value.

    Raises
    ------
    StabilityError
        If ``dt >= 2 / lambda_max(Sigma B)``.
    """
    d = C.dim
    Sigma = CovarianceMatrix.identity(d) if Sigma is None else Sigma
    if Sigma.dim != d:
        raise InvalidArgument(f"preconditioner has dimension {Sigma.dim}, covariance {d}")
    i = _check_index(i, d)
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    if int(steps) != steps or steps < 1 or int(burn_in) != burn_in or not 0 <= burn_in < steps:
        raise InvalidArgument("need integers 0 <= burn_in < steps")
    if int(n_chains) != n_chains or n_chains < 1:
        raise InvalidArgument("n_chains must be a positive integer")
    B = constrained_precision(C, i, sigma_s2)
    bound = stability_bound(Sigma, B)
    if dt >= bound:
        raise StabilityError(dt, bound)

    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    b = C.inverse() @ x0
    b[i] += c / sigma_s2
    mu = np.linalg.solve(B, b)
    K = _drift_matrix(Sigma, B)
    # x <- x - dt (K x - Sigma b) + sqrt(2 dt) Sigma^{1/2} z, as row vectors
    A_T = (np.eye(d) - dt * K).T
    shift = dt * (Sigma.entries @ b)
    noise_T = np.sqrt(2.0 * dt) * Sigma.sqrt().T

    x = np.tile(mu, (int(n_chains), 1))
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    kept = 0
    t = 0
    while t < steps:
        nb = min(block, steps - t)
        z = rng.standard_normal((nb, int(n_chains), d)) @ noise_T
        traj = np.empty_like(z)
        for j in range(nb):
            x = x @ A_T + shift + z[j]
            traj[j] = x
        start = max(0, burn_in - t)
        if start < nb:
            kept_block = traj[start:] - mu
            s1 += kept_block.sum(axis=(0, 1))
            s2 += np.einsum("tcd,tce->de", kept_block, kept_block)
            kept += kept_block.shape[0] * kept_block.shape[1]
        t += nb
    m = s1 / kept
    cov = s2 / kept - np.outer(m, m)
    return StationaryEstimate(mean=mu + m, cov=0.5 * (cov + cov.T), n_samples=kept, burn_in=int(burn_in))


# --- guidance attenuation ------------------------------------------------------


@dataclass
class AttenuationRow:
    model: int
    probe: int
    eta: float
    dominant: int
    dominant_gap: float
    G: float
    grad_w_sum: float
    grad_w_max: float
    ga_norm: float
    r_norm: float
    u_max: float
    local_bound: float
    chained_bound: float
    overlap_bound: float
    local_ok: bool
    chained_ok: bool
    overlap_ok: bool
    overlap: bool

    @property
    def ok(self) -> bool:
        return self.local_ok and self.chained_ok and self.overlap_ok


@dataclass
class AttenuationReport:
    rows: list = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r.ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(AttenuationRow.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            w.writerow([getattr(r, n) for n in names])
        return buf.getvalue()

    def summary(self) -> dict:
        slack = [r.grad_w_sum / r.local_bound for r in self.rows if r.eta < 1 and r.local_bound > 0]
        return {
            "probes": len(self.rows),
            "violations": len(self.violations),
            "max_local_ratio": max(slack) if slack else 0.0,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


_REL = 1e-9  # floating-point slack on bound comparisons


def attenuation_sweep(model: MixtureScoreModel, sigma: float, probes, obs=None, model_index: int = 0) -> AttenuationReport:
    """Evaluate the local-dominance and overlap inequalities at each probe.

    Per probe ``x`` (joint vector) this records

    * ``eta = sum_{j != k} phi_j / phi_k`` for the dominant ``k``;
    * ``sum_n |grad_a w_n|`` against ``4 G eta / (1 + eta)`` (checked when
      ``eta < 1``), with ``G = max_j |grad_a log phi_j|``;
    * ``|g_a|`` against ``max_n |u_n| * 4 G eta/(1+eta) * |r|``;
    * for ``delta = max_n |grad_a w_n| > 0``, the squared-distance gap between
      the dominant component and its nearest competitor against
      ``2 sigma^2 log((1 - tau)/tau)`` with ``tau = delta / (2 G (N-1))``.

    ``obs`` supplies the residual for ``g_a``; by default every u entry is
    observed with value zero.
    """
    if model.space != "joint":
        raise InvalidArgument("attenuation_sweep requires a joint model")
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    sa, su = model.block_slice("A"), model.block_slice("U")
    N = model.n_centers
    if obs is None:
        obs = VectorObservations(np.arange(model.split), np.zeros(model.split))
    u_max = float(np.max(np.linalg.norm(model.centers[:, su], axis=1)))
    report = AttenuationReport()
    for p_idx, x in enumerate(np.atleast_2d(np.asarray(probes, dtype=np.float64))):
        lp = _log_phi(model, x, sigma)
        k = int(np.argmax(lp))
        others = np.delete(lp, k) - lp[k]
        eta = float(np.sum(np.exp(others))) if others.size else 0.0
        w = responsibilities(model, x, sigma)
        x0 = w @ model.centers
        dw = w[:, None] * (model.centers[:, sa] - x0[sa]) / sigma**2
        dw_norm = np.linalg.norm(dw, axis=1)
        G = float(np.max(np.linalg.norm(x[sa] - model.centers[:, sa], axis=1)) / sigma**2)
        g_a, _, r = cross_block_guidance(model, x, sigma, obs)
        ga, rn = float(np.linalg.norm(g_a)), float(np.linalg.norm(r))

        local = 4.0 * G * eta / (1.0 + eta)
        grad_sum = float(dw_norm.sum())
        if eta < 1.0:
            local_ok = grad_sum <= local * (1 + _REL) + 1e-300
            chained = u_max * local * rn
            chained_ok = ga <= chained * (1 + _REL) + 1e-12 * u_max * rn * G
        else:
            local_ok = chained_ok = True
            chained = float("inf")

        d2 = -2.0 * sigma**2 * lp
        gap = float(np.min(np.abs(np.delete(d2, k) - d2[k]))) if N > 1 else float("inf")
        delta = float(dw_norm.max())
        if N > 1 and delta > 0 and G > 0:
            tau = delta / (2.0 * G * (N - 1))
            over = 2.0 * sigma**2 * np.log((1.0 - tau) / tau)
            overlap_ok = gap <= over * (1 + _REL)
        else:
            over = float("inf")
            overlap_ok = True
        report.rows.append(AttenuationRow(
            model=model_index, probe=p_idx, eta=eta, dominant=k, dominant_gap=gap, G=G,
            grad_w_sum=grad_sum, grad_w_max=delta, ga_norm=ga, r_norm=rn, u_max=u_max,
            local_bound=local, chained_bound=chained, overlap_bound=float(over),
            local_ok=bool(local_ok), chained_ok=bool(chained_ok), overlap_ok=bool(overlap_ok),
            overlap=bool(gap <= sigma**2),
        ))
    return report


def random_joint_model(rng: np.random.Generator, n_centers: int, half_dim: int, spread: float = 1.0) -> MixtureScoreModel:
    """Joint mixture with Gaussian ``a`` centers and ``u = A a`` for a random linear ``A``."""
    a = spread * rng.standard_normal((n_centers, half_dim))
    A = rng.standard_normal((half_dim, half_dim)) / np.sqrt(half_dim)
    return MixtureScoreModel(np.concatenate([a, a @ A.T], axis=1), "joint")


# --- time-marginal invariance of the ideal annealing step -----------------------


def time_marginal_invariance(rng: np.random.Generator, n_chains: int = 10_000, prior_var: float = 1.0,
                             obs_value: float = 0.7, obs_var: float = 0.25, sigma_t: float = 0.8,
                             sigma_next: float = 0.5) -> dict:
    """One ideal decoupled-annealing step on a conjugate scalar Gaussian.

    Prior ``a ~ N(0, prior_var)``, observation ``y = a + N(0, obs_var)``.
    Chains start from exact draws of ``p(a_t | y) = N(m, v + sigma_t^2)``
    and take one step with exact inner sampling; the returned z-scores
    compare the empirical mean and variance of ``a_{t-1}`` with
    ``N(m, v + sigma_next^2)``.
    """

    v = 1.0 / (1.0 / prior_var + 1.0 / obs_var)
    m = v * obs_value / obs_var
    a_t = m + np.sqrt(v + sigma_t**2) * rng.standard_normal(n_chains)
    a_next = ideal_daps_step_gaussian(a_t, sigma_t, sigma_next, m, v, rng)
    target_var = v + sigma_next**2
    mean_se = np.sqrt(target_var / n_chains)
    var_se = target_var * np.sqrt(2.0 / (n_chains - 1))
    emp_mean, emp_var = float(np.mean(a_next)), float(np.var(a_next, ddof=1))
    return {
        "target_mean": m,
        "target_var": target_var,
        "mean": emp_mean,
        "var": emp_var,
        "z_mean": (emp_mean - m) / mean_se,
        "z_var": (emp_var - target_var) / var_se,
    }
