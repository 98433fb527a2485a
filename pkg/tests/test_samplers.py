import numpy as np
import pytest

from ddis.errors import InvalidArgument
from ddis.fields import make_grid
from ddis.mixture import MixtureScoreModel, make_schedule
from ddis.operators import OperatorHandle
from ddis.random_fields import ObservationSet, make_rng
from ddis.samplers import (
    MatrixOperator,
    SamplerConfig,
    SamplerTrace,
    VectorObservations,
    daps_inner_langevin,
    ideal_daps_step_gaussian,
    masked_operator_norm,
    run_ddis_daps,
    run_decoupled_dps,
    run_dps_joint,
    run_fundaps,
)

CENTERS = np.array([[1.0, 1.0, 0.0, 0.0], [-1.0, -1.0, 0.0, 0.0]])
SCHED = make_schedule(0.01, 3.0, 7.0, 30)
CFG = SamplerConfig(langevin_steps=50, eta=0.5, beta_y=0.05, denoise_steps=1)
EMPTY = VectorObservations([], [])


def _near(a, c, tol=0.1):
    return np.linalg.norm(a - c, axis=-1) < tol


class TestSamplerConfig:
    @pytest.mark.parametrize("kw", [
        {"langevin_steps": 0}, {"eta": 0}, {"beta_y": -1}, {"r_scale": 0}, {"w_prior": -1},
        {"langevin_noise_tau": -0.1}, {"step_rule": "adaptive"}, {"denoise_steps": 0}, {"dps_zeta": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            SamplerConfig(**kw)

    def test_to_dict(self):
        assert SamplerConfig().to_dict()["step_rule"] == "lipschitz"


class TestLikelihoodPieces:
    def test_masked_operator_norm_matches_svd(self, rng):
        g = make_grid(8)
        op = OperatorHandle.poisson(g)
        idx = np.sort(rng.choice(g.size, 7, replace=False))
        obs = ObservationSet(g, idx, np.zeros(7))
        dense = op.matvec(np.eye(g.size))[:, idx].T  # rows: observed outputs
        ref = np.linalg.norm(dense, 2)
        assert masked_operator_norm(op, obs, g.size) == pytest.approx(ref, rel=1e-6)

    def test_masked_operator_norm_trivial_cases(self):
        assert masked_operator_norm(None, VectorObservations([1], [0.0]), 4) == 1.0
        assert masked_operator_norm(MatrixOperator(np.eye(3)), EMPTY, 3) == 0.0

    def test_masked_identity_gradient_support(self, rng):
        obs = VectorObservations([1, 3], [0.5, -0.5])
        cfg = SamplerConfig(langevin_steps=30, w_prior=0.0, langevin_noise_tau=0.0, step_rule="constant", eta=0.1)
        a0 = rng.standard_normal(10)
        out = daps_inner_langevin(a0, np.zeros(10), None, obs, 1.0, cfg, make_rng(0), offset=5)
        moved = np.flatnonzero(out != a0)
        np.testing.assert_array_equal(moved, [6, 8])

    def test_ridge_stationary_point(self, rng):
        # noiseless inner loop converges to the minimiser of
        # |a - anchor|^2 / r^2 + |A a - y|^2 / (2 beta^2)
        d, k = 6, 4
        A = rng.standard_normal((5, d))
        idx = np.array([0, 2, 3, 4])
        y = rng.standard_normal(k)
        anchor = rng.standard_normal(d)
        r, beta = 0.7, 0.3
        M = A[idx]
        H = M.T @ M / beta**2 + 2 * np.eye(d) / r**2
        ref = np.linalg.solve(H, M.T @ y / beta**2 + 2 * anchor / r**2)
        cfg = SamplerConfig(langevin_steps=4000, eta=0.9 / np.linalg.eigvalsh(H).max(), beta_y=beta,
                            langevin_noise_tau=0.0, step_rule="constant")
        out = daps_inner_langevin(anchor, anchor, MatrixOperator(A), VectorObservations(idx, y), r, cfg, make_rng(0))
        np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-10)

    def test_noisy_inner_loop_mean(self, rng):
        d = 3
        A = np.eye(d)
        obs = VectorObservations([0], [1.0])
        anchor = np.zeros(d)
        r, beta, tau = 1.0, 1.0, 0.2
        H = np.diag([1 / beta**2 + 2 / r**2, 2 / r**2, 2 / r**2])
        ref = np.linalg.solve(H, np.array([1.0, 0, 0]))
        cfg = SamplerConfig(langevin_steps=400, eta=0.05, beta_y=beta, langevin_noise_tau=tau, step_rule="constant")
        n = 4000
        out = daps_inner_langevin(np.zeros((n, d)), anchor, MatrixOperator(A), obs, r, cfg, make_rng(1))
        # stationary covariance of the linear recursion: tau^2 (H - eta H^2 / 2)^{-1}
        var = tau**2 / (np.diag(H) - 0.05 * np.diag(H) ** 2 / 2)
        se = np.sqrt(var / n)
        assert np.all(np.abs(out.mean(0) - ref) < 4 * se)
        np.testing.assert_allclose(out.var(0), var, rtol=4 * np.sqrt(2 / n))


class TestDDIS:
    def test_unconditional_preserves_mixture_weights(self):
        n = 4000
        res = run_ddis_daps(MixtureScoreModel(CENTERS), None, EMPTY, SCHED, CFG, make_rng(0), n_chains=n)
        frac = _near(res.a, CENTERS[0]).mean()
        assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / n)
        assert (_near(res.a, CENTERS[0]) | _near(res.a, CENTERS[1])).all()

    def test_single_center_returns_center(self):
        c = np.array([[0.3, -0.2, 0.5]])
        res = run_ddis_daps(MixtureScoreModel(c), None, EMPTY, SCHED, CFG, make_rng(0), n_chains=50)
        np.testing.assert_allclose(res.a, np.broadcast_to(c, (50, 3)), atol=0.05)

    @pytest.mark.parametrize("op", [None, MatrixOperator(np.eye(4))])
    def test_selects_consistent_center(self, op):
        obs = VectorObservations([0], [-1.0])
        res = run_ddis_daps(MixtureScoreModel(CENTERS), op, obs, SCHED, CFG, make_rng(1), n_chains=500)
        assert _near(res.a, CENTERS[1]).mean() > 0.9

    def test_conjugate_single_center_posterior_mean(self):
        # one center c, identity observation y of entry 0: the final inner loop
        # minimises |a-c|^2 / r^2 + |a_0 - y|^2 / (2 beta^2) at r = r_scale sigma_min
        c = np.array([[0.0, 0.0]])
        beta = 0.02
        cfg = SamplerConfig(langevin_steps=200, eta=0.5, beta_y=beta, langevin_noise_tau=0.0, denoise_steps=1)
        res = run_ddis_daps(MixtureScoreModel(c), MatrixOperator(np.eye(2)), VectorObservations([0], [1.0]),
                            SCHED, cfg, make_rng(0))
        r = SCHED.sigmas[-2]
        w = (1 / beta**2) / (1 / beta**2 + 2 / r**2)
        np.testing.assert_allclose(res.a, [w, 0.0], atol=1e-8)

    def test_deterministic_given_seed(self):
        obs = VectorObservations([0], [-1.0])
        m = MixtureScoreModel(CENTERS)
        r1 = run_ddis_daps(m, None, obs, SCHED, CFG, make_rng(9), n_chains=3)
        r2 = run_ddis_daps(m, None, obs, SCHED, CFG, make_rng(9), n_chains=3)
        assert r1.a.tobytes() == r2.a.tobytes()
        assert r1.trace.to_csv() == r2.trace.to_csv()

    def test_trace(self):
        res = run_ddis_daps(MixtureScoreModel(CENTERS), None, VectorObservations([0], [-1.0]), SCHED, CFG, make_rng(0))
        assert len(res.trace) == SCHED.steps
        np.testing.assert_allclose(res.trace.sigma, SCHED.sigmas[:-1])
        lines = res.trace.to_csv().splitlines()
        assert lines[0] == "step,sigma,obs_misfit,prior_misfit,ga_norm"
        assert len(lines) == SCHED.steps + 1
        assert res.trace.obs_misfit[-1] < 0.05

    def test_grid_mismatch(self):
        m = MixtureScoreModel(np.zeros((1, 16)), grid=make_grid(4))
        op = OperatorHandle.poisson(make_grid(8))
        with pytest.raises(InvalidArgument):
            run_ddis_daps(m, op, EMPTY, SCHED, CFG, make_rng(0))

    def test_bad_obs_index(self):
        with pytest.raises(InvalidArgument):
            run_ddis_daps(MixtureScoreModel(CENTERS), None, VectorObservations([4], [0.0]), SCHED, CFG, make_rng(0))


class TestJointSamplers:
    @pytest.fixture
    def joint(self):
        return MixtureScoreModel(np.hstack([CENTERS, -CENTERS]), "joint")

    def test_fundaps_output_blocks(self, joint):
        res = run_fundaps(joint, VectorObservations([0], [1.0]), SCHED, CFG, make_rng(2), n_chains=200)
        assert res.a.shape == (200, 4) and res.u.shape == (200, 4)
        # most chains pick the component consistent with u_0 = 1
        assert _near(res.a, CENTERS[1]).mean() > 0.7

    def test_fundaps_requires_joint(self):
        with pytest.raises(InvalidArgument):
            run_fundaps(MixtureScoreModel(CENTERS), EMPTY, SCHED, CFG, make_rng(0))

    def test_dps_joint_selects(self, joint):
        res = run_dps_joint(joint, VectorObservations([0], [1.0]), SCHED, CFG, make_rng(2), n_chains=500)
        assert _near(res.a, CENTERS[1]).mean() > 0.7

    def test_dps_joint_records_in_situ_bound(self, joint):
        res = run_dps_joint(joint, VectorObservations([0], [1.0]), SCHED, CFG, make_rng(3))
        bounds = res.trace.extras["ga_bound"]
        assert len(bounds) == SCHED.steps
        assert all(g <= b * (1 + 1e-9) for g, b in zip(res.trace.ga_norm, bounds))
        assert np.isfinite(bounds[-1])

    def test_decoupled_dps_selects(self):
        res = run_decoupled_dps(MixtureScoreModel(CENTERS), MatrixOperator(np.eye(4)), VectorObservations([0], [-1.0]),
                                SCHED, CFG, make_rng(3), n_chains=500)
        assert _near(res.a, CENTERS[1]).mean() > 0.7

    def test_unconditional_dps_weights(self, joint):
        n = 2000
        res = run_dps_joint(joint, EMPTY, SCHED, CFG, make_rng(4), n_chains=n)
        frac = _near(res.a, CENTERS[0]).mean()
        assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / n)


class TestIdealStep:
    def test_posterior_is_fixed_point(self):
        # exact marginal at sigma_t maps to exact marginal at sigma_next
        rng = make_rng(5)
        m, v, st, sn = 0.4, 0.3, 1.2, 0.6
        n = 20000
        a_t = m + np.sqrt(v + st**2) * rng.standard_normal(n)
        out = ideal_daps_step_gaussian(a_t, st, sn, m, v, rng)
        target = v + sn**2
        assert abs(out.mean() - m) < 4 * np.sqrt(target / n)
        assert abs(out.var() - target) < 4 * target * np.sqrt(2 / n)

    def test_trace_record_averages_chains(self):
        t = SamplerTrace()
        t.record(1.0, np.array([1.0, 3.0]), 0.0, np.array([2.0, 4.0]))
        assert t.obs_misfit == [2.0] and t.ga_norm == [3.0]
