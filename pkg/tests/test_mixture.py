import numpy as np
import pytest
from scipy.stats import multivariate_normal

from ddis.errors import InvalidArgument
from ddis.fields import Field, make_grid
from ddis.mixture import (
    MixtureScoreModel,
    cross_block_guidance,
    empirical_score,
    karras_levels,
    log_density,
    make_schedule,
    ode_denoise,
    overlap_diagnostic,
    responsibilities,
    responsibility_grad,
    tweedie_denoise,
    tweedie_vjp,
)
from ddis.random_fields import ObservationSet


def _fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


@pytest.fixture
def model(rng):
    return MixtureScoreModel(rng.standard_normal((6, 5)))


@pytest.fixture
def joint(rng):
    a = rng.standard_normal((5, 4))
    return MixtureScoreModel(np.hstack([a, a @ rng.standard_normal((4, 4))]), "joint")


class TestSchedule:
    def test_karras_formula(self):
        s = make_schedule(0.002, 80.0, 7.0, 18).sigmas
        i = np.arange(18)
        ref = (80 ** (1 / 7) + i / 17 * (0.002 ** (1 / 7) - 80 ** (1 / 7))) ** 7
        np.testing.assert_allclose(s[:-1], ref, rtol=1e-12)
        assert s[-1] == 0 and s[0] == 80.0 and s[-2] == 0.002
        assert len(make_schedule()) == 18

    def test_monotone(self):
        s = make_schedule(0.01, 0.4, 3.0, 50).sigmas
        assert np.all(np.diff(s) < 0)

    @pytest.mark.parametrize("kw", [{"sigma_min": 0}, {"sigma_min": 1, "sigma_max": 1}, {"rho": 0}, {"steps": 1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            make_schedule(**kw)

    def test_levels_endpoints(self):
        lv = karras_levels(2.0, 0.1, 7.0, 5)
        assert lv[0] == 2.0 and lv[-1] == 0.1


class TestScore:
    def test_log_density_matches_scipy(self, model, rng):
        x = rng.standard_normal(5)
        sig = 0.8
        ref = np.log(np.mean([multivariate_normal(c, sig**2 * np.eye(5)).pdf(x) for c in model.centers]))
        assert log_density(model, x, sig) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("sigma", [0.3, 1.0, 3.0])
    def test_score_is_log_density_gradient(self, model, rng, sigma):
        x = rng.standard_normal(5)
        fd = _fd_grad(lambda y: log_density(model, y, sigma), x)
        np.testing.assert_allclose(empirical_score(model, x, sigma), fd, rtol=1e-6, atol=1e-7)

    def test_tweedie_identity(self, model, rng):
        x = rng.standard_normal((3, 5))
        np.testing.assert_allclose(tweedie_denoise(model, x, 0.5), x + 0.25 * empirical_score(model, x, 0.5), atol=1e-12)

    def test_responsibilities_stable_far_away(self, model):
        w = responsibilities(model, np.full(5, 1e4), 1e-3)
        assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)

    def test_single_center(self, rng):
        c = rng.standard_normal(3)
        m = MixtureScoreModel(c[None, :])
        x = rng.standard_normal(3)
        np.testing.assert_allclose(tweedie_denoise(m, x, 2.0), c)
        np.testing.assert_allclose(empirical_score(m, x, 2.0), (c - x) / 4.0)

    def test_small_sigma_snaps_to_nearest(self, model):
        x = model.centers[2] + 0.01
        np.testing.assert_allclose(tweedie_denoise(model, x, 1e-3), model.centers[2], atol=1e-12)

    def test_large_sigma_gives_mean(self, model):
        np.testing.assert_allclose(tweedie_denoise(model, np.zeros(5), 1e6), model.centers.mean(0), atol=1e-8)

    def test_bad_sigma(self, model):
        with pytest.raises(InvalidArgument):
            tweedie_denoise(model, np.zeros(5), 0.0)


class TestJacobian:
    def test_vjp_matches_finite_difference(self, model, rng):
        x = rng.standard_normal(5)
        v = rng.standard_normal(5)
        sig = 0.9
        fd = _fd_grad(lambda y: tweedie_denoise(model, y, sig) @ v, x)
        np.testing.assert_allclose(tweedie_vjp(model, x, sig, v), fd, rtol=1e-6, atol=1e-8)

    def test_jacobian_symmetric(self, model, rng):
        x = rng.standard_normal(5)
        J = np.stack([tweedie_vjp(model, x, 0.7, e) for e in np.eye(5)])
        np.testing.assert_allclose(J, J.T, atol=1e-12)

    def test_responsibility_grad(self, joint, rng):
        x = rng.standard_normal(8)
        for n in range(joint.n_centers):
            fd = _fd_grad(lambda y: responsibilities(joint, y, 1.1)[n], x)
            np.testing.assert_allclose(responsibility_grad(joint, x, 1.1, n), fd, atol=1e-8)
            np.testing.assert_allclose(responsibility_grad(joint, x, 1.1, n, "A"), fd[:4], atol=1e-8)


class TestOdeDenoise:
    def test_one_step_is_tweedie(self, model, rng):
        x = rng.standard_normal(5)
        np.testing.assert_array_equal(ode_denoise(model, x, 0.5, 1), tweedie_denoise(model, x, 0.5))

    def test_single_center_exact(self, rng):
        c = rng.standard_normal(4)
        m = MixtureScoreModel(c[None])
        np.testing.assert_allclose(ode_denoise(m, rng.standard_normal(4), 3.0, 10), c, atol=1e-12)

    def test_multi_step_lands_near_a_center(self, model, rng):
        x = model.centers[1] + 0.3 * rng.standard_normal(5)
        out = ode_denoise(model, x, 0.3, 20, 1e-4)
        d = np.linalg.norm(model.centers - out, axis=1)
        assert d.min() < 1e-6


class TestCrossBlockGuidance:
    def test_matches_autodiff_of_misfit(self, joint, rng):
        x = rng.standard_normal(8)
        sig = 1.3
        obs = ObservationSet(make_grid(2), [0, 3], rng.standard_normal(2))

        def half_misfit(y):
            u0 = tweedie_denoise(joint, y, sig)[4:]
            return -0.5 * np.sum((obs.values - u0[obs.indices]) ** 2)

        g_a, g_u, r = cross_block_guidance(joint, x, sig, obs)
        full = np.concatenate([g_a, g_u])
        # gradient of -0.5 |r|^2 is exactly J^T M^T r
        fd = _fd_grad(half_misfit, x)
        np.testing.assert_allclose(full, fd, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(r, obs.values - tweedie_denoise(joint, x, sig)[4:][obs.indices])

    def test_single_center_has_no_cross_signal(self, rng):
        c = rng.standard_normal(8)
        m = MixtureScoreModel(c[None], "joint")
        obs = ObservationSet(make_grid(2), [1], [5.0])
        g_a, g_u, _ = cross_block_guidance(m, rng.standard_normal(8), 0.5, obs)
        np.testing.assert_array_equal(g_a, 0.0)

    def test_requires_joint(self, model):
        with pytest.raises(InvalidArgument):
            cross_block_guidance(model, np.zeros(5), 1.0, ObservationSet(make_grid(2), [0], [0.0]))


class TestModelContainer:
    def test_blocks(self, joint):
        assert joint.split == 4
        assert joint.block_slice("a") == slice(0, 4)
        assert joint.block_slice("U") == slice(4, 8)
        with pytest.raises(InvalidArgument):
            MixtureScoreModel(np.zeros((2, 3))).block_slice("A")

    def test_odd_joint_rejected(self):
        with pytest.raises(InvalidArgument):
            MixtureScoreModel(np.zeros((2, 3)), "joint")

    def test_save_load(self, tmp_path, grid16, rng):
        pairs = [(Field(grid16, rng.standard_normal(grid16.shape)), Field(grid16, rng.standard_normal(grid16.shape))) for _ in range(3)]
        m = MixtureScoreModel.from_pairs(pairs)
        m.save(tmp_path)
        back = MixtureScoreModel.load(tmp_path)
        assert back.space == "joint"
        assert back.centers.tobytes() == m.centers.tobytes()


class TestOverlapDiagnostic:
    def test_values(self):
        m = MixtureScoreModel(np.array([[0.0, 0.0], [2.0, 0.0]]))
        d = overlap_diagnostic(m, np.array([0.5, 0.0]), 1.0)
        # |x-x0|^2 = 0.25, |x-x1|^2 = 2.25
        assert d.dominant == 0
        assert d.eta == pytest.approx(np.exp(-1.0))
        assert d.min_pair_gap == pytest.approx(2.0)
        assert d.G == pytest.approx(1.5)

    def test_single_center(self):
        d = overlap_diagnostic(MixtureScoreModel(np.zeros((1, 2))), np.ones(2), 1.0)
        assert d.eta == 0.0 and d.min_pair_gap == np.inf
