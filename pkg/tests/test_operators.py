import warnings

import numpy as np
import pytest

from ddis.errors import FormatError, InvalidArgument, ResonanceError, UnsupportedBoundary
from ddis.fields import Field, make_grid, sine_basis, sine_forward
from ddis.operators import (
    POISSON,
    OperatorHandle,
    PairedDataset,
    exact_operator,
    fit_spectral_surrogate,
    helmholtz,
    pde_residual,
    solve_helmholtz,
    solve_poisson,
)
from ddis.random_fields import POISSON_PRIOR, sample_grf


def _pairs(grid, n, rng, task=POISSON):
    op = exact_operator(task, grid)
    out = []
    for _ in range(n):
        a = sample_grf(grid, POISSON_PRIOR, rng)
        out.append((a, op.apply(a)))
    return PairedDataset(out)


class TestExactSolvers:
    @pytest.mark.parametrize("m,n", [(1, 1), (3, 2), (7, 5)])
    def test_poisson_on_eigenfunction(self, grid16, m, n):
        # lap(phi) = -pi^2 (m^2 + n^2) phi, so u = -phi / (pi^2 (m^2+n^2))
        phi = sine_basis(grid16, m, n)
        u = solve_poisson(phi)
        np.testing.assert_allclose(u.values, -phi.values / (np.pi**2 * (m * m + n * n)), atol=1e-14)

    @pytest.mark.parametrize("k", [1.0, 5.0, 12.3])
    def test_helmholtz_on_eigenfunction(self, grid16, k):
        phi = sine_basis(grid16, 2, 3)
        u = solve_helmholtz(phi, k)
        np.testing.assert_allclose(u.values, phi.values / (k * k - 13 * np.pi**2), atol=1e-14)

    def test_residual_vanishes_on_solution(self, grid16, rng):
        a = sample_grf(grid16, POISSON_PRIOR, rng)
        for task in (POISSON, helmholtz(4.0)):
            u = exact_operator(task, grid16).apply(a)
            res = pde_residual(task, a, u)
            assert np.max(np.abs(res.values)) < 1e-12 * max(1.0, np.max(np.abs(a.values)))

    def test_matches_finite_difference_in_fine_limit(self):
        # smooth data: spectral solve agrees with the 5-point stencil to O(h^2)
        errs = []
        for R in (15, 31):
            g = make_grid(R)
            X, Y = g.mesh()
            a = Field(g, np.exp(-((X - 0.4) ** 2 + (Y - 0.6) ** 2) / 0.02) * X * (1 - X) * Y * (1 - Y))
            u = solve_poisson(a).values
            h = g.h
            up = np.pad(u, 1)
            lap = (up[1:-1, 2:] + up[1:-1, :-2] + up[2:, 1:-1] + up[:-2, 1:-1] - 4 * u) / h**2
            errs.append(np.max(np.abs(lap - a.values)) / np.max(np.abs(a.values)))
        assert errs[1] < errs[0] / 3

    def test_resonance(self, grid16):
        k = np.pi * np.sqrt(5.0)  # lambda_{1,2}
        with pytest.raises(ResonanceError) as ei:
            OperatorHandle.helmholtz(grid16, k)
        assert ei.value.mode in ((1, 2), (2, 1))

    def test_periodic_rejected(self):
        g = make_grid(8, "periodic")
        with pytest.raises(UnsupportedBoundary):
            solve_poisson(Field.zeros(g))

    def test_grid_mismatch(self, grid16):
        with pytest.raises(InvalidArgument):
            OperatorHandle.poisson(grid16).apply(Field.zeros(make_grid(8)))


class TestAdjoint:
    @pytest.mark.parametrize("task", [POISSON, helmholtz(5.0)])
    def test_dot_product_identity(self, grid16, rng, task):
        op = exact_operator(task, grid16)
        a = Field(grid16, rng.standard_normal(grid16.shape))
        v = Field(grid16, rng.standard_normal(grid16.shape))
        lhs = np.sum(op.apply(a).values * v.values)
        rhs = np.sum(a.values * op.vjp(v).values)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)

    def test_matvec_batched_matches_apply(self, grid16, rng):
        op = OperatorHandle.helmholtz(grid16, 3.0)
        X = rng.standard_normal((3, grid16.size))
        out = op.matvec(X)
        for i in range(3):
            np.testing.assert_allclose(out[i], op.apply(Field(grid16, X[i].reshape(grid16.shape))).flat(), atol=1e-15)

    def test_dense_matrix_symmetric_and_norm(self):
        g = make_grid(5)
        op = OperatorHandle.poisson(g)
        A = op.matvec(np.eye(g.size))
        np.testing.assert_allclose(A, A.T, atol=1e-15)
        assert np.linalg.norm(A, 2) == pytest.approx(op.norm_bound(), rel=1e-12)
        assert op.norm_bound() == pytest.approx(1 / (2 * np.pi**2))


class TestSurrogate:
    def test_recovers_exact_operator_on_retained_modes(self, grid16, rng):
        data = _pairs(grid16, 4, rng)
        sur = fit_spectral_surrogate(data, 16)
        exact = OperatorHandle.poisson(grid16)
        np.testing.assert_allclose(sur.multipliers, exact.multipliers, rtol=1e-10)

    def test_helmholtz_recovery(self, grid16, rng):
        task = helmholtz(2.5)
        sur = fit_spectral_surrogate(_pairs(grid16, 2, rng, task), 16, 0.0, task)
        np.testing.assert_allclose(sur.multipliers, exact_operator(task, grid16).multipliers, rtol=1e-10)

    def test_cutoff_zeroes_high_modes(self, grid16, rng):
        sur = fit_spectral_surrogate(_pairs(grid16, 3, rng), 4)
        c = sine_forward(sur.apply(sine_basis(grid16, 5, 1))).coeffs
        np.testing.assert_allclose(c, 0.0, atol=1e-15)
        assert np.all(sur.multipliers[4:, :] == 0) and np.all(sur.multipliers[:, 4:] == 0)
        assert np.all(sur.multipliers[:4, :4] != 0)

    def test_infinite_lambda_is_data_free(self, grid16):
        g = grid16
        data = PairedDataset([(Field.zeros(g), Field(g, np.ones(g.shape)))])
        sur = fit_spectral_surrogate(data, 16, np.inf)
        np.testing.assert_allclose(sur.multipliers, OperatorHandle.poisson(g).multipliers, rtol=1e-14)

    def test_physics_term_shrinks_towards_exact(self, grid16, rng):
        # corrupt the data; the physics term pulls the fit back to 1/D
        good = _pairs(grid16, 2, rng)
        bad = PairedDataset([(a, 2.0 * u) for a, u in good.pairs])
        exact = OperatorHandle.poisson(grid16).multipliers
        errs = [np.max(np.abs(fit_spectral_surrogate(bad, 16, lam).multipliers / exact - 1)) for lam in (0.0, 1e-6, 1e2)]
        assert errs[0] == pytest.approx(1.0, rel=1e-8)
        assert errs[0] > errs[1] > errs[2]

    def test_zero_energy_warns(self, grid16):
        g = grid16
        data = PairedDataset([(sine_basis(g, 1, 1), sine_basis(g, 1, 1))])
        with pytest.warns(RuntimeWarning, match="zero data energy"):
            sur = fit_spectral_surrogate(data, 2)
        assert sur.multipliers[0, 0] == pytest.approx(1.0)
        assert sur.multipliers[0, 1] == 0
        assert sur.meta["warnings"]

    def test_no_warning_with_physics_term(self, grid16):
        data = PairedDataset([(sine_basis(grid16, 1, 1), sine_basis(grid16, 1, 1))])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_spectral_surrogate(data, 2, 1e-3)

    def test_invalid_arguments(self, grid16, rng):
        data = _pairs(grid16, 1, rng)
        with pytest.raises(InvalidArgument):
            fit_spectral_surrogate(data, 0)
        with pytest.raises(InvalidArgument):
            fit_spectral_surrogate(data, 17)
        with pytest.raises(InvalidArgument):
            fit_spectral_surrogate(data, 4, -1.0)
        with pytest.raises(InvalidArgument):
            fit_spectral_surrogate(PairedDataset([]), 4)

    def test_save_load(self, tmp_path, grid16, rng):
        sur = fit_spectral_surrogate(_pairs(grid16, 2, rng), 6, 0.5)
        sur.save(tmp_path / "s.ddf")
        back = OperatorHandle.load(tmp_path / "s.ddf")
        assert back.kind == "surrogate"
        assert back.meta["mode_cutoff"] == 6
        assert back.multipliers.tobytes() == sur.multipliers.tobytes()

    def test_load_without_sidecar(self, tmp_path, grid16):
        OperatorHandle.poisson(grid16).save(tmp_path / "p.ddf")
        (tmp_path / "p.json").unlink()
        with pytest.raises(FormatError):
            OperatorHandle.load(tmp_path / "p.ddf")
