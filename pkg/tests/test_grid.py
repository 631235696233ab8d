"""Spectral grid operators against analytic oracles."""

import numpy as np
import pytest

from smcflab import calibration
from smcflab.errors import (
    GridMismatchError,
    InvalidAxisError,
    SmcfValidationError,
    ZeroModeError,
)
from smcflab.grid import (
    Grid,
    GridField,
    bump_profile,
    dealiased_product,
    fractional_derivative,
    inverse_laplacian,
    lp_project,
    read_field,
    spectral_derivative,
    write_field,
)


def rel_err(a, b):
    denom = np.max(np.abs(b))
    return np.max(np.abs(a - b)) / (denom if denom > 0 else 1.0)


@pytest.fixture
def grid2():
    return Grid(d=2, n=32, L=2 * np.pi)


def random_field(grid, seed=0, real=True):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape)
    if not real:
        vals = vals + 1j * rng.standard_normal(grid.shape)
    return grid.dealias(vals)


class TestGridConstruction:
    def test_invariants_enforced(self):
        with pytest.raises(SmcfValidationError):
            Grid(d=2, n=6, L=1.0)
        with pytest.raises(SmcfValidationError):
            Grid(d=2, n=48, L=1.0)  # not a power of two
        with pytest.raises(SmcfValidationError):
            Grid(d=2, n=16, L=-1.0)
        with pytest.raises(SmcfValidationError):
            Grid(d=4, n=16, L=1.0)

    def test_roundtrip(self, grid2):
        f = random_field(grid2, seed=1, real=False)
        back = grid2.ifft(grid2.fft(f))
        assert rel_err(back, f) < 1e-12

    def test_parseval(self, grid2):
        f = random_field(grid2, seed=2, real=False)
        phys = grid2.l2(f)
        hat = grid2.fft(f)
        spec = np.sqrt(np.sum(np.abs(hat) ** 2) * grid2.L**grid2.d / grid2.n ** (2 * grid2.d))
        assert abs(phys - spec) / phys < 1e-12

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_roundtrip_all_dims(self, d):
        grid = Grid(d=d, n=16, L=3.0)
        f = random_field(grid, seed=d, real=False)
        assert rel_err(grid.ifft(grid.fft(f)), f) < 1e-12


class TestSpectralDerivative:
    def test_constant_derivative_vanishes(self, grid2):
        f = GridField.from_real(grid2, np.full(grid2.shape, 3.7))
        out = spectral_derivative(f, axis=0, order=1)
        assert np.max(np.abs(out.values)) < 1e-13

    @pytest.mark.parametrize("L", [2 * np.pi, 5.0])
    def test_sine_first_derivative(self, L):
        grid = Grid(d=1, n=64, L=L)
        x = grid.x[0]
        f = GridField.from_real(grid, np.sin(2 * np.pi * x / L))
        out = spectral_derivative(f, axis=0, order=1)
        exact = (2 * np.pi / L) * np.cos(2 * np.pi * x / L)
        assert rel_err(out.values.real, exact) < 1e-12

    def test_sine_second_derivative(self):
        L = 2 * np.pi
        grid = Grid(d=1, n=64, L=L)
        x = grid.x[0]
        f = GridField.from_real(grid, np.sin(2 * np.pi * x / L))
        out = spectral_derivative(f, axis=0, order=2)
        exact = -((2 * np.pi / L) ** 2) * np.sin(2 * np.pi * x / L)
        assert rel_err(out.values.real, exact) < 1e-12

    def test_invalid_axis(self, grid2):
        f = GridField.from_real(grid2, np.zeros(grid2.shape))
        with pytest.raises(InvalidAxisError):
            spectral_derivative(f, axis=2)

    def test_commutes_with_lp_project(self, grid2):
        f = GridField(grid2, random_field(grid2, seed=3, real=False))
        a = spectral_derivative(lp_project(f, 2), axis=1)
        b = lp_project(spectral_derivative(f, axis=1), 2)
        assert np.max(np.abs(a.values - b.values)) < 1e-12 * max(1.0, np.max(np.abs(f.values)))


class TestFractionalDerivative:
    def test_sigma_zero_is_identity(self, grid2):
        f = GridField(grid2, random_field(grid2, seed=4, real=False) + 0.5)
        out = fractional_derivative(f, 0.0)
        assert rel_err(out.values, f.values) < 1e-13

    def test_sigma_two_matches_minus_laplacian_on_mode(self):
        L = 2 * np.pi
        grid = Grid(d=1, n=64, L=L)
        x = grid.x[0]
        f = GridField.from_real(grid, np.sin(2 * np.pi * x / L))
        out = fractional_derivative(f, 2.0)
        exact = (2 * np.pi / L) ** 2 * np.sin(2 * np.pi * x / L)
        assert rel_err(out.values.real, exact) < 1e-12

    def test_semigroup_on_mean_zero(self, grid2):
        vals = random_field(grid2, seed=5)
        vals = vals - vals.mean()
        f = GridField.from_real(grid2, vals)
        once = fractional_derivative(fractional_derivative(f, 1.0), 1.0)
        twice = fractional_derivative(f, 2.0)
        assert rel_err(once.values, twice.values) < 1e-12

    def test_zero_mode_error_for_negative_sigma(self, grid2):
        f = GridField.from_real(grid2, np.ones(grid2.shape))
        with pytest.raises(ZeroModeError):
            fractional_derivative(f, -1.0)

    def test_sigma_range_checked(self, grid2):
        f = GridField.from_real(grid2, np.zeros(grid2.shape))
        with pytest.raises(SmcfValidationError):
            fractional_derivative(f, 5.0)


class TestLittlewoodPaley:
    def test_s_partition_of_unity(self, grid2):
        f = GridField(grid2, random_field(grid2, seed=6, real=False))
        J = max(grid2.lp_band_range())
        total = sum(lp_project(f, j, kind="S").values for j in range(0, J + 1))
        assert rel_err(total, f.values) < 1e-12

    def test_pure_mode_deep_in_annulus_passes(self):
        grid = Grid(d=1, n=128, L=2 * np.pi)
        # |k| = 6 lies in (2^2, 2^3) strictly inside the j=3 annulus plateau region
        x = grid.x[0]
        f = GridField(grid, np.exp(1j * 6 * x))
        out = lp_project(f, 3, kind="P")
        expected = bump_profile(6 / 2**3) - bump_profile(6 / 2**2)
        assert abs(expected - 1.0) < 1e-12  # oracle: mode sits where the multiplier is 1
        assert rel_err(out.values, f.values) < 1e-12

    def test_disjoint_projectors_annihilate(self, grid2):
        f = GridField(grid2, random_field(grid2, seed=7, real=False))
        out = lp_project(lp_project(f, 4, "P"), 1, "P")
        assert np.max(np.abs(out.values)) < 1e-12 * max(1.0, np.max(np.abs(f.values)))

    def test_s_requires_nonnegative_j(self, grid2):
        f = GridField(grid2, np.zeros(grid2.shape))
        with pytest.raises(SmcfValidationError):
            lp_project(f, -1, kind="S")

    def test_bernstein_regression(self):
        # L^inf vs 2^{kd/2} L^2 on random band-limited data; constant frozen once
        grid = Grid(d=2, n=64, L=2 * np.pi)
        rng = np.random.default_rng(8)
        worst = 0.0
        for k in (2, 3, 4):
            hat = np.zeros(grid.shape, dtype=complex)
            band = (grid.k_mag >= 2.0 ** (k - 1)) & (grid.k_mag <= 2.0 ** (k + 1))
            hat[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
            f = grid.ifft(hat)
            pk = grid.lp_project(f, k, "P")
            ratio = grid.linf(pk) / (2.0 ** (k * grid.d / 2) * grid.l2(pk))
            worst = max(worst, ratio)
        assert worst <= calibration.BERNSTEIN_CONSTANT


class TestInverseLaplacian:
    def test_zero_maps_to_zero(self, grid2):
        f = GridField.from_real(grid2, np.zeros(grid2.shape))
        assert np.max(np.abs(inverse_laplacian(f).values)) == 0.0

    def test_inverts_laplacian_on_mean_zero(self, grid2):
        g_vals = random_field(grid2, seed=9)
        g_vals = g_vals - g_vals.mean()
        lap = grid2.laplacian(g_vals)
        f = GridField.from_real(grid2, lap)
        out = inverse_laplacian(f)
        assert rel_err(out.values.real, g_vals) < 1e-12

    def test_constant_projected_out(self, grid2):
        f = GridField.from_real(grid2, np.full(grid2.shape, 2.0))
        assert np.max(np.abs(inverse_laplacian(f).values)) < 1e-14


class TestDealiasedProduct:
    def test_product_with_one(self, grid2):
        f = GridField(grid2, np.random.default_rng(10).standard_normal(grid2.shape))
        one = GridField.from_real(grid2, np.ones(grid2.shape))
        out = dealiased_product(f, one)
        trunc = grid2.dealias(f.values)
        assert rel_err(out.values, trunc) < 1e-13

    def test_two_modes_convolve(self):
        grid = Grid(d=1, n=64, L=2 * np.pi)
        x = grid.x[0]
        f = GridField(grid, np.exp(1j * 3 * x))
        g = GridField(grid, np.exp(1j * 5 * x))
        out = dealiased_product(f, g)
        assert rel_err(out.values, np.exp(1j * 8 * x)) < 1e-12

    def test_commutative(self, grid2):
        f = GridField(grid2, random_field(grid2, seed=11, real=False))
        g = GridField(grid2, random_field(grid2, seed=12, real=False))
        a = dealiased_product(f, g)
        b = dealiased_product(g, f)
        assert np.array_equal(a.values, b.values)

    def test_grid_mismatch(self, grid2):
        other = Grid(d=2, n=32, L=1.0)
        f = GridField.from_real(grid2, np.zeros(grid2.shape))
        g = GridField.from_real(other, np.zeros(other.shape))
        with pytest.raises(GridMismatchError):
            dealiased_product(f, g)


class TestSnapshotIO:
    def test_bit_exact_roundtrip(self, tmp_path, grid2):
        rng = np.random.default_rng(13)
        vals = rng.standard_normal(grid2.shape) + 1j * rng.standard_normal(grid2.shape)
        f = GridField(grid2, vals, parity="complex", name="lambda_01")
        path = tmp_path / "f.smcf"
        write_field(path, f)
        back = read_field(path)
        assert np.array_equal(back.values, f.values)
        assert back.name == f.name
        assert back.parity == f.parity
        assert back.grid.n == grid2.n and back.grid.L == grid2.L

    def test_real_parity_preserved(self, tmp_path, grid2):
        f = GridField.from_real(grid2, np.random.default_rng(14).standard_normal(grid2.shape), name="h_00")
        path = tmp_path / "h.smcf"
        write_field(path, f)
        back = read_field(path, grid=grid2)
        assert back.parity == "real"
        assert np.array_equal(back.values, f.values)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.smcf"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(SmcfValidationError):
            read_field(path)


class TestEvalAtPoints:
    @pytest.mark.parametrize("d", [1, 2])
    def test_matches_grid_samples(self, d):
        grid = Grid(d=d, n=16, L=2 * np.pi)
        f = random_field(grid, seed=15, real=False)
        pts = np.stack([g.ravel() for g in grid.x], axis=-1)
        vals = grid.eval_at_points(f, pts)
        assert rel_err(vals.reshape(grid.shape), f) < 1e-11

    def test_band_limited_exactness_off_grid(self):
        grid = Grid(d=2, n=32, L=2 * np.pi)
        X, Y = grid.x
        f = np.sin(3 * X) * np.cos(2 * Y)
        rng = np.random.default_rng(16)
        pts = rng.uniform(0, 2 * np.pi, size=(50, 2))
        vals = grid.eval_at_points(f, pts)
        exact = np.sin(3 * pts[:, 0]) * np.cos(2 * pts[:, 1])
        assert np.max(np.abs(vals - exact)) < 1e-11
