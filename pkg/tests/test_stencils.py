import numpy as np
import pytest

from opssplit import stencils


def periodic_grid(n, length=1.0):
    h = length / n
    x = np.arange(n) * h
    xx, yy = np.meshgrid(x, x, indexing="xy")
    return xx, yy, h


class TestCoefficients:
    def test_order2_laplacian_row(self):
        k = stencils.make_stencil("laplacian", 2, (1.0, 1.0))
        assert np.allclose(k.coefficients, [[0, 1, 0], [1, -4, 1], [0, 1, 0]])

    def test_order4_second_derivative_row(self):
        row = stencils.axis_coefficients(2, 4)
        assert np.allclose(row, [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12])

    def test_order2_gradient_row(self):
        k = stencils.make_stencil("grad-x", 2, (1.0, 1.0))
        assert np.allclose(k.coefficients, [[-0.5, 0.0, 0.5]])

    @pytest.mark.parametrize("order", stencils.SUPPORTED_ORDERS)
    @pytest.mark.parametrize("deriv", [1, 2])
    def test_zero_sum_and_symmetry(self, order, deriv):
        row = stencils.axis_coefficients(deriv, order)
        assert abs(row.sum()) <= 1e-14
        if deriv == 2:
            assert np.array_equal(row, row[::-1])
        else:
            assert np.array_equal(row, -row[::-1])

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            stencils.make_stencil("laplacian", 3, (1.0, 1.0))
        with pytest.raises(ValueError):
            stencils.make_stencil("laplacian", 10, (1.0, 1.0))

    def test_spacing_scales_coefficients(self):
        k1 = stencils.make_stencil("grad-x", 2, (1.0, 1.0))
        k2 = stencils.make_stencil("grad-x", 2, (0.5, 1.0))
        assert np.allclose(k2.coefficients, 2.0 * k1.coefficients)


class TestApply:
    def test_constant_field_maps_to_zero(self, rng):
        f = np.full((16, 16), 7.25)
        for kind in ("grad-x", "grad-y", "laplacian"):
            for order in stencils.SUPPORTED_ORDERS:
                k = stencils.make_stencil(kind, order, (0.1, 0.1))
                out = stencils.apply_stencil(f, k)
                assert np.max(np.abs(out)) < 1e-11

    def test_sin_laplacian_oracle(self):
        n = 64
        xx, yy, h = periodic_grid(n)
        f = np.sin(2 * np.pi * xx)
        k = stencils.make_stencil("laplacian", 2, (h, h))
        target = -((2 * np.pi) ** 2) * f
        err = np.max(np.abs(stencils.apply_stencil(f, k) - target))
        assert err < (2 * np.pi) ** 4 * h**2  # O(h^2) with the leading constant

    def test_linearity(self, rng):
        f = rng.standard_normal((12, 12))
        g = rng.standard_normal((12, 12))
        k = stencils.make_stencil("laplacian", 4, (0.3, 0.3))
        lhs = stencils.apply_stencil(2.5 * f + 0.5 * g, k)
        rhs = 2.5 * stencils.apply_stencil(f, k) + 0.5 * stencils.apply_stencil(g, k)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1, np.max(np.abs(rhs)))

    def test_shift_equivariance_bitwise(self, rng):
        f = rng.standard_normal((10, 14))
        k = stencils.make_stencil("grad-x", 6, (0.2, 0.2))
        shifted_then_applied = stencils.apply_stencil(np.roll(f, (3, 5), axis=(0, 1)), k)
        applied_then_shifted = np.roll(stencils.apply_stencil(f, k), (3, 5), axis=(0, 1))
        assert np.array_equal(shifted_then_applied, applied_then_shifted)

    def test_divergence_kernel(self, rng):
        n = 64
        xx, yy, h = periodic_grid(n)
        v = np.stack([np.sin(2 * np.pi * xx), np.cos(2 * np.pi * yy)])
        k = stencils.make_stencil("divergence", 4, (h, h))
        target = 2 * np.pi * (np.cos(2 * np.pi * xx) - np.sin(2 * np.pi * yy))
        assert np.max(np.abs(stencils.apply_stencil(v, k) - target)) < 1e-3

    def test_spacing_mismatch_rejected(self, rng):
        k = stencils.make_stencil("grad-x", 2, (0.1, 0.1))
        with pytest.raises(ValueError):
            stencils.apply_stencil(rng.standard_normal((8, 8)), k, spacing=(0.2, 0.1))


class TestMeasuredOrder:
    @pytest.mark.parametrize(
        "order,lo,hi",
        [(2, 1.7, 2.3), (4, 3.7, 4.3), (6, 5.7, 6.3), (8, 7.7, 8.3)],
    )
    def test_laplacian_convergence(self, order, lo, hi):
        # the k=3 tone keeps truncation error above the round-off floor on
        # the finest grid even at order 8
        k = 3
        slope, errors, monotone = stencils.measure_order(
            "laplacian",
            order,
            lambda x, y: np.sin(2 * np.pi * k * x),
            [32, 64, 128],
            lambda x, y: -((2 * np.pi * k) ** 2) * np.sin(2 * np.pi * k * x),
        )
        assert monotone
        assert lo <= slope <= hi

    def test_exact_case_skips_slope(self):
        # a pure tone resolved far below the stencil order of a gradient has
        # error at the arithmetic floor for high orders only; use a linear-in-x
        # ramp rebuilt from one harmonic instead: grad of sin with order 8 at
        # coarse grids is tiny but not at floor, so construct the floor case
        # directly with a constant field.
        slope, errors, monotone = stencils.measure_order(
            "grad-x",
            2,
            lambda x, y: np.ones_like(x),
            [32, 64, 128],
            lambda x, y: np.zeros_like(x),
        )
        assert np.isnan(slope)
        assert np.all(errors < 1e-13)
