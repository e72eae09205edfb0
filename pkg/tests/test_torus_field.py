import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transport_ns.torus_field import (
    FieldError,
    Interpolant,
    MeanViolation,
    ScalarField,
    TensorField,
    TorusGrid,
    VectorField,
    compose,
    divergence,
    gradient,
    inner,
    integrate,
    inv_laplace,
    laplacian,
    mollify,
)

from .conftest import sup
from .oracles import series_eval


class TestGrid:
    def test_rejects_bad_resolution(self):
        with pytest.raises(FieldError):
            TorusGrid(2, 24)
        with pytest.raises(FieldError):
            TorusGrid(4, 16)

    def test_coords_and_volume(self):
        g = TorusGrid(2, 16)
        assert g.coords.shape == (2, 16, 16)
        assert g.volume == pytest.approx((2 * np.pi) ** 2)
        assert g.coords[0, 1, 0] == pytest.approx(2 * np.pi / 16)

    def test_three_dimensional(self):
        g = TorusGrid(3, 8)
        x1, x2, x3 = g.coords
        u = np.stack([np.sin(x1) * np.cos(x2), np.cos(x3), np.sin(x1 + x3)])
        assert sup(g.div(u) - np.cos(x1) * np.cos(x2) - np.cos(x1 + x3)) < 1e-12


class TestDerivatives:
    def test_single_mode(self, grid32):
        x1, _ = grid32.coords
        grad = gradient(ScalarField(grid32, np.sin(x1))).values
        assert sup(grad[0] - np.cos(x1)) < 1e-13
        assert sup(grad[1]) < 1e-13

    def test_constant_has_zero_gradient(self, grid32):
        assert sup(gradient(ScalarField(grid32, np.full(grid32.shape, 3.0))).values) == 0.0

    def test_product_mode(self, grid32):
        x1, x2 = grid32.coords
        grad = gradient(ScalarField(grid32, np.sin(3 * x1) * np.cos(2 * x2))).values
        assert sup(grad[0] - 3 * np.cos(3 * x1) * np.cos(2 * x2)) < 1e-12
        assert sup(grad[1] + 2 * np.sin(3 * x1) * np.sin(2 * x2)) < 1e-12

    def test_vector_gradient_layout(self, grid32):
        x1, x2 = grid32.coords
        T = gradient(VectorField(grid32, np.stack([np.sin(x2), np.zeros_like(x1)])))
        assert isinstance(T, TensorField)
        assert sup(T.values[0, 1] - np.cos(x2)) < 1e-12  # [i, j] = d_j u_i
        assert sup(T.values[1, 0]) < 1e-12

    def test_div_grad_is_laplacian(self, grid32):
        x1, x2 = grid32.coords
        f = ScalarField(grid32, np.cos(x1 + 2 * x2) + np.sin(3 * x2))
        assert sup(divergence(gradient(f)).values - laplacian(f).values) < 1e-11


class TestQuadrature:
    def test_constant(self, grid32):
        assert integrate(ScalarField(grid32, np.ones(grid32.shape))) == pytest.approx(4 * np.pi ** 2)

    def test_zero_mean_mode(self, grid32):
        assert abs(integrate(ScalarField(grid32, np.sin(grid32.coords[0])))) < 1e-13

    def test_shifted_cosine(self, grid32):
        v = integrate(ScalarField(grid32, 2 + np.cos(grid32.coords[1])))
        assert v == pytest.approx(2 * (2 * np.pi) ** 2, rel=1e-14)

    def test_inner(self, grid32):
        x1, _ = grid32.coords
        f = ScalarField(grid32, np.sin(x1))
        assert inner(f, f) == pytest.approx(2 * np.pi ** 2, rel=1e-13)


class TestCompose:
    def test_identity_map(self, grid32):
        f = ScalarField(grid32, np.sin(grid32.coords[0]) * np.cos(grid32.coords[1]))
        assert sup(compose(f, grid32.coords).values - f.values) < 1e-13

    def test_constant_shift(self, grid32):
        x1, x2 = grid32.coords
        f = ScalarField(grid32, np.sin(x1))
        assert sup(compose(f, np.stack([x1 + 0.7, x2])).values - np.sin(x1 + 0.7)) < 1e-10

    def test_series_oracle_random_map(self):
        g = TorusGrid(2, 32)
        rng = np.random.default_rng(1)
        modes = [(k1, k2, rng.normal(), rng.normal()) for k1 in range(-4, 5) for k2 in range(0, 5)]
        x1, x2 = g.coords
        f = ScalarField(g, series_eval(modes, x1, x2))
        p1 = x1 + 0.3 * np.sin(x2) + 0.1
        p2 = x2 + 0.2 * np.cos(x1 + x2)
        out = compose(f, np.stack([p1, p2])).values
        assert sup(out - series_eval(modes, p1, p2)) < 1e-8

    @pytest.mark.parametrize("kmax", [1, 7])
    def test_direct_and_dense_paths(self, kmax):
        g = TorusGrid(2, 16)
        rng = np.random.default_rng(kmax)
        modes = [(k1, k2, rng.normal(), rng.normal())
                 for k1 in range(-kmax, kmax + 1) for k2 in range(0, kmax + 1)]
        interp = Interpolant(g, series_eval(modes, *g.coords)[None])
        sparse = interp.nmodes <= g.resolution + 1
        assert sparse == (kmax == 1)
        pts = rng.uniform(-5, 12, size=(2, 200))
        assert sup(interp(pts)[0] - series_eval(modes, *pts)) < 1e-11

    def test_cubic_mode_close(self):
        g = TorusGrid(2, 64)
        x1, x2 = g.coords
        f = ScalarField(g, np.sin(x1) * np.cos(x2))
        pts = np.stack([x1 + 0.05, x2 - 0.02])
        out = compose(f, pts, interp="cubic").values
        assert sup(out - np.sin(x1 + 0.05) * np.cos(x2 - 0.02)) < 1e-5

    def test_rejects_bad_points(self, grid32):
        f = ScalarField(grid32, np.zeros(grid32.shape))
        with pytest.raises(FieldError):
            compose(f, np.zeros((2, 8, 8)))
        with pytest.raises(FieldError):
            Interpolant(grid32, f.values[None], mode="linear")


class TestMollify:
    def test_constant_unchanged(self, grid32):
        f = ScalarField(grid32, np.full(grid32.shape, 2.5))
        assert sup(mollify(f, 0.7).values - 2.5) < 1e-14

    def test_single_mode_multiplier(self, grid32):
        x1, _ = grid32.coords
        out = mollify(ScalarField(grid32, np.sin(x1)), 1.0).values
        assert sup(out - np.exp(-0.5) * np.sin(x1)) < 1e-13

    def test_converges_monotonically(self, grid32):
        x1, x2 = grid32.coords
        f = ScalarField(grid32, np.sin(x1) + np.cos(3 * x2) + 0.5 * np.sin(2 * x1 - x2))
        errs = [sup(mollify(f, l).values - f.values) for l in (0.4, 0.2, 0.1, 0.05, 0.025)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_rejects_nonpositive_radius(self, grid32):
        with pytest.raises(FieldError):
            mollify(ScalarField(grid32, np.zeros(grid32.shape)), 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 2.0), st.integers(0, 2 ** 31))
    def test_contraction(self, length, seed):
        g = TorusGrid(2, 16)
        f = ScalarField(g, np.random.default_rng(seed).normal(size=g.shape))
        assert mollify(f, length).l2() <= f.l2() * (1 + 1e-12)


class TestInverseLaplacian:
    def test_eigenfunction(self, grid32):
        x1, _ = grid32.coords
        assert sup(inv_laplace(ScalarField(grid32, np.sin(x1))).values - np.sin(x1)) < 1e-13

    def test_eigenvalue_four(self, grid32):
        x2 = grid32.coords[1]
        assert sup(inv_laplace(ScalarField(grid32, np.cos(2 * x2))).values - np.cos(2 * x2) / 4) < 1e-13

    def test_nonzero_mean_rejected(self, grid32):
        with pytest.raises(MeanViolation):
            inv_laplace(ScalarField(grid32, np.ones(grid32.shape)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_round_trip(self, seed):
        g = TorusGrid(2, 16)
        rng = np.random.default_rng(seed)
        vals = g.dealias(rng.normal(size=g.shape))
        f = ScalarField(g, vals - g.mean(vals))
        u = inv_laplace(f)
        assert sup(-g.lap(u.values) - g.dealias(f.values)) < 1e-10 * max(1.0, f.sup())


class TestFieldTypes:
    def test_shape_validation(self, grid32):
        with pytest.raises(FieldError):
            VectorField(grid32, np.zeros(grid32.shape))

    def test_non_finite_rejected(self, grid32):
        bad = np.zeros(grid32.shape)
        bad[0, 0] = np.nan
        with pytest.raises(FieldError):
            ScalarField(grid32, bad)

    def test_values_read_only(self, grid32):
        f = ScalarField(grid32, np.zeros(grid32.shape))
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    def test_arithmetic(self, grid32):
        f = ScalarField(grid32, np.ones(grid32.shape))
        assert sup((2 * f + f - 0.5).values - 2.5) == 0.0
