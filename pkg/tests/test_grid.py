import numpy as np
import pytest
from scipy.integrate import quad

from qnls6.grid import (FieldPair, GridError, RadialField, RadialGrid,
                        h1dot_inner, h1dot_norm, integrate6, laplacian6,
                        pair_from_arrays, radial_derivative)
from qnls6.groundstate import q_closed_form, q_derivative_closed_form


def field(grid, fn):
    return RadialField(grid, fn(grid.nodes).astype(complex))


class TestLaplacian:
    def test_quadratic_gives_constant_12(self, mid_grid):
        f = field(mid_grid, lambda r: r ** 2)
        out = laplacian6(f).values.real
        interior = slice(2, mid_grid.n - 4)
        assert np.allclose(out[interior], 12.0, rtol=1e-9)

    @pytest.mark.parametrize("order", [2, 4])
    def test_gaussian_reference(self, mid_grid, order):
        f = field(mid_grid, lambda r: np.exp(-r * r))
        out = laplacian6(f, order=order).values.real
        exact = (4 * mid_grid.nodes ** 2 - 12) * np.exp(-mid_grid.nodes ** 2)
        tol = 2e-2 if order == 2 else 2e-5
        assert np.max(np.abs(out - exact)) < tol

    def test_ground_state_equation(self, mid_grid):
        q = field(mid_grid, q_closed_form)
        res = laplacian6(q, boundary="decay4", order=4).values.real + q.values.real ** 2
        w = mid_grid.quad_weights
        rel = np.sqrt(np.sum(w * res ** 2) / np.sum(w * q.values.real ** 4))
        assert rel < 1e-5  # reaches 1e-9 at the production n=2048

    def test_small_grid_rejected(self):
        with pytest.raises(GridError):
            RadialGrid(n=4, r_max=10.0)

    def test_symmetry_wrt_cell_masses(self, mid_grid):
        # flux form self-adjoint in the cell-mass product (dirichlet rule)
        rng = np.random.default_rng(0)
        mat = mid_grid.laplacian_matrix("dirichlet", 2)
        w = mid_grid.cell_masses
        f = np.exp(-mid_grid.nodes ** 2) * rng.standard_normal(mid_grid.n)
        g = np.exp(-0.5 * mid_grid.nodes ** 2)
        a = np.sum(w * (mat @ f) * g)
        b = np.sum(w * f * (mat @ g))
        assert abs(a - b) < 1e-12 * max(abs(a), 1.0)

    def test_integration_by_parts(self, mid_grid):
        f = field(mid_grid, lambda r: np.exp(-r * r))
        lap = laplacian6(f).values
        lhs = np.real(np.sum(mid_grid.quad_weights * (-lap) * np.conj(f.values)))
        df = radial_derivative(f).values
        rhs = np.real(np.sum(mid_grid.quad_weights * np.abs(df) ** 2))
        assert abs(lhs - rhs) / abs(rhs) < 1e-2


class TestDerivative:
    def test_power(self, mid_grid):
        f = field(mid_grid, lambda r: r ** 2)
        out = radial_derivative(f).values.real
        assert np.allclose(out, 2 * mid_grid.nodes, rtol=1e-7)

    def test_constant(self, mid_grid):
        f = field(mid_grid, lambda r: np.ones_like(r))
        assert np.max(np.abs(radial_derivative(f).values)) < 1e-12

    def test_ground_state_derivative(self, mid_grid):
        f = field(mid_grid, q_closed_form)
        out = radial_derivative(f).values.real
        exact = q_derivative_closed_form(mid_grid.nodes)
        assert np.max(np.abs(out - exact)) < 1e-3


class TestQuadrature:
    def test_unit_ball_volume(self, mid_grid):
        ind = RadialField(mid_grid, (mid_grid.nodes <= 1.0).astype(complex))
        got = integrate6(ind).real
        assert abs(got - np.pi ** 3 / 6) / (np.pi ** 3 / 6) < 0.05

    def test_gaussian(self, mid_grid):
        f = field(mid_grid, lambda r: np.exp(-r * r))
        assert abs(integrate6(f).real - np.pi ** 3) / np.pi ** 3 < 1e-5

    def test_q_cubed_closed_form(self, mid_grid):
        # oracle first: adaptive quadrature of the closed form
        oracle = np.pi ** 3 * quad(lambda r: q_closed_form(r) ** 3 * r ** 5, 0, np.inf)[0]
        assert abs(oracle - np.pi ** 3 * 24.0 ** 3 / 60.0) < 1e-8 * oracle
        f = field(mid_grid, lambda r: q_closed_form(r) ** 3)
        assert abs(integrate6(f).real - oracle) / oracle < 1e-5

    def test_refinement_improves(self):
        vals = []
        for n in (128, 256):
            g = RadialGrid(n=n, r_max=60.0, stretch=9.0)
            f = RadialField(g, (g.nodes ** 2 * np.exp(-g.nodes ** 2)).astype(complex))
            exact = np.pi ** 3 * quad(lambda r: r ** 7 * np.exp(-r * r), 0, np.inf)[0]
            vals.append(abs(integrate6(f).real - exact) / exact)
        assert vals[1] < vals[0]


class TestInnerProducts:
    def test_positive(self, mid_grid):
        rng = np.random.default_rng(3)
        u = pair_from_arrays(mid_grid, rng.standard_normal(mid_grid.n) * np.exp(-mid_grid.nodes ** 2),
                             rng.standard_normal(mid_grid.n) * np.exp(-mid_grid.nodes ** 2), 0.5)
        assert h1dot_inner(u, u) >= 0

    def test_against_fine_quadrature(self, mid_grid):
        # (e^{-r^2}, r^2 e^{-r^2}) pairing against an independent 1-D oracle
        r = mid_grid.nodes
        f = pair_from_arrays(mid_grid, np.exp(-r * r), np.exp(-r * r), 1.0)
        g = pair_from_arrays(mid_grid, r ** 2 * np.exp(-r * r), r ** 2 * np.exp(-r * r), 1.0)
        df = lambda x: -2 * x * np.exp(-x * x)
        dg = lambda x: (2 * x - 2 * x ** 3) * np.exp(-x * x)
        oracle = 2 * np.pi ** 3 * quad(lambda x: df(x) * dg(x) * x ** 5, 0, np.inf)[0]
        assert abs(h1dot_inner(f, g) - oracle) / abs(oracle) < 5e-3


class TestTypes:
    def test_field_length_mismatch(self, mid_grid, small_grid):
        with pytest.raises(GridError):
            RadialField(mid_grid, np.zeros(small_grid.n))

    def test_nonfinite_rejected(self, mid_grid):
        vals = np.zeros(mid_grid.n)
        vals[0] = np.inf
        with pytest.raises(GridError):
            RadialField(mid_grid, vals)

    def test_kappa_positive(self, mid_grid):
        with pytest.raises(GridError):
            pair_from_arrays(mid_grid, np.zeros(mid_grid.n), np.zeros(mid_grid.n), -1.0)

    def test_pair_grids_must_match(self, mid_grid, small_grid):
        a = RadialField(mid_grid, np.zeros(mid_grid.n))
        b = RadialField(small_grid, np.zeros(small_grid.n))
        with pytest.raises(GridError):
            FieldPair(a, b, 1.0)

    def test_nodes_increasing_and_pinned(self, mid_grid):
        assert np.all(np.diff(mid_grid.nodes) > 0)
        assert mid_grid.nodes[0] > 0
        assert mid_grid.nodes[-1] == pytest.approx(mid_grid.r_max)
        assert np.all(mid_grid.quad_weights > 0)
