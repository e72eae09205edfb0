import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transport_ns.flow import identity_flow
from transport_ns.params import (
    LayerParams,
    artificial_potential,
    potential_second_derivative,
    pressure_delta,
    pressure_potential_delta,
)
from transport_ns.solver import (
    FluidState,
    PositivityError,
    SolverOptions,
    advance,
    energy_gap,
    regularize_initial_data,
    solve,
    step,
)
from transport_ns.torus_field import FieldError, ScalarField, TorusGrid, VectorField
from transport_ns.xops import TransformedOpContext

from .conftest import sup
from .oracles import ns_rk2


def state(g, eta, v, t=0.0):
    return FluidState(t, ScalarField(g, eta), VectorField(g, v))


class TestLayerParams:
    def test_defaults_valid(self):
        assert LayerParams().violations() == []

    @pytest.mark.parametrize("field,value", [("eps_n", -1.0), ("mu", 0.0), ("lam", 0.0),
                                             ("gamma", 1.0), ("l", -0.1)])
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            LayerParams(**{field: value})

    def test_gamma_range_only_with_delta(self):
        LayerParams(delta=0.0, Gamma=3.0)
        with pytest.raises(ValueError, match="Gamma"):
            LayerParams(delta=0.1, Gamma=6.0)

    def test_all_violations_reported(self):
        with pytest.raises(ValueError) as info:
            LayerParams(mu=-1.0, lam=-1.0)
        assert "mu" in str(info.value) and "lambda" in str(info.value)

    def test_dimension_warning(self):
        with pytest.warns(UserWarning):
            LayerParams(gamma=1.2).check_dimension(3)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            LayerParams(gamma=1.4).check_dimension(2)

    def test_replace(self):
        p = LayerParams().replace(delta=0.5)
        assert p.delta == 0.5 and p.as_dict()["Gamma"] == 4.0


class TestPressure:
    def test_zero_density(self):
        p = LayerParams(delta=0.1)
        assert pressure_delta(np.zeros(3), p).tolist() == [0.0] * 3
        assert pressure_potential_delta(np.zeros(3), p).tolist() == [0.0] * 3

    def test_quadratic_law(self):
        p = LayerParams(a=1.0, gamma=2.0, delta=0.0)
        assert pressure_delta(np.array(2.0), p) == pytest.approx(4.0)
        assert pressure_potential_delta(np.array(2.0), p) == pytest.approx(4.0)

    def test_augmented_values(self):
        p = LayerParams(a=1.0, gamma=1.4, delta=0.1, Gamma=4.0)
        assert pressure_delta(np.array(1.0), p) == pytest.approx(1.2, rel=1e-15)
        assert pressure_potential_delta(np.array(1.0), p) == pytest.approx(2.5 + 0.1 + 0.1 / 3,
                                                                            rel=1e-15)
        assert artificial_potential(np.array(1.0), p) == pytest.approx(0.1 + 0.1 / 3, rel=1e-15)

    def test_negative_density_rejected(self):
        with pytest.raises(FieldError):
            pressure_delta(np.array([-0.1]), LayerParams())

    def test_field_wrapping(self, grid32):
        out = pressure_delta(ScalarField(grid32, np.ones(grid32.shape)), LayerParams())
        assert isinstance(out, ScalarField)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 5.0), st.floats(1.05, 3.0), st.floats(0.0, 1.0), st.floats(4.0, 5.99))
    def test_potential_identities(self, eta, gamma, delta, Gamma):
        p = LayerParams(gamma=gamma, delta=delta, Gamma=Gamma)
        h = 1e-5 * eta
        P = lambda z: float(pressure_potential_delta(np.array(z), p))  # noqa: E731
        dP = (P(eta + h) - P(eta - h)) / (2 * h)
        pr = lambda z: float(pressure_delta(np.array(z), p))  # noqa: E731
        # p = eta P' - P, hence p' = eta P''
        dp = (pr(eta + h) - pr(eta - h)) / (2 * h)
        assert eta * dP - P(eta) == pytest.approx(pr(eta), rel=1e-6)
        assert dp == pytest.approx(eta * float(potential_second_derivative(np.array(eta), p)),
                                   rel=1e-6)


class TestInitialData:
    def test_unit_density(self, grid32):
        p = LayerParams()
        rho = ScalarField(grid32, np.ones(grid32.shape))
        q = VectorField(grid32, np.zeros((2,) + grid32.shape))
        s = regularize_initial_data(rho, q, p, floor_lift=1e-3)
        assert sup(s.eta.values - 1.001) < 1e-15 and sup(s.v.values) == 0.0

    def test_vacuum_patch_lifted(self, grid32):
        x1, _ = grid32.coords
        rho = ScalarField(grid32, np.where(np.abs(x1 - np.pi) < 1.0, 0.0, 1.0))
        q = VectorField(grid32, np.zeros((2,) + grid32.shape))
        s = regularize_initial_data(rho, q, LayerParams(), floor_lift=1e-4)
        assert np.min(s.eta.values) >= 1e-4

    def test_energy_gap_shrinks(self, grid32):
        x1, x2 = grid32.coords
        rho = ScalarField(grid32, 1.0 + 0.3 * np.cos(x1) + 0.2 * np.sin(3 * x2))
        q = VectorField(grid32, np.stack([0.2 * np.sin(x2), 0.1 * np.cos(2 * x1)]))
        gaps = []
        for l, lift in ((0.2, 1e-2), (0.1, 1e-3), (0.05, 1e-4)):
            p = LayerParams(l=l)
            gaps.append(energy_gap(rho, q, regularize_initial_data(rho, q, p, lift), p))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_rejects_negative_density(self, grid32):
        rho = ScalarField(grid32, -np.ones(grid32.shape))
        with pytest.raises(FieldError):
            regularize_initial_data(rho, VectorField(grid32, np.zeros((2,) + grid32.shape)),
                                    LayerParams())


class TestStep:
    def test_constant_state_fixed_point(self, grid32):
        ctx = TransformedOpContext.identity(grid32)
        s0 = state(grid32, np.full(grid32.shape, 1.3), np.zeros((2,) + grid32.shape))
        s1, info = advance(s0, ctx, LayerParams(delta=0.1), 1e-2)
        assert sup(s1.eta.values - 1.3) < 1e-14 and sup(s1.v.values) < 1e-14
        assert info.substeps == 1

    def test_heat_relaxation(self, grid32):
        x1, x2 = grid32.coords
        flow = identity_flow(grid32, 20, 0.2)
        s0 = state(grid32, 1.0 + 0.3 * np.cos(x1) * np.sin(2 * x2), np.zeros((2,) + grid32.shape))
        traj = solve(s0, flow, LayerParams(eps_n=1.0, mu=0.1, lam=0.1))
        dev = [np.linalg.norm(s.eta.values - s.eta.values.mean()) for s in traj.states]
        assert all(b < a for a, b in zip(dev, dev[1:]))

    def test_mass_conserved(self, shear):
        g, _, _, flow = shear
        x1, x2 = g.coords
        s0 = state(g, 1.0 + 0.2 * np.cos(x1), np.stack([0.1 * np.sin(x2), 0.1 * np.cos(x1)]))
        traj = solve(s0, flow, LayerParams(delta=1e-2, mu=0.1, lam=0.1))
        m = traj.masses()
        assert np.max(np.abs(m - m[0])) / m[0] < 1e-12

    def test_step_requires_node_time(self, shear):
        g, _, _, flow = shear
        s0 = state(g, np.ones(g.shape), np.zeros((2,) + g.shape), t=0.0123)
        with pytest.raises(ValueError):
            step(s0, flow, LayerParams(), flow.times[1])

    def test_positivity_breach(self, grid32):
        x1, _ = grid32.coords
        ctx = TransformedOpContext.identity(grid32)
        s0 = state(grid32, 1.0 + 0.9 * np.cos(x1), np.stack([10.0 * np.sin(x1), np.zeros_like(x1)]))
        p = LayerParams(eps_n=0.0, density_floor=0.05)
        with pytest.raises(PositivityError):
            advance(s0, ctx, p, 0.5, SolverOptions(max_halvings=2))

    def test_halving_recovers(self, grid32):
        x1, _ = grid32.coords
        ctx = TransformedOpContext.identity(grid32)
        s0 = state(grid32, 1.0 + 0.5 * np.cos(x1), np.stack([-np.sin(x1), np.zeros_like(x1)]))
        s1, info = advance(s0, ctx, LayerParams(eps_n=0.0, density_floor=0.4), 0.4)
        assert info.substeps > 1
        assert np.min(s1.eta.values) >= 0.4

    def test_rejects_nonpositive_dt(self, grid32):
        s0 = state(grid32, np.ones(grid32.shape), np.zeros((2,) + grid32.shape))
        with pytest.raises(ValueError):
            advance(s0, TransformedOpContext.identity(grid32), LayerParams(), 0.0)


class TestReferenceIntegrator:
    def test_matches_explicit_rk2(self):
        g = TorusGrid(2, 16)
        x1, x2 = g.coords
        eta0 = 1.0 + 0.05 * np.cos(x1) + 0.03 * np.sin(x2)
        v0 = 0.05 * np.stack([np.sin(x2), np.cos(x1 + x2)])
        p = LayerParams(eps_n=1e-2, l=0.0, delta=0.0, a=1.0, gamma=1.4, mu=0.1, lam=0.1)
        dt, steps = 1e-4, 100
        flow = identity_flow(g, steps, dt * steps)
        traj = solve(state(g, eta0, v0), flow, p, SolverOptions(cg_rtol=1e-13))
        eta_ref, v_ref = ns_rk2(eta0, v0, dt / 10, steps * 10, p.eps_n, p.a, p.gamma, p.mu, p.lam)
        last = traj.states[-1]
        assert sup(last.eta.values - eta_ref) / sup(eta_ref) < 1e-5
        assert sup(last.v.values - v_ref) / sup(v_ref) < 1e-5
