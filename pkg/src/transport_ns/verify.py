"""Operator and flow property checks that run without a fluid solve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import cutoffs
from .flow import SolenoidalFieldSet, integrate_flow, invert_flow, jacobian, transform_matrix
from .noise import WienerPath, refine, sample_path
from .torus_field import ScalarField, TorusGrid, compose, inv_laplace, mollify
from .xops import (
    TransformedOpContext,
    bogovskii_phi,
    div_phi,
    duality_defect,
    grad_phi,
    inv_laplace_phi,
    laplace_phi,
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def _sup(a):
    return float(np.max(np.abs(a)))


def field_checks(M: int = 32) -> list[Check]:
    g = TorusGrid(2, M)
    x1, x2 = g.coords
    f = ScalarField(g, np.sin(3 * x1) * np.cos(2 * x2))
    grad = g.grad(f.values)
    exact = np.stack([3 * np.cos(3 * x1) * np.cos(2 * x2), -2 * np.sin(3 * x1) * np.sin(2 * x2)])
    shift = np.stack([x1 + 0.7, x2])
    return [
        Check("field.gradient_oracle", _sup(grad - exact), 1e-12),
        Check("field.div_grad_is_laplacian", _sup(g.div(grad) - g.lap(f.values)), 1e-11),
        Check("field.integrate", abs(g.integrate(2 + np.cos(x2)) - 2 * (2 * np.pi) ** 2), 1e-12),
        Check("field.compose_shift", _sup(compose(ScalarField(g, np.sin(x1)), shift).values
                                          - np.sin(x1 + 0.7)), 1e-10),
        Check("field.mollify_multiplier", _sup(mollify(ScalarField(g, np.sin(x1)), 1.0).values
                                               - np.exp(-0.5) * np.sin(x1)), 1e-12),
        Check("field.inv_laplace", _sup(inv_laplace(ScalarField(g, np.cos(2 * x2))).values
                                        - np.cos(2 * x2) / 4), 1e-12),
    ]


def noise_checks() -> list[Check]:
    a = sample_path(3, 1.0, 64, 11)
    b = sample_path(3, 1.0, 64, 11)
    r = refine(a)
    zero = refine(WienerPath(np.zeros((2, 8)), 1.0, 0), zero_bridge=True)
    return [
        Check("noise.determinism", float(np.any(a.increments != b.increments)), 0.0),
        Check("noise.start_at_zero", _sup(a.values[:, 0]), 0.0),
        Check("noise.refine_sums", _sup(r.increments[:, 0::2] + r.increments[:, 1::2]
                                        - a.increments), 1e-15),
        Check("noise.zero_bridge", _sup(zero.increments), 0.0),
    ]


def _shear(M, steps, T, seed):
    g = TorusGrid(2, M)
    Q = SolenoidalFieldSet.from_stream_functions(g, [{"modes": [{"k": [0, 1], "cos": -1.0}]}])
    path = sample_path(1, T, steps, seed)
    return g, path, invert_flow(integrate_flow(Q, path))


def flow_checks(M: int = 32) -> list[Check]:
    g, path, flow = _shear(M, 200, 1.0, 5)
    x1, x2 = g.coords
    W = path.values[0]
    fwd = max(_sup(flow.forward[s][0] + np.sin(x2) * W[s]) for s in range(0, 201, 20))
    inv = max(_sup(flow.inverse[s][0] - np.sin(x2) * W[s]) for s in range(0, 201, 20))
    A = transform_matrix(flow, 200).values
    gc = TorusGrid(2, M)
    Qc = SolenoidalFieldSet.constant(gc, [[1.0, 0.0], [0.3, -0.5]])
    pc = sample_path(2, 1.0, 50, 6)
    fc = integrate_flow(Qc, pc)
    shift = -(Qc.values[:, :, 0, 0].T @ pc.values[:, -1])
    return [
        Check("flow.shear_forward", fwd, 1e-10),
        Check("flow.shear_inverse", inv, 1e-8),
        Check("flow.shear_matrix", _sup(A[0, 1] - W[-1] * np.cos(x2)) + _sup(A[0, 0] - 1)
              + _sup(A[1, 0]) + _sup(A[1, 1] - 1), 1e-8),
        Check("flow.shear_jacobian", _sup(jacobian(flow, 200).values - 1), 1e-8),
        Check("flow.translation", _sup(fc.forward[-1] - shift[:, None, None]), 1e-12),
    ]


def operator_checks(M: int = 32) -> list[Check]:
    g, path, flow = _shear(M, 100, 0.5, 7)
    ctx = TransformedOpContext.from_flow(flow, 100)
    x1, x2 = g.coords
    f = np.cos(x1) + 0.5 * np.sin(x1 + 2 * x2)
    u = np.stack([np.sin(x2) * np.cos(x1), np.cos(2 * x1 + x2)])
    rel = lambda a, b: _sup(a - b) / max(_sup(b), 1e-300)  # noqa: E731
    eta = 1.0 + 0.3 * np.cos(x1) * np.sin(x2)
    Phi = bogovskii_phi(ctx, eta, 1.0)
    lap = laplace_phi(ctx, f).values
    back = inv_laplace_phi(ctx, -lap).values
    return [
        Check("xops.grad_forms", rel(grad_phi(ctx, f).values, grad_phi(ctx, f, "conj").values), 1e-8),
        Check("xops.div_forms", rel(div_phi(ctx, u).values, div_phi(ctx, u, "conj").values), 1e-8),
        Check("xops.duality", duality_defect(ctx, f, u), 1e-8),
        Check("xops.inv_laplace_round_trip", rel(back, f - g.mean(f)), 1e-8),
        Check("xops.bogovskii_residual", rel(div_phi(ctx, Phi).values, eta - 1.0), 1e-8),
    ]


def cutoff_checks() -> list[Check]:
    z = np.linspace(0, 20, 401)
    T, _, L = cutoffs(z, 4.0)
    low = z <= 4
    high = z >= 12
    T1, _, L1 = cutoffs(np.array([1.0]), 2.0)
    return [
        Check("cutoff.identity_below_k", _sup(T[low] - z[low]), 0.0),
        Check("cutoff.constant_above_3k", _sup(T[high] - 8.0), 0.0),
        Check("cutoff.L_at_one", abs(float(L1[0])), 0.0),
        Check("cutoff.concave", float(np.max(np.diff(T, 2))), 1e-12),
    ]


def run_checks() -> list[Check]:
    return field_checks() + noise_checks() + flow_checks() + operator_checks() + cutoff_checks()
