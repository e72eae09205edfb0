"""Eulerian variables recovered from a transformed trajectory and their weak residuals.

``rho = eta o phi^{-1}``, ``u = v o phi^{-1}``.  The stochastic weak forms
carry Ito integrals, discretized as left-point sums plus the Ito-Stratonovich
correction, or alternatively as trapezoid (Stratonovich) sums without it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import WienerPath
from .params import LayerParams, pressure_delta
from .torus_field import FieldError, Interpolant, ScalarField, VectorField
from .xops import stress_a

SCHEMES = ("ito", "stratonovich")


@dataclass(frozen=True, eq=False)
class EulerianState:
    t: float
    rho: ScalarField
    u: VectorField

    def mass(self) -> float:
        return float(self.rho.grid.integrate(self.rho.values))


def _compose_stack(grid, arrays, displacement, interp):
    stack = np.concatenate([a.reshape((-1,) + grid.shape) for a in arrays])
    out = Interpolant(grid, stack, mode=interp)(grid.coords + displacement)
    return out


def pushforward(state, flow, s: int) -> EulerianState:
    """Compose ``eta`` and ``v`` with the inverse map at node ``s``."""
    g = flow.grid
    out = _compose_stack(g, [state.eta.values, state.v.values], flow.inverse_points(s) - g.coords,
                         flow.interp)
    return EulerianState(state.t, ScalarField(g, out[0]), VectorField(g, out[1:]))


def pullback(eul: EulerianState, flow, s: int):
    """Compose ``rho`` and ``u`` with the forward map; returns ``(eta, v)``."""
    g = flow.grid
    out = _compose_stack(g, [eul.rho.values, eul.u.values], flow.forward[s], flow.interp)
    return ScalarField(g, out[0]), VectorField(g, out[1:])


def eulerian_trajectory(traj) -> list[EulerianState]:
    return [pushforward(st, traj.flow, s) for s, st in enumerate(traj.states)]


def _fields(Q):
    vals = getattr(Q, "values", None)
    if vals is None:
        vals = np.stack([getattr(q, "values", q) for q in Q])
    return np.asarray(vals, dtype=float)


def correction_density(grid, Q, psi) -> np.ndarray:
    """``1/2 sum_k div(Q_k (Q_k . grad psi))`` for scalar psi, componentwise for vectors."""
    Qv = _fields(Q)
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    if psi.ndim > grid.dim:
        return np.stack([correction_density(grid, Qv, c) for c in psi])
    grad = grid.grad(psi)
    return 0.5 * sum(grid.div(q * np.sum(q * grad, axis=0)) for q in Qv)


def correction_weak(rho, Q, psi) -> float:
    """``1/2 sum_k int rho div(Q_k (Q_k . grad psi)) dx``."""
    g = rho.grid
    return float(g.integrate(rho.values * correction_density(g, Q, psi)))


def _check_aligned(states, path: WienerPath):
    if len(states) != path.steps + 1:
        raise FieldError(f"{len(states)} states for a path with {path.steps} steps")
    t = np.array([s.t for s in states])
    if np.max(np.abs(t - path.times)) > 1e-9 * max(1.0, path.horizon):
        raise FieldError("state times do not match the path nodes")


def _stochastic_sum(series, path: WienerPath, scheme: str) -> float:
    """``sum_k int g_k dW_k`` from node values ``series[s, k]``."""
    inc = path.increments.T  # (S, K)
    if scheme == "ito":
        return float(np.sum(series[:-1] * inc))
    if scheme == "stratonovich":
        return float(np.sum(0.5 * (series[:-1] + series[1:]) * inc))
    raise ValueError(f"unknown scheme {scheme!r}")


def _trapezoid(vals, times) -> float:
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times)))


def weak_residual_continuity(states, path: WienerPath, Q, psi, scheme: str = "ito",
                             signed: bool = False) -> float:
    """Residual of the Eulerian weak continuity equation for one test function.

    ``int rho psi |_0^T - int int rho u.grad psi + sum_k int (int rho Q_k.grad psi) dW_k
    - [Ito only] 1/2 sum_k int int rho div(Q_k (Q_k.grad psi))``.
    Returns the absolute value unless ``signed``.
    """
    _check_aligned(states, path)
    g = states[0].rho.grid
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    Qv = _fields(Q)
    grad = g.grad(psi)
    corr = correction_density(g, Qv, psi)
    times = path.times
    flux = np.array([g.integrate(st.rho.values * np.sum(st.u.values * grad, axis=0)) for st in states])
    noise = np.array([[g.integrate(st.rho.values * np.sum(q * grad, axis=0)) for q in Qv]
                      for st in states])
    res = g.integrate((states[-1].rho.values - states[0].rho.values) * psi)
    res -= _trapezoid(flux, times)
    res += _stochastic_sum(noise, path, scheme)
    if scheme == "ito":
        res -= _trapezoid(np.array([g.integrate(st.rho.values * corr) for st in states]), times)
    return float(res) if signed else abs(float(res))


def weak_residual_momentum(states, path: WienerPath, Q, psi, params: LayerParams,
                           scheme: str = "ito", signed: bool = False) -> float:
    """Residual of the Eulerian weak momentum equation for one vector test function.

    Deterministic pairings: ``rho u (x) u : grad psi + p(rho) div psi - S(grad u) : grad psi``;
    noise pairing ``int rho u (x) Q_k : grad psi``; Ito correction
    ``1/2 sum_k int rho u . div(Q_k (Q_k.grad psi))``.
    """
    _check_aligned(states, path)
    g = states[0].rho.grid
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    Qv = _fields(Q)
    gpsi = np.moveaxis(g.grad(psi), 0, 1)  # [i, j] = d_j psi_i
    div_psi = np.trace(gpsi, axis1=0, axis2=1)
    corr = correction_density(g, Qv, psi)
    times = path.times

    def pairing(st):
        rho, u = st.rho.values, st.u.values
        gu = np.moveaxis(g.grad(u), 0, 1)
        S = stress_a(gu, params.mu, params.lam)
        conv = np.einsum("i...,j...,ij...->...", rho * u, u, gpsi)
        p = pressure_delta(rho.clip(min=0.0), params)
        return g.integrate(conv + p * div_psi - np.sum(S * gpsi, axis=(0, 1)))

    def noise(st):
        m = st.rho.values * st.u.values
        return [g.integrate(np.einsum("i...,j...,ij...->...", m, q, gpsi)) for q in Qv]

    det = np.array([pairing(st) for st in states])
    sto = np.array([noise(st) for st in states])
    mom = lambda st: st.rho.values * st.u.values  # noqa: E731
    res = g.integrate(np.sum((mom(states[-1]) - mom(states[0])) * psi, axis=0))
    res -= _trapezoid(det, times)
    res += _stochastic_sum(sto, path, scheme)
    if scheme == "ito":
        res -= _trapezoid(np.array([g.integrate(np.sum(mom(st) * corr, axis=0)) for st in states]),
                          times)
    return float(res) if signed else abs(float(res))


def vector_basis(grid, kmax: int = 1):
    """Vector test functions ``e_i * b`` for scalar basis functions ``b``."""
    from .diagnostics import weak_basis

    out = []
    for name, b in weak_basis(grid, kmax):
        for i in range(grid.dim):
            v = np.zeros((grid.dim,) + grid.shape)
            v[i] = b
            out.append((f"e{i + 1}*{name}", v))
    return out


@dataclass
class EquivalenceReport:
    continuity: dict
    momentum: dict
    mass_defect: float

    def max_continuity(self) -> float:
        return max(self.continuity.values())

    def max_momentum(self) -> float:
        return max(self.momentum.values())


def equivalence_report(traj, path: WienerPath, Q, scheme: str = "ito", kmax: int = 2,
                       states=None) -> EquivalenceReport:
    """Residuals over the declared test bases plus the pushforward mass defect."""
    from .diagnostics import weak_basis

    states = eulerian_trajectory(traj) if states is None else states
    g = traj.grid
    cont = {n: weak_residual_continuity(states, path, Q, b, scheme) for n, b in weak_basis(g, kmax)}
    mom = {n: weak_residual_momentum(states, path, Q, b, traj.params, scheme)
           for n, b in vector_basis(g, min(kmax, 1))}
    defect = max(abs(e.mass() - s.mass()) / abs(s.mass()) for e, s in zip(states, traj.states))
    return EquivalenceReport(cont, mom, defect)
