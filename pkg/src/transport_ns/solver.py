"""Semi-implicit time stepping of the regularized system in flow coordinates.

Per step, with ``A`` frozen at the left node:

* continuity: ``(I - dt eps Lap) eta+ = eta - dt div(A eta v)`` (diagonal in
  Fourier space);
* momentum: ``m+ v+ - dt div^phi S(grad^phi v+) = m v - dt [d_j(F_j v) +
  eps [d_j eta]_l d_j v + grad^phi p(eta+)]`` with ``m = eps + [eta]_l`` and
  ``F = [A eta v]_l``, solved by preconditioned conjugate gradients.

The commutator term enters with a plus sign on the left: this is the sign
that makes the kinetic-energy budget close.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .flow import FlowMap
from .params import LayerParams, pressure_delta, pressure_potential_delta
from .torus_field import FieldError, ScalarField, VectorField
from .xops import TransformedOpContext, stress_a


class PositivityError(ArithmeticError):
    """Density fell below the floor even after the allowed step halvings."""

    def __init__(self, t: float, minimum: float, floor: float):
        super().__init__(f"density {minimum:.3e} below floor {floor:.1e} at t = {t:.6g}")
        self.t = t
        self.minimum = minimum
        self.floor = floor


class LinearSolveError(ArithmeticError):
    """The momentum solve stagnated."""


class _Breach(Exception):
    def __init__(self, minimum):
        self.minimum = minimum


@dataclass(frozen=True, eq=False)
class FluidState:
    """Transformed density and velocity at time ``t``."""

    t: float
    eta: ScalarField
    v: VectorField

    @property
    def grid(self):
        return self.eta.grid

    def mass(self) -> float:
        return float(self.grid.integrate(self.eta.values))


@dataclass(frozen=True)
class SolverOptions:
    cg_rtol: float = 1e-9
    cg_maxiter: int = 500
    max_halvings: int = 6
    dealias: bool = False


@dataclass
class StepInfo:
    substeps: int = 0
    cg_iterations: int = 0
    min_density: float = np.inf

    def merge(self, other: StepInfo) -> None:
        self.substeps += other.substeps
        self.cg_iterations += other.cg_iterations
        self.min_density = min(self.min_density, other.min_density)


@dataclass(eq=False)
class Trajectory:
    """States at every path node together with the flow and parameters."""

    states: list
    params: LayerParams
    flow: FlowMap
    options: SolverOptions = SolverOptions()
    info: list = field(default_factory=list)

    @property
    def grid(self):
        return self.flow.grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def context(self, s: int) -> TransformedOpContext:
        """Operator context frozen at node ``s`` (the one used on step s -> s+1)."""
        return TransformedOpContext.from_flow(self.flow, s)

    def masses(self) -> np.ndarray:
        return np.array([s.mass() for s in self.states])


# --------------------------------------------------------------------------
# initial data


def regularize_initial_data(rho0, q0, params: LayerParams, floor_lift: float = 1e-6) -> FluidState:
    """``eta0 = [rho0]_l + floor_lift`` and ``v0 = [q0]_l / eta0``."""
    g = rho0.grid
    rho = np.asarray(rho0.values, dtype=float)
    q = np.asarray(q0.values, dtype=float)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(q))):
        raise FieldError("initial data must be finite")
    if np.any(rho < 0):
        raise FieldError("initial density must be nonnegative")
    if not floor_lift > 0:
        raise ValueError("floor_lift must be positive")
    eta = g.mollify(rho, params.l) + floor_lift
    v = g.mollify(q, params.l) / eta
    return FluidState(0.0, ScalarField(g, eta), VectorField(g, v))


def initial_energy(rho0, q0, params: LayerParams) -> float:
    """``int P(rho0) + |q0|^2 / (2 rho0)``; momentum must vanish where rho0 does."""
    g = rho0.grid
    rho, q = rho0.values, q0.values
    q2 = np.sum(q ** 2, axis=0)
    if np.any((rho <= 0) & (q2 > 0)):
        return np.inf
    kin = np.divide(q2, 2 * rho, out=np.zeros_like(rho), where=rho > 0)
    return float(g.integrate(pressure_potential_delta(rho, params) + kin))


def energy_gap(rho0, q0, state: FluidState, params: LayerParams) -> float:
    """Difference between regularized and raw initial energies."""
    g = state.grid
    eta, v = state.eta.values, state.v.values
    reg = g.integrate(pressure_potential_delta(eta, params) + 0.5 * eta * np.sum(v ** 2, axis=0))
    return abs(float(reg) - initial_energy(rho0, q0, params))


# --------------------------------------------------------------------------
# one step


class _Stepper:
    """Operators of a step with ``A`` frozen; reused across halved substeps."""

    def __init__(self, ctx: TransformedOpContext, params: LayerParams, options: SolverOptions):
        self.ctx = ctx
        self.g = ctx.grid
        self.p = params
        self.opt = options
        g = self.g
        Abar = g.mean(ctx.A)
        # k_hat_j = sum_l Abar_lj k_l in the rfft layout
        self.khat = [sum(Abar[l, j] * g.wavenumbers[l] for l in range(g.dim))
                     for j in range(g.dim)]
        self.khat2 = sum(k * k for k in self.khat)

    def _mol(self, a):
        return self.g.mollify(a, self.p.l) if self.p.l > 0 else a

    def _dealias(self, a):
        return self.g.dealias(a) if self.opt.dealias else a

    def advance(self, eta, v, dt, t, depth=0):
        try:
            return self._once(eta, v, dt)
        except _Breach as breach:
            if depth >= self.opt.max_halvings:
                raise PositivityError(t, breach.minimum, self.p.density_floor) from None
        h = 0.5 * dt
        eta, v, info = self.advance(eta, v, h, t, depth + 1)
        eta, v, info2 = self.advance(eta, v, h, t + h, depth + 1)
        info.merge(info2)
        return eta, v, info

    def _once(self, eta, v, dt):
        g, p, A = self.g, self.p, self.ctx.A
        eps = p.eps_n
        flux = self._dealias(np.einsum("lj...,j...->l...", A, eta * v))
        rhs = eta - dt * g.div(flux)
        eta_new = g.ifft(g.fft(rhs) / (1.0 + dt * eps * g.k2))
        low = float(np.min(eta_new))
        if not np.isfinite(low):
            raise ArithmeticError("non-finite density")
        if low < p.density_floor:
            raise _Breach(low)

        m_old = eps + self._mol(eta)
        m_new = eps + self._mol(eta_new)
        F = self._mol(flux)
        conv = g.div(self._dealias(F[:, None] * v[None]))
        grad_v = g.grad(v)  # [j, i] = d_j v_i
        comm = eps * np.einsum("j...,ji...->i...", self._mol(g.grad(eta)), grad_v)
        grad_p = self.ctx.grad_a(pressure_delta(eta_new, p))
        b = m_old * v - dt * (conv + self._dealias(comm) + grad_p)
        v_new, iters = self._solve(m_new, b, v, dt)
        if not np.all(np.isfinite(v_new)):
            raise ArithmeticError("non-finite velocity")
        return eta_new, v_new, StepInfo(1, iters, low)

    def _solve(self, m, b, x0, dt):
        g, p, ctx = self.g, self.p, self.ctx
        shape = b.shape

        def apply(x):
            V = x.reshape(shape)
            S = stress_a(ctx.grad_a(V), p.mu, p.lam)
            return (m * V - dt * ctx.div_a(S)).ravel()

        alpha = float(np.mean(m)) + dt * p.mu * self.khat2
        beta = dt * (p.mu + p.lam)

        def precond(r):
            R = g.fft(r.reshape(shape))
            kr = sum(k * R[j] for j, k in enumerate(self.khat))
            fac = beta * kr / (alpha + beta * self.khat2)
            out = np.stack([(R[j] - k * fac) / alpha for j, k in enumerate(self.khat)])
            return g.ifft(out).ravel()

        n = b.size
        op = LinearOperator((n, n), matvec=apply, dtype=float)
        pc = LinearOperator((n, n), matvec=precond, dtype=float)
        count = [0]

        def tick(_):
            count[0] += 1

        x, status = cg(op, b.ravel(), x0=x0.ravel(), rtol=self.opt.cg_rtol,
                       maxiter=self.opt.cg_maxiter, M=pc, callback=tick)
        if status != 0:
            res = np.linalg.norm(b.ravel() - apply(x)) / max(np.linalg.norm(b), 1e-300)
            raise LinearSolveError(
                f"momentum solve stagnated after {count[0]} iterations (relative residual {res:.2e})")
        return x.reshape(shape), count[0]


def advance(state: FluidState, ctx: TransformedOpContext, params: LayerParams, dt: float,
            options: SolverOptions = SolverOptions()) -> tuple[FluidState, StepInfo]:
    """One step of length ``dt`` with the operator context ``ctx``; returns state and stats."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    eta, v = state.eta.values, state.v.values
    if np.min(eta) < params.density_floor:
        raise PositivityError(state.t, float(np.min(eta)), params.density_floor)
    eta_new, v_new, info = _Stepper(ctx, params, options).advance(eta, v, dt, state.t)
    g = state.grid
    return FluidState(state.t + dt, ScalarField(g, eta_new), VectorField(g, v_new)), info


def step(state: FluidState, flow, params: LayerParams, dt: float,
         options: SolverOptions = SolverOptions()) -> FluidState:
    """Advance by ``dt`` with ``A`` frozen at the flow node matching ``state.t``.

    ``flow`` may be a ``FlowMap`` (with inverse) or a ready ``TransformedOpContext``.
    """
    if isinstance(flow, TransformedOpContext):
        ctx = flow
    else:
        s = int(np.argmin(np.abs(flow.times - state.t)))
        if abs(flow.times[s] - state.t) > 1e-9 * max(1.0, flow.times[-1]):
            raise ValueError(f"state time {state.t} is not a flow node")
        ctx = TransformedOpContext.from_flow(flow, s)
    return advance(state, ctx, params, dt, options)[0]


def solve(initial: FluidState, flow: FlowMap, params: LayerParams,
          options: SolverOptions = SolverOptions(), progress=None) -> Trajectory:
    """Step through every node of ``flow``; the flow must carry its inverse."""
    params.check_dimension(flow.grid.dim)
    traj = Trajectory([initial], params, flow, options)
    state = initial
    for s in range(flow.steps):
        dt = float(flow.times[s + 1] - flow.times[s])
        ctx = TransformedOpContext.from_flow(flow, s)
        state, info = advance(state, ctx, params, dt, options)
        state = FluidState(float(flow.times[s + 1]), state.eta, state.v)
        traj.states.append(state)
        traj.info.append(info)
        if progress is not None:
            progress(s + 1, flow.steps)
    return traj
