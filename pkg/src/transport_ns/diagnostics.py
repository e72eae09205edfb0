"""Functionals and identities evaluated on stored trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .flow import FlowMap, holder_norm, transform_matrix
from .params import (
    LayerParams,
    artificial_potential,
    potential_second_derivative,
    pressure_potential_delta,
)
from .torus_field import TorusGrid
from .xops import TransformedOpContext, dissipation, effective_viscous_flux


class PartitionError(ValueError):
    """A single time step already violates the partition criterion."""

    def __init__(self, step: int, excess: float, kappa: float):
        super().__init__(f"step {step} alone moves A by {excess:.3e} > kappa = {kappa:g}")
        self.step = step
        self.excess = excess
        self.kappa = kappa


# --------------------------------------------------------------------------
# energy


def energy(state, params: LayerParams) -> float:
    """``int 1/2 (eps + [eta]_l) |v|^2 + P_delta(eta)``."""
    g = state.grid
    eta, v = state.eta.values, state.v.values
    m = params.eps_n + (g.mollify(eta, params.l) if params.l > 0 else eta)
    return float(g.integrate(0.5 * m * np.sum(v ** 2, axis=0)
                             + pressure_potential_delta(eta, params)))


def artificial_dissipation(state, params: LayerParams) -> float:
    """``eps int P''_delta(eta) |grad eta|^2``."""
    g = state.grid
    eta = state.eta.values
    grad2 = np.sum(g.grad(eta) ** 2, axis=0)
    return params.eps_n * float(g.integrate(potential_second_derivative(eta, params) * grad2))


def artificial_energy(state, params: LayerParams) -> float:
    return float(state.grid.integrate(artificial_potential(state.eta.values, params)))


@dataclass
class EnergyReport:
    """Per-node energy and per-step residual of the discrete energy balance.

    ``residual[s] = (E[s+1] - E[s]) / dt + D_visc[s] + D_art[s]`` with both
    dissipation rates evaluated at the left node of the step.
    """

    energy: np.ndarray
    viscous: np.ndarray
    artificial: np.ndarray
    residual: np.ndarray
    artificial_share: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def energy_report(traj) -> EnergyReport:
    p = traj.params
    E = np.array([energy(s, p) for s in traj.states])
    share = np.array([artificial_energy(s, p) for s in traj.states]) / np.where(E != 0, E, 1.0)
    n = len(traj.states) - 1
    visc = np.empty(n)
    art = np.empty(n)
    for s in range(n):
        ctx = traj.context(s)
        visc[s] = dissipation(ctx, traj.states[s].v, p.mu, p.lam)
        art[s] = artificial_dissipation(traj.states[s], p)
    dt = np.diff(traj.times)
    return EnergyReport(E, visc, art, np.diff(E) / dt + visc + art, share)


def pressure_integrability(traj, Gamma: float | None = None) -> float:
    """Trapezoid-in-time quadrature of ``int eta^(Gamma+1) dx``."""
    Gamma = traj.params.Gamma if Gamma is None else Gamma
    g = traj.grid
    vals = np.array([g.integrate(s.eta.values ** (Gamma + 1)) for s in traj.states])
    return float(np.trapezoid(vals, traj.times)) if len(vals) > 1 else 0.0


def mass_drift(traj) -> float:
    """``max_s |M_s - M_0| / |M_0|``."""
    m = traj.masses()
    return float(np.max(np.abs(m - m[0])) / abs(m[0]))


# --------------------------------------------------------------------------
# random time partition


def time_partition(flow: FlowMap, kappa: float, matrices=None) -> list[float]:
    """Greedy nodes ``t_i`` with ``sup|A(t) - A(t_i)| <= kappa`` on each ``[t_i, t_{i+1}]``.

    Each subinterval is extended over stored nodes as long as the criterion
    holds (max-abs entry over the grid); the next node is the last one that
    still satisfies it.  ``matrices`` may supply precomputed ``A`` arrays.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    S = flow.steps
    if matrices is None:
        matrices = [transform_matrix(flow, s).values for s in range(S + 1)]
    return _greedy(lambda i, j: float(np.max(np.abs(matrices[j] - matrices[i]))),
                   S, kappa, flow.times)


def _greedy(dist, S, kappa, times):
    nodes = [0]
    i = 0
    j = 1
    while j <= S:
        d = dist(i, j)
        if d <= kappa:
            j += 1
            continue
        if j - 1 == i:
            raise PartitionError(j - 1, d, kappa)
        i = j - 1
        nodes.append(i)
    if nodes[-1] != S:
        nodes.append(S)
    return [float(times[n]) for n in nodes]


def scalar_partition(values, times, kappa: float) -> list[float]:
    """The same greedy rule applied to a scalar series (closed-form oracle helper)."""
    values = np.asarray(values, dtype=float)
    return _greedy(lambda i, j: abs(values[j] - values[i]), len(values) - 1, kappa, times)


# --------------------------------------------------------------------------
# cut-off functions

# T(z) = 1 + s - s^3/4 + s^4/16 on [1, 3] with s = z - 1: the quintic matching
# value, slope and curvature of z at 1 and of 2 at 3 (leading coefficient 0).
T_SPLINE = (1.0, 1.0, 0.0, -0.25, 1.0 / 16.0, 0.0)


def _T(z):
    z = np.asarray(z, dtype=float)
    s = np.clip(z - 1.0, 0.0, 2.0)
    mid = np.polynomial.polynomial.polyval(s, T_SPLINE)
    return np.where(z <= 1.0, z, np.where(z >= 3.0, 2.0, mid))


def _dT(z):
    z = np.asarray(z, dtype=float)
    s = np.clip(z - 1.0, 0.0, 2.0)
    mid = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(T_SPLINE))
    return np.where(z <= 1.0, 1.0, np.where(z >= 3.0, 0.0, mid))


def _d2T(z):
    z = np.asarray(z, dtype=float)
    s = np.clip(z - 1.0, 0.0, 2.0)
    mid = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(T_SPLINE, 2))
    return np.where((z <= 1.0) | (z >= 3.0), 0.0, mid)


def T_k(z, k: float):
    return k * _T(np.asarray(z, dtype=float) / k)


def dT_k(z, k: float):
    return _dT(np.asarray(z, dtype=float) / k)


def d2T_k(z, k: float):
    return _d2T(np.asarray(z, dtype=float) / k) / k


@lru_cache(maxsize=64)
def _middle_integral(k: float, upper: float) -> float:
    val, _ = quad(lambda r: float(T_k(r, k)) / r ** 2, k, upper, epsabs=1e-13, epsrel=1e-12,
                  limit=200)
    return val


def _L_scalar(z: float, k: float) -> float:
    if z == 0.0:
        return 0.0
    if z <= k:
        return z * np.log(z)
    integral = np.log(k) + _middle_integral(k, min(z, 3 * k))
    if z > 3 * k:
        integral += 2 * k * (1.0 / (3 * k) - 1.0 / z)
    return z * integral


def cutoffs(z, k: float):
    """``(T_k(z), T_k'(z), L_k(z))`` with ``L_k(z) = z int_1^z T_k(r)/r^2 dr``."""
    if not k >= 1:
        raise ValueError("k must be >= 1")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    L = np.vectorize(lambda x: _L_scalar(float(x), float(k)), otypes=[float])(z)
    return T_k(z, k), dT_k(z, k), L


# --------------------------------------------------------------------------
# renormalized continuity residual


class Renormalizer:
    """``theta`` with its first two derivatives; ``theta = T_k`` by default."""

    def __init__(self, k: float | None = 4.0):
        self.k = k

    def __call__(self, z):
        return z if self.k is None else T_k(z, self.k)

    def d1(self, z):
        return np.ones_like(z) if self.k is None else dT_k(z, self.k)

    def d2(self, z):
        return np.zeros_like(z) if self.k is None else d2T_k(z, self.k)

    def __repr__(self):
        return "Renormalizer(identity)" if self.k is None else f"Renormalizer(T_k, k={self.k:g})"


def weak_basis(grid: TorusGrid, kmax: int = 2) -> list[tuple[str, np.ndarray]]:
    """Real trigonometric test functions from wavenumbers in ``{-kmax..kmax}^N``.

    One representative per pair ``+-k`` contributes ``cos(k.x)`` and
    ``sin(k.x)``; ``k = 0`` contributes the constant.  ``(2 kmax + 1)^N``
    functions in total.
    """
    rng = range(-kmax, kmax + 1)
    ks = np.array(np.meshgrid(*([list(rng)] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T
    out = [("1", np.ones(grid.shape))]
    for k in ks:
        nz = np.nonzero(k)[0]
        if nz.size == 0 or k[nz[0]] < 0:
            continue
        phase = np.tensordot(k.astype(float), grid.coords, axes=1)
        label = ",".join(str(int(c)) for c in k)
        out.append((f"cos({label})", np.cos(phase)))
        out.append((f"sin({label})", np.sin(phase)))
    return out


def _renorm_terms(g, A, eta, v, psi, theta, eps):
    """Spatial integrals entering the residual at one node with matrix A."""
    ctx = TransformedOpContext(g, A)
    th = theta(eta)
    div_v = ctx.div_a(v)
    flux = g.integrate(np.sum(th * v * ctx.grad_a(psi), axis=0))
    source = g.integrate((th - theta.d1(eta) * eta) * div_v * psi)
    diff = eps * g.integrate(th * g.lap(psi))
    defect = eps * g.integrate(theta.d2(eta) * np.sum(g.grad(eta) ** 2, axis=0) * psi)
    return flux + source + diff - defect


def renorm_residual(traj, theta: Renormalizer, psi) -> float:
    """Weak renormalized continuity residual over the whole trajectory.

    ``int theta psi |_0^T - sum_s dt/2 [I_s(t_s) + I_s(t_{s+1})]`` where
    ``I_s(t) = int theta v.grad^phi psi + (theta - theta' eta) div^phi v psi
    + eps theta Lap psi - eps theta'' |grad eta|^2 psi`` uses the matrix
    frozen on step s at both ends.
    """
    g = traj.grid
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    eps = traj.params.eps_n
    st = traj.states
    total = 0.0
    for s in range(len(st) - 1):
        A = traj.context(s).A
        dt = st[s + 1].t - st[s].t
        left = _renorm_terms(g, A, st[s].eta.values, st[s].v.values, psi, theta, eps)
        right = _renorm_terms(g, A, st[s + 1].eta.values, st[s + 1].v.values, psi, theta, eps)
        total += 0.5 * dt * (left + right)
    change = g.integrate(theta(st[-1].eta.values) * psi) - g.integrate(theta(st[0].eta.values) * psi)
    return abs(float(change - total))


def renorm_residuals(traj, theta: Renormalizer, kmax: int = 2) -> dict[str, float]:
    return {name: renorm_residual(traj, theta, psi) for name, psi in weak_basis(traj.grid, kmax)}


# --------------------------------------------------------------------------
# report


@dataclass
class DiagnosticsReport:
    """Everything checked on one trajectory."""

    energy: EnergyReport
    mass_drift: float
    pressure_functional: float
    holder: float
    holder_alpha: float
    partition: list
    partition_kappa: float
    renorm: dict
    flux_final: dict = field(default_factory=dict)

    def summary(self) -> dict:
        e = self.energy
        return {
            "energy_residual_max": e.max_residual,
            "energy_initial": float(e.energy[0]),
            "energy_final": float(e.energy[-1]),
            "viscous_dissipation_min": float(e.viscous.min()) if e.viscous.size else 0.0,
            "artificial_dissipation_min": float(e.artificial.min()) if e.artificial.size else 0.0,
            "artificial_share_final": float(e.artificial_share[-1]),
            "mass_drift": self.mass_drift,
            "pressure_functional": self.pressure_functional,
            "holder_norm": self.holder,
            "holder_alpha": self.holder_alpha,
            "partition_kappa": self.partition_kappa,
            "partition_nodes": self.partition,
            "renorm_residual_max": max(self.renorm.values()) if self.renorm else 0.0,
            "renorm_residuals": self.renorm,
            "effective_viscous_flux": self.flux_final,
        }


def diagnose(traj, alpha: float = 0.25, kappa: float = 0.5, renorm_k: float = 4.0) -> DiagnosticsReport:
    """Evaluate the full set of diagnostics on a trajectory."""
    flow = traj.flow
    try:
        nodes = time_partition(flow, kappa)
    except PartitionError:
        nodes = []
    last = traj.states[-1]
    G = effective_viscous_flux(traj.context(len(traj.states) - 1), last, traj.params).values
    g = traj.grid
    return DiagnosticsReport(
        energy=energy_report(traj),
        mass_drift=mass_drift(traj),
        pressure_functional=pressure_integrability(traj),
        holder=holder_norm(flow, alpha),
        holder_alpha=alpha,
        partition=nodes,
        partition_kappa=kappa,
        renorm=renorm_residuals(traj, Renormalizer(renorm_k)),
        flux_final={"mean": float(g.mean(G)), "sup": float(np.max(np.abs(G)))},
    )
