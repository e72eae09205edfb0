"""Stochastic flow of the noise vector fields: forward map, inverse, Jacobian, A.

The flow solves ``phi(x, t) = x - sum_k int_0^t Q_k(phi) o dW_k``.  Maps are
stored as periodic displacements ``phi(x) = x + d(x)``; ``d`` stays smooth
even when trajectories wind around the torus.
"""
from __future__ import annotations

import numpy as np

from .noise import WienerPath
from .torus_field import (
    INTERP_MODES,
    FieldError,
    Interpolant,
    ScalarField,
    TensorField,
    TorusGrid,
    VectorField,
)


class FlowStepError(ArithmeticError):
    """A flow step moved points further than the resolution allows."""

    def __init__(self, step: int, displacement: float, limit: float):
        super().__init__(
            f"flow step {step}: displacement {displacement:.3e} exceeds limit {limit:.3e}; "
            "reduce dt or the noise amplitude")
        self.step = step
        self.displacement = displacement
        self.limit = limit


class InverseFlowError(ArithmeticError):
    """Inverse-map iteration did not converge (flow too rough for the grid)."""


# --------------------------------------------------------------------------
# noise vector fields


def _mode_terms(grid, spec):
    """Yield (k, cos_coef, sin_coef) triples of one stream-function spec."""
    for mode in spec.get("modes", ()):
        k = np.asarray(mode["k"], dtype=float)
        if k.shape != (grid.dim,) or np.any(k != np.round(k)):
            raise FieldError(f"mode wavevector must be {grid.dim} integers, got {mode['k']}")
        yield k, mode.get("cos", 0.0), mode.get("sin", 0.0)


class SolenoidalFieldSet:
    """The K divergence-free noise fields ``Q_k`` sampled on the grid."""

    def __init__(self, grid: TorusGrid, fields, specs=None, div_tol: float = 1e-12):
        self.grid = grid
        self.fields = [f if isinstance(f, VectorField) else VectorField(grid, f) for f in fields]
        if not self.fields:
            raise FieldError("need at least one noise field")
        self.specs = specs
        for k, f in enumerate(self.fields):
            div = np.max(np.abs(grid.div(f.values)))
            if div > div_tol * max(1.0, f.sup()):
                raise FieldError(f"noise field {k} is not solenoidal (|div| = {div:.2e})")
        self.values = np.stack([f.values for f in self.fields])
        self.values.flags.writeable = False
        self._interp = {}

    @property
    def K(self) -> int:
        return len(self.fields)

    @classmethod
    def from_stream_functions(cls, grid: TorusGrid, specs) -> SolenoidalFieldSet:
        """Build ``Q_k`` from stream-function (2D) or vector-potential (3D) modes.

        Each spec is ``{"mean": [...], "modes": [{"k": [...], "cos": a, "sin": b}]}``
        describing ``psi = sum a cos(k.x) + b sin(k.x)``; in 3D ``a`` and ``b``
        are 3-vectors.  ``Q = (d2 psi, -d1 psi)`` in 2D and ``curl psi`` in 3D,
        plus the constant ``mean`` vector.
        """
        x = grid.coords
        fields = []
        for spec in specs:
            Q = np.zeros((grid.dim,) + grid.shape)
            mean = np.asarray(spec.get("mean", [0.0] * grid.dim), dtype=float)
            Q += mean.reshape((grid.dim,) + (1,) * grid.dim)
            for k, a, b in _mode_terms(grid, spec):
                phase = np.tensordot(k, x, axes=1)
                c, s = np.cos(phase), np.sin(phase)
                if grid.dim == 2:
                    dpsi = (-float(a) * s + float(b) * c)  # derivative factor, times k_j
                    Q[0] += k[1] * dpsi
                    Q[1] -= k[0] * dpsi
                else:
                    a = np.asarray(a, dtype=float) * np.ones(3)
                    b = np.asarray(b, dtype=float) * np.ones(3)
                    for i in range(3):
                        j, l = (i + 1) % 3, (i + 2) % 3
                        # curl_i = d_j psi_l - d_l psi_j
                        Q[i] += k[j] * (-a[l] * s + b[l] * c) - k[l] * (-a[j] * s + b[j] * c)
            fields.append(Q)
        return cls(grid, fields, specs=list(specs))

    @classmethod
    def constant(cls, grid: TorusGrid, vectors) -> SolenoidalFieldSet:
        return cls.from_stream_functions(grid, [{"mean": list(v), "modes": []} for v in vectors])

    def interpolant(self, mode: str = "trig") -> Interpolant:
        if mode not in self._interp:
            flat = self.values.reshape((-1,) + self.grid.shape)
            self._interp[mode] = Interpolant(self.grid, flat, mode=mode)
        return self._interp[mode]

    def evaluate(self, points, mode: str = "trig") -> np.ndarray:
        """All ``Q_k`` at ``points`` (shape ``(N, ...)``) -> ``(K, N, ...)``."""
        out = self.interpolant(mode)(points)
        return out.reshape((self.K, self.grid.dim) + points.shape[1:])


# --------------------------------------------------------------------------
# flow map


class FlowMap:
    """Forward (and optionally inverse) displacements at every path node."""

    def __init__(self, grid: TorusGrid, times, forward, inverse=None, interp: str = "trig",
                 path: WienerPath | None = None, fields: SolenoidalFieldSet | None = None):
        if interp not in INTERP_MODES:
            raise FieldError(f"unknown interpolation mode {interp!r}")
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.forward = np.asarray(forward, dtype=float)
        self.forward.flags.writeable = False
        if inverse is not None:
            inverse = np.asarray(inverse, dtype=float)
            inverse.flags.writeable = False
        self.inverse = inverse
        self.interp = interp
        self.path = path
        self.fields = fields
        self._A_cache: dict = {}

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def has_inverse(self) -> bool:
        return self.inverse is not None

    def points(self, s: int) -> np.ndarray:
        return self.grid.coords + self.forward[s]

    def inverse_points(self, s: int) -> np.ndarray:
        if self.inverse is None:
            raise FieldError("inverse displacements not computed; call invert_flow first")
        return self.grid.coords + self.inverse[s]

    def displacement(self, s: int) -> VectorField:
        return VectorField(self.grid, self.forward[s])

    def inverse_displacement(self, s: int) -> VectorField:
        self.inverse_points(s)
        return VectorField(self.grid, self.inverse[s])


def identity_flow(grid: TorusGrid, steps: int = 1, horizon: float = 1.0) -> FlowMap:
    z = np.zeros((steps + 1, grid.dim) + grid.shape)
    return FlowMap(grid, np.linspace(0.0, horizon, steps + 1), z, z.copy())


def integrate_flow(Q: SolenoidalFieldSet, path: WienerPath, interp: str = "trig",
                   safety: float = 16.0, initial=None) -> FlowMap:
    """Stratonovich Heun integration of the flow SDE at every grid node.

    Predictor ``phi* = phi - sum Q_k(phi) dW_k``, corrector
    ``phi+ = phi - 1/2 sum (Q_k(phi) + Q_k(phi*)) dW_k``.  A step whose
    predictor moves any node further than ``safety`` half-cells is rejected.
    """
    if Q.K != path.channels:
        raise ValueError(f"noise fields ({Q.K}) and path channels ({path.channels}) differ")
    grid = Q.grid
    x = grid.coords
    limit = safety * 0.5 * grid.spacing
    d = np.zeros((grid.dim,) + grid.shape) if initial is None else np.array(initial, dtype=float)
    out = np.empty((path.steps + 1,) + d.shape)
    out[0] = d
    shape_k = (Q.K,) + (1,) * (grid.dim + 1)
    for s in range(path.steps):
        dW = path.increments[:, s].reshape(shape_k)
        q0 = Q.evaluate(x + d, interp)
        incr = np.sum(q0 * dW, axis=0)
        move = float(np.max(np.abs(incr)))
        if move > limit:
            raise FlowStepError(s, move, limit)
        q1 = Q.evaluate(x + d - incr, interp)
        d = d - 0.5 * np.sum((q0 + q1) * dW, axis=0)
        out[s + 1] = d
    return FlowMap(grid, path.times, out, interp=interp, path=path, fields=Q)


# --------------------------------------------------------------------------
# inverse


def _jacobian_stack(grid: TorusGrid, d):
    """``[d_i, d_j d_i]`` stacked for interpolation: shape (N + N*N, ...)."""
    N = grid.dim
    grad = np.moveaxis(grid.grad(d), 0, 1)  # [i, j] = d_j d_i
    return np.concatenate([d, grad.reshape((N * N,) + grid.shape)])


def _solve_points(J, r):
    """Solve ``J[:, :, p] delta[:, p] = r[:, p]`` for every point p."""
    N = r.shape[0]
    Jm = np.moveaxis(J.reshape(N, N, -1), 2, 0)
    rm = np.moveaxis(r.reshape(N, -1), 1, 0)[..., None]
    sol = np.linalg.solve(Jm, rm)[..., 0]
    return np.moveaxis(sol, 0, 1).reshape(r.shape)


def inverse_at(flow: FlowMap, s: int, guess=None, tol: float = 1e-12, max_iter: int = 100,
               inv_tol: float = 1e-8) -> np.ndarray:
    """Inverse displacement at node ``s``: solve ``y + d(y) = x`` at every node x.

    Fixed-point iteration ``y <- y - J^{-1} (y + d(y) - x)`` preconditioned by
    the Jacobian ``J = I + grad d`` (a Newton step), halving the step
    whenever the residual grows.
    """
    grid = flow.grid
    N = grid.dim
    x = grid.coords
    d = flow.forward[s]
    interp = Interpolant(grid, _jacobian_stack(grid, d), mode=flow.interp)
    y = x - d if guess is None else x + guess
    eye = np.eye(N).reshape((N, N) + (1,) * N)
    res_prev = np.inf
    omega = 1.0
    y_prev, delta = y, np.zeros_like(y)
    for _ in range(max_iter):
        vals = interp(y)
        r = y + vals[:N] - x
        res = float(np.max(np.abs(r)))
        if res > res_prev and omega > 1e-3:
            y = y_prev - 0.5 * omega * delta
            omega *= 0.5
            continue
        J = eye + vals[N:].reshape((N, N) + y.shape[1:])
        delta = _solve_points(J, r)
        y_prev, res_prev = y, res
        y = y - omega * delta
        omega = min(1.0, 2 * omega)
        if np.max(np.abs(omega * delta)) < tol:
            break
    else:
        raise InverseFlowError(
            f"inverse flow at node {s} did not converge in {max_iter} iterations "
            f"(residual {res_prev:.2e}); flow too rough for resolution {grid.resolution}")
    check = float(np.max(np.abs(y + interp(y)[:N] - x)))
    if check > inv_tol:
        raise InverseFlowError(f"node {s}: |phi(phi^-1(x)) - x| = {check:.2e} > {inv_tol:g}")
    return y - x


def invert_flow(flow: FlowMap, tol: float = 1e-12, max_iter: int = 100,
                inv_tol: float = 1e-8) -> FlowMap:
    """Return a copy of ``flow`` with inverse displacements at every node.

    Each node starts from the previous node's inverse.
    """
    inv = np.empty_like(flow.forward)
    guess = None
    for s in range(flow.steps + 1):
        guess = inverse_at(flow, s, guess, tol=tol, max_iter=max_iter, inv_tol=inv_tol)
        inv[s] = guess
    return FlowMap(flow.grid, flow.times, flow.forward, inv, flow.interp, flow.path, flow.fields)


def composite_error(flow: FlowMap, s: int) -> float:
    """``sup |phi(phi^{-1}(x)) - x|`` at node ``s``."""
    grid = flow.grid
    y = flow.inverse_points(s)
    interp = Interpolant(grid, flow.forward[s], mode=flow.interp)
    return float(np.max(np.abs(y + interp(y) - grid.coords)))


# --------------------------------------------------------------------------
# derived quantities


def transform_matrix(flow: FlowMap, s: int, method: str = "compose") -> TensorField:
    """Coefficient matrix ``A_ij(x) = d_j (phi^{-1})_i (phi(x))``.

    ``method="compose"`` differentiates the inverse map and composes with
    ``phi``; ``"inverse_jacobian"`` inverts ``grad phi`` pointwise instead.
    """
    key = (s, method)
    if key in flow._A_cache:
        return flow._A_cache[key]
    grid = flow.grid
    N = grid.dim
    eye = np.eye(N).reshape((N, N) + (1,) * N)
    if method == "compose":
        e = flow.inverse_points(s) - grid.coords
        grad = np.moveaxis(grid.grad(e), 0, 1).reshape((N * N,) + grid.shape)
        vals = Interpolant(grid, grad, mode=flow.interp)(flow.points(s))
        A = eye + vals.reshape((N, N) + grid.shape)
    elif method == "inverse_jacobian":
        J = eye + np.moveaxis(grid.grad(flow.forward[s]), 0, 1)
        Jm = np.moveaxis(J.reshape(N, N, -1), 2, 0)
        A = np.moveaxis(np.linalg.inv(Jm), 0, 2).reshape((N, N) + grid.shape)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = TensorField(grid, A)
    if len(flow._A_cache) >= 8:
        flow._A_cache.pop(next(iter(flow._A_cache)))
    flow._A_cache[key] = out
    return out


def jacobian(flow: FlowMap, s: int) -> ScalarField:
    """``det grad phi`` at node ``s`` (identically one for exact solenoidal flows)."""
    grid = flow.grid
    N = grid.dim
    J = np.eye(N).reshape((N, N) + (1,) * N) + np.moveaxis(grid.grad(flow.forward[s]), 0, 1)
    return ScalarField(grid, np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1))))


def _c2_stack(grid, d):
    """Displacement and its first two derivatives, flattened per node."""
    g1 = grid.grad(d)
    g2 = grid.grad(g1)
    return [d.ravel(), g1.ravel(), g2.ravel()]


def _holder(grid, disp, times, alpha, eye_flat):
    stacks = [_c2_stack(grid, d) for d in disp]
    parts = [np.stack([st[i] for st in stacks]) for i in range(3)]
    sup = max(
        float(np.max(np.abs(parts[0][n])) + np.max(np.abs(parts[1][n] + eye_flat))
              + np.max(np.abs(parts[2][n])))
        for n in range(len(disp)))
    semi = 0.0
    for i in range(len(disp) - 1):
        dt = np.abs(times[i + 1:] - times[i]) ** alpha
        c2 = sum(np.max(np.abs(p[i + 1:] - p[i]), axis=1) for p in parts)
        semi = max(semi, float(np.max(c2 / dt)))
    return sup + semi


def holder_norm(flow: FlowMap, alpha: float = 0.25, max_nodes: int = 65) -> float:
    """Discrete ``C^alpha([0,T]; C^2)`` norm of phi and phi^{-1} (the larger).

    Time-Hoelder seminorm over node pairs plus the sup-in-time C^2 norm,
    where the C^2 norm of a map is ``sup|d| + sup|grad phi| + sup|grad^2 d|``
    (entrywise).  At most ``max_nodes`` evenly spaced nodes are used.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    grid = flow.grid
    N = grid.dim
    idx = np.unique(np.round(np.linspace(0, flow.steps, min(flow.steps + 1, max_nodes))).astype(int))
    eye_flat = np.broadcast_to(np.eye(N).reshape((N, N) + (1,) * N),
                               (N, N) + grid.shape).ravel()
    L = _holder(grid, flow.forward[idx], flow.times[idx], alpha, eye_flat)
    if flow.has_inverse:
        L = max(L, _holder(grid, flow.inverse[idx], flow.times[idx], alpha, eye_flat))
    return L


def integral_defect(flow: FlowMap, s: int, f: ScalarField) -> float:
    """``|int f(phi) dx - int f dx|``; small for measure-preserving flows."""
    grid = flow.grid
    composed = f.interpolant(flow.points(s))[0] if flow.interp == "trig" else \
        Interpolant(grid, f.values[None], mode=flow.interp)(flow.points(s))[0]
    return abs(float(grid.integrate(composed) - grid.integrate(f.values)))
