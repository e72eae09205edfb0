"""Operators in flow coordinates and the elliptic solves built on them.

With ``A_ij = d_j (phi^{-1})_i o phi`` the transformed gradient of a scalar
is ``(grad^phi f)_i = A_li d_l f`` and the transformed divergence of a vector
is ``div(A u)`` with ``(A u)_l = A_lj u_j``.  The conjugation forms
``[grad(f o phi^{-1})] o phi`` and ``[div(u o phi^{-1})] o phi`` are kept
for cross-checks; they need the map and its inverse.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .params import LayerParams, pressure_delta
from .torus_field import (
    FieldError,
    Interpolant,
    MeanViolation,
    ScalarField,
    TensorField,
    TorusGrid,
    VectorField,
    inv_laplace,
)


class OperatorError(ArithmeticError):
    """An operator identity failed its tolerance (usually under-resolution)."""


class TransformedOpContext:
    """Frozen coefficient matrix ``A`` (and optionally the maps) at one time node."""

    def __init__(self, grid: TorusGrid, A, forward=None, inverse=None, interp: str = "trig",
                 s: int | None = None, flow=None):
        self.grid = grid
        A = A.values if isinstance(A, TensorField) else np.asarray(A, dtype=float)
        if A.shape != (grid.dim, grid.dim) + grid.shape:
            raise FieldError(f"A must have shape {(grid.dim, grid.dim) + grid.shape}")
        if not np.all(np.isfinite(A)):
            raise FieldError("A contains non-finite values")
        self.A = np.array(A)
        self.A.flags.writeable = False
        self.forward = forward
        self.inverse = inverse
        self.interp = interp
        self.s = s
        self.flow = flow

    @classmethod
    def from_flow(cls, flow, s: int, method: str = "compose") -> TransformedOpContext:
        from .flow import transform_matrix

        A = transform_matrix(flow, s, method)
        inverse = flow.inverse[s] if flow.has_inverse else None
        return cls(flow.grid, A, flow.forward[s], inverse, flow.interp, s, flow)

    @classmethod
    def identity(cls, grid: TorusGrid) -> TransformedOpContext:
        z = np.zeros((grid.dim,) + grid.shape)
        eye = np.broadcast_to(np.eye(grid.dim).reshape((grid.dim,) * 2 + (1,) * grid.dim),
                              (grid.dim, grid.dim) + grid.shape)
        return cls(grid, eye, z, z)

    @property
    def has_maps(self) -> bool:
        return self.forward is not None and self.inverse is not None

    def _compose(self, values, displacement):
        if displacement is None:
            raise FieldError("conjugation form needs the forward and inverse maps")
        g = self.grid
        flat = values.reshape((-1,) + g.shape)
        out = Interpolant(g, flat, mode=self.interp)(g.coords + displacement)
        return out.reshape(values.shape)

    def pull(self, values):
        """``f o phi^{-1}`` (reference coordinates)."""
        return self._compose(values, self.inverse)

    def push(self, values):
        """``f o phi``."""
        return self._compose(values, self.forward)

    # array kernels -------------------------------------------------------

    def grad_a(self, a):
        """Transformed gradient of an array of rank r -> rank r + 1 (last index new)."""
        g = self.grid.grad(a)  # (l, *comp, ...)
        rank = a.ndim - self.grid.dim
        sub = "abc"[:rank]
        return np.einsum(f"l{sub}...,li...->{sub}i...", g, self.A)

    def div_a(self, a):
        """Transformed divergence contracting the last component index."""
        rank = a.ndim - self.grid.dim
        sub = "abc"[:rank - 1]
        flux = np.einsum(f"lj...,{sub}j...->l{sub}...", self.A, a)
        return self.grid.div(flux)


def _values(f):
    return f.values if hasattr(f, "values") else np.asarray(f, dtype=float)


def grad_phi(ctx: TransformedOpContext, f, form: str = "A"):
    """``grad^phi`` of a scalar (-> vector) or vector (-> tensor, ``[i, j] = d^phi_j f_i``)."""
    a = _values(f)
    if form == "A":
        out = ctx.grad_a(a)
    elif form == "conj":
        g = ctx.grid.grad(ctx.pull(a))
        out = ctx.push(np.moveaxis(g, 0, -1 - ctx.grid.dim))
    else:
        raise ValueError(f"unknown form {form!r}")
    cls = VectorField if a.ndim == ctx.grid.dim else TensorField
    return cls(ctx.grid, out)


def div_phi(ctx: TransformedOpContext, u, form: str = "A"):
    """``div^phi`` of a vector (-> scalar) or row-wise of a tensor (-> vector)."""
    a = _values(u)
    if form == "A":
        out = ctx.div_a(a)
    elif form == "conj":
        out = ctx.push(ctx.grid.div(np.moveaxis(ctx.pull(a), -1 - ctx.grid.dim, 0)))
    else:
        raise ValueError(f"unknown form {form!r}")
    cls = ScalarField if out.ndim == ctx.grid.dim else VectorField
    return cls(ctx.grid, out)


def laplace_phi(ctx: TransformedOpContext, f, form: str = "A") -> ScalarField:
    a = _values(f)
    if form == "A":
        return ScalarField(ctx.grid, ctx.div_a(ctx.grad_a(a)))
    if form == "conj":
        return ScalarField(ctx.grid, ctx.push(ctx.grid.lap(ctx.pull(a))))
    raise ValueError(f"unknown form {form!r}")


def inv_laplace_phi(ctx: TransformedOpContext, f, mean_tol: float = 1e-10,
                    res_tol: float = 1e-8) -> ScalarField:
    """Mean-zero-data solve of ``-Delta^phi u = f - mean f`` by conjugation.

    ``u = [(-Delta)^{-1}(f o phi^{-1} - mean)] o phi``; the identity flow
    skips both compositions.  When the A-form residual exceeds ``res_tol``
    (relative to ``sup|f - mean|``), as it does for maps that are only
    approximately volume preserving, the result seeds a conjugate-gradient
    solve of the A-form equation; a residual still above tolerance raises.
    """
    g = ctx.grid
    a = _values(f)
    total = g.integrate(a)
    if abs(total) > mean_tol * max(float(np.max(np.abs(a))), 1e-300):
        raise MeanViolation(f"inv_laplace_phi needs mean-zero data, integral is {total:.3e}")
    target = a - g.mean(a)
    if ctx.has_maps:
        ref = ctx.pull(target)
        u = ctx.push(inv_laplace(ScalarField(g, ref - g.mean(ref)), mean_tol=np.inf).values)
    else:
        u = inv_laplace(ScalarField(g, target), mean_tol=np.inf).values
    u = u - g.mean(u)
    res = float(np.max(np.abs(-ctx.div_a(ctx.grad_a(u)) - target)))
    scale = max(float(np.max(np.abs(target))), 1e-300)
    if res > res_tol * scale:
        # the conjugation solve is exact only for volume-preserving maps; refine on the A-form
        u = _refine_a_form(ctx, target, u)
        res = float(np.max(np.abs(-ctx.div_a(ctx.grad_a(u)) - target)))
    if res > res_tol * scale:
        raise OperatorError(f"inverse transformed Laplacian residual {res / scale:.2e} > {res_tol:g}")
    return ScalarField(g, u)


def _refine_a_form(ctx: TransformedOpContext, target, u0, rtol: float = 1e-13, maxiter: int = 500):
    """Conjugate gradients on ``-div(A A^T grad u) = target`` (symmetric on mean-zero data)."""
    g = ctx.grid
    shape = g.shape
    # the operator's kernel: modes whose (Nyquist-zeroed) wavenumbers all vanish
    live = g.k2 != 0
    b = g.ifft(g.fft(target) * live).ravel()

    def apply(x):
        return -ctx.div_a(ctx.grad_a(x.reshape(shape))).ravel()

    def precond(r):
        return g.inv_lap(g.ifft(g.fft(r.reshape(shape)) * live)).ravel()

    n = b.size
    x, _ = cg(LinearOperator((n, n), matvec=apply, dtype=float), b, x0=u0.ravel(), rtol=rtol,
              maxiter=maxiter, M=LinearOperator((n, n), matvec=precond, dtype=float))
    x = x.reshape(shape)
    return x - g.mean(x)


def bogovskii_phi(ctx: TransformedOpContext, eta, m0: float, mass_tol: float = 1e-8,
                  res_tol: float = 1e-8) -> VectorField:
    """``Phi = -grad^phi (-Delta^phi)^{-1} (eta - m0)`` with ``m0`` the mean density.

    Solves ``div^phi Phi = eta - m0``.
    """
    g = ctx.grid
    a = _values(eta)
    mean = g.mean(a)
    if abs(mean - m0) > mass_tol * max(1.0, abs(m0)):
        raise FieldError(f"mean density {mean:.12g} does not match m0 = {m0:.12g}")
    target = a - m0
    if np.max(np.abs(target)) == 0.0:
        return VectorField(g, np.zeros((g.dim,) + g.shape))
    u = inv_laplace_phi(ctx, ScalarField(g, target - mean + m0), mean_tol=np.inf, res_tol=res_tol)
    Phi = -ctx.grad_a(u.values)
    res = float(np.max(np.abs(ctx.div_a(Phi) - target)))
    if res > res_tol * float(np.max(np.abs(target))) + abs(mean - m0):
        raise OperatorError(f"Bogovskii residual {res:.2e} above tolerance")
    return VectorField(g, Phi)


def stress_a(G, mu: float, lam: float):
    """Newtonian stress ``mu (G + G^T) + lam tr(G) I`` of a gradient array."""
    N = G.shape[0]
    S = mu * (G + np.swapaxes(G, 0, 1))
    tr = np.trace(G, axis1=0, axis2=1)
    for i in range(N):
        S[i, i] += lam * tr
    return S


def stress_phi(ctx: TransformedOpContext, v, mu: float, lam: float) -> TensorField:
    """Stress tensor of the transformed velocity gradient."""
    if not (mu > 0 and lam > 0):
        raise ValueError("viscosities must satisfy mu > 0, lambda > 0")
    return TensorField(ctx.grid, stress_a(ctx.grad_a(_values(v)), mu, lam))


def effective_viscous_flux(ctx: TransformedOpContext, state, params: LayerParams) -> ScalarField:
    """``(lambda + 2 mu) div^phi v - p_delta(eta)``."""
    div = ctx.div_a(_values(state.v))
    p = pressure_delta(state.eta, params).values
    return ScalarField(ctx.grid, (params.lam + 2 * params.mu) * div - p)


def dissipation(ctx: TransformedOpContext, v, mu: float, lam: float) -> float:
    """``int S(grad^phi v) : grad^phi v dx`` (nonnegative)."""
    G = ctx.grad_a(_values(v))
    return float(ctx.grid.integrate(np.sum(stress_a(G, mu, lam) * G, axis=(0, 1))))


def duality_defect(ctx: TransformedOpContext, f, u) -> float:
    """``|int f div^phi u + int grad^phi f . u|``."""
    g = ctx.grid
    a, b = _values(f), _values(u)
    return abs(float(g.integrate(a * ctx.div_a(b)) + g.integrate(np.sum(ctx.grad_a(a) * b, axis=0))))


def gradient_bound(ctx: TransformedOpContext, v) -> tuple[float, float]:
    """Return ``(||grad v||, ||grad^phi v|| * sup|grad phi|)`` in L2, Frobenius norms.

    ``grad phi`` is taken as ``A^{-1}``, so ``grad v = (grad^phi v) A^{-1}``
    holds pointwise and the first number never exceeds the second.
    """
    g = ctx.grid
    N = g.dim
    a = _values(v)
    lhs = np.sqrt(g.integrate(np.sum(g.grad(a) ** 2, axis=tuple(range(a.ndim - N + 1)))))
    Gphi = ctx.grad_a(a)
    Am = np.moveaxis(ctx.A.reshape(N, N, -1), 2, 0)
    Ainv = np.linalg.inv(Am)
    sup = float(np.max(np.sqrt(np.sum(Ainv ** 2, axis=(1, 2)))))
    phi_norm = np.sqrt(g.integrate(np.sum(Gphi ** 2, axis=tuple(range(Gphi.ndim - N)))))
    return float(lhs), float(phi_norm * sup)
