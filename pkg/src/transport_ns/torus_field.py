"""Periodic fields on the flat torus [0, 2*pi)^N with spectral calculus.

All wavenumbers are integers because the period is fixed to 2*pi.  Odd
derivatives drop the Nyquist mode so that ``divergence(gradient(f))`` is
exactly the spectral Laplacian and discrete integration by parts holds
without remainder.
"""
from __future__ import annotations

from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import ndimage

INTERP_MODES = ("trig", "cubic")


class FieldError(ValueError):
    """Invalid field data or a violated operator precondition."""


class MeanViolation(FieldError):
    """Raised when an elliptic solve receives data with non-zero mean."""


class TorusGrid:
    """Uniform grid with ``resolution`` nodes per axis on the ``dim``-torus."""

    def __init__(self, dim: int, resolution: int):
        if dim not in (2, 3):
            raise FieldError(f"dim must be 2 or 3, got {dim}")
        if resolution < 8 or resolution & (resolution - 1):
            raise FieldError(f"resolution must be a power of two >= 8, got {resolution}")
        self.dim = int(dim)
        self.resolution = int(resolution)

    def __repr__(self):
        return f"TorusGrid(dim={self.dim}, resolution={self.resolution})"

    def __eq__(self, other):
        return (isinstance(other, TorusGrid) and self.dim == other.dim
                and self.resolution == other.resolution)

    def __hash__(self):
        return hash((self.dim, self.resolution))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.resolution

    @property
    def volume(self) -> float:
        return (2 * np.pi) ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, M, ..., M)``; x_j = 2*pi*j/M."""
        x = np.arange(self.resolution) * self.spacing
        out = np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))
        out.flags.writeable = False
        return out

    # --- spectral machinery (real FFT over the last ``dim`` axes) ---------

    @cached_property
    def _k_full(self) -> tuple[np.ndarray, ...]:
        M = self.resolution
        ks = []
        for ax in range(self.dim):
            k = np.fft.rfftfreq(M, 1.0 / M) if ax == self.dim - 1 else np.fft.fftfreq(M, 1.0 / M)
            shape = [1] * self.dim
            shape[ax] = k.size
            ks.append(k.reshape(shape))
        return tuple(ks)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Derivative wavenumbers with the Nyquist mode removed."""
        M = self.resolution
        return tuple(np.where(np.abs(k) == M // 2, 0.0, k) for k in self._k_full)

    @cached_property
    def k2(self) -> np.ndarray:
        """Symbol of -Laplacian, consistent with ``div(grad)``."""
        return sum(k * k for k in self.wavenumbers)

    @cached_property
    def k2_full(self) -> np.ndarray:
        return sum(k * k for k in self._k_full)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        k2 = self.k2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask in the rfft layout."""
        cut = self.resolution // 3
        mask = np.ones(self.k2.shape, dtype=bool)
        for k in self._k_full:
            mask &= np.abs(k) <= cut
        return mask

    def fft(self, a):
        return np.fft.rfftn(a, axes=self.axes)

    def ifft(self, c):
        return np.fft.irfftn(c, s=self.shape, axes=self.axes)

    def grad(self, a):
        """Gradient along a new leading axis: ``a[...]`` -> ``out[j, ...]``."""
        c = self.fft(a)
        return np.stack([self.ifft(1j * k * c) for k in self.wavenumbers])

    def div(self, a):
        """Contract the leading component axis of ``a`` with the gradient."""
        if a.shape[0] != self.dim:
            raise FieldError("leading axis must hold dim components")
        c = sum(1j * k * self.fft(a[j]) for j, k in enumerate(self.wavenumbers))
        return self.ifft(c)

    def lap(self, a):
        return self.ifft(-self.k2 * self.fft(a))

    def inv_lap(self, a):
        """Mean-zero solution of -Lap u = a - mean(a)."""
        return self.ifft(self.inv_k2 * self.fft(a))

    def mollify(self, a, length: float):
        if length == 0:
            return np.array(a, dtype=float)
        return self.ifft(np.exp(-0.5 * length ** 2 * self.k2_full) * self.fft(a))

    def dealias(self, a):
        return self.ifft(self.dealias_mask * self.fft(a))

    def integrate(self, a):
        """Trapezoid rule over the last ``dim`` axes (spectrally exact)."""
        return np.sum(a, axis=self.axes) * self.cell_volume

    def mean(self, a):
        return np.mean(a, axis=self.axes)


# --------------------------------------------------------------------------
# fields


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise FieldError("field values must be finite")


class _Field:
    rank = 0

    def __init__(self, grid: TorusGrid, values):
        values = np.array(values, dtype=float)
        expected = (grid.dim,) * self.rank + grid.shape
        if values.shape != expected:
            raise FieldError(f"{type(self).__name__} expects shape {expected}, got {values.shape}")
        _check_finite(values)
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"{type(self).__name__}({self.grid!r})"

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Cached real-FFT coefficients of every component."""
        c = self.grid.fft(self.values)
        c.flags.writeable = False
        return c

    @cached_property
    def interpolant(self) -> Interpolant:
        return Interpolant(self.grid, self.values.reshape((-1,) + self.grid.shape))

    def _like(self, values):
        return type(self)(self.grid, values)

    def __add__(self, other):
        return self._like(self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._like(self.values - _vals(other))

    def __rsub__(self, other):
        return self._like(_vals(other) - self.values)

    def __neg__(self):
        return self._like(-self.values)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return self._like(self.values * other.values)
        return self._like(self.values * float(other))

    __rmul__ = __mul__

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2(self) -> float:
        """Continuous L2 norm approximated by the trapezoid rule."""
        sq = self.values ** 2
        return float(np.sqrt(np.sum(sq) * self.grid.cell_volume))


def _vals(x):
    return x.values if isinstance(x, _Field) else x


class ScalarField(_Field):
    rank = 0


class VectorField(_Field):
    rank = 1


class TensorField(_Field):
    rank = 2


def field_of_rank(grid: TorusGrid, values) -> _Field:
    """Wrap ``values`` in the field class its shape implies."""
    rank = np.ndim(values) - grid.dim
    return {0: ScalarField, 1: VectorField, 2: TensorField}[rank](grid, values)


def from_function(grid: TorusGrid, fn) -> _Field:
    """Sample ``fn(*coords)`` on the grid."""
    return field_of_rank(grid, np.asarray(fn(*grid.coords), dtype=float))


# --------------------------------------------------------------------------
# spectral derivatives, quadrature


class Derivatives(NamedTuple):
    gradient: _Field
    divergence: ScalarField | None


def gradient(f: ScalarField | VectorField):
    """Spectral gradient; for a vector ``u`` returns ``T[i, j] = d_j u_i``."""
    g = f.grid
    values = g.grad(f.values)
    if isinstance(f, VectorField):
        values = np.moveaxis(values, 0, 1)
        return TensorField(g, values)
    return VectorField(g, values)


def divergence(u: VectorField | TensorField):
    """Divergence of a vector, or row-wise divergence of a tensor."""
    g = u.grid
    if isinstance(u, TensorField):
        return VectorField(g, np.stack([g.div(u.values[i]) for i in range(g.dim)]))
    return ScalarField(g, g.div(u.values))


def laplacian(f: ScalarField | VectorField):
    return f._like(f.grid.lap(f.values))


def spectral_derivatives(f: ScalarField | VectorField) -> Derivatives:
    """Gradient of ``f`` and, for vector input, its divergence."""
    grad = gradient(f)
    div = divergence(f) if isinstance(f, VectorField) else None
    return Derivatives(grad, div)


def integrate(f: ScalarField) -> float:
    """Integral over the torus: (2*pi)^N times the node mean."""
    return float(f.grid.integrate(f.values))


def inner(f: _Field, g: _Field) -> float:
    """L2 pairing of two fields of equal rank (full contraction)."""
    prod = f.values * g.values
    return float(np.sum(prod) * f.grid.cell_volume)


def mollify(f: _Field, length: float):
    """Periodic Gaussian smoothing: mode k is scaled by exp(-l^2 |k|^2 / 2)."""
    if not length > 0:
        raise FieldError(f"mollification radius must be positive, got {length}")
    return f._like(f.grid.mollify(f.values, length))


def inv_laplace(f: ScalarField, mean_tol: float = 1e-10) -> ScalarField:
    """Mean-zero ``u`` with ``-Lap u = f``; ``f`` must have (near) zero integral."""
    scale = max(f.sup(), np.finfo(float).tiny)
    if abs(integrate(f)) > mean_tol * scale:
        raise MeanViolation(f"integral {integrate(f):.3e} exceeds {mean_tol:g} * sup|f|")
    return ScalarField(f.grid, f.grid.inv_lap(f.values))


# --------------------------------------------------------------------------
# evaluation off the grid


class Interpolant:
    """Evaluate periodic grid data at arbitrary points.

    ``values`` has shape ``(C, M, ..., M)``.  The trigonometric scheme sums
    the Fourier series of the interpolating trigonometric polynomial (the
    Nyquist mode split symmetrically), skipping modes whose magnitude is
    below ``prune_tol`` times the largest one; band-limited data with few
    modes is therefore evaluated at the cost of a direct series sum.  The
    cubic scheme uses periodic B-splines.
    """

    def __init__(self, grid: TorusGrid, values, mode: str = "trig", prune_tol: float = 1e-14):
        if mode not in INTERP_MODES:
            raise FieldError(f"unknown interpolation mode {mode!r}")
        self.grid = grid
        self.mode = mode
        values = np.asarray(values, dtype=float)
        self.ncomp = values.shape[0]
        if mode == "cubic":
            self._spline = np.stack([
                ndimage.spline_filter(v, order=3, mode="grid-wrap") for v in values])
            return
        M, N = grid.resolution, grid.dim
        c = np.fft.fftshift(np.fft.fftn(values, axes=grid.axes), axes=grid.axes) / M ** N
        for ax in range(1, N + 1):
            c = np.concatenate([c, np.take(c, [0], axis=ax)], axis=ax)
            idx = [slice(None)] * c.ndim
            for end in (0, M):
                idx[ax] = end
                c[tuple(idx)] *= 0.5
        self._k = np.arange(-M // 2, M // 2 + 1)
        mag = np.max(np.abs(c), axis=0)
        keep = mag > prune_tol * max(mag.max(), np.finfo(float).tiny)
        self._nmodes = int(keep.sum())
        if self._nmodes <= (M + 1) ** (N - 1):
            idx = np.nonzero(keep)
            self._mode_idx = np.stack(idx)
            self._mode_coef = c[(slice(None),) + idx]
            self._axis_modes = [np.unique(self._k[i], return_inverse=True) for i in idx]
            self._dense = None
        else:
            self._dense = c

    @property
    def nmodes(self) -> int:
        return getattr(self, "_nmodes", -1)

    def __call__(self, points, chunk: int = 8192) -> np.ndarray:
        """Values at ``points`` of shape ``(N, ...)``; returns ``(C, ...)``."""
        points = np.asarray(points, dtype=float)
        if not np.all(np.isfinite(points)):
            raise FieldError("interpolation points must be finite")
        N = self.grid.dim
        pshape = points.shape[1:]
        flat = points.reshape(N, -1)
        out = np.empty((self.ncomp, flat.shape[1]))
        for start in range(0, flat.shape[1], chunk):
            sl = slice(start, start + chunk)
            out[:, sl] = self._eval(flat[:, sl])
        return out.reshape((self.ncomp,) + pshape)

    def _eval(self, pts):
        if self.mode == "cubic":
            idx = np.mod(pts, 2 * np.pi) / self.grid.spacing
            return np.stack([
                ndimage.map_coordinates(s, idx, order=3, mode="grid-wrap", prefilter=False)
                for s in self._spline])
        if self._dense is None:
            prod = None
            for d, p in enumerate(pts):
                ku, inv = self._axis_modes[d]
                e = np.exp(1j * np.outer(p, ku))[:, inv]
                prod = e if prod is None else prod * e
            return (prod @ self._mode_coef.T).real.T
        # powers of exp(i p) by recurrence: cheaper than M exponentials per point
        E = []
        for p in pts:
            e = np.empty((p.size, self._k.size), dtype=complex)
            half = self._k.size // 2
            e[:, half] = 1.0
            step = np.exp(1j * p)
            for j in range(1, half + 1):
                e[:, half + j] = e[:, half + j - 1] * step
            e[:, :half] = np.conj(e[:, :half:-1])
            E.append(e)
        c = self._dense
        if len(E) == 2:
            out = np.empty((self.ncomp, pts.shape[1]))
            for q in range(self.ncomp):
                G = E[1] @ c[q].T
                out[q] = np.sum(E[0] * G, axis=1).real
            return out
        out = np.empty((self.ncomp, pts.shape[1]))
        for q in range(self.ncomp):
            H = np.einsum("abc,pc->pab", c[q], E[2], optimize=True)
            H = np.einsum("pab,pb->pa", H, E[1])
            out[q] = np.sum(H * E[0], axis=1).real
        return out


def compose(f: _Field, points: VectorField | np.ndarray, interp: str = "trig") -> _Field:
    """Evaluate ``f`` at the point-valued map ``points`` (values taken mod 2*pi)."""
    grid = f.grid
    pts = points.values if isinstance(points, VectorField) else np.asarray(points, dtype=float)
    if pts.shape != (grid.dim,) + grid.shape:
        raise FieldError("map must be a point-valued field on the same grid")
    interpolant = f.interpolant if interp == "trig" else Interpolant(
        grid, f.values.reshape((-1,) + grid.shape), mode=interp)
    out = interpolant(pts)
    return f._like(out.reshape(f.values.shape))
