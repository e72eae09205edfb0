"""Layer parameters of the approximate system and the augmented pressure law."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .torus_field import FieldError, ScalarField


@dataclass(frozen=True)
class LayerParams:
    """Viscosities, pressure law and the three regularization layers.

    ``eps_n`` is the artificial viscosity (``1/n``), ``l`` the mollification
    radius (0 switches it off) and ``delta`` the artificial-pressure weight.
    """

    eps_n: float = 1e-2
    l: float = 0.0
    delta: float = 0.0
    Gamma: float = 4.0
    a: float = 1.0
    gamma: float = 1.4
    mu: float = 1.0
    lam: float = 1.0
    density_floor: float = 1e-8

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self, dim: int | None = None) -> list[str]:
        errs = []
        if not self.eps_n >= 0:
            errs.append("eps_n must be >= 0")
        if not self.l >= 0:
            errs.append("l must be >= 0")
        if not self.delta >= 0:
            errs.append("delta must be >= 0")
        if self.delta > 0 and not 4 <= self.Gamma < 6:
            errs.append("Gamma must lie in [4, 6) when delta > 0")
        if not self.a > 0:
            errs.append("a must be > 0")
        if not self.gamma > 1:
            errs.append("gamma must be > 1")
        if not self.mu > 0:
            errs.append("mu must be > 0")
        if not self.lam > 0:
            errs.append("lambda must be > 0")
        if not self.density_floor >= 0:
            errs.append("density_floor must be >= 0")
        return errs

    def check_dimension(self, dim: int) -> None:
        if self.gamma <= dim / 2:
            warnings.warn(f"gamma = {self.gamma} <= N/2 = {dim / 2}: outside the existence range",
                          stacklevel=2)

    def replace(self, **changes) -> LayerParams:
        return LayerParams(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)


def _density(eta):
    a = eta.values if isinstance(eta, ScalarField) else np.asarray(eta, dtype=float)
    if np.any(a < 0):
        raise FieldError("density must be nonnegative")
    return a


def _wrap(eta, a):
    return ScalarField(eta.grid, a) if isinstance(eta, ScalarField) else a


def pressure_delta(eta, params: LayerParams):
    """``a eta^gamma + delta eta^2 + delta eta^Gamma``."""
    e = _density(eta)
    p = params.a * e ** params.gamma + params.delta * (e ** 2 + e ** params.Gamma)
    return _wrap(eta, p)


def pressure_potential_delta(eta, params: LayerParams):
    """``a/(gamma-1) eta^gamma + delta eta^2 + delta/(Gamma-1) eta^Gamma``.

    Satisfies ``eta P'(eta) - P(eta) = p_delta(eta)``.
    """
    e = _density(eta)
    P = (params.a / (params.gamma - 1) * e ** params.gamma + params.delta * e ** 2
         + params.delta / (params.Gamma - 1) * e ** params.Gamma)
    return _wrap(eta, P)


def artificial_potential(eta, params: LayerParams):
    """The delta part of the potential: ``delta eta^2 + delta/(Gamma-1) eta^Gamma``."""
    e = _density(eta)
    return _wrap(eta, params.delta * (e ** 2 + e ** params.Gamma / (params.Gamma - 1)))


def potential_second_derivative(eta, params: LayerParams):
    """``P''(eta) = a gamma eta^(gamma-2) + delta Gamma eta^(Gamma-2) + 2 delta``."""
    e = _density(eta)
    with np.errstate(divide="ignore"):
        val = (params.a * params.gamma * e ** (params.gamma - 2)
               + params.delta * params.Gamma * e ** (params.Gamma - 2) + 2 * params.delta)
    return _wrap(eta, val)
