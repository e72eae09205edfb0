"""K-channel Wiener paths on a uniform time grid, with Brownian-bridge refinement.

Every channel draws from its own counter-based Philox stream keyed by
``(seed, channel)``, so a channel's increments do not depend on how many
other channels exist or in which order paths are sampled.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def _stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Increments ``dW[k, s]`` of K independent Brownian motions.

    ``values`` are the cumulative sums with ``W[k, 0] = 0``.
    """

    increments: np.ndarray
    horizon: float
    seed: int
    level: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] < 1:
            raise ValueError("increments must have shape (K, S) with S >= 1")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def channels(self) -> int:
        return self.increments.shape[0]

    @property
    def steps(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def values(self) -> np.ndarray:
        W = np.zeros((self.channels, self.steps + 1))
        np.cumsum(self.increments, axis=1, out=W[:, 1:])
        return W

    def restrict(self, start: int, stop: int) -> WienerPath:
        """Increments for steps ``start..stop-1`` as a path on [0, (stop-start) dt]."""
        if not 0 <= start < stop <= self.steps:
            raise ValueError("invalid step range")
        return WienerPath(self.increments[:, start:stop], (stop - start) * self.dt,
                          self.seed, self.level)

    def to_csv(self, path) -> None:
        W = self.values
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"W{k + 1}" for k in range(self.channels)])
            for s, t in enumerate(self.times):
                writer.writerow([repr(float(t))] + [repr(float(w)) for w in W[:, s]])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> WienerPath:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, W = data[:, 0], data[:, 1:].T
        return cls(np.diff(W, axis=1), float(t[-1]), seed)


def sample_path(K: int, T: float, S: int, seed: int) -> WienerPath:
    """Sample a K-channel Wiener path with S steps on [0, T]."""
    if K < 1 or S < 1 or not T > 0:
        raise ValueError(f"need K >= 1, S >= 1, T > 0 (got K={K}, S={S}, T={T})")
    dt = T / S
    inc = np.stack([_stream(seed, k).normal(0.0, np.sqrt(dt), size=S) for k in range(K)])
    return WienerPath(inc, float(T), int(seed))


def refine(path: WienerPath, zero_bridge: bool = False) -> WienerPath:
    """Insert Brownian-bridge midpoints, doubling the number of steps.

    The midpoint of each coarse step deviates from the linear interpolant by
    an independent N(0, dt/4) draw; the second fine increment is the coarse
    increment minus the first, so coarse node values are reproduced up to
    floating-point rounding of that one subtraction.
    """
    K, S = path.increments.shape
    sigma = 0.5 * np.sqrt(path.dt)
    if zero_bridge:
        z = np.zeros((K, S))
    else:
        z = np.stack([_stream(path.seed, k, 1, path.level + 1).normal(0.0, sigma, size=S)
                      for k in range(K)])
    first = 0.5 * path.increments + z
    second = path.increments - first
    fine = np.empty((K, 2 * S))
    fine[:, 0::2] = first
    fine[:, 1::2] = second
    return WienerPath(fine, path.horizon, path.seed, path.level + 1)
