"""State-space model containers and Gaussian belief arithmetic.

Transition and measurement maps work on row-stacked batches: an ``(N, n)``
array of states goes in, an ``(N, m)`` array comes out. A single state is
the ``N = 1`` case. Batching keeps cubature propagation a handful of numpy
calls instead of a Python loop over points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, InvalidValueError

BatchMap = Callable[[np.ndarray], np.ndarray]


def symmetrize_and_repair(cov: np.ndarray) -> np.ndarray:
    """Symmetrize ``cov`` and floor its eigenvalues so it admits a Cholesky factor.

    The floor is ``1e-12 * max(1, max(diag))``. Matrices whose spectrum already
    clears the floor are returned as ``(A + A.T) / 2`` with no reconstruction,
    which makes the operation idempotent on repaired input.
    """
    a = np.asarray(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    sym = 0.5 * (a + a.T)
    if sym.size == 0:
        return sym
    floor = 1e-12 * max(1.0, float(np.max(np.diag(sym))))
    w, v = np.linalg.eigh(sym)
    if w[0] >= floor:
        return sym
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def wrap_angle(a):
    """Wrap angles to ``(-pi, pi]``. Accepts scalars or arrays."""
    arr = np.asarray(a, dtype=float)
    if np.any(np.isnan(arr)):
        raise InvalidValueError("cannot wrap NaN angle")
    out = np.pi - np.mod(np.pi - arr, 2.0 * np.pi)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian filter distribution."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean length {n}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def repaired(self) -> "GaussianBelief":
        return GaussianBelief(self.mean, symmetrize_and_repair(self.cov))


@dataclass(frozen=True)
class TransitionModel:
    """Deterministic dynamics ``x -> f(x)`` plus additive noise covariance ``Q``."""

    dim_state: int
    transition: BatchMap
    process_noise_cov: np.ndarray

    def __post_init__(self):
        q = np.array(self.process_noise_cov, dtype=float)
        if q.shape != (self.dim_state, self.dim_state):
            raise DimensionError(f"Q has shape {q.shape}, expected {(self.dim_state,) * 2}")
        q.setflags(write=False)
        object.__setattr__(self, "process_noise_cov", q)


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement map ``h``, noise covariance ``R`` and the angular-output mask."""

    dim_meas: int
    measure: BatchMap
    meas_noise_cov: np.ndarray
    angular_mask: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        r = np.array(self.meas_noise_cov, dtype=float)
        if r.shape != (self.dim_meas, self.dim_meas):
            raise DimensionError(f"R has shape {r.shape}, expected {(self.dim_meas,) * 2}")
        r.setflags(write=False)
        object.__setattr__(self, "meas_noise_cov", r)
        mask = tuple(bool(b) for b in self.angular_mask) or (False,) * self.dim_meas
        if len(mask) != self.dim_meas:
            raise DimensionError("angular_mask length must equal dim_meas")
        object.__setattr__(self, "angular_mask", mask)

    @property
    def angular_index(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.angular_mask, dtype=bool))
