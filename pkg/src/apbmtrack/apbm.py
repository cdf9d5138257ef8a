"""Augmented physics-based transition: ``phi0 * F x + phi1 * nn(x)``.

The network is 4 -> 5 (ReLU) -> 4 (linear), both layers with bias. The
parameter vector is flattened as::

    [phi0, phi1, W1 (5x4 row-major), b1 (5), W2 (4x5 row-major), b2 (4)]

for 51 entries in total. Every function here also accepts a batch of
parameter vectors of shape ``(N, 51)`` paired with states of shape
``(N, 4)``, which is how per-cubature-point parameters are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .truth import cv_matrix

N_STATE = 4
N_HIDDEN = 5
N_THETA = 2 + N_HIDDEN * N_STATE + N_HIDDEN + N_STATE * N_HIDDEN + N_STATE

_SLICES = {
    "phi0": slice(0, 1),
    "phi1": slice(1, 2),
    "W1": slice(2, 22),
    "b1": slice(22, 27),
    "W2": slice(27, 47),
    "b2": slice(47, 51),
}


@dataclass(frozen=True)
class ApbmParams:
    phi0: float
    phi1: float
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        shapes = {"W1": (N_HIDDEN, N_STATE), "b1": (N_HIDDEN,), "W2": (N_STATE, N_HIDDEN), "b2": (N_STATE,)}
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "phi0", float(self.phi0))
        object.__setattr__(self, "phi1", float(self.phi1))

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [[self.phi0, self.phi1], self.W1.ravel(), self.b1, self.W2.ravel(), self.b2]
        )

    @classmethod
    def unflatten(cls, theta) -> "ApbmParams":
        v = np.asarray(theta, dtype=float)
        if v.shape != (N_THETA,):
            raise DimensionError(f"expected a length-{N_THETA} vector, got shape {v.shape}")
        return cls(
            phi0=v[0],
            phi1=v[1],
            W1=v[_SLICES["W1"]].reshape(N_HIDDEN, N_STATE),
            b1=v[_SLICES["b1"]],
            W2=v[_SLICES["W2"]].reshape(N_STATE, N_HIDDEN),
            b2=v[_SLICES["b2"]],
        )


THETA_BAR = np.zeros(N_THETA)
THETA_BAR[0] = 1.0
THETA_BAR.setflags(write=False)


def theta_bar() -> ApbmParams:
    """Parameters at which the APBM reduces exactly to the physics model."""
    return ApbmParams.unflatten(THETA_BAR)


def initial_theta(seed: int = 0, weight_var: float = 1e-4) -> np.ndarray:
    """Starting parameter estimate: physics model plus small random weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = THETA_BAR.copy()
    theta[_SLICES["W1"]] = rng.standard_normal(N_HIDDEN * N_STATE) * np.sqrt(weight_var)
    theta[_SLICES["W2"]] = rng.standard_normal(N_STATE * N_HIDDEN) * np.sqrt(weight_var)
    return theta


def nn_forward(x, W1, b1, W2, b2) -> np.ndarray:
    """``W2 @ relu(W1 @ x + b1) + b2``.

    Shapes: ``x (..., 4)``, ``W1 (..., 5, 4)``, ``b1 (..., 5)``,
    ``W2 (..., 4, 5)``, ``b2 (..., 4)`` with broadcastable leading dims.
    """
    x = np.asarray(x, dtype=float)
    W1, b1, W2, b2 = (np.asarray(a, dtype=float) for a in (W1, b1, W2, b2))
    if (
        x.shape[-1:] != (N_STATE,)
        or W1.shape[-2:] != (N_HIDDEN, N_STATE)
        or b1.shape[-1:] != (N_HIDDEN,)
        or W2.shape[-2:] != (N_STATE, N_HIDDEN)
        or b2.shape[-1:] != (N_STATE,)
    ):
        raise DimensionError("network parameter shapes do not match 4 -> 5 -> 4")
    hidden = np.maximum(np.einsum("...ij,...j->...i", W1, x) + b1, 0.0)
    return np.einsum("...ij,...j->...i", W2, hidden) + b2


def split_theta(theta: np.ndarray):
    """Views ``(phi0, phi1, W1, b1, W2, b2)`` of a flat ``(..., 51)`` array."""
    t = np.asarray(theta, dtype=float)
    if t.shape[-1] != N_THETA:
        raise DimensionError(f"expected trailing dimension {N_THETA}, got {t.shape}")
    lead = t.shape[:-1]
    return (
        t[..., 0],
        t[..., 1],
        t[..., _SLICES["W1"]].reshape(lead + (N_HIDDEN, N_STATE)),
        t[..., _SLICES["b1"]],
        t[..., _SLICES["W2"]].reshape(lead + (N_STATE, N_HIDDEN)),
        t[..., _SLICES["b2"]],
    )


def pbm_transition(x, Ts: float = 1.0) -> np.ndarray:
    """Physics model ``F x`` (constant velocity); batches along leading axes."""
    return np.asarray(x, dtype=float) @ cv_matrix(Ts).T


def apbm_transition(x, u, theta, Ts: float = 1.0) -> np.ndarray:
    """``phi0 F x + phi1 nn(x)``; no process noise is added.

    ``theta`` is an :class:`ApbmParams` or a flat ``(..., 51)`` array. ``u``
    is accepted for interface symmetry and ignored.
    """
    del u
    flat = theta.flatten() if isinstance(theta, ApbmParams) else theta
    phi0, phi1, W1, b1, W2, b2 = split_theta(flat)
    fx = pbm_transition(x, Ts)
    return phi0[..., None] * fx + phi1[..., None] * nn_forward(x, W1, b1, W2, b2)
