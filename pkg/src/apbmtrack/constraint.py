"""State-space augmentation control: deviation metrics and the kappa projection.

The APBM transition is kept inside a weighted ball around the physics model by
pulling the parameter vector toward ``THETA_BAR`` along the segment
``theta(kappa) = kappa * theta + (1 - kappa) * THETA_BAR``. For each cubature
point the largest ``kappa`` in ``(0, 1]`` that meets the ball boundary is
found; the smallest of those is then applied to every point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .apbm import N_THETA, THETA_BAR, ApbmParams, apbm_transition, pbm_transition
from .ckf import CubatureSet
from .errors import DomainError, InvalidValueError, InvariantViolation, NumericalError

log = logging.getLogger(__name__)

KINDS = ("SSA", "SSR", "none")
MIN_EPSILON = 1e-12
KAPPA_GRID = np.linspace(1.0, 0.0, 33)
KAPPA_WIDTH = 1e-10
SSR_MIN_DENOM = 1e-30

FULL_SELECTION = (0, 1, 2, 3)
VELOCITY_SELECTION = (1, 3)


def _is_singular(a: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    return bool(w[0] <= 1e-12 * max(abs(w[-1]), np.finfo(float).tiny))


def default_reg_lambda(Q_pbm, selection) -> float:
    """Zero for a nonsingular selected sub-block of ``Q_pbm``, ``1e-8 * trace / s`` otherwise."""
    idx = list(selection)
    sub = np.asarray(Q_pbm, dtype=float)[np.ix_(idx, idx)]
    if not _is_singular(sub):
        return 0.0
    lam = 1e-8 * float(np.trace(sub)) / len(idx)
    log.info("Q_pbm sub-block over %s is singular; regularizing with lambda=%.3g", idx, lam)
    return lam


def build_sigma(Q_pbm, selection, reg_lambda: float = 0.0) -> np.ndarray:
    """Weight matrix ``(D Q D^T + reg_lambda I)^-1`` over the selected components."""
    if reg_lambda < 0:
        raise InvalidValueError("reg_lambda must be nonnegative")
    idx = list(selection)
    sub = np.asarray(Q_pbm, dtype=float)[np.ix_(idx, idx)]
    reg = sub + reg_lambda * np.eye(len(idx))
    if _is_singular(reg):
        raise NumericalError(
            f"Q_pbm sub-block over {idx} is singular; use a larger reg_lambda", matrix=reg
        )
    sigma = np.linalg.inv(reg)
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str = "SSA"
    epsilon: float = 1.0
    selection: tuple[int, ...] = FULL_SELECTION
    sigma: np.ndarray = field(default_factory=lambda: np.eye(4))
    reg_lambda: float = 0.0
    metric_root: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidValueError(f"constraint kind must be one of {KINDS}")
        sel = tuple(int(i) for i in self.selection)
        if len(set(sel)) != len(sel) or any(i < 0 or i > 3 for i in sel) or not sel:
            raise InvalidValueError(f"invalid selection {self.selection}")
        object.__setattr__(self, "selection", sel)
        if self.kind != "none" and not self.epsilon >= MIN_EPSILON:
            raise InvalidValueError(f"epsilon must be >= {MIN_EPSILON}, got {self.epsilon}")
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (len(sel), len(sel)):
            raise InvalidValueError(f"sigma shape {sigma.shape} does not match selection size {len(sel)}")
        if not np.allclose(sigma, sigma.T) or np.linalg.eigvalsh(sigma)[0] < -1e-9 * np.abs(sigma).max():
            raise InvalidValueError("sigma must be symmetric positive semidefinite")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_q_pbm(cls, Q_pbm, kind="SSA", epsilon=1.0, selection=FULL_SELECTION,
                   reg_lambda=None, metric_root=False) -> "ConstraintSpec":
        """Build the spec with ``Sigma`` derived from ``Q_pbm``; ``reg_lambda=None`` picks the default."""
        if reg_lambda is None:
            reg_lambda = default_reg_lambda(Q_pbm, selection)
        sigma = build_sigma(Q_pbm, selection, reg_lambda)
        return cls(kind, epsilon, tuple(selection), sigma, reg_lambda, metric_root)


def rho_ss(f_apbm_val, f_pbm_val, spec: ConstraintSpec):
    """Weighted deviation ``d^T Sigma d`` (SSA) or its ratio to ``f_pbm^T Sigma f_pbm`` (SSR).

    Inputs may be single 4-vectors or ``(N, 4)`` batches.
    """
    if spec.kind == "none":
        raise DomainError("rho_ss is undefined for constraint kind 'none'")
    fa = np.asarray(f_apbm_val, dtype=float)
    fp = np.asarray(f_pbm_val, dtype=float)
    sel = list(spec.selection)
    delta = fa[..., sel] - fp[..., sel]
    num = np.einsum("...i,ij,...j->...", delta, spec.sigma, delta)
    if spec.kind == "SSA":
        rho = num
    else:
        base = fp[..., sel]
        den = np.einsum("...i,ij,...j->...", base, spec.sigma, base)
        if np.any(den < SSR_MIN_DENOM):
            raise DomainError("SSR denominator is degenerate (physics prediction has ~zero weighted norm)")
        rho = num / den
    rho = np.maximum(rho, 0.0)
    if spec.metric_root:
        rho = np.sqrt(rho)
    return float(rho) if np.ndim(rho) == 0 else rho


def theta_kappa(theta, kappa: float):
    """Convex combination ``kappa * theta + (1 - kappa) * THETA_BAR``."""
    if not 0.0 <= kappa <= 1.0:
        raise DomainError(f"kappa must lie in [0, 1], got {kappa}")
    if isinstance(theta, ApbmParams):
        return ApbmParams.unflatten(theta_kappa(theta.flatten(), kappa))
    return kappa * np.asarray(theta, dtype=float) + (1.0 - kappa) * THETA_BAR


def _g(kappa, x, theta, f_pbm, spec, Ts):
    """``rho(theta(kappa)) - epsilon`` for broadcast ``kappa`` against the point batch."""
    k = np.asarray(kappa, dtype=float)[..., None]
    th = k * theta + (1.0 - k) * THETA_BAR
    return rho_ss(apbm_transition(x, None, th, Ts), f_pbm, spec) - spec.epsilon


def _tolerance(spec: ConstraintSpec) -> float:
    # |g| target: the stated 1e-8 * max(1, eps) guarantee, tightened to the
    # feasibility slack the estimator checks against
    return min(1e-8 * max(1.0, spec.epsilon), 1e-6 * spec.epsilon + 1e-9)


def _largest_root(g, top: np.ndarray, tol: float) -> np.ndarray:
    """Largest ``kappa`` in ``(0, top]`` with ``g(kappa) <= 0`` for independent series.

    ``g(kappa, idx)`` evaluates series ``idx`` at ``kappa`` (both 1-D). Every
    series must satisfy ``g(top) > 0`` and ``g(0) < 0``. The grid scan from
    ``top`` down to 0 picks the rightmost sign change; bisection then shrinks
    the bracket until it is narrower than ``KAPPA_WIDTH`` and ``|g| <= tol``
    on its feasible end, which is what gets returned.
    """
    m = len(top)
    idx = np.arange(m)
    grid = KAPPA_GRID[:, None] * top[None, :]
    grid_g = np.stack([g(grid[r], idx) for r in range(len(KAPPA_GRID))])
    feasible = grid_g <= 0
    feasible[0] = False
    if not np.all(feasible.any(axis=0)):
        raise InvariantViolation("no sign change of the kappa constraint on (0, 1]")
    j = np.argmax(feasible, axis=0)
    lo = grid[j, idx].copy()
    hi = grid[j - 1, idx].copy()
    g_lo = grid_g[j, idx]

    for _ in range(200):
        active = ((hi - lo) > KAPPA_WIDTH) | (np.abs(g_lo) > tol)
        active &= (hi - lo) > 4 * np.finfo(float).eps * np.maximum(hi, 1e-300)
        if not active.any():
            break
        a = np.flatnonzero(active)
        mid = 0.5 * (lo[a] + hi[a])
        gm = g(mid, a)
        ok = gm <= 0
        lo[a[ok]] = mid[ok]
        g_lo[a[ok]] = gm[ok]
        hi[a[~ok]] = mid[~ok]

    if np.any(lo <= 0.0):
        raise InvariantViolation("kappa root collapsed to 0")
    return lo


def solve_kappa_batch(x, theta, spec: ConstraintSpec, Ts: float = 1.0) -> np.ndarray:
    """Largest feasible ``kappa`` in ``(0, 1]`` for each row of ``x`` / ``theta``.

    Points already inside the ball get 1. Otherwise a 33-point grid from 1
    down to 0 locates the rightmost sign change of ``g``, which is then
    bisected. The returned value is always on the feasible side of the
    bracket (``g <= 0``) with ``|g| <= tol``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[1] != N_THETA or x.shape[1] != 4 or len(x) != len(theta):
        raise InvalidValueError("x must be (N, 4) and theta (N, 51)")
    f_pbm = pbm_transition(x, Ts)
    kappa = np.ones(len(x))
    viol = np.flatnonzero(_g(1.0, x, theta, f_pbm, spec, Ts) > 0)
    if viol.size == 0:
        return kappa
    xv, tv, fv = x[viol], theta[viol], f_pbm[viol]

    def g(k, i):
        return _g(k, xv[i], tv[i], fv[i], spec, Ts)

    kappa[viol] = _largest_root(g, np.ones(len(viol)), _tolerance(spec))
    return kappa


def solve_kappa(x, theta, spec: ConstraintSpec, Ts: float = 1.0) -> float:
    flat = theta.flatten() if isinstance(theta, ApbmParams) else np.asarray(theta, dtype=float)
    return float(solve_kappa_batch(np.asarray(x, dtype=float)[None, :], flat[None, :], spec, Ts)[0])


@dataclass(frozen=True)
class Projection:
    points: CubatureSet
    kappa_min: float
    kappas: np.ndarray
    refined: bool = False


def project_cubature_set(joint_set: CubatureSet, u, spec: ConstraintSpec, Ts: float = 1.0) -> Projection:
    """Constrain a joint ``[theta, x]`` cubature set with a shared ``kappa``.

    The shared value starts at the minimum of the per-point roots. Because
    the deviation is not monotone in ``kappa`` for a nonlinear network, a
    point that was feasible at ``kappa = 1`` can be infeasible at that
    minimum; in that case the shared value is lowered to the largest
    ``kappa`` at which every point is feasible (``refined=True``).
    """
    del u
    pts = joint_set.points
    if pts.shape[1] != N_THETA + 4:
        raise InvalidValueError(f"joint points must have {N_THETA + 4} columns (theta then x)")
    theta, x = pts[:, :N_THETA], pts[:, N_THETA:]
    kappas = solve_kappa_batch(x, theta, spec, Ts)
    kmin = float(kappas.min())
    if kmin == 1.0:
        return Projection(joint_set, 1.0, kappas)

    f_pbm = pbm_transition(x, Ts)

    def worst(k, i):
        return np.array([np.max(_g(kk, x, theta, f_pbm, spec, Ts)) for kk in np.atleast_1d(k)])

    refined = False
    if worst(kmin, None)[0] > 0:
        kmin = float(_largest_root(worst, np.array([kmin]), _tolerance(spec))[0])
        refined = True
    out = pts.copy()
    out[:, :N_THETA] = theta_kappa(theta, kmin)
    return Projection(CubatureSet(out), kmin, kappas, refined)


def constrain_cubature_set(joint_set: CubatureSet, u, spec: ConstraintSpec, Ts: float = 1.0) -> CubatureSet:
    return project_cubature_set(joint_set, u, spec, Ts).points


def rho_at(x, theta, spec: ConstraintSpec, Ts: float = 1.0):
    """Deviation metric of the APBM at ``(x, theta)`` against the physics model."""
    flat = theta.flatten() if isinstance(theta, ApbmParams) else theta
    return rho_ss(apbm_transition(x, None, flat, Ts), pbm_transition(x, Ts), spec)


def gate_on_mean(x_hat, theta_hat, u, spec: ConstraintSpec, Ts: float = 1.0) -> bool:
    """True when the estimate means violate the ball and projection is needed."""
    del u
    if spec.kind == "none":
        return False
    return bool(rho_at(np.asarray(x_hat, dtype=float), theta_hat, spec, Ts) > spec.epsilon)


def feasibility_slack(spec: ConstraintSpec) -> float:
    """Upper bound on rho accepted after projection."""
    return spec.epsilon * (1 + 1e-6) + 1e-9
