"""Third-degree spherical-radial cubature Kalman filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .ssm import BatchMap, GaussianBelief, MeasurementModel, symmetrize_and_repair, wrap_angle


@dataclass(frozen=True)
class CubatureSet:
    """``2n`` equally weighted points, stored as rows of ``points``."""

    points: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def weight(self) -> float:
        return 1.0 / self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def cov(self) -> np.ndarray:
        d = self.points - self.mean()
        return d.T @ d * self.weight


def cholesky_lower(cov: np.ndarray) -> np.ndarray:
    repaired = symmetrize_and_repair(cov)
    try:
        return np.linalg.cholesky(repaired)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Cholesky failed after PSD repair", matrix=repaired) from exc


def cubature_points(belief: GaussianBelief) -> CubatureSet:
    """``mean +/- sqrt(n) * L[:, i]`` for the lower Cholesky factor ``L``.

    Rows ``0..n-1`` are the ``+`` points, rows ``n..2n-1`` the ``-`` points.
    """
    n = belief.dim
    L = cholesky_lower(belief.cov)
    offsets = np.sqrt(n) * L.T
    return CubatureSet(np.vstack([belief.mean + offsets, belief.mean - offsets]))


def propagate(points: CubatureSet, f: BatchMap, Q: np.ndarray) -> tuple[np.ndarray, GaussianBelief]:
    """Push points through ``f``; return the mapped points and the predicted belief."""
    fx = np.asarray(f(points.points), dtype=float)
    if fx.ndim != 2 or fx.shape[0] != points.points.shape[0]:
        raise DimensionError(f"transition returned shape {fx.shape} for {points.points.shape[0]} points")
    bad = ~np.all(np.isfinite(fx), axis=1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"transition produced non-finite output at cubature point {idx}", index=idx)
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (fx.shape[1], fx.shape[1]):
        raise DimensionError(f"Q has shape {Q.shape}, expected {(fx.shape[1],) * 2}")
    mean = fx.mean(axis=0)
    d = fx - mean
    cov = d.T @ d / fx.shape[0] + Q
    return fx, GaussianBelief(mean, symmetrize_and_repair(cov))


def time_update(points: CubatureSet, f: BatchMap, Q: np.ndarray) -> GaussianBelief:
    """Predicted belief from propagating ``points`` through ``f`` plus noise ``Q``."""
    return propagate(points, f, Q)[1]


def _measurement_moments(z: np.ndarray, angular: np.ndarray):
    """Mean and deviations of predicted measurements, circular on angular channels."""
    if angular.size == 0:
        mean = z.mean(axis=0)
        return mean, z - mean
    ref = z[0].copy()
    dev_ref = z - ref
    dev_ref[:, angular] = wrap_angle(dev_ref[:, angular])
    mean = ref + dev_ref.mean(axis=0)
    mean[angular] = wrap_angle(mean[angular])
    dev = z - mean
    dev[:, angular] = wrap_angle(dev[:, angular])
    return mean, dev


def measurement_update(pred: GaussianBelief, y, h: MeasurementModel) -> GaussianBelief:
    """Standard CKF correction; cubature points are regenerated from ``pred``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != h.dim_meas:
        raise DimensionError(f"measurement has length {y.shape[0]}, model expects {h.dim_meas}")
    pts = cubature_points(pred)
    z = np.asarray(h.measure(pts.points), dtype=float)
    if z.shape != (pts.points.shape[0], h.dim_meas):
        raise DimensionError(f"measurement map returned shape {z.shape}")
    angular = h.angular_index
    z_mean, dz = _measurement_moments(z, angular)
    dx = pts.points - pred.mean
    w = pts.weight
    Pyy = symmetrize_and_repair(dz.T @ dz * w + h.meas_noise_cov)
    Pxy = dx.T @ dz * w
    try:
        K = np.linalg.solve(Pyy, Pxy.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular", matrix=Pyy) from exc
    innov = y - z_mean
    innov[angular] = wrap_angle(innov[angular])
    mean = pred.mean + K @ innov
    cov = pred.cov - K @ Pyy @ K.T
    return GaussianBelief(mean, symmetrize_and_repair(cov))


def marginal_measurement_update(pred: GaussianBelief, y, h: MeasurementModel, idx) -> GaussianBelief:
    """CKF correction when ``h`` reads only the components ``idx`` of the state.

    Measurement moments come from cubature points of the marginal over
    ``idx``; the remaining components are corrected through the Gaussian
    regression ``P_sy = P_s,idx P_idx^-1 P_idx,y``. ``h`` receives full-width
    states with the other components held at their means.
    """
    idx = np.asarray(idx)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != h.dim_meas:
        raise DimensionError(f"measurement has length {y.shape[0]}, model expects {h.dim_meas}")
    P_mm = symmetrize_and_repair(pred.cov[np.ix_(idx, idx)])
    marg = cubature_points(GaussianBelief(pred.mean[idx], P_mm))
    full = np.tile(pred.mean, (marg.points.shape[0], 1))
    full[:, idx] = marg.points
    z = np.asarray(h.measure(full), dtype=float)
    if z.shape != (full.shape[0], h.dim_meas):
        raise DimensionError(f"measurement map returned shape {z.shape}")
    angular = h.angular_index
    z_mean, dz = _measurement_moments(z, angular)
    w = marg.weight
    Pyy = symmetrize_and_repair(dz.T @ dz * w + h.meas_noise_cov)
    P_my = (marg.points - pred.mean[idx]).T @ dz * w
    P_sy = pred.cov[:, idx] @ np.linalg.solve(P_mm, P_my)
    P_sy[idx] = P_my
    try:
        K = np.linalg.solve(Pyy, P_sy.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular", matrix=Pyy) from exc
    innov = y - z_mean
    innov[angular] = wrap_angle(innov[angular])
    mean = pred.mean + K @ innov
    cov = pred.cov - K @ Pyy @ K.T
    return GaussianBelief(mean, symmetrize_and_repair(cov))


def linear_update(pred: GaussianBelief, y, H: np.ndarray, R: np.ndarray) -> GaussianBelief:
    """Exact Kalman update for a linear measurement ``y = H s + r``."""
    H = np.asarray(H, dtype=float)
    S = symmetrize_and_repair(H @ pred.cov @ H.T + R)
    PHt = pred.cov @ H.T
    K = np.linalg.solve(S, PHt.T).T
    mean = pred.mean + K @ (np.asarray(y, dtype=float) - H @ pred.mean)
    cov = pred.cov - K @ S @ K.T
    return GaussianBelief(mean, symmetrize_and_repair(cov))
