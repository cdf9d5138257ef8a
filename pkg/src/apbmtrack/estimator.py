"""Tracking filters: true-model CKF, physics-model CKF and the joint APBM filters.

The configured initial belief describes the state at the first measurement
time, so step 0 is a correction only and each later step predicts over one
sampling period before correcting.

Joint APBM state layout: the 51 parameters first, then the 4 target states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag

from .apbm import N_THETA, THETA_BAR, apbm_transition, initial_theta, pbm_transition
from .ckf import CubatureSet, cubature_points, linear_update, marginal_measurement_update, measurement_update, propagate
from .constraint import (
    ConstraintSpec,
    feasibility_slack,
    gate_on_mean,
    project_cubature_set,
    rho_at,
)
from .errors import ApbmTrackError, InvalidValueError, InvariantViolation, RunError
from .ssm import GaussianBelief, MeasurementModel
from .truth import TruthConfig, TruthTrajectory, fmt, measure_rss_bearing, noise_gain, truth_matrix

VARIANTS = ("TM", "PBM", "APBM_PARAM_REG", "APBM_SSA")

X_SLICE = slice(N_THETA, N_THETA + 4)

ESTIMATE_HEADER = ("k", "variant", "xhat", "vxhat", "yhat", "vyhat", "pxx_trace", "gate_fired", "kappa_min")
DIAGNOSTIC_HEADER = ("k", "gate_fired", "kappa_min", "rho_at_mean")


Q_PBM_FORMS = ("cwna", "discrete")


def pbm_process_noise(Ts: float = 1.0, q_var: float = 0.1, form: str = "cwna") -> np.ndarray:
    """Process noise for the constant-velocity filter model.

    ``"cwna"`` is the continuous white-noise-acceleration discretization, per
    axis ``q [[Ts^3/3, Ts^2/2], [Ts^2/2, Ts]]``, which is full rank.
    ``"discrete"`` is ``q M M^T`` with the acceleration gain ``M`` (rank 2).
    """
    if form == "cwna":
        block = np.array([[Ts**3 / 3, Ts**2 / 2], [Ts**2 / 2, Ts]])
        return q_var * np.kron(np.eye(2), block)
    if form == "discrete":
        M = noise_gain(Ts)
        return q_var * M @ M.T
    raise InvalidValueError(f"Q_pbm form must be one of {Q_PBM_FORMS}, got {form!r}")


def default_q_pbm() -> np.ndarray:
    return pbm_process_noise(1.0, 0.1, "cwna")


@dataclass(frozen=True)
class FilterConfig:
    """Settings for one filter variant.

    ``x0_hat=None`` means "use the true initial state". ``name`` labels the
    variant in output files and defaults to the variant (with the threshold
    appended for ``APBM_SSA``).
    """

    variant: str = "PBM"
    x0_hat: tuple[float, ...] | None = None
    P0_x: tuple[float, ...] = (1.0, 0.1, 1.0, 0.1)
    P0_theta_scale: float = 1e-2
    q_theta_var: float = 1e-6
    param_reg_strength: float = 1e2
    constraint: ConstraintSpec | None = None
    Q_pbm: np.ndarray = field(default_factory=default_q_pbm)
    theta0: np.ndarray | None = None
    theta0_seed: int = 0
    theta0_weight_var: float = 1e-4
    omega0_hat: float | None = None
    P0_omega: float = 1e-4
    tm_knows_omega: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for key in ("P0_theta_scale", "q_theta_var", "param_reg_strength", "P0_omega", "theta0_weight_var"):
            if not getattr(self, key) >= 0:
                raise InvalidValueError(f"{key} must be >= 0")
        p0 = np.asarray(self.P0_x, dtype=float)
        if p0.shape not in ((4,), (4, 4)):
            raise InvalidValueError("P0_x must be 4 variances or a 4x4 matrix")
        q = np.array(self.Q_pbm, dtype=float)
        if q.shape != (4, 4):
            raise InvalidValueError("Q_pbm must be 4x4")
        object.__setattr__(self, "Q_pbm", q)
        if self.variant == "APBM_SSA" and self.constraint is None:
            raise InvalidValueError("APBM_SSA needs a constraint spec")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.variant == "APBM_SSA" and self.constraint is not None:
            return f"APBM_SSA_e={self.constraint.epsilon:g}"
        return self.variant

    @property
    def P0_x_matrix(self) -> np.ndarray:
        p0 = np.asarray(self.P0_x, dtype=float)
        return np.diag(p0) if p0.ndim == 1 else p0

    @property
    def is_apbm(self) -> bool:
        return self.variant in ("APBM_PARAM_REG", "APBM_SSA")


@dataclass
class FilterOutput:
    label: str
    variant: str
    x_hat: np.ndarray
    P_xx: np.ndarray
    theta_hat: np.ndarray | None = None
    gate_fired: np.ndarray | None = None
    kappa_min: np.ndarray | None = None
    rho_at_mean: np.ndarray | None = None
    x_pred: np.ndarray | None = None
    x_pred_pbm: np.ndarray | None = None
    max_point_rho: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.x_hat)


@dataclass(frozen=True)
class StepInfo:
    """Per-cycle diagnostics of the joint APBM filter."""

    gate_fired: bool = False
    kappa_min: float = 1.0
    rho_at_mean: float = float("nan")
    max_point_rho: float = float("nan")
    x_pred: np.ndarray | None = None
    x_pred_pbm: np.ndarray | None = None


def make_measurement_model(truth: TruthConfig, offset: int = 0) -> MeasurementModel:
    """RSS/bearing model reading the target position at ``offset`` in the filter state."""
    pos = [offset, offset + 2]

    def h(states):
        return measure_rss_bearing(truth.sensor_pos, states[:, pos], truth.psi0_dbm, truth.alpha)

    return MeasurementModel(2, h, truth.R_matrix, (False, True))


def initial_belief(cfg: FilterConfig, truth: TruthConfig) -> GaussianBelief:
    x0 = np.asarray(truth.x0 if cfg.x0_hat is None else cfg.x0_hat, dtype=float)
    P0 = cfg.P0_x_matrix
    if cfg.variant == "TM":
        if cfg.tm_knows_omega:
            return GaussianBelief(x0, P0)
        w0 = truth.omega0 if cfg.omega0_hat is None else cfg.omega0_hat
        return GaussianBelief(np.append(x0, w0), block_diag(P0, cfg.P0_omega))
    if cfg.variant == "PBM":
        return GaussianBelief(x0, P0)
    theta0 = initial_theta(cfg.theta0_seed, cfg.theta0_weight_var) if cfg.theta0 is None else cfg.theta0
    theta0 = np.asarray(theta0, dtype=float)
    return GaussianBelief(
        np.concatenate([theta0, x0]),
        block_diag(cfg.P0_theta_scale * np.eye(N_THETA), P0),
    )


def step_tm(belief: GaussianBelief, y, truth: TruthConfig, meas: MeasurementModel,
            omega_known: float | None = None) -> GaussianBelief:
    """True-model cycle. Estimates the turn rate as a fifth state unless ``omega_known`` is given."""
    M = noise_gain(truth.Ts)
    Qx = truth.q_var * M @ M.T
    pts = cubature_points(belief)
    if omega_known is not None:
        A = truth_matrix(omega_known, truth.Ts, truth.ct_form, truth.ct_entry12)
        _, pred = propagate(pts, lambda s: s @ A.T, Qx)
    else:
        def f(s):
            A = truth_matrix(s[:, 4], truth.Ts, truth.ct_form, truth.ct_entry12)
            return np.column_stack([np.einsum("nij,nj->ni", A, s[:, :4]), s[:, 4]])

        _, pred = propagate(pts, f, block_diag(Qx, truth.omega_var))
    return measurement_update(pred, y, meas)


def step_pbm(belief: GaussianBelief, y, cfg: FilterConfig, meas: MeasurementModel,
             Ts: float = 1.0) -> GaussianBelief:
    """Constant-velocity CKF cycle with noise ``cfg.Q_pbm``."""
    _, pred = propagate(cubature_points(belief), lambda s: pbm_transition(s, Ts), cfg.Q_pbm)
    return measurement_update(pred, y, meas)


def _joint_transition(Ts: float):
    def f(s):
        theta, x = s[:, :N_THETA], s[:, N_THETA:]
        return np.hstack([theta, apbm_transition(x, None, theta, Ts)])

    return f


def _constrain(pts: CubatureSet, x_hat, theta_hat, spec: ConstraintSpec | None, Ts: float):
    """Gate on the means and, when it fires, project the joint points."""
    gate, kmin, rho_mean, max_rho = False, 1.0, float("nan"), float("nan")
    if spec is None or spec.kind == "none":
        return pts, gate, kmin, rho_mean, max_rho
    rho_mean = float(rho_at(x_hat, theta_hat, spec, Ts))
    gate = gate_on_mean(x_hat, theta_hat, None, spec, Ts)
    if gate:
        proj = project_cubature_set(pts, None, spec, Ts)
        pts, kmin = proj.points, proj.kappa_min
        max_rho = float(np.max(rho_at(pts.points[:, N_THETA:], pts.points[:, :N_THETA], spec, Ts)))
        if max_rho > feasibility_slack(spec):
            raise InvariantViolation(
                f"projected cubature point violates the constraint: rho={max_rho:.6g} > eps={spec.epsilon:g}"
            )
    return pts, gate, kmin, rho_mean, max_rho


def _spec(cfg: FilterConfig) -> ConstraintSpec | None:
    return cfg.constraint if cfg.variant == "APBM_SSA" else None


def step_apbm(belief: GaussianBelief, y, cfg: FilterConfig, meas: MeasurementModel,
              Ts: float = 1.0) -> tuple[GaussianBelief, StepInfo]:
    """One joint parameter/state cycle, with the state-space projection for ``APBM_SSA``."""
    if not cfg.is_apbm:
        raise InvalidValueError(f"step_apbm needs an APBM variant, got {cfg.variant}")
    theta_hat, x_hat = belief.mean[:N_THETA], belief.mean[X_SLICE]
    pts, gate, kmin, rho_mean, max_rho = _constrain(cubature_points(belief), x_hat, theta_hat, _spec(cfg), Ts)

    Q = block_diag(cfg.q_theta_var * np.eye(N_THETA), cfg.Q_pbm)
    _, pred = propagate(pts, _joint_transition(Ts), Q)
    x_pred = pred.mean[X_SLICE].copy()
    x_pred_pbm = pbm_transition(pts.points[:, N_THETA:], Ts).mean(axis=0)

    post = marginal_measurement_update(pred, y, meas, np.arange(N_THETA, N_THETA + 4))
    if cfg.variant == "APBM_PARAM_REG" and cfg.param_reg_strength > 0:
        H = np.hstack([np.eye(N_THETA), np.zeros((N_THETA, 4))])
        R = np.eye(N_THETA) / cfg.param_reg_strength
        post = linear_update(post, THETA_BAR, H, R)
    return post, StepInfo(gate, kmin, rho_mean, max_rho, x_pred, x_pred_pbm)


def step_apbm_frozen(belief: GaussianBelief, theta, y, cfg: FilterConfig, meas: MeasurementModel,
                     Ts: float = 1.0) -> tuple[GaussianBelief, np.ndarray, StepInfo]:
    """APBM cycle with known parameters (zero prior spread and zero drift).

    ``belief`` covers the 4 target states only. The parameters still pass
    through the gate and projection, so ``APBM_SSA`` can move them toward
    the physics model, but they carry no uncertainty and the pseudo-measurement
    of the regularized baseline has nothing to correct.
    """
    x_pts = cubature_points(belief)
    joint = CubatureSet(np.hstack([np.tile(theta, (x_pts.points.shape[0], 1)), x_pts.points]))
    joint, gate, kmin, rho_mean, max_rho = _constrain(joint, belief.mean, theta, _spec(cfg), Ts)
    theta = joint.points[0, :N_THETA].copy()
    _, pred = propagate(x_pts, lambda s: apbm_transition(s, None, theta, Ts), cfg.Q_pbm)
    x_pred_pbm = pbm_transition(x_pts.points, Ts).mean(axis=0)
    post = measurement_update(pred, y, meas)
    return post, theta, StepInfo(gate, kmin, rho_mean, max_rho, pred.mean.copy(), x_pred_pbm)


def is_frozen(cfg: FilterConfig) -> bool:
    """APBM parameters are constants when they start certain and never drift."""
    return cfg.is_apbm and cfg.P0_theta_scale == 0 and cfg.q_theta_var == 0


def run_filter(cfg: FilterConfig, traj: TruthTrajectory, truth: TruthConfig | None = None) -> FilterOutput:
    """Run the configured variant over every measurement of ``traj``.

    The first measurement corrects the initial belief directly; every later
    one follows a prediction over one sampling period.
    """
    truth = truth or traj.config
    if truth is None:
        raise InvalidValueError("run_filter needs the truth configuration (sensor, noise, Ts)")
    T = traj.T
    belief = initial_belief(cfg, truth)
    frozen = is_frozen(cfg)
    theta = None
    if frozen:
        theta = belief.mean[:N_THETA].copy()
        belief = GaussianBelief(belief.mean[X_SLICE], belief.cov[X_SLICE, X_SLICE])
    offset = N_THETA if cfg.is_apbm and not frozen else 0
    xs = slice(offset, offset + 4)
    meas = make_measurement_model(truth, offset)

    out = FilterOutput(cfg.label, cfg.variant, np.empty((T, 4)), np.empty((T, 4, 4)))
    if cfg.is_apbm:
        out.theta_hat = np.empty((T, N_THETA))
        out.gate_fired = np.zeros(T, dtype=bool)
        out.kappa_min = np.ones(T)
        out.rho_at_mean = np.full(T, np.nan)
        out.max_point_rho = np.full(T, np.nan)
        out.x_pred = np.empty((T, 4))
        out.x_pred_pbm = np.empty((T, 4))

    for k in range(T):
        y = traj.measurements[k]
        try:
            if k == 0:
                info = StepInfo(x_pred=belief.mean[xs].copy(), x_pred_pbm=belief.mean[xs].copy())
                if offset:
                    belief = marginal_measurement_update(belief, y, meas, np.arange(offset, offset + 4))
                else:
                    belief = measurement_update(belief, y, meas)
            elif cfg.variant == "TM":
                known = traj.omegas[k - 1] if cfg.tm_knows_omega else None
                belief = step_tm(belief, y, truth, meas, known)
            elif cfg.variant == "PBM":
                belief = step_pbm(belief, y, cfg, meas, truth.Ts)
            elif frozen:
                belief, theta, info = step_apbm_frozen(belief, theta, y, cfg, meas, truth.Ts)
            else:
                belief, info = step_apbm(belief, y, cfg, meas, truth.Ts)
        except ApbmTrackError as exc:
            raise RunError(f"{cfg.label} failed: {exc}", k) from exc
        except np.linalg.LinAlgError as exc:
            raise RunError(f"{cfg.label} failed: {exc}", k) from exc
        if cfg.is_apbm:
            out.gate_fired[k] = info.gate_fired
            out.kappa_min[k] = info.kappa_min
            out.rho_at_mean[k] = info.rho_at_mean
            out.max_point_rho[k] = info.max_point_rho
            out.x_pred[k] = info.x_pred
            out.x_pred_pbm[k] = info.x_pred_pbm
            out.theta_hat[k] = theta if frozen else belief.mean[:N_THETA]
        out.x_hat[k] = belief.mean[xs]
        out.P_xx[k] = belief.cov[xs, xs]
    return out


def estimate_rows(out: FilterOutput):
    """Rows of the estimate CSV (without header) for one variant."""
    gate = out.gate_fired if out.gate_fired is not None else np.zeros(out.T, dtype=bool)
    kmin = out.kappa_min if out.kappa_min is not None else np.ones(out.T)
    for k in range(out.T):
        yield [k, out.label, *(fmt(v) for v in out.x_hat[k]), fmt(np.trace(out.P_xx[k])), int(gate[k]), fmt(kmin[k])]


def write_estimates_csv(outputs, path) -> None:
    """Write one or several variants' estimates to a single CSV, variant by variant."""
    if isinstance(outputs, FilterOutput):
        outputs = [outputs]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_HEADER)
        for out in outputs:
            w.writerows(estimate_rows(out))


def write_diagnostics_csv(out: FilterOutput, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_HEADER)
        for k in range(out.T):
            w.writerow([k, int(out.gate_fired[k]), fmt(out.kappa_min[k]), fmt(out.rho_at_mean[k])])


def write_theta_csv(out: FilterOutput, path) -> None:
    """One row of the 51 flattened parameters per step."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", *(f"theta{i}" for i in range(N_THETA))])
        for k in range(out.T):
            w.writerow([k, *(fmt(v) for v in out.theta_hat[k])])


def with_epsilon(cfg: FilterConfig, epsilon: float) -> FilterConfig:
    return replace(cfg, constraint=replace(cfg.constraint, epsilon=epsilon), name=None)
