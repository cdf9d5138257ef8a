"""Ground-truth coordinated-turn trajectories and RSS/bearing measurements.

State layout is ``(x, vx, y, vy)``; the turn rate ``omega`` evolves as a
scalar random walk alongside it.

Two truth transitions are available through ``TruthConfig.ct_form``:

``"as_printed"``
    ``F + G(omega)``, the sum of the constant-velocity matrix and the
    turn matrix ``G``. Its velocity block has spectral radius
    ``2 cos(omega Ts / 2)``, so velocities roughly double every step.
``"standard"``
    The standard coordinated-turn matrix (bounded, rotation of the velocity
    vector). This is the default used by the experiment harness.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidValueError, SingularGeometryError
from .ssm import wrap_angle

SMALL_OMEGA = 1e-8
CT_FORMS = ("as_printed", "standard")
ENTRY12_MODES = ("as_printed", "standard")

TRAJECTORY_HEADER = ("k", "x", "vx", "y", "vy", "omega", "y_rss", "y_bearing")


def cv_matrix(Ts: float) -> np.ndarray:
    """Constant-velocity transition ``F``."""
    return np.array(
        [[1.0, Ts, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, Ts], [0.0, 0.0, 0.0, 1.0]]
    )


def noise_gain(Ts: float) -> np.ndarray:
    """Acceleration-to-state gain ``M`` (4x2)."""
    return np.array([[Ts**2 / 2, 0.0], [Ts, 0.0], [0.0, Ts**2 / 2], [0.0, Ts]])


def _turn_terms(omega, Ts: float):
    """Return ``sin(wT)``, ``cos(wT)``, ``sin(wT)/w`` and ``(1-cos(wT))/w``.

    Below ``|w| < 1e-8`` the two ratios use third-order Taylor expansions.
    """
    w = np.asarray(omega, dtype=float)
    wt = w * Ts
    s, c = np.sin(wt), np.cos(wt)
    small = np.abs(w) < SMALL_OMEGA
    safe = np.where(small, 1.0, w)
    s_over = np.where(small, Ts - w**2 * Ts**3 / 6.0, s / safe)
    # 1 - cos via the half-angle identity avoids cancellation for small turns
    c_over = np.where(small, w * Ts**2 / 2.0 - w**3 * Ts**4 / 24.0, 2.0 * np.sin(0.5 * wt) ** 2 / safe)
    return s, c, s_over, c_over


def ct_matrix(omega, Ts: float, entry12: str = "as_printed") -> np.ndarray:
    """``F + G(omega)`` with ``G`` entry for entry as printed.

    ``omega`` may be an array, in which case the result has shape
    ``omega.shape + (4, 4)``. ``entry12`` selects ``sin(wT)/Ts`` (as printed)
    or ``sin(wT)/w`` (standard coordinated-turn form) for the ``(1, 2)`` entry.
    """
    if not Ts > 0:
        raise InvalidValueError(f"Ts must be positive, got {Ts}")
    if entry12 not in ENTRY12_MODES:
        raise InvalidValueError(f"entry12 must be one of {ENTRY12_MODES}")
    s, c, s_over, c_over = _turn_terms(omega, Ts)
    shape = np.shape(s)
    g = np.zeros(shape + (4, 4))
    g[..., 0, 1] = s / Ts if entry12 == "as_printed" else s_over
    g[..., 0, 3] = -c_over
    g[..., 1, 1] = c
    g[..., 1, 3] = -s
    g[..., 2, 1] = c_over
    g[..., 2, 3] = s_over
    g[..., 3, 1] = s
    g[..., 3, 3] = c
    return cv_matrix(Ts) + g


def standard_ct_matrix(omega, Ts: float) -> np.ndarray:
    """Standard coordinated-turn transition (velocity rotated by ``omega * Ts``)."""
    if not Ts > 0:
        raise InvalidValueError(f"Ts must be positive, got {Ts}")
    s, c, s_over, c_over = _turn_terms(omega, Ts)
    a = np.zeros(np.shape(s) + (4, 4))
    a[..., 0, 0] = 1.0
    a[..., 0, 1] = s_over
    a[..., 0, 3] = -c_over
    a[..., 1, 1] = c
    a[..., 1, 3] = -s
    a[..., 2, 1] = c_over
    a[..., 2, 2] = 1.0
    a[..., 2, 3] = s_over
    a[..., 3, 1] = s
    a[..., 3, 3] = c
    return a


def truth_matrix(omega, Ts: float, ct_form: str = "standard", entry12: str = "as_printed"):
    """Dispatch to the truth transition selected by ``ct_form``."""
    if ct_form == "as_printed":
        return ct_matrix(omega, Ts, entry12)
    if ct_form == "standard":
        return standard_ct_matrix(omega, Ts)
    raise InvalidValueError(f"ct_form must be one of {CT_FORMS}, got {ct_form!r}")


def measure_rss_bearing(sensor_pos, target_pos, psi0_dbm: float, alpha: float) -> np.ndarray:
    """Noise-free RSS (dBm) and bearing (rad) from sensor to target.

    ``target_pos`` may be a single 2-vector or an ``(N, 2)`` batch; the output
    follows the same leading shape.
    """
    p = np.asarray(target_pos, dtype=float)
    d = p - np.asarray(sensor_pos, dtype=float)
    dist = np.hypot(d[..., 0], d[..., 1])
    if np.any(dist == 0.0):
        raise SingularGeometryError("sensor and target positions coincide")
    rss = psi0_dbm - 10.0 * alpha * np.log10(dist)
    bearing = np.arctan2(d[..., 1], d[..., 0])
    bearing = np.where(bearing == -np.pi, np.pi, bearing)
    return np.stack([rss, bearing], axis=-1)


@dataclass(frozen=True)
class TruthConfig:
    """Parameters of the simulated scenario. Defaults reproduce the published setup."""

    Ts: float = 1.0
    q_var: float = 0.01
    omega_var: float = 1e-5
    x0: tuple[float, ...] = (50.0, 0.0, 50.0, 0.0)
    omega0: float = 0.05 * np.pi
    T: int = 1000
    sensor_pos: tuple[float, float] = (0.0, 0.0)
    psi0_dbm: float = 30.0
    alpha: float = 2.2
    R: tuple[tuple[float, float], tuple[float, float]] = ((0.1, 0.0), (0.0, 0.1))
    seed: int = 0
    ct_form: str = "standard"
    ct_entry12: str = "as_printed"

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "sensor_pos", tuple(float(v) for v in self.sensor_pos))
        object.__setattr__(self, "R", tuple(tuple(float(v) for v in row) for row in np.asarray(self.R)))
        if not self.Ts > 0:
            raise InvalidValueError("Ts must be > 0")
        if not self.q_var >= 0:
            raise InvalidValueError("q_var must be >= 0")
        if not self.omega_var >= 0:
            raise InvalidValueError("omega_var must be >= 0")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidValueError("T must be an integer >= 1")
        if not self.alpha > 0:
            raise InvalidValueError("alpha must be > 0")
        if len(self.x0) != 4 or len(self.sensor_pos) != 2:
            raise InvalidValueError("x0 must have 4 entries and sensor_pos 2")
        r = self.R_matrix
        if r.shape != (2, 2) or not np.allclose(r, r.T) or np.any(np.linalg.eigvalsh(r) <= 0):
            raise InvalidValueError("R must be a symmetric positive definite 2x2 matrix")
        if self.ct_form not in CT_FORMS:
            raise InvalidValueError(f"ct_form must be one of {CT_FORMS}")
        if self.ct_entry12 not in ENTRY12_MODES:
            raise InvalidValueError(f"ct_entry12 must be one of {ENTRY12_MODES}")

    @property
    def R_matrix(self) -> np.ndarray:
        return np.array(self.R, dtype=float)

    def transition_matrix(self, omega):
        return truth_matrix(omega, self.Ts, self.ct_form, self.ct_entry12)


@dataclass(frozen=True)
class TruthTrajectory:
    states: np.ndarray
    omegas: np.ndarray
    measurements: np.ndarray
    config: TruthConfig = field(repr=False, default=None)

    def __post_init__(self):
        n = len(self.states)
        if len(self.omegas) != n or len(self.measurements) != n:
            raise InvalidValueError("trajectory arrays must have equal length")

    @property
    def T(self) -> int:
        return len(self.states)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator (numpy's documented default bit generator)."""
    return np.random.Generator(np.random.PCG64(seed))


def simulate_truth(cfg: TruthConfig) -> TruthTrajectory:
    """Simulate ``cfg.T`` steps of the truth model.

    Draw order from the seeded stream is fixed: all acceleration noises
    ``(T-1, 2)``, then all turn-rate noises ``(T-1,)``, then all measurement
    noises ``(T, 2)``. Noise is drawn even when a variance is zero so the
    streams stay aligned across configurations.
    """
    rng = make_rng(cfg.seed)
    T = int(cfg.T)
    q = rng.standard_normal((T - 1, 2)) * np.sqrt(cfg.q_var)
    v = rng.standard_normal(T - 1) * np.sqrt(cfg.omega_var)
    r = rng.standard_normal((T, 2)) @ np.linalg.cholesky(cfg.R_matrix).T

    M = noise_gain(cfg.Ts)
    states = np.empty((T, 4))
    omegas = np.empty(T)
    states[0] = cfg.x0
    omegas[0] = cfg.omega0
    for k in range(1, T):
        states[k] = cfg.transition_matrix(omegas[k - 1]) @ states[k - 1] + M @ q[k - 1]
        omegas[k] = omegas[k - 1] + v[k - 1]

    y = measure_rss_bearing(cfg.sensor_pos, states[:, [0, 2]], cfg.psi0_dbm, cfg.alpha) + r
    y[:, 1] = wrap_angle(y[:, 1])
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(y))):
        raise InvalidValueError("simulated trajectory contains non-finite values")
    return TruthTrajectory(states, omegas, y, cfg)


def write_trajectory_csv(traj: TruthTrajectory, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for k in range(traj.T):
            s = traj.states[k]
            row = [*s, traj.omegas[k], *traj.measurements[k]]
            w.writerow([k, *(fmt(v) for v in row)])


def read_trajectory_csv(path, config: TruthConfig | None = None) -> TruthTrajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TruthTrajectory(data[:, 1:5].copy(), data[:, 5].copy(), data[:, 6:8].copy(), config)


def fmt(v: float) -> str:
    """17-significant-digit decimal, the CSV number format used throughout."""
    return format(float(v), ".17g")
