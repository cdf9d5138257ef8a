"""Monte-Carlo accuracy and consistency metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import DomainError, InvalidValueError, NumericalError
from .ssm import symmetrize_and_repair

POSITION = (0, 2)
VELOCITY = (1, 3)


@dataclass(frozen=True)
class McEnsemble:
    """Truths, estimates and ``P_xx`` blocks stacked as ``(N_MC, T, ...)``."""

    truths: np.ndarray
    estimates: np.ndarray
    covariances: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.truths, dtype=float)
        e = np.asarray(self.estimates, dtype=float)
        if t.ndim != 3 or t.shape != e.shape:
            raise InvalidValueError(f"truths {t.shape} and estimates {e.shape} must be equal (N_MC, T, d) arrays")
        object.__setattr__(self, "truths", t)
        object.__setattr__(self, "estimates", e)
        if self.covariances is not None:
            c = np.asarray(self.covariances, dtype=float)
            if c.shape != t.shape + (t.shape[-1],):
                raise InvalidValueError(f"covariances must have shape {t.shape + (t.shape[-1],)}")
            object.__setattr__(self, "covariances", c)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(e))):
            raise InvalidValueError("ensemble contains non-finite entries")

    @property
    def n_mc(self) -> int:
        return self.truths.shape[0]

    @property
    def errors(self) -> np.ndarray:
        return self.truths - self.estimates


def _check(ens: McEnsemble):
    if ens.n_mc == 0 or ens.truths.shape[1] == 0:
        raise DomainError("empty ensemble")


def rmse_k(ens: McEnsemble, component_sel=POSITION) -> np.ndarray:
    """Per-step RMSE over runs and the selected components."""
    _check(ens)
    sel = list(component_sel)
    if not sel:
        raise DomainError("component selection must be nonempty")
    err = ens.errors[:, :, sel]
    return np.sqrt(np.sum(err**2, axis=(0, 2)) / (len(sel) * ens.n_mc))


def anees_k(ens: McEnsemble) -> np.ndarray:
    """Per-step average NEES over runs, using the full state covariance."""
    _check(ens)
    if ens.covariances is None:
        raise DomainError("ANEES needs covariances")
    err = ens.errors
    n_mc, T, _ = err.shape
    nees = np.empty((n_mc, T))
    for r in range(n_mc):
        for k in range(T):
            P = symmetrize_and_repair(ens.covariances[r, k])
            try:
                nees[r, k] = err[r, k] @ np.linalg.solve(P, err[r, k])
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular covariance at run {r}, step {k}", matrix=P, index=k) from exc
    return nees.mean(axis=0)


def error_cdf(ens: McEnsemble, component_sel, grid) -> np.ndarray:
    """Fraction of pooled error norms (all runs, all steps) at or below each abscissa."""
    _check(ens)
    g = np.asarray(grid, dtype=float)
    if np.any(np.diff(g) < 0):
        raise InvalidValueError("grid must be sorted ascending")
    norms = np.sort(np.linalg.norm(ens.errors[:, :, list(component_sel)], axis=-1).ravel())
    return np.searchsorted(norms, g, side="right") / norms.size


def pooled_error_norms(ens: McEnsemble, component_sel) -> np.ndarray:
    return np.linalg.norm(ens.errors[:, :, list(component_sel)], axis=-1).ravel()


def boxplot_summary(series) -> dict[str, float]:
    """Five-number summary with inclusive linear-interpolation quartiles."""
    s = np.asarray(series, dtype=float).ravel()
    if s.size == 0:
        raise DomainError("cannot summarize an empty series")
    q1, med, q3 = np.percentile(s, [25, 50, 75], method="linear")
    return {"min": float(s.min()), "q1": float(q1), "median": float(med), "q3": float(q3), "max": float(s.max())}


def chi2_band(dof: int, n_mc: int, level: float = 0.99) -> tuple[float, float]:
    """Two-sided band for an ANEES value averaged over ``n_mc`` runs of a ``dof``-state error."""
    a = (1.0 - level) / 2.0
    n = dof * n_mc
    return float(chi2.ppf(a, n) / n_mc), float(chi2.ppf(1.0 - a, n) / n_mc)
