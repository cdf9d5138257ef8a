"""Monte-Carlo orchestration: paired runs, per-run files and merged metrics."""

from __future__ import annotations

import csv
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, settings_to_text
from .errors import ApbmTrackError, RunError
from .estimator import FilterOutput, run_filter, write_diagnostics_csv, write_estimates_csv, write_theta_csv
from .metrics import POSITION, VELOCITY, McEnsemble, anees_k, boxplot_summary, error_cdf, rmse_k
from .truth import TruthTrajectory, fmt, simulate_truth, write_trajectory_csv

log = logging.getLogger(__name__)

METRICS_HEADER = ("k", "variant", "rmse_pos", "rmse_vel", "anees")
CDF_HEADER = ("abscissa", "variant", "cdf_pos", "cdf_vel")
SUMMARY_FIELDS = ("min", "q1", "median", "q3", "max")
SUMMARY_METRICS = ("rmse_pos", "rmse_vel", "anees")
SUMMARY_HEADER = ("variant", "n_runs", *(f"{m}_{f}" for m in SUMMARY_METRICS for f in SUMMARY_FIELDS))
CDF_POINTS = 201
# per-step APBM diagnostics kept in memory for analysis
DIAGNOSTIC_FIELDS = ("gate_fired", "kappa_min", "rho_at_mean", "max_point_rho", "x_pred", "x_pred_pbm")


@dataclass
class RunResult:
    """Everything one Monte-Carlo run contributes to the merged metrics."""

    run: int
    seed: int
    truth: np.ndarray | None = None
    x_hat: dict[str, np.ndarray] = field(default_factory=dict)
    P_xx: dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)


@dataclass
class ExperimentResult:
    out_dir: Path
    runs: list[RunResult]
    labels: list[str]
    failures: list[dict]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0

    def ensemble(self, label: str) -> McEnsemble:
        """Runs in which ``label`` completed, stacked into an ensemble."""
        ok = [r for r in self.runs if label in r.x_hat]
        return McEnsemble(
            np.stack([r.truth for r in ok]),
            np.stack([r.x_hat[label] for r in ok]),
            np.stack([r.P_xx[label] for r in ok]),
        )


def run_dirname(r: int) -> str:
    return f"run_{r:03d}.csv"


def simulate_run(cfg: ExperimentConfig, r: int) -> TruthTrajectory:
    return simulate_truth(replace(cfg.truth, seed=cfg.run_seed(r)))


def _filters_for_run(cfg: ExperimentConfig, seed: int):
    per_run_theta = cfg.settings.get("filter.theta0_seed") is None
    for fc in cfg.filters:
        yield replace(fc, theta0_seed=seed) if per_run_theta and fc.is_apbm else fc


def execute_run(cfg: ExperimentConfig, r: int, out_dir: Path) -> RunResult:
    """Simulate run ``r``, run every filter on it, write the per-run files."""
    seed = cfg.run_seed(r)
    res = RunResult(r, seed)
    try:
        traj = simulate_run(cfg, r)
    except ApbmTrackError as exc:
        res.failures.append({"run": r, "seed": seed, "variant": None, "step": None, "error": str(exc)})
        return res
    res.truth = traj.states
    write_trajectory_csv(traj, out_dir / "trajectories" / run_dirname(r))
    outputs: list[FilterOutput] = []
    for fc in _filters_for_run(cfg, seed):
        try:
            out = run_filter(fc, traj)
        except RunError as exc:
            log.error("run %d, %s: %s", r, fc.label, exc)
            res.failures.append({"run": r, "seed": seed, "variant": fc.label, "step": exc.step, "error": str(exc)})
            continue
        outputs.append(out)
        res.x_hat[out.label] = out.x_hat
        res.P_xx[out.label] = out.P_xx
        if out.gate_fired is not None:
            res.diagnostics[out.label] = {name: getattr(out, name) for name in DIAGNOSTIC_FIELDS}
            write_diagnostics_csv(out, out_dir / "diagnostics" / f"run_{r:03d}_{out.label}.csv")
            if cfg.settings.get("experiment.write_theta"):
                write_theta_csv(out, out_dir / "theta" / f"run_{r:03d}_{out.label}.csv")
    write_estimates_csv(outputs, out_dir / "estimates" / run_dirname(r))
    return res


def _prepare(out_dir: Path, cfg: ExperimentConfig):
    for sub in ("trajectories", "estimates", "diagnostics"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    if cfg.settings.get("experiment.write_theta"):
        (out_dir / "theta").mkdir(parents=True, exist_ok=True)


def _run_all(fn, cfg: ExperimentConfig, out_dir: Path, workers: int):
    runs = range(1, cfg.n_mc + 1)
    if workers <= 1 or cfg.n_mc == 1:
        return [fn(cfg, r, out_dir) for r in runs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so the merge is deterministic
        return list(pool.map(fn, [cfg] * cfg.n_mc, runs, [out_dir] * cfg.n_mc))


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """Run every configured filter on ``n_mc`` paired trajectories and write all outputs."""
    out_dir = Path(out_dir or cfg.out_dir)
    _prepare(out_dir, cfg)
    runs = _run_all(execute_run, cfg, out_dir, workers or cfg.workers)
    failures = [f for r in runs for f in r.failures]
    labels = [fc.label for fc in cfg.filters]
    result = ExperimentResult(out_dir, runs, labels, failures)
    write_metrics(result)
    write_manifest(cfg, result)
    return result


def _simulate_only(cfg: ExperimentConfig, r: int, out_dir: Path) -> RunResult:
    res = RunResult(r, cfg.run_seed(r))
    try:
        traj = simulate_run(cfg, r)
    except ApbmTrackError as exc:
        res.failures.append({"run": r, "seed": res.seed, "variant": None, "step": None, "error": str(exc)})
        return res
    write_trajectory_csv(traj, out_dir / "trajectories" / run_dirname(r))
    return res


def simulate_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                        workers: int | None = None) -> ExperimentResult:
    """Write the truth trajectories only."""
    out_dir = Path(out_dir or cfg.out_dir)
    (out_dir / "trajectories").mkdir(parents=True, exist_ok=True)
    runs = _run_all(_simulate_only, cfg, out_dir, workers or cfg.workers)
    result = ExperimentResult(out_dir, runs, [], [f for r in runs for f in r.failures])
    write_manifest(cfg, result)
    return result


def variant_metrics(result: ExperimentResult) -> dict[str, dict[str, np.ndarray]]:
    """Per-step RMSE and ANEES for every variant with at least one completed run."""
    out = {}
    for label in result.labels:
        if not any(label in r.x_hat for r in result.runs):
            continue
        ens = result.ensemble(label)
        out[label] = {
            "n_runs": ens.n_mc,
            "rmse_pos": rmse_k(ens, POSITION),
            "rmse_vel": rmse_k(ens, VELOCITY),
            "anees": anees_k(ens),
            "ensemble": ens,
        }
    return out


def write_metrics(result: ExperimentResult) -> None:
    """metrics.csv, cdf.csv and summary.csv; the single-writer merge step."""
    per = variant_metrics(result)
    d = result.out_dir
    with (d / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for label, m in per.items():
            for k in range(len(m["rmse_pos"])):
                w.writerow([k, label, fmt(m["rmse_pos"][k]), fmt(m["rmse_vel"][k]), fmt(m["anees"][k])])

    top = 0.0
    for m in per.values():
        err = m["ensemble"].errors
        top = max(top, float(np.linalg.norm(err[:, :, list(POSITION)], axis=-1).max()),
                  float(np.linalg.norm(err[:, :, list(VELOCITY)], axis=-1).max()))
    grid = np.linspace(0.0, top, CDF_POINTS)
    with (d / "cdf.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_HEADER)
        for label, m in per.items():
            cp = error_cdf(m["ensemble"], POSITION, grid)
            cv = error_cdf(m["ensemble"], VELOCITY, grid)
            for a, p, v in zip(grid, cp, cv):
                w.writerow([fmt(a), label, fmt(p), fmt(v)])

    with (d / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for label, m in per.items():
            row = [label, m["n_runs"]]
            for name in SUMMARY_METRICS:
                s = boxplot_summary(m[name])
                row += [fmt(s[f]) for f in SUMMARY_FIELDS]
            w.writerow(row)


def write_manifest(cfg: ExperimentConfig, result: ExperimentResult) -> None:
    manifest = {
        "package": "apbmtrack",
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "config": settings_to_text(cfg.settings),
        "n_mc": cfg.n_mc,
        "base_seed": cfg.base_seed,
        "seeds": [cfg.run_seed(r) for r in range(1, cfg.n_mc + 1)],
        "variants": result.labels,
        "failures": result.failures,
    }
    with (result.out_dir / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
