"""Comparison tables, qualitative ordering checks and figures."""

from __future__ import annotations

import csv
import re
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidValueError
from .truth import fmt

SLACK = 0.03
FIG3_TOLERANCE = 0.10
PASS, FAIL, TIE, NOT_EVALUABLE = "pass", "fail", "tie", "not-evaluable"
_SSA_LABEL = re.compile(r"^APBM_SSA_e=(.+)$")


@dataclass(frozen=True)
class Check:
    name: str
    status: str
    detail: str


def read_metrics(path) -> "OrderedDict[str, dict[str, np.ndarray]]":
    """Load a metrics CSV into ``{variant: {rmse_pos, rmse_vel, anees}}`` keeping file order."""
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.csv"
    cols: OrderedDict[str, dict[str, list[float]]] = OrderedDict()
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            m = cols.setdefault(row["variant"], {"rmse_pos": [], "rmse_vel": [], "anees": []})
            for key in m:
                m[key].append(float(row[key]))
    return OrderedDict((v, {k: np.asarray(x) for k, x in m.items()}) for v, m in cols.items())


def merge_metrics(sources) -> "OrderedDict[str, dict[str, np.ndarray]]":
    """Combine several metrics files; a repeated variant name gets an ``@source`` suffix."""
    merged: OrderedDict[str, dict[str, np.ndarray]] = OrderedDict()
    for src in sources:
        for label, m in read_metrics(src).items():
            key = label if label not in merged else f"{label}@{Path(src).name}"
            merged[key] = m
    return merged


def median_table(metrics) -> list[dict]:
    return [
        {"variant": label, "median_rmse_pos": float(np.median(m["rmse_pos"])),
         "median_rmse_vel": float(np.median(m["rmse_vel"])), "median_anees": float(np.median(m["anees"]))}
        for label, m in metrics.items()
    ]


def _ssa_grid(table) -> list[tuple[float, dict]]:
    out = []
    for row in table:
        m = _SSA_LABEL.match(row["variant"])
        if m:
            out.append((float(m.group(1)), row))
    return sorted(out, key=lambda t: t[0])


def _less(name, a, b, what) -> Check:
    if a == b:
        return Check(name, TIE, f"{what}: both {a:.6g}")
    return Check(name, PASS if a < b else FAIL, f"{what}: {a:.6g} vs {b:.6g}")


def _trend(name, values, eps, increasing: bool, slack: float = SLACK) -> Check:
    """Adjacent comparisons along ascending ``eps``; each step may go the wrong way by ``slack``."""
    if len(values) < 2:
        return Check(name, NOT_EVALUABLE, "fewer than two APBM_SSA thresholds")
    if all(v == values[0] for v in values):
        return Check(name, TIE, "all values equal")
    bad = []
    for i in range(len(values) - 1):
        lo, hi = (values[i], values[i + 1]) if increasing else (values[i + 1], values[i])
        if lo > hi * (1.0 + slack):
            bad.append(f"eps {eps[i]:g}->{eps[i + 1]:g}")
    detail = ", ".join(f"{e:g}:{v:.6g}" for e, v in zip(eps, values))
    return Check(name, FAIL if bad else PASS, detail + ("; violations " + ", ".join(bad) if bad else ""))


def ordering_checks(table) -> list[Check]:
    """Qualitative orderings expected of a benchmark run.

    ``fig2_*`` need the PBM and APBM rows; the ``ssa_*`` trends need at
    least two APBM_SSA thresholds; ``fig3_position`` needs an
    ``APBM_UNCONSTRAINED`` row.
    """
    rows = {r["variant"]: r for r in table}
    checks = []
    if "PBM" in rows and "APBM" in rows:
        checks.append(_less("fig2_position_apbm_below_pbm", rows["APBM"]["median_rmse_pos"],
                            rows["PBM"]["median_rmse_pos"], "median position RMSE APBM vs PBM"))
        checks.append(_less("fig2_velocity_pbm_below_apbm", rows["PBM"]["median_rmse_vel"],
                            rows["APBM"]["median_rmse_vel"], "median velocity RMSE PBM vs APBM"))
    else:
        for name in ("fig2_position_apbm_below_pbm", "fig2_velocity_pbm_below_apbm"):
            checks.append(Check(name, NOT_EVALUABLE, "needs PBM and APBM"))

    grid = _ssa_grid(table)
    eps = [e for e, _ in grid]
    checks.append(_trend("ssa_position_nonincreasing_in_eps", [r["median_rmse_pos"] for _, r in grid], eps,
                         increasing=False))
    checks.append(_trend("ssa_velocity_nondecreasing_in_eps", [r["median_rmse_vel"] for _, r in grid], eps,
                         increasing=True))

    if "APBM_UNCONSTRAINED" in rows and grid:
        ref = rows["APBM_UNCONSTRAINED"]["median_rmse_pos"]
        rel = [abs(r["median_rmse_pos"] - ref) / ref for _, r in grid]
        worst = max(rel)
        status = TIE if worst == 0 else (PASS if worst <= FIG3_TOLERANCE else FAIL)
        checks.append(Check("fig3_position_near_unconstrained", status,
                            f"max relative deviation {worst:.4f} (limit {FIG3_TOLERANCE})"))
    else:
        checks.append(Check("fig3_position_near_unconstrained", NOT_EVALUABLE,
                            "needs APBM_UNCONSTRAINED and APBM_SSA"))
    return checks


def compare(sources) -> tuple[list[dict], list[Check]]:
    metrics = merge_metrics(sources)
    if len(metrics) < 2:
        raise InvalidValueError("comparison needs at least two variants")
    table = median_table(metrics)
    return table, ordering_checks(table)


def format_report(table, checks) -> str:
    width = max(len(r["variant"]) for r in table)
    lines = [f"{'variant':<{width}}  {'rmse_pos':>12}  {'rmse_vel':>12}  {'anees':>12}"]
    for r in table:
        lines.append(f"{r['variant']:<{width}}  {r['median_rmse_pos']:>12.6g}  {r['median_rmse_vel']:>12.6g}"
                     f"  {r['median_anees']:>12.6g}")
    lines.append("")
    for c in checks:
        lines.append(f"[{c.status}] {c.name}: {c.detail}")
    return "\n".join(lines) + "\n"


def write_comparison(table, checks, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "median_rmse_pos", "median_rmse_vel", "median_anees"])
        for r in table:
            w.writerow([r["variant"], fmt(r["median_rmse_pos"]), fmt(r["median_rmse_vel"]), fmt(r["median_anees"])])
    with (out_dir / "checks.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "status", "detail"])
        for c in checks:
            w.writerow([c.name, c.status, c.detail])


def read_cdf(path) -> "OrderedDict[str, dict[str, np.ndarray]]":
    out: OrderedDict[str, dict[str, list[float]]] = OrderedDict()
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            d = out.setdefault(row["variant"], {"abscissa": [], "cdf_pos": [], "cdf_vel": []})
            for key in d:
                d[key].append(float(row[key]))
    return OrderedDict((v, {k: np.asarray(x) for k, x in d.items()}) for v, d in out.items())


def render_figures(run_dir, out_dir=None) -> list[Path]:
    """Box plots of per-step RMSE/ANEES, RMSE over time and error CDFs as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    out_dir = Path(out_dir or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = read_metrics(run_dir / "metrics.csv")
    labels = list(metrics)
    written = []

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    for ax, key, title in zip(axes, ("rmse_pos", "rmse_vel", "anees"),
                              ("position RMSE", "velocity RMSE", "ANEES")):
        ax.boxplot([metrics[v][key] for v in labels], whis=(0, 100))
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(title)
        if key == "anees":
            ax.set_yscale("log")
    fig.tight_layout()
    written.append(out_dir / "boxplots.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(12, 4.5))
    for ax, key, title in zip(axes, ("rmse_pos", "rmse_vel"), ("position RMSE", "velocity RMSE")):
        for v in labels:
            ax.plot(metrics[v][key], label=v, lw=1)
        ax.set_xlabel("k")
        ax.set_title(title)
        ax.set_yscale("log")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    written.append(out_dir / "rmse_time.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    cdf_path = run_dir / "cdf.csv"
    if cdf_path.exists():
        cdf = read_cdf(cdf_path)
        fig, axes = plt.subplots(1, 2, figsize=(12, 4.5))
        for ax, key, title in zip(axes, ("cdf_pos", "cdf_vel"), ("position error CDF", "velocity error CDF")):
            for v, d in cdf.items():
                ax.plot(d["abscissa"], d[key], label=v, lw=1)
            ax.set_xscale("symlog", linthresh=1e-2)
            ax.set_xlabel("error norm")
            ax.set_title(title)
            ax.set_ylim(0, 1.02)
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        written.append(out_dir / "cdf.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    return written
