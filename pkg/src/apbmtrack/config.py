"""Experiment configuration: a flat ``key = value`` text format.

Example::

    # desk-scale velocity-only run
    experiment.profile = desk
    experiment.selection = velocity
    experiment.epsilons = 0.03, 0.1, 1
    truth.T = 200
    filter.q_theta_var = 1e-6

Keys carry a section prefix (``truth.``, ``filter.``, ``experiment.``).
Unknown keys are rejected. Omitted keys take the defaults listed in
``SCHEMA``; ``experiment.profile`` first sets ``n_mc`` and ``truth.T``,
explicit keys override it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .constraint import FULL_SELECTION, MIN_EPSILON, VELOCITY_SELECTION, ConstraintSpec, default_reg_lambda
from .errors import ApbmTrackError, ConfigError
from .estimator import Q_PBM_FORMS, FilterConfig, pbm_process_noise
from .truth import CT_FORMS, ENTRY12_MODES, TruthConfig

PROFILES = {
    "paper": {"experiment.n_mc": 100, "truth.T": 1000},
    "desk": {"experiment.n_mc": 25, "truth.T": 300},
}
VARIANT_NAMES = ("TM", "PBM", "APBM", "APBM_UNCONSTRAINED", "APBM_SSA")
SELECTIONS = {"full": FULL_SELECTION, "velocity": VELOCITY_SELECTION}


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    f = float(s)
    if f != int(f):
        raise ValueError("must be an integer")
    return int(f)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("must be true or false")


def _floats(n: int | None = None) -> Callable[[str], tuple[float, ...]]:
    def parse(s: str) -> tuple[float, ...]:
        vals = tuple(_float(p) for p in s.replace(";", ",").split(",") if p.strip())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return vals

    return parse


def _choice(options) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s

    return parse


def _names(s: str) -> tuple[str, ...]:
    names = tuple(p.strip() for p in s.split(",") if p.strip())
    bad = [n for n in names if n not in VARIANT_NAMES]
    if bad:
        raise ValueError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANT_NAMES)}")
    if not names:
        raise ValueError("at least one variant is required")
    return names


def _auto(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    """``auto`` maps to None (the built-in default), anything else goes to ``parse``."""

    def wrapped(s: str):
        return None if s.strip() == "auto" else parse(s)

    return wrapped


def _matrix2(s: str) -> tuple[tuple[float, float], tuple[float, float]]:
    v = _floats()(s)
    if len(v) == 2:
        return ((v[0], 0.0), (0.0, v[1]))
    if len(v) == 4:
        return ((v[0], v[1]), (v[2], v[3]))
    raise ValueError("expected 2 diagonal entries or 4 row-major entries")


_truth_defaults = TruthConfig()

# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "truth.Ts": (_float, _truth_defaults.Ts),
    "truth.q_var": (_float, _truth_defaults.q_var),
    "truth.omega_var": (_float, _truth_defaults.omega_var),
    "truth.x0": (_floats(4), _truth_defaults.x0),
    "truth.omega0": (_float, _truth_defaults.omega0),
    "truth.T": (_int, 1000),
    "truth.sensor_pos": (_floats(2), _truth_defaults.sensor_pos),
    "truth.psi0_dbm": (_float, _truth_defaults.psi0_dbm),
    "truth.alpha": (_float, _truth_defaults.alpha),
    "truth.R": (_matrix2, _truth_defaults.R),
    "truth.ct_form": (_choice(CT_FORMS), _truth_defaults.ct_form),
    "truth.ct_entry12": (_choice(ENTRY12_MODES), _truth_defaults.ct_entry12),
    "experiment.profile": (_choice(tuple(PROFILES)), "paper"),
    "experiment.n_mc": (_int, 100),
    "experiment.base_seed": (_int, 0),
    "experiment.out_dir": (str.strip, "results"),
    "experiment.workers": (_int, 1),
    "experiment.variants": (_names, ("PBM", "APBM", "APBM_SSA")),
    "experiment.epsilons": (_floats(), (0.03, 0.1, 1.0)),
    "experiment.selection": (_choice(tuple(SELECTIONS)), "full"),
    "experiment.write_theta": (_bool, False),
    "filter.x0_hat": (_auto(_floats(4)), None),
    "filter.P0_x": (_floats(4), (1.0, 0.1, 1.0, 0.1)),
    "filter.P0_theta_scale": (_float, 1e-2),
    "filter.q_theta_var": (_float, 1e-6),
    "filter.param_reg_strength": (_float, 1e2),
    "filter.q_pbm_var": (_float, 0.1),
    "filter.q_pbm_form": (_choice(Q_PBM_FORMS), "cwna"),
    "filter.metric": (_choice(("SSA", "SSR")), "SSA"),
    "filter.metric_root": (_bool, False),
    "filter.reg_lambda": (_auto(_float), None),
    "filter.theta0_seed": (_auto(_int), None),
    "filter.theta0_weight_var": (_float, 1e-4),
    "filter.omega0_hat": (_auto(_float), None),
    "filter.P0_omega": (_float, 1e-4),
    "filter.tm_knows_omega": (_bool, False),
}


@dataclass
class ExperimentConfig:
    truth: TruthConfig
    filters: list[FilterConfig]
    n_mc: int
    out_dir: Path
    base_seed: int = 0
    workers: int = 1
    settings: dict[str, Any] = field(default_factory=dict)

    @property
    def selection(self) -> str:
        return self.settings.get("experiment.selection", "full")

    def run_seed(self, r: int) -> int:
        """Seed of Monte-Carlo run ``r`` (1-based)."""
        return self.base_seed + r


def parse_settings(text: str) -> tuple[dict[str, Any], set[str]]:
    """Parse ``key = value`` lines into typed values; returns (values, explicitly-set keys)."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, key=key)
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {exc}", line=lineno, key=key) from exc
    return values, set(values)


def resolve(values: dict[str, Any], profile: str | None = None) -> dict[str, Any]:
    """Defaults, then profile, then explicit values."""
    out = {k: default for k, (_, default) in SCHEMA.items()}
    prof = profile or values.get("experiment.profile", out["experiment.profile"])
    if prof not in PROFILES:
        raise ConfigError(f"unknown profile {prof!r}", key="experiment.profile")
    out.update(PROFILES[prof])
    out["experiment.profile"] = prof
    out.update({k: v for k, v in values.items() if k != "experiment.profile"})
    return out


def build_truth(s: dict[str, Any], seed: int = 0) -> TruthConfig:
    kwargs = {k.split(".", 1)[1]: v for k, v in s.items() if k.startswith("truth.")}
    try:
        return TruthConfig(seed=seed, **kwargs)
    except ApbmTrackError as exc:
        key = next((f"truth.{name}" for name in kwargs if name in str(exc)), None)
        raise ConfigError(f"invalid truth configuration: {exc}", key=key) from exc


def build_filters(s: dict[str, Any]) -> list[FilterConfig]:
    Ts = s["truth.Ts"]
    Q = pbm_process_noise(Ts, s["filter.q_pbm_var"], s["filter.q_pbm_form"])
    common = dict(
        x0_hat=s["filter.x0_hat"],
        P0_x=s["filter.P0_x"],
        Q_pbm=Q,
    )
    apbm = dict(
        common,
        P0_theta_scale=s["filter.P0_theta_scale"],
        q_theta_var=s["filter.q_theta_var"],
        theta0_weight_var=s["filter.theta0_weight_var"],
    )
    filters = []
    for name in s["experiment.variants"]:
        if name == "TM":
            filters.append(FilterConfig("TM", omega0_hat=s["filter.omega0_hat"], P0_omega=s["filter.P0_omega"],
                                        tm_knows_omega=s["filter.tm_knows_omega"], **common))
        elif name == "PBM":
            filters.append(FilterConfig("PBM", **common))
        elif name == "APBM":
            filters.append(FilterConfig("APBM_PARAM_REG", param_reg_strength=s["filter.param_reg_strength"],
                                        name="APBM", **apbm))
        elif name == "APBM_UNCONSTRAINED":
            filters.append(FilterConfig("APBM_PARAM_REG", param_reg_strength=0.0, name="APBM_UNCONSTRAINED", **apbm))
        else:
            selection = SELECTIONS[s["experiment.selection"]]
            reg = s["filter.reg_lambda"]
            if reg is None:
                reg = default_reg_lambda(Q, selection)
            for eps in s["experiment.epsilons"]:
                spec = ConstraintSpec.from_q_pbm(Q, s["filter.metric"], eps, selection, reg, s["filter.metric_root"])
                filters.append(FilterConfig("APBM_SSA", constraint=spec, **apbm))
    return filters


def parse_config(text: str, profile: str | None = None) -> ExperimentConfig:
    """Parse and validate an experiment description.

    Raises:
        ConfigError: on syntax errors (with line number) or invalid values
            (naming the key).
    """
    values, _ = parse_settings(text)
    s = resolve(values, profile)
    if s["experiment.n_mc"] < 1:
        raise ConfigError("n_mc must be >= 1", key="experiment.n_mc")
    if s["experiment.workers"] < 1:
        raise ConfigError("workers must be >= 1", key="experiment.workers")
    if "APBM_SSA" in s["experiment.variants"]:
        if not s["experiment.epsilons"]:
            raise ConfigError("APBM_SSA needs at least one epsilon", key="experiment.epsilons")
        if any(e < MIN_EPSILON for e in s["experiment.epsilons"]):
            raise ConfigError(f"epsilon values must be >= {MIN_EPSILON}", key="experiment.epsilons")
    for key in ("filter.P0_theta_scale", "filter.q_theta_var", "filter.param_reg_strength", "filter.q_pbm_var",
                "filter.theta0_weight_var", "filter.P0_omega", "truth.q_var", "truth.omega_var"):
        if s[key] < 0:
            raise ConfigError(f"{key} must be >= 0", key=key)
    if any(v < 0 for v in s["filter.P0_x"]):
        raise ConfigError("filter.P0_x variances must be >= 0", key="filter.P0_x")
    truth = build_truth(s, seed=s["experiment.base_seed"])
    try:
        filters = build_filters(s)
    except ConfigError:
        raise
    except ApbmTrackError as exc:
        raise ConfigError(f"invalid filter configuration: {exc}") from exc
    return ExperimentConfig(
        truth=truth,
        filters=filters,
        n_mc=s["experiment.n_mc"],
        out_dir=Path(s["experiment.out_dir"]),
        base_seed=s["experiment.base_seed"],
        workers=s["experiment.workers"],
        settings=s,
    )


def load_config(path: str | Path | None, profile: str | None = None) -> ExperimentConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, profile)


def settings_to_text(s: dict[str, Any]) -> str:
    """Render resolved settings back into the config format (used in the manifest)."""
    lines = []
    for key in SCHEMA:
        v = s[key]
        if v is None:
            v = "auto"
        elif isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, tuple):
            v = ", ".join(str(x) for x in np.asarray(v, dtype=object).ravel()) if v else ""
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
