"""Experiment configuration: YAML file -> validated :class:`ExperimentConfig`."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..aggregate import AggregationConfig
from ..baseline import LangevinConfig
from ..schedule import NoiseSchedule, build_linear_schedule, uniform_substeps
from ..scoremodel import Condition, MixtureModel

KINDS = ("amdm", "ablation-linear", "ablation-stage", "ablation-eta", "theory-checks",
         "composition-2d", "stats-table")

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "trials": 1,
    "output": "results",
    "schedule": {"beta_start": 1e-4, "beta_end": 0.02, "T": 1000},
    "sampler": {"substeps": 50, "eta": 0.0},
    "aggregation": {"s": 20, "weights": [0.5], "etas": [0.3, 0.3], "stage_offset": 0,
                    "overshoot": "signed", "combine": "spherical"},
    "metrics": {"quantile": 0.05, "calibration_draws": 10000},
    "checks": {},
    "sweep": {},
}


class ConfigError(ValueError):
    """Raised for a malformed or inconsistent experiment config."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ModelSpec:
    name: str
    model: MixtureModel
    condition: Condition


@dataclass
class ExperimentConfig:
    """Parsed experiment settings.

    ``raw`` keeps the merged key-value tree; the typed attributes are derived
    from it and validated on construction.
    """

    kind: str
    seed: int
    trials: int
    output: str
    schedule: NoiseSchedule
    substeps: tuple[int, ...]
    eta_sampler: float
    models: list[ModelSpec]
    aggregation: AggregationConfig
    combine: str
    metrics: dict
    checks: dict
    sweep: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def conditions(self) -> list[Condition]:
        return [m.condition for m in self.models]

    @property
    def mixtures(self) -> list[MixtureModel]:
        return [m.model for m in self.models]

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.trials)]

    def langevin(self) -> LangevinConfig:
        lv = self.raw.get("langevin", {}) or {}
        return LangevinConfig(n_steps=int(lv.get("n_steps", 20)),
                              step_scale=float(lv.get("step_scale", 0.1)),
                              enabled=bool(lv.get("enabled", True)))

    def with_overrides(self, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if output is not None:
            raw["output"] = str(output)
        return parse_config(raw)


def _component_bank(spec: dict) -> tuple[np.ndarray, np.ndarray]:
    if "bank" in spec and "list" in spec:
        raise ConfigError("components: give either 'bank' or 'list', not both")
    if "bank" in spec:
        b = spec["bank"]
        count, dim = int(b["count"]), int(b["dim"])
        rng = np.random.default_rng(int(b.get("seed", 0)))
        means = float(b.get("scale", 1.0)) * rng.standard_normal((count, dim))
        variances = np.full(count, float(b.get("variance", 1.0)))
        return means, variances
    if "list" in spec:
        entries = spec["list"]
        means = np.array([e["mean"] for e in entries], dtype=float)
        if means.ndim != 2:
            raise ConfigError("component means must share one dimension")
        variances = np.array([float(e.get("variance", 1.0)) for e in entries])
        return means, variances
    raise ConfigError("components: need 'bank' or 'list'")


def _models(raw: dict) -> list[ModelSpec]:
    if "components" not in raw or "models" not in raw:
        if raw["kind"] == "theory-checks":
            return []
        raise ConfigError("config needs 'components' and 'models'")
    means, variances = _component_bank(raw["components"])
    out = []
    for k, m in enumerate(raw["models"]):
        name = str(m.get("name", f"model{k + 1}"))
        idx = [int(i) for i in m["components"]]
        if any(not 0 <= i < len(means) for i in idx):
            raise ConfigError(f"{name}: component index out of range")
        weights = m.get("weights")
        w = np.full(len(idx), 1.0 / len(idx)) if weights is None else np.asarray(weights, float)
        labels = {str(lbl): tuple(int(i) for i in sel)
                  for lbl, sel in (m.get("conditions") or {}).items()}
        try:
            model = MixtureModel(means[idx], variances[idx], w, labels)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
        c = m.get("condition") or {}
        cond = Condition(c.get("label"), float(c.get("guidance_scale", 0.0)))
        if cond.label is not None and cond.label not in labels:
            raise ConfigError(f"{name}: condition {cond.label!r} is not declared")
        out.append(ModelSpec(name, model, cond))
    if len({s.model.dim for s in out}) > 1:
        raise ConfigError("models disagree on latent dimension")
    return out


def parse_config(tree: dict) -> ExperimentConfig:
    """Validate a key-value tree (as loaded from YAML) into a config."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    raw = _merge(_DEFAULTS, tree)
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    trials = int(raw["trials"])
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    sch = raw["schedule"]
    try:
        schedule = build_linear_schedule(float(sch["beta_start"]), float(sch["beta_end"]),
                                         int(sch["T"]))
        substeps = uniform_substeps(schedule.T, int(raw["sampler"]["substeps"]))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    models = _models(raw)
    a = raw["aggregation"]
    combine = str(a.get("combine", "spherical"))
    if combine not in ("spherical", "linear"):
        raise ConfigError(f"aggregation.combine must be spherical or linear, got {combine!r}")
    try:
        agg = AggregationConfig(s=int(a["s"]), weights=tuple(a["weights"]), etas=tuple(a["etas"]),
                                stage_offset=int(a["stage_offset"]),
                                overshoot=str(a["overshoot"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"aggregation: {exc}") from exc
    if kind in ("amdm", "ablation-linear", "ablation-stage", "ablation-eta", "stats-table",
                "composition-2d"):
        if len(models) < 2:
            raise ConfigError(f"{kind} needs at least two models")
        if agg.n_models != len(models):
            raise ConfigError(f"aggregation.etas has {agg.n_models} entries for {len(models)} models")
        if kind != "composition-2d" and agg.stage_offset + agg.s > len(substeps):
            raise ConfigError("aggregation window exceeds the number of reverse steps")
    return ExperimentConfig(
        kind=kind, seed=int(raw["seed"]), trials=trials, output=str(raw["output"]),
        schedule=schedule, substeps=substeps, eta_sampler=float(raw["sampler"]["eta"]),
        models=models, aggregation=agg, combine=combine, metrics=dict(raw["metrics"]),
        checks=dict(raw["checks"] or {}), sweep=dict(raw["sweep"] or {}), raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(tree or {})


def bundled_configs() -> dict[str, Path]:
    """Name -> path of the example configs shipped with the package."""
    root = Path(__file__).resolve().parent.parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}
