"""Experiment configuration: TOML parsing, validation, canonical hashing.

The config file is a single TOML document with one flat table per module
section ([policy], [tasks], [train], [sampler], [probe], [metrics]) plus
top-level seed / output_dir / workers keys. Tasks come either from a named
preset or from [[tasks.custom]] entries.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from gradlens.engine import TrainConfig
from gradlens.errors import ConfigError
from gradlens.policy import PolicySpec
from gradlens.scheduler import MODES
from gradlens.tasks import TaskSpec, task_registry

ASSIGNMENTS = ("per_group", "per_batch")


@dataclass
class SamplerConfig:
    mode: str = "uniform"
    temperature: float = 0.01
    floor: float = 0.1
    assignment: str = "per_group"


@dataclass
class ProbeConfig:
    ema_coeff: float = 0.95
    subset: str | tuple = "last"
    split_rule: str = "halves"


@dataclass
class MetricsConfig:
    gain_window: int = 25
    num_points: int = 3
    reward_smooth: float = 0.7
    norm_smooth: float = 0.9
    length_smooth: float = 0.5


@dataclass
class ExperimentConfig:
    policy: PolicySpec
    tasks: list[TaskSpec]
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1

    def validate(self) -> None:
        self.policy.validate()
        if not self.tasks:
            raise ConfigError("no tasks configured")
        for task in self.tasks:
            task.validate()
            if (task.context_dim, task.action_count) != (
                self.policy.context_dim,
                self.policy.action_count,
            ):
                raise ConfigError(
                    f"task {task.id} dimensions do not match the policy head"
                )
        self.train.validate()
        if self.sampler.mode not in MODES:
            raise ConfigError(f"unknown sampler mode {self.sampler.mode!r}")
        if self.sampler.assignment not in ASSIGNMENTS:
            raise ConfigError(f"unknown assignment {self.sampler.assignment!r}")
        m = len(self.tasks)
        if self.sampler.mode == "grad_prop":
            if m < 2:
                raise ConfigError("grad_prop sampling needs at least 2 tasks")
            if self.sampler.temperature <= 0:
                raise ConfigError("sampler temperature must be > 0")
            if not 0.0 <= self.sampler.floor <= 1.0 / m + 1e-12:
                raise ConfigError(f"floor must be in [0, 1/{m}]")
        if not 0.0 <= self.probe.ema_coeff < 1.0:
            raise ConfigError("probe ema_coeff must be in [0, 1)")
        if self.probe.split_rule != "halves":
            raise ConfigError(f"unknown split rule {self.probe.split_rule!r}")
        if self.metrics.gain_window < 1 or self.metrics.num_points < 1:
            raise ConfigError("metrics gain_window and num_points must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def resolved_dict(self) -> dict:
        return {
            "policy": dataclasses.asdict(self.policy),
            "tasks": [dataclasses.asdict(t) for t in self.tasks],
            "train": dataclasses.asdict(self.train),
            "sampler": dataclasses.asdict(self.sampler),
            "probe": {
                "ema_coeff": self.probe.ema_coeff,
                "subset": list(self.probe.subset)
                if not isinstance(self.probe.subset, str)
                else self.probe.subset,
                "split_rule": self.probe.split_rule,
            },
            "metrics": dataclasses.asdict(self.metrics),
            "seed": self.seed,
            "workers": self.workers,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _section(doc: dict, name: str) -> dict:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(section)


def _build_dataclass(cls, table: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**table)


def config_from_dict(doc: dict) -> ExperimentConfig:
    seed = int(doc.get("seed", 0))

    policy_table = _section(doc, "policy")
    policy_table.setdefault("init_seed", seed)
    policy = _build_dataclass(PolicySpec, policy_table, "policy")

    tasks_table = _section(doc, "tasks")
    preset = tasks_table.get("preset")
    custom = tasks_table.get("custom")
    if preset and custom:
        raise ConfigError("[tasks] must give either a preset or custom entries")
    if preset:
        tasks = task_registry(preset, seed=seed)
    elif custom:
        entries = []
        for entry in custom:
            entry = dict(entry)
            entry.setdefault("seed", seed)
            entry.setdefault("context_dim", policy.context_dim)
            entry.setdefault("action_count", policy.action_count)
            entries.append(entry)
        tasks = task_registry(entries, seed=seed)
    else:
        raise ConfigError("[tasks] needs a preset name or [[tasks.custom]] entries")

    train = _build_dataclass(TrainConfig, _section(doc, "train"), "train")
    sampler = _build_dataclass(SamplerConfig, _section(doc, "sampler"), "sampler")
    probe_table = _section(doc, "probe")
    if "subset" in probe_table and not isinstance(probe_table["subset"], str):
        probe_table["subset"] = tuple(probe_table["subset"])
    probe = _build_dataclass(ProbeConfig, probe_table, "probe")

    metrics_table = _section(doc, "metrics")
    if "gain_window" not in metrics_table:
        metrics_table["gain_window"] = 75 if preset == "multi_domain_analog" else 25
    metrics = _build_dataclass(MetricsConfig, metrics_table, "metrics")

    config = ExperimentConfig(
        policy=policy,
        tasks=tasks,
        train=train,
        sampler=sampler,
        probe=probe,
        metrics=metrics,
        seed=seed,
        output_dir=doc.get("output_dir"),
        workers=int(doc.get("workers", 1)),
    )
    config.validate()
    return config


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if seed_override is not None:
        doc["seed"] = int(seed_override)
    return config_from_dict(doc)


def load_grid(path) -> dict:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    grid = doc.get("grid", doc)
    temps = grid.get("temperatures", [0.1, 0.01, 0.001])
    if not temps and not grid.get("include_uniform", True):
        raise ConfigError("sweep grid is empty")
    return {
        "temperatures": [float(t) for t in temps],
        "include_uniform": bool(grid.get("include_uniform", True)),
    }
