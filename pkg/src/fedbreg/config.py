"""Experiment configuration: schema, parser, serializer.

Config files are flat text, one ``section.key = value`` per line, ``#``
comments, blank lines allowed.  Every key is declared in SCHEMA below with a
type, default, and range check; unknown keys, duplicate keys, type errors,
and range violations are all reported with the key name and line number.
``serialize_config`` emits the fully resolved config (all defaults
materialized) in canonical order, and parsing that text reproduces the same
ExperimentConfig exactly, so a run can always be reproduced from the resolved
copy it writes next to its outputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field
from typing import Callable

from .algorithms import STRATEGIES, TrainerConfig
from .data import PartitionError  # noqa: F401  (re-exported for callers)
from .federation import WEIGHTINGS, RoundConfig

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA", "parse_config", "parse_config_text", "serialize_config"]

_REQUIRED = object()


class ConfigError(ValueError):
    """Config file problem; message carries key and, when known, line number."""


@dataclass(frozen=True)
class Field:
    key: str
    kind: str  # int | float | bool | str | optfloat
    default: object
    choices: tuple = ()
    check: Callable[[object], str | None] | None = None
    help: str = ""

    def parse(self, token: str, origin: str, lineno: int):
        where = f"{origin}:{lineno}: {self.key}"
        if self.kind == "int":
            try:
                value = int(token, 10)
            except ValueError:
                raise ConfigError(f"{where}: expected an integer, got {token!r}") from None
        elif self.kind in ("float", "optfloat"):
            if self.kind == "optfloat" and token.lower() == "none":
                value = None
            else:
                try:
                    value = float(token)
                except ValueError:
                    raise ConfigError(f"{where}: expected a number, got {token!r}") from None
                if value != value or value in (float("inf"), float("-inf")):
                    raise ConfigError(f"{where}: value must be finite, got {token!r}")
        elif self.kind == "bool":
            low = token.lower()
            if low not in ("true", "false"):
                raise ConfigError(f"{where}: expected true or false, got {token!r}")
            value = low == "true"
        elif self.kind == "str":
            value = token
        else:  # pragma: no cover - schema bug
            raise AssertionError(f"bad field kind {self.kind}")
        self.validate(value, where)
        return value

    def validate(self, value, where: str):
        if self.choices and value not in self.choices:
            raise ConfigError(f"{where}: {value!r} is not one of {self.choices}")
        if self.check is not None and value is not None:
            msg = self.check(value)
            if msg:
                raise ConfigError(f"{where} = {value}: {msg}")

    def format(self, value) -> str:
        if value is None:
            return "none"
        if self.kind == "bool":
            return "true" if value else "false"
        return str(value)


def _positive(v) -> str | None:
    return None if v > 0 else "must be positive"


def _non_negative(v) -> str | None:
    return None if v >= 0 else "must be >= 0"


def _at_least_one(v) -> str | None:
    return None if v >= 1 else "must be >= 1"


def _fraction_open(v) -> str | None:
    return None if 0.0 < v < 1.0 else "must lie strictly between 0 and 1"


def _ratio_half_open(v) -> str | None:
    return None if 0.0 < v <= 1.0 else "must lie in (0, 1]"


SCHEMA: dict[str, Field] = {
    f.key: f
    for f in [
        Field("dataset.source", "str", _REQUIRED, choices=("synthetic", "idx"),
              help="where the data pool comes from"),
        Field("dataset.images_path", "str", "", help="IDX image file (source=idx)"),
        Field("dataset.labels_path", "str", "", help="IDX label file (source=idx)"),
        Field("dataset.test_images_path", "str", "",
              help="optional second IDX image file pooled in before partitioning"),
        Field("dataset.test_labels_path", "str", "", help="optional second IDX label file"),
        Field("dataset.num_classes", "int", 10, check=_at_least_one,
              help="synthetic class count"),
        Field("dataset.examples_per_class", "int", 200, check=_at_least_one),
        Field("dataset.input_dim", "int", 60, check=_at_least_one),
        Field("dataset.class_separation", "float", 2.0, check=_non_negative,
              help="distance of class means from the origin, in noise sigmas"),
        Field("dataset.partition", "str", "label_skew", choices=("label_skew", "dirichlet")),
        Field("dataset.classes_per_client", "int", 3, check=_at_least_one),
        Field("dataset.dirichlet_alpha", "float", 0.5, check=_positive),
        Field("dataset.min_samples", "int", 2, check=_non_negative),
        Field("dataset.num_clients", "int", 20, check=_at_least_one),
        Field("dataset.train_fraction", "float", 0.75, check=_fraction_open),
        Field("model.kind", "str", "mclr", choices=("mclr", "dnn")),
        Field("model.hidden_dim", "int", 100, check=_at_least_one),
        Field("model.leaky_slope", "float", 0.01, check=_non_negative),
        Field("model.init_scheme", "str", "normal", choices=("zeros", "uniform", "normal")),
        Field("model.init_scale", "float", 0.05, check=_positive),
        Field("trainer.strategy", "str", _REQUIRED, choices=STRATEGIES),
        Field("trainer.lambda", "float", 15.0, check=_positive,
              help="prox regularization weight"),
        Field("trainer.eta", "float", 0.05, check=_non_negative,
              help="memory pull stepsize (mfo/mg families)"),
        Field("trainer.eta_alpha", "float", 0.01, check=_non_negative,
              help="gradient pull stepsize (fo/mg families)"),
        Field("trainer.alpha_m", "float", 0.01, check=_non_negative,
              help="outer (main) local stepsize"),
        Field("trainer.alpha", "float", 0.01, check=_non_negative,
              help="inner prox / plain SGD stepsize"),
        Field("trainer.prox_steps", "int", 5, check=_at_least_one),
        Field("trainer.batch_size", "int", 20, check=_at_least_one),
        Field("trainer.ft_enabled", "bool", False,
              help="one extra evaluation-time fine-tuning step"),
        Field("trainer.tilde_eta_alpha", "optfloat", None, check=_non_negative),
        Field("trainer.tilde_eta", "optfloat", None, check=_non_negative),
        Field("trainer.memorized_outer_step", "bool", False),
        Field("federation.rounds", "int", 100, check=_at_least_one),
        Field("federation.local_iters", "int", 20, check=_at_least_one),
        Field("federation.sample_ratio", "float", 0.2, check=_ratio_half_open),
        Field("federation.beta", "float", 1.0, check=_positive),
        Field("federation.aggregation_weighting", "str", "by_data_count", choices=WEIGHTINGS),
        Field("federation.train_only_sampled", "bool", False),
        Field("run.seed", "int", 0, check=_non_negative),
        Field("run.output_dir", "str", "output"),
        Field("run.eval_cadence", "int", 1, check=_at_least_one),
    ]
}


@dataclass
class ExperimentConfig:
    """Fully resolved, validated key -> value map over SCHEMA."""

    values: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in SCHEMA if k not in self.values]
        extra = [k for k in self.values if k not in SCHEMA]
        if missing or extra:
            raise ConfigError(
                f"ExperimentConfig must cover the schema exactly; "
                f"missing={missing}, unknown={extra}"
            )
        self._cross_validate()

    def _cross_validate(self):
        if self["dataset.source"] == "idx":
            for key in ("dataset.images_path", "dataset.labels_path"):
                if not self[key]:
                    raise ConfigError(f"{key} is required when dataset.source = idx")
        elif self["dataset.partition"] == "label_skew":
            if self["dataset.classes_per_client"] > self["dataset.num_classes"]:
                raise ConfigError(
                    f"dataset.classes_per_client = {self['dataset.classes_per_client']} "
                    f"exceeds dataset.num_classes = {self['dataset.num_classes']}"
                )

    def __getitem__(self, key: str):
        return self.values[key]

    def replaced(self, key: str, value) -> "ExperimentConfig":
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        SCHEMA[key].validate(value, key)
        fresh = dict(self.values)
        fresh[key] = value
        return ExperimentConfig(fresh)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            strategy=self["trainer.strategy"],
            lambda_reg=self["trainer.lambda"],
            eta=self["trainer.eta"],
            eta_alpha=self["trainer.eta_alpha"],
            alpha_m=self["trainer.alpha_m"],
            alpha=self["trainer.alpha"],
            prox_steps=self["trainer.prox_steps"],
            local_iters=self["federation.local_iters"],
            batch_size=self["trainer.batch_size"],
            ft_enabled=self["trainer.ft_enabled"],
            tilde_eta_alpha=self["trainer.tilde_eta_alpha"],
            tilde_eta=self["trainer.tilde_eta"],
            memorized_outer_step=self["trainer.memorized_outer_step"],
        )

    def round_config(self) -> RoundConfig:
        return RoundConfig(
            total_rounds=self["federation.rounds"],
            sample_ratio=self["federation.sample_ratio"],
            beta=self["federation.beta"],
            aggregation_weighting=self["federation.aggregation_weighting"],
            train_only_sampled=self["federation.train_only_sampled"],
        )

    def check_files(self):
        """Existence checks for referenced files (run/validate time)."""
        if self["dataset.source"] != "idx":
            return
        keys = ["dataset.images_path", "dataset.labels_path"]
        if self["dataset.test_images_path"] or self["dataset.test_labels_path"]:
            keys += ["dataset.test_images_path", "dataset.test_labels_path"]
        for key in keys:
            path = self[key]
            if not path or not os.path.isfile(path):
                raise ConfigError(f"{key}: file not found: {path!r}")


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    values: dict = {}
    lines_seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, token = line.partition("=")
        key = key.strip()
        token = token.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in lines_seen:
            raise ConfigError(
                f"{origin}:{lineno}: duplicate key {key} (first set on line {lines_seen[key]})"
            )
        lines_seen[key] = lineno
        values[key] = SCHEMA[key].parse(token, origin, lineno)
    for key, field in SCHEMA.items():
        if key in values:
            continue
        if field.default is _REQUIRED:
            raise ConfigError(f"{origin}: missing required key {key}")
        values[key] = field.default
    return ExperimentConfig(values)


def parse_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=path)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical resolved text; parse_config_text of it reproduces cfg."""
    lines = []
    section = None
    for key, field in SCHEMA.items():
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            lines.append(f"# {head}")
            section = head
        lines.append(f"{key} = {field.format(cfg[key])}")
    return "\n".join(lines) + "\n"
