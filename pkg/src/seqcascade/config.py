"""Model/run configuration: defaults, flat key-value config files, and flag
overrides (flags > file > defaults)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError

DECODING_MODES = ("char", "token", "token+char")


@dataclass
class ModelConfig:
    """Hyperparameters of one cascade model and its training run."""

    tasks: list[str] = field(default_factory=list)  # cascade order
    decoding: str = "char"  # source unit granularity the model was trained on
    embed_dim: int = 256
    hidden_dim: int = 256
    encoder_layers: int = 3
    decoder_layers: int = 3
    learning_rate: float = 5e-4
    dropout: float = 0.5
    clip_norm: float = 5.0
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 1
    target_metric: float | None = None  # stop early once mean dev accuracy reaches this

    def validate(self) -> None:
        if not self.tasks:
            raise ConfigError("at least one task is required")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("duplicate task names")
        if self.decoding not in DECODING_MODES:
            raise ConfigError(f"decoding must be one of {DECODING_MODES}")
        for name in ("embed_dim", "hidden_dim", "encoder_layers", "decoder_layers",
                     "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.embed_dim != self.hidden_dim:
            raise ConfigError("tied output projection requires embed_dim == hidden_dim")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        cfg.tasks = list(cfg.tasks)
        return cfg


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; later keys win."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def coerce(key: str, value: str, like) -> object:
    """Parse a raw string according to the type of the default it overrides."""
    if isinstance(like, bool):
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunConfig:
    """Effective configuration of one CLI invocation.

    Merges defaults, a config file, and command-line overrides; the merged
    values are echoed into every output artifact.
    """

    DEFAULTS: dict[str, object] = {
        # data
        "train": "", "dev": "", "test": "", "data_dir": "", "out": "out",
        "source_column": 0, "genre_column": -1,
        "tasks": [], "decoding": "char", "tiger_two_level": False,
        "bootstrap": "", "blocks": [],
        # per-task keys are dynamic: task.<name>.column / .kind / .labels
        # model + training
        "embed_dim": 256, "hidden_dim": 256,
        "encoder_layers": 3, "decoder_layers": 3,
        "learning_rate": 5e-4, "dropout": 0.5, "clip_norm": 5.0,
        "batch_size": 32, "max_epochs": 100, "patience": 5, "seed": 1,
        "target_metric": -1.0,  # negative disables
        "mono_task": "", "smart_init_from": "",
        "dev_fraction": 0.15,
        "figures": True,
    }

    def __init__(self, file_values: dict[str, str] | None = None,
                 overrides: dict[str, str] | None = None):
        self.values: dict[str, object] = dict(self.DEFAULTS)
        self.extra: dict[str, str] = {}
        for source in (file_values or {}, overrides or {}):
            for key, value in source.items():
                if key in self.DEFAULTS:
                    self.values[key] = (
                        value if not isinstance(value, str)
                        else coerce(key, value, self.DEFAULTS[key])
                    )
                elif key.startswith("task."):
                    self.extra[key] = str(value)
                else:
                    raise ConfigError(f"unknown config key {key!r}")

    def __getitem__(self, key: str):
        return self.values[key]

    def task_key(self, task: str, attr: str, default: str | None = None) -> str | None:
        return self.extra.get(f"task.{task}.{attr}", default)

    def level_columns(self) -> dict[str, int]:
        cols = {}
        for task in self.values["tasks"]:
            raw = self.task_key(task, "column")
            if raw is None:
                raise ConfigError(f"missing task.{task}.column")
            cols[task] = int(raw)
        return cols

    def level_kinds(self) -> dict[str, str]:
        kinds = {}
        for task in self.values["tasks"]:
            kinds[task] = self.task_key(task, "kind", "char")
        return kinds

    def model_config(self, tasks: list[str] | None = None) -> ModelConfig:
        target = self.values["target_metric"]
        cfg = ModelConfig(
            tasks=list(tasks if tasks is not None else self.values["tasks"]),
            decoding=self.values["decoding"],
            embed_dim=self.values["embed_dim"],
            hidden_dim=self.values["hidden_dim"],
            encoder_layers=self.values["encoder_layers"],
            decoder_layers=self.values["decoder_layers"],
            learning_rate=self.values["learning_rate"],
            dropout=self.values["dropout"],
            clip_norm=self.values["clip_norm"],
            batch_size=self.values["batch_size"],
            max_epochs=self.values["max_epochs"],
            patience=self.values["patience"],
            seed=self.values["seed"],
            target_metric=None if target < 0 else target,
        )
        cfg.validate()
        return cfg

    def echo_lines(self) -> list[str]:
        """Stable, human-readable dump of the effective configuration."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, list):
                value = ",".join(value)
            lines.append(f"{key} = {value}")
        for key in sorted(self.extra):
            lines.append(f"{key} = {self.extra[key]}")
        return lines
