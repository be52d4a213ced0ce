"""Run configuration: one INI document with dotted ``section.key`` names.

Every tunable constant of the pipeline lives here with its default.  A
config file may override any subset; unknown sections or keys are errors.
The effective configuration (defaults merged with overrides) is what gets
hashed and dumped next to the outputs, so re-running from the dump
reproduces a run exactly.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass

from .data import DatasetSpec
from .mirror import RewriteConfig
from .model import PARAMETERIZATIONS, GuidanceConfig
from .schedule import make_schedule
from .training import TrainConfig


class ConfigError(ValueError):
    pass


# name -> default.  The type of the default is the type of the key.
DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "run.out": "runs/default",
    "schedule.T_train": 1000,
    "schedule.T_infer": 60,
    "schedule.beta_start": 1e-4,
    "schedule.beta_end": 0.02,
    "model.width": 256,
    "model.time_dim": 32,
    "model.cond_dim": 64,
    "model.parameterization": "v",
    "train.epochs": 200,
    "train.batch_size": 32,
    "train.lr": 1e-3,
    "train.cond_drop": 0.1,
    "guidance.scale": 7.5,
    "guidance.enabled": True,
    "guidance.invert_guided": True,
    "rewrite.lam": 1.0,
    "rewrite.inner_steps": 10,
    "rewrite.lr": 1e-2,
    "rewrite.warm_start": True,
    "rewrite.bypass_optimizer": False,
    "rewrite.guided": True,
    "rewrite.align_steps": 0,
    "data.domains": "circle,square",
    "data.count": 250,
    "data.size": 16,
    "data.radius_min": 3.0,
    "data.radius_max": 6.0,
    "data.center_jitter": 1.5,
    "data.intensity_min": 0.7,
    "data.intensity_max": 1.0,
    "eval.count": 20,
    "eval.source": "circle",
    "eval.target": "square",
    "eval.strength": 1.0,
    "eval.oracle_epochs": 300,
}

# Keys that do not change any artifact and so stay out of the hash.
UNHASHED = ("run.out",)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (T_train)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        values = dict(DEFAULTS)
        unknown = []
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = f"{section}.{key}"
                if name not in DEFAULTS:
                    unknown.append(name)
                    continue
                values[name] = _coerce(name, raw, DEFAULTS[name])
        if unknown:
            raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(dict(DEFAULTS))

    def replace(self, **overrides) -> "RunConfig":
        """Override keys given with ``__`` for the dot, e.g. ``run__seed=3``."""
        values = dict(self.values)
        for k, v in overrides.items():
            name = k.replace("__", ".")
            if name not in DEFAULTS:
                raise ConfigError(f"unknown key {name}")
            values[name] = v
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def dump(self) -> str:
        lines, current = [], None
        for name in DEFAULTS:
            section, key = name.split(".", 1)
            if section != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{section}]")
                current = section
            lines.append(f"{key} = {_format(self.values[name])}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        body = "\n".join(f"{k}={_format(self.values[k])}" for k in DEFAULTS if k not in UNHASHED)
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    # -- typed views -------------------------------------------------------

    def schedule(self):
        v = self.values
        return make_schedule(v["schedule.T_train"], v["schedule.beta_start"], v["schedule.beta_end"],
                             v["schedule.T_infer"])

    def dataset_spec(self) -> DatasetSpec:
        v = self.values
        return DatasetSpec(
            domains=tuple(d.strip() for d in v["data.domains"].split(",") if d.strip()),
            count=v["data.count"],
            size=v["data.size"],
            seed=v["run.seed"],
            radius_range=(v["data.radius_min"], v["data.radius_max"]),
            center_jitter=v["data.center_jitter"],
            intensity_range=(v["data.intensity_min"], v["data.intensity_max"]),
        )

    def eval_spec(self) -> DatasetSpec:
        # held-out images of the source domain, drawn from a separate seed stream
        return DatasetSpec(**{**self.dataset_spec().__dict__, "domains": (self.values["eval.source"],),
                              "count": self.values["eval.count"], "seed": self.values["run.seed"] + 1000})

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(v["train.epochs"], v["train.batch_size"], v["train.lr"], v["run.seed"],
                           v["train.cond_drop"])

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.values["guidance.scale"], self.values["guidance.enabled"])

    def rewrite(self) -> RewriteConfig:
        v = self.values
        return RewriteConfig(v["rewrite.lam"], v["rewrite.inner_steps"], v["rewrite.lr"], v["rewrite.warm_start"],
                             v["rewrite.bypass_optimizer"], v["rewrite.guided"], v["rewrite.align_steps"])

    def validate(self) -> None:
        """Build every typed view so each module's own checks run up front."""
        v = self.values
        try:
            self.schedule()
            spec = self.dataset_spec()
            self.eval_spec()
            self.train_config()
            self.guidance()
            self.rewrite()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if v["model.parameterization"] not in PARAMETERIZATIONS:
            raise ConfigError(f"model.parameterization must be one of {PARAMETERIZATIONS}")
        for key in ("model.width", "model.time_dim", "model.cond_dim"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be positive")
        if v["model.time_dim"] % 2:
            raise ConfigError("model.time_dim must be even")
        for key in ("eval.source", "eval.target"):
            if v[key] not in spec.domains:
                raise ConfigError(f"{key}={v[key]!r} is not one of data.domains {list(spec.domains)}")
        if v["eval.source"] == v["eval.target"]:
            raise ConfigError("eval.source and eval.target must differ")
        if v["eval.oracle_epochs"] < 1:
            raise ConfigError("eval.oracle_epochs must be positive")
        if v["run.seed"] < 0:
            raise ConfigError("run.seed must be >= 0")
