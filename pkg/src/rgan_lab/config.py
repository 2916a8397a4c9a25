"""Experiment configuration: a flat ``key = value`` text format.

Keys carry dotted section prefixes (``robust.eps1 = 0.01``); ``#`` starts a
comment; list values are comma separated. Unknown keys, malformed lines and
invalid values raise ConfigError with a ``path:line:`` anchor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import DataSource
from .gan_core import GanConfig
from .robust import PerturbationConfig, RganConfig

ARMS = {
    "baseline": "none",
    "rgan": "both",
    "ablation_g_only": "g_only",
    "ablation_d_only": "d_only",
    "ablation_random_noise": "random_noise",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    samples: int = 2000
    mmd_samples: int = 500
    stress_repeats: int = 5
    gap_fresh: int = 50000

    def __post_init__(self):
        if self.samples < 100:
            raise ValueError("eval.samples must be at least 100")
        if self.mmd_samples < 2 or self.stress_repeats < 1 or self.gap_fresh < 2:
            raise ValueError("eval sizes must be positive (mmd_samples >= 2)")


@dataclass(frozen=True)
class RobustSection:
    lam: float = 0.1
    eps1: float = 0.01
    eps2: float = 0.05
    lambda_z: float = 0.0
    lambda_d: float = 0.0
    inner_steps: int = 1
    inner_lr: float = 0.05
    weighting: str = "eq11_convex"

    def __post_init__(self):
        self.perturb()
        RganConfig(lam=self.lam, weighting=self.weighting)

    def perturb(self) -> PerturbationConfig:
        return PerturbationConfig(self.eps1, self.eps2, self.lambda_z, self.lambda_d, self.inner_steps, self.inner_lr)


@dataclass(frozen=True)
class ExperimentConfig:
    arms: tuple = ("baseline", "rgan")
    seeds: tuple = (0,)
    eval_interval: int = 5000
    output_dir: str = "runs"
    data: DataSource = field(default_factory=DataSource)
    gan: GanConfig = field(default_factory=GanConfig)
    robust: RobustSection = field(default_factory=RobustSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if not self.arms:
            raise ValueError("arm list must not be empty")
        for arm in self.arms:
            if arm not in ARMS:
                raise ValueError(f"unknown arm {arm!r}; expected one of {', '.join(ARMS)}")
        if self.eval_interval < 0:
            raise ValueError("eval_interval must be non-negative")

    def rgan_config(self, arm: str) -> RganConfig:
        r = self.robust
        return RganConfig(base=self.gan, perturb=r.perturb(), lam=r.lam, weighting=r.weighting, ablation=ARMS[arm])

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


# key prefix -> (attribute on ExperimentConfig, {config key: dataclass field})
_SECTIONS = {
    "data": ("data", {}),
    "gan": ("gan", {}),
    "robust": ("robust", {"lambda": "lam"}),
    "eval": ("eval", {}),
}
_TOP = ("arms", "seeds", "eval_interval", "output_dir")
_SKIP = {"gan": {"seed"}}


def _field_keys(obj, aliases: dict, skip=()) -> list:
    reverse = {v: k for k, v in aliases.items()}
    return [(reverse.get(f.name, f.name), f.name) for f in dataclasses.fields(obj) if f.name not in skip]


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        kind = type(default[0]) if default else str
        return tuple(_coerce(x, kind()) for x in items)
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    defaults = ExperimentConfig()
    sections: dict = {name: {} for name in _SECTIONS}
    top: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key in lines:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        lines[key] = lineno
        if "." in key:
            prefix, name = key.split(".", 1)
            if prefix not in _SECTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown section {prefix!r}")
            attr, aliases = _SECTIONS[prefix]
            section_default = getattr(defaults, attr)
            known = dict(_field_keys(section_default, aliases, _SKIP.get(prefix, ())))
            if name not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            target = known[name]
            default = getattr(section_default, target)
            try:
                sections[prefix][target] = _coerce(raw, default)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
        else:
            if key not in _TOP:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                top[key] = _coerce(raw, getattr(defaults, key))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None

    built = {}
    for prefix, (attr, _) in _SECTIONS.items():
        try:
            built[attr] = dataclasses.replace(getattr(defaults, attr), **sections[prefix])
        except (ValueError, TypeError) as exc:
            first = min((lines[k] for k in lines if k.startswith(prefix + ".")), default=0)
            raise ConfigError(f"{path}:{first}: invalid [{prefix}] settings: {exc}") from None
    try:
        return ExperimentConfig(**top, **built)
    except (ValueError, TypeError) as exc:
        first = min((lines[k] for k in lines if k in _TOP), default=0)
        raise ConfigError(f"{path}:{first}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    out = [f"{key} = {_format(getattr(cfg, key))}" for key in _TOP]
    for prefix, (attr, aliases) in _SECTIONS.items():
        section = getattr(cfg, attr)
        out.append("")
        for key, name in _field_keys(section, aliases, _SKIP.get(prefix, ())):
            out.append(f"{prefix}.{key} = {_format(getattr(section, name))}")
    return "\n".join(out) + "\n"


SHIPPED_CONFIGS = ("ring_default", "image_scale", "reference")


def default_config_text(name: str = "ring_default") -> str:
    from importlib.resources import files

    if name not in SHIPPED_CONFIGS:
        raise ConfigError(f"unknown shipped config {name!r}; expected one of {', '.join(SHIPPED_CONFIGS)}")
    return files("rgan_lab").joinpath(f"configs/{name}.cfg").read_text()


def default_config(name: str = "ring_default") -> ExperimentConfig:
    return parse_config(default_config_text(name), f"{name}.cfg")
