"""Flat ``key = value`` experiment configuration.

Keys, types, constraints and per-problem defaults live in the shipped
``config_schema.json``.  Keys that belong to another problem (say
``grid_size`` for ``elliptic1d``) are rejected like unknown ones.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@lru_cache(maxsize=1)
def load_schema() -> dict:
    text = resources.files("ekhmc").joinpath("config_schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    sampler: str = "ekhmc"
    gamma: float | None = None
    eps: float | None = None
    adapt_a: float | None = None
    adapt_norm: str | None = None
    momentum_init: str | None = None
    mode: str | None = None
    noise: str | None = None
    beta: float | None = None
    leapfrog_eps: float | None = None
    leapfrog_steps: int | None = None
    burn_in: int | None = None
    thin: int | None = None
    particles: int | None = None
    iters: int | None = None
    seed: int | None = None
    data_seed: int | None = None
    output_dir: str | None = None
    figures: bool | None = None
    noise_std: float | None = None
    prior_std: float | None = None
    linear_dim: int | None = None
    obs_dim: int | None = None
    grid_size: int | None = None
    kl_dim: int | None = None
    obs_per_side: int | None = None
    source: float | None = None
    kl_basis: str | None = None
    init_std: float | None = None

    def to_dict(self) -> dict:
        """Only the keys that apply to this problem."""
        keys = applicable_keys(self.problem)
        return {k: getattr(self, k) for k in dataclasses.asdict(self) if k in keys}

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return from_dict({**self.to_dict(), **changes})


def applicable_keys(problem: str) -> set:
    schema = load_schema()
    return {"problem"} | set(schema["defaults"]["common"]) | set(schema["defaults"][problem])


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw, spec: dict):
    kind = spec["type"]
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in ("true", "yes", "1"):
                value = True
            elif str(raw).strip().lower() in ("false", "no", "0"):
                value = False
            else:
                raise ValueError(raw)
        elif kind == "int":
            if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
                raise ValueError(raw)
            value = int(raw) if not isinstance(raw, str) else int(raw.strip())
        elif kind == "float":
            if isinstance(raw, bool):
                raise ValueError(raw)
            value = float(raw)
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}", key) from None
    if kind == "float" and value != value:
        raise ConfigError(f"{key}: NaN is not allowed", key)
    if "choices" in spec and value not in spec["choices"]:
        raise ConfigError(f"{key}: {value!r} is not one of {spec['choices']}", key)
    if "min" in spec and value < spec["min"]:
        raise ConfigError(f"{key}: must be >= {spec['min']}, got {value}", key)
    if "min_exclusive" in spec and value <= spec["min_exclusive"]:
        raise ConfigError(f"{key}: must be > {spec['min_exclusive']}, got {value}", key)
    if "max" in spec and value > spec["max"]:
        raise ConfigError(f"{key}: must be <= {spec['max']}, got {value}", key)
    return value


def from_dict(entries: dict) -> ExperimentConfig:
    """Validate ``entries`` and fill in the defaults of the chosen problem."""
    schema = load_schema()
    keys = schema["keys"]
    for key in entries:
        if key not in keys:
            raise ConfigError(f"{key}: unknown key", key)
    if "problem" not in entries:
        raise ConfigError("problem: required key missing", "problem")
    problem = _coerce("problem", entries["problem"], keys["problem"])
    allowed = applicable_keys(problem)
    for key in entries:
        if key not in allowed:
            raise ConfigError(f"{key}: not applicable to problem {problem!r}", key)
    values = {**schema["defaults"]["common"], **schema["defaults"][problem]}
    for key, raw in entries.items():
        values[key] = _coerce(key, raw, keys[key])
    values["problem"] = problem
    cfg = ExperimentConfig(**values)
    if cfg.sampler == "hmc" and cfg.problem == "darcy":
        raise ConfigError("sampler: hmc needs an exact gradient, which darcy does not provide", "sampler")
    if cfg.mode == "exact" and cfg.problem == "darcy" and cfg.sampler == "ekhmc":
        raise ConfigError("mode: exact forces need a gradient, which darcy does not provide", "mode")
    if cfg.problem == "darcy" and cfg.obs_per_side > cfg.grid_size:
        raise ConfigError("obs_per_side: exceeds grid_size", "obs_per_side")
    return cfg


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keyword ``overrides`` are applied on top of the document (useful for
    ``problem=...`` with an otherwise empty file).
    """
    entries: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{key}: given more than once (line {lineno})", key)
        entries[key] = value
    entries.update(overrides)
    return from_dict(entries)


def describe_defaults(problem: str) -> str:
    """Default configuration for ``problem`` as a commented config document."""
    schema = load_schema()
    if problem not in schema["keys"]["problem"]["choices"]:
        raise ConfigError(f"problem: {problem!r} is not one of {schema['keys']['problem']['choices']}", "problem")
    cfg = from_dict({"problem": problem})
    lines = []
    for key, value in cfg.to_dict().items():
        lines.append(f"# {schema['keys'][key]['help']}")
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"
