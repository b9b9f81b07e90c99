"""Run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .phasefield import PhaseFieldError, PhaseFieldParams
from .samples import DEMO_PRIORS, PriorError, PriorSpec, parse_priors
from .selection import POLICIES
from .wasserstein import NORMS

MODELS = ("identity", "surrogate", "phasefield")
# keys that never change results and are left out of output metadata
NON_SEMANTIC = ("threads", "output", "report", "plot", "snapshots", "config")


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("mcreorder").joinpath("config.schema.json").read_text(encoding="utf-8"))


@dataclass
class RunConfig:
    priors: list[dict] = field(default_factory=lambda: [p.to_dict() for p in DEMO_PRIORS])
    n: int = 1000
    policy: str = "batch"
    b: int | None = 50
    k: int | None = 500
    seed: int = 0
    replicates: int = 1
    checkpoints: list[int] | None = None
    model: str = "identity"
    phasefield: dict = field(default_factory=dict)
    sizes: list[int] = field(default_factory=lambda: [25, 50, 100])
    budget: int | None = None
    resume: bool = False
    norm: str = "l1"
    normalize: bool = False
    include_random: bool = True
    include_greedy: bool = False
    timing: bool = False
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    pool: str | None = None
    traces: list[str] = field(default_factory=list)
    qoi: str | None = None
    output: str | None = None
    report: str | None = None
    plot: str | None = None
    snapshots: str | None = None
    config: str | None = None

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate_dict(d)
        cfg = cls(**d)
        cfg.check()
        return cfg

    def semantic(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC}

    def prior_specs(self) -> list[PriorSpec]:
        return parse_priors(self.priors)

    def phasefield_params(self) -> PhaseFieldParams:
        return PhaseFieldParams.from_dict(self.phasefield)

    def check(self) -> None:
        """Cross-field checks beyond the JSON schema."""
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}")
        if self.policy == "batch" and (self.b is None or self.k is None):
            raise ConfigError("policy 'batch' requires b and k")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {sorted(NORMS)}")
        try:
            self.prior_specs()
            self.phasefield_params()
        except (PriorError, PhaseFieldError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc


def validate_dict(d: dict) -> None:
    try:
        jsonschema.validate(d, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return d


def merge(file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults, overridden by the config file, overridden by set flags."""
    merged = RunConfig().to_dict()
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return RunConfig.from_dict(merged)
