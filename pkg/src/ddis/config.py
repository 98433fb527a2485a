"""Strict JSON experiment configuration.

Every section is a frozen dataclass.  Missing keys take defaults; unknown keys
are rejected with an error naming the full key path, so a misspelt option can
never be silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument
from .mixture import NoiseSchedule, make_schedule
from .operators import POISSON, Task, helmholtz
from .random_fields import GrfSpec
from .samplers import SamplerConfig

__all__ = [
    "ConfigError",
    "ScheduleConfig",
    "LangevinConfig",
    "SurrogateConfig",
    "PriorConfig",
    "ExperimentConfig",
    "SAMPLERS",
    "load_config",
    "parse_config",
]

SAMPLERS = ("dps-joint", "decoupled-dps", "fundaps", "ddis-daps")
U64 = 2**64


class ConfigError(InvalidArgument):
    """Malformed or inconsistent configuration (names the offending key)."""


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in fields:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key {where!r}")
    kwargs = {}
    for name, f in fields.items():
        if name not in doc:
            continue
        where = f"{path}.{name}" if path else name
        value = doc[name]
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            value = _build(sub, value, where)
        else:
            value = _coerce(value, f.type, where)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except InvalidArgument as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(value, typ, where):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if typ == "int":
        if not _is_int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif typ == "float":
        if not _is_num(value):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif typ == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif typ == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif typ == "int | None":
        if value is not None and not _is_int(value):
            raise ConfigError(f"{where}: expected an integer or null, got {value!r}")
    return value


@dataclass(frozen=True)
class ScheduleConfig:
    sigma_min: float = 0.01
    sigma_max: float = 0.4
    rho: float = 7.0
    steps: int = 20

    def __post_init__(self):
        self.build()

    def build(self) -> NoiseSchedule:
        return make_schedule(self.sigma_min, self.sigma_max, self.rho, self.steps)


@dataclass(frozen=True)
class LangevinConfig:
    steps: int = 200
    eta: float = 1.0
    beta_y: float = 1e-6
    r_scale: float = 1.0
    w_prior: float = 1.0
    w_like: float = 1.0
    tau: float = 1e-3
    step_rule: str = "lipschitz"
    denoise_steps: int = 1
    denoise_sigma_min: float = 1e-3


@dataclass(frozen=True)
class SurrogateConfig:
    mode_cutoff: int | None = None
    lambda_phys: float = 0.0
    use_exact: bool = True

    def __post_init__(self):
        if self.mode_cutoff is not None and self.mode_cutoff < 1:
            raise ConfigError("surrogate.mode_cutoff must be >= 1")
        if not self.lambda_phys >= 0:
            raise ConfigError("surrogate.lambda_phys must be nonnegative")


@dataclass(frozen=True)
class PriorConfig:
    tau: float = 9.0
    alpha: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        self.spec()

    def spec(self) -> GrfSpec:
        return GrfSpec(self.tau, self.alpha, self.amplitude)


@dataclass(frozen=True)
class ExperimentConfig:
    """One inverse-problem experiment (all repeats share the config)."""

    task: str = "poisson"
    helmholtz_k: float = 1.0
    resolution: int = 32
    obs_count: int = 31
    obs_noise: float = 0.0
    sampler: str = "ddis-daps"
    prior_centers: int = 50
    paired_fraction: float = 1.0
    dps_zeta: float = 1.0
    seed: int = 0
    repeats: int = 1
    grf: PriorConfig = field(default_factory=PriorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        if self.task not in ("poisson", "helmholtz"):
            raise ConfigError(f"task must be 'poisson' or 'helmholtz', got {self.task!r}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if not _is_int(self.resolution) or self.resolution < 2:
            raise ConfigError(f"resolution must be an integer >= 2, got {self.resolution!r}")
        if not _is_int(self.obs_count) or not 0 <= self.obs_count <= self.resolution**2:
            raise ConfigError(f"obs_count must lie in [0, {self.resolution ** 2}], got {self.obs_count!r}")
        if not self.obs_noise >= 0:
            raise ConfigError("obs_noise must be nonnegative")
        if not _is_int(self.prior_centers) or self.prior_centers < 1:
            raise ConfigError("prior_centers must be a positive integer")
        if not 0 < self.paired_fraction <= 1:
            raise ConfigError(f"paired_fraction must lie in (0, 1], got {self.paired_fraction}")
        if not self.dps_zeta > 0:
            raise ConfigError("dps_zeta must be positive")
        if not _is_int(self.seed) or not 0 <= self.seed < U64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not _is_int(self.repeats) or self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.surrogate.mode_cutoff is not None and self.surrogate.mode_cutoff > self.resolution:
            raise ConfigError("surrogate.mode_cutoff exceeds the resolution")
        try:
            self.sampler_config()
        except InvalidArgument as exc:
            raise ConfigError(f"langevin: {exc}") from exc

    # --- derived objects ---
    def task_spec(self) -> Task:
        return POISSON if self.task == "poisson" else helmholtz(self.helmholtz_k)

    def n_paired(self) -> int:
        """Number of centers granted paired solutions (at least one)."""
        return max(1, int(math.floor(self.paired_fraction * self.prior_centers + 0.5)))

    def sampler_config(self) -> SamplerConfig:
        lc = self.langevin
        return SamplerConfig(
            langevin_steps=lc.steps, eta=lc.eta, beta_y=lc.beta_y, r_scale=lc.r_scale,
            w_prior=lc.w_prior, w_like=lc.w_like, dps_zeta=self.dps_zeta,
            langevin_noise_tau=lc.tau, step_rule=lc.step_rule,
            denoise_steps=lc.denoise_steps, denoise_sigma_min=lc.denoise_sigma_min,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # --- serialisation ---
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        return _build(cls, doc, "")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


_SECTIONS = {
    (ExperimentConfig, "grf"): PriorConfig,
    (ExperimentConfig, "schedule"): ScheduleConfig,
    (ExperimentConfig, "langevin"): LangevinConfig,
    (ExperimentConfig, "surrogate"): SurrogateConfig,
}


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.from_json(text)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())
