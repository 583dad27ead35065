"""Pipeline configuration with flat dotted keys.

Precedence, lowest first: model defaults, GLOTTKIT_SEED from the environment
(or a .env file), the JSON config file, then `--set key=value` overrides.
"""

import hashlib
import json
import os
from typing import Any, Dict, Iterable, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.abcde import AbcdeConfig
from core.adles import OptConfig, SimConfig
from core.dsp import DEFAULT_RESOLUTIONS, IaifConfig, TremorConfig
from core.errors import ConfigError
from core.fold_models import OneMassParams
from core.proxy_classifier import ProxyConfig

DEFAULT_SEED = 42
SEED_ENV = "GLOTTKIT_SEED"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class AudioSection(_Section):
    sample_rate: int = Field(default=16000, ge=8000, le=96000, description="Canonical analysis rate (Hz)")
    analysis_ms: float = Field(default=200.0, ge=20.0, le=5000.0, description="Centre segment handed to IAIF")


class DspSection(_Section, TremorConfig):
    pass


class IaifSection(_Section, IaifConfig):
    pass


class FitSection(_Section):
    init_alpha: float = Field(default=0.5, ge=0.0, le=2.0)
    init_beta: float = Field(default=0.25, ge=1e-3, le=2.0)
    init_delta: float = Field(default=0.0, ge=-1.0, le=1.0)
    dt: float = Field(default=0.05, gt=0.0, le=0.2, description="RK4 step of the fitting simulation")
    warmup: float = Field(default=40.0, ge=0.0, le=1000.0)
    n_per: int = Field(default=4, ge=1, le=32)
    max_cycles: int = Field(default=8, ge=1, le=200)
    lag_grid: int = Field(default=64, ge=1, le=1024)
    max_iter: int = Field(default=500, ge=0, le=100000)
    tol: float = Field(default=1e-6, gt=0.0, le=1.0)
    armijo_c: float = Field(default=1e-4, gt=0.0, lt=1.0)
    shrink: float = Field(default=0.5, gt=0.0, lt=1.0)
    portrait_dt: float = Field(default=0.01, gt=0.0, le=0.1, description="Step of the simulation behind phase features")
    portrait_steps: int = Field(default=20000, ge=100, le=10_000_000)
    phase_tail: float = Field(default=0.5, gt=0.0, le=1.0, description="Fraction of the portrait analysed")

    def init_params(self) -> OneMassParams:
        return OneMassParams(alpha=self.init_alpha, beta=self.init_beta, delta=self.init_delta)

    def sim_config(self, f0: Optional[float] = None, f0_range: Optional[Tuple[float, float]] = None) -> SimConfig:
        extra = {"fmin": f0_range[0], "fmax": f0_range[1]} if f0_range else {}
        if f0 is not None:
            extra["f0"] = f0
        return SimConfig(dt=self.dt, warmup=self.warmup, n_per=self.n_per, max_cycles=self.max_cycles,
                         lag_grid=self.lag_grid, **extra)

    def opt_config(self) -> OptConfig:
        return OptConfig(max_iter=self.max_iter, tol=self.tol, armijo_c=self.armijo_c, shrink=self.shrink)


class ProxySection(_Section, ProxyConfig):
    model_path: Optional[str] = Field(default=None, description="Trained proxy classifier JSON used by extract")


class AbcdeSection(_Section):
    hidden_sizes: Tuple[int, ...] = (256, 64)
    latent_dim: int = Field(default=16, ge=1, le=1024)
    window: int = Field(default=8, ge=1, le=256)
    lambda_recon: float = Field(default=1.0, ge=0.0)
    lambda_disc: float = Field(default=1.0, ge=0.0)
    epochs: int = Field(default=500, ge=0, le=1_000_000)
    lr: float = Field(default=0.01, gt=0.0, le=10.0)
    representation: str = Field(default="spectrogram", pattern="^(spectrogram|correlogram)$")
    resolutions: Tuple[Tuple[int, int, int], ...] = tuple(tuple(r) for r in DEFAULT_RESOLUTIONS)
    model_path: Optional[str] = Field(default=None, description="Trained ABCDE model JSON used by extract")

    def to_core(self, seed: int) -> AbcdeConfig:
        return AbcdeConfig(seed=seed, **self.model_dump(exclude={"model_path"}))


class RunSection(_Section):
    seed: int = Field(default=DEFAULT_SEED, ge=0, description="Seed for every random generator of a run")
    jobs: int = Field(default=1, ge=1, le=256, description="Files processed concurrently")
    format: str = Field(default="csv", pattern="^(csv|json)$")
    quiet: bool = False


class PipelineConfig(_Section):
    audio: AudioSection = Field(default_factory=AudioSection)
    dsp: DspSection = Field(default_factory=DspSection)
    iaif: IaifSection = Field(default_factory=IaifSection)
    fit: FitSection = Field(default_factory=FitSection)
    proxy: ProxySection = Field(default_factory=ProxySection)
    abcde: AbcdeSection = Field(default_factory=AbcdeSection)
    run: RunSection = Field(default_factory=RunSection)

    def to_flat(self) -> Dict[str, Any]:
        flat = {}
        for section, values in self.model_dump(mode="json").items():
            for key, value in values.items():
                flat[f"{section}.{key}"] = value
        return flat

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> "PipelineConfig":
        return cls().apply_flat(flat)

    def apply_flat(self, flat: Dict[str, Any]) -> "PipelineConfig":
        nested = self.model_dump()
        for dotted, value in flat.items():
            section, _, key = dotted.partition(".")
            if section not in nested or key not in nested[section]:
                raise ConfigError(f"Unknown config key '{dotted}'")
            nested[section][key] = value
        try:
            return PipelineConfig.model_validate(nested)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def apply_overrides(self, overrides: Iterable[str]) -> "PipelineConfig":
        """`key=value` strings; values parse as JSON literals, else as plain strings"""
        flat = {}
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"Override '{item}' is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            flat[key.strip()] = value
        return self.apply_flat(flat)


# Keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("run.jobs", "run.quiet", "run.format")


def config_hash(cfg: PipelineConfig) -> str:
    """md5 of the sorted flat JSON form, execution-only keys left out"""
    flat = {k: v for k, v in cfg.to_flat().items() if k not in EXECUTION_KEYS}
    return hashlib.md5(json.dumps(flat, sort_keys=True).encode()).hexdigest()


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    load_dotenv()
    cfg = PipelineConfig()

    seed = os.getenv(SEED_ENV)
    if seed is not None and seed.strip():
        try:
            cfg = cfg.apply_flat({"run.seed": int(seed)})
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer, got '{seed}'") from e

    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a JSON object of dotted keys")
        cfg = cfg.apply_flat(data)

    return cfg.apply_overrides(overrides)
