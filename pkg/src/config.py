"""
Get configs from env and the run file
Format: CONFIG_NAME: type = "default_value"

Run configuration precedence: CLI overrides > TOML run file > ORBOPT_* environment.
"""

import math
from contextvars import ContextVar
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict, TomlConfigSettingsSource

from dmrg import SolverSettings
from modeopt import LocalOptConfig
from mps import TruncationPolicy

_RUN_FILE: ContextVar[Optional[Path]] = ContextVar("run_file", default=None)


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"

    # Default run file when --config is not given
    DEFAULT_CONFIG: Optional[Path] = None

    # Output file names inside the run directory
    REPORT_NAME: str = "steps.jsonl"
    PROFILE_NAME: str = "bond_profile.csv"
    CHECKPOINT_NAME: str = "checkpoint.npz"
    PROVENANCE_NAME: str = "provenance.json"

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    @field_validator("LOG_LEVEL")
    @classmethod
    def check_level(cls, value: str) -> str:
        value = value.upper()
        if value not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {value}")
        return value


class ModelSpec(BaseModel):
    """Generated lattice model (Hubbard chain with an exponential density-density tail)"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: Literal["hubbard"] = "hubbard"
    n_sites: int = Field(default=6, ge=2)
    species: int = Field(default=2, ge=1)
    hopping: float = 1.0
    onsite: float = 4.0
    decay: float = math.inf
    boundary: Literal["open", "periodic"] = "open"
    # random species-restricted rotation of the generated coefficients
    scramble_seed: Optional[int] = None


class Schedule(BaseModel):
    plain_sweeps: int = Field(default=2, ge=0)
    opt_sweeps: int = Field(default=8, ge=0)
    macro_iterations: int = Field(default=2, ge=0)
    reorder: bool = True


class RunConfig(BaseSettings):
    input: Literal["model", "fcidump"] = "model"
    fcidump: Optional[Path] = None
    model: ModelSpec = ModelSpec()
    n_particles: Optional[tuple[int, ...]] = None
    initial_basis: Literal["identity", "one_body", "hartree_fock", "unitary_file"] = "identity"
    unitary_file: Optional[Path] = None
    truncation: TruncationPolicy = TruncationPolicy(eps_trc=1e-6, d_min=1, d_max=128)
    schedule: Schedule = Schedule()
    local_opt: LocalOptConfig = LocalOptConfig()
    solver: SolverSettings = SolverSettings()
    seed: int = 0
    output_dir: Path = Path("runs/latest")

    model_config = SettingsConfigDict(
        env_prefix="ORBOPT_",
        env_nested_delimiter="__",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
        ser_json_inf_nan="constants",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        sources = [init_settings]
        run_file = _RUN_FILE.get()
        if run_file is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=run_file))
        sources.extend([env_settings, dotenv_settings])
        return tuple(sources)

    @model_validator(mode="after")
    def check_inputs(self) -> "RunConfig":
        if self.input == "fcidump" and self.fcidump is None:
            raise ValueError("input = 'fcidump' needs the fcidump path")
        if self.initial_basis == "unitary_file" and self.unitary_file is None:
            raise ValueError("initial_basis = 'unitary_file' needs unitary_file")
        return self

    @classmethod
    def load(cls, path: Optional[Path] = None, **overrides) -> "RunConfig":
        """Read a TOML run file (sections [model] [truncation] [schedule] [local_opt] [solver])"""
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"config file {path} not found")
        token = _RUN_FILE.set(Path(path) if path is not None else None)
        try:
            return cls(**overrides)
        finally:
            _RUN_FILE.reset(token)


settings = Settings()
