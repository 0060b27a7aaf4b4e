"""Experiment configuration: YAML file, environment variables, then command-line overrides"""

import os
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError

from .errors import InputError, ValidationError
from .types import DepolyRoute, KappaRoute, MomentMode, ProblemFamily

logger = logging.getLogger(__name__)

ENV_OVERRIDES = {
    'SHRINKAGE_SEED': 'seed',
    'SHRINKAGE_OUTPUT_DIR': 'output_dir',
    'SHRINKAGE_THREADS': 'threads',
    'SHRINKAGE_LOG_LEVEL': 'log_level',
}


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class InitialData(Section):
    """Named initial profile with keyword parameters"""
    kind: str = 'gaussian'
    params: Dict[str, float] = Field(default_factory=lambda: {'center': 0.5, 'width': 0.25})


class DepolyConfig(Section):
    b: float = Field(1.0, gt=0)
    eps: float = Field(1.0 / 128, gt=0)
    i0: int = Field(1, ge=1)
    L: float = Field(1.5, gt=0)
    T: float = Field(1.6, gt=0)
    nx: Optional[int] = Field(None, ge=3)
    nt: int = Field(200, ge=1)
    dt: Optional[float] = Field(None, gt=0)
    u0: InitialData = Field(default_factory=InitialData)

    def grid_cells(self) -> int:
        """nx, defaulting to the coarsest grid with dx <= eps / 4"""
        if self.nx is not None:
            return self.nx
        return int(-(-4 * self.L // self.eps))

    def time_step(self) -> float:
        return self.dt if self.dt is not None else self.eps / (4 * self.b)


class DepolyInverseConfig(Section):
    route: DepolyRoute = DepolyRoute.FIRST_ORDER
    k: int = Field(0, ge=0, le=2)
    M: float = Field(10.0, gt=0)
    delta: float = Field(1e-3, gt=0)
    smoothing: Optional[float] = Field(None, gt=0)
    use_corrective: bool = False


class FragConfig(Section):
    alpha: float = Field(1.0, gt=0)
    gamma: float = Field(2.0, ge=0)
    kernel: str = 'uniform'
    L: float = Field(1.0, gt=0)
    times: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0])
    n_samples: int = Field(10000, ge=1)
    n_cells: int = Field(512, ge=8)
    dt: Optional[float] = Field(None, gt=0)
    u0: InitialData = Field(default_factory=lambda: InitialData(kind='indicator', params={'lo': 0.95, 'hi': 1.0}))

    @field_validator('times')
    @classmethod
    def _sorted_times(cls, v: List[float]) -> List[float]:
        if not v or any(t < 0 for t in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError('times must be a nonempty, strictly increasing list of nonnegative values')
        return v


class FragInverseConfig(Section):
    kappa_route: KappaRoute = KappaRoute.SHORT_TIME
    moment_mode: MomentMode = MomentMode.RATIO
    bandwidth: Optional[float] = Field(None, gt=0)
    kernel_cells: int = Field(256, ge=8)
    validate_fit: bool = True


class MeasuresConfig(Section):
    tukey_alpha: float = Field(0.25, ge=0, le=1)
    tail_fraction: float = Field(1e-2, gt=0)
    denominator_floor: float = Field(1e-8, gt=0)
    sigma: float = Field(1.5, gt=0)
    tau_max: float = Field(200.0, gt=0)
    n_tau: int = Field(2001, ge=3)
    n_fft: int = Field(2 ** 14, ge=16)
    kde_cells: int = Field(512, ge=8)

    def window(self) -> Dict[str, Any]:
        return {'tukey_alpha': self.tukey_alpha, 'tail_fraction': self.tail_fraction, 'n_fft': self.n_fft}


class SyntheticConfig(Section):
    moment_orders: List[int] = Field(default_factory=lambda: [0, 1])
    delta: float = Field(0.0, ge=0)
    n_times: int = Field(161, ge=5)


class ExperimentConfig(Section):
    """Complete configuration of one run; every field has a default"""
    scenario: str = 'default'
    family: ProblemFamily = ProblemFamily.DEPOLY
    seed: int = 0
    output_dir: str = 'output'
    threads: int = Field(1, ge=1)
    log_level: str = 'INFO'
    depoly: DepolyConfig = Field(default_factory=DepolyConfig)
    depoly_inverse: DepolyInverseConfig = Field(default_factory=DepolyInverseConfig)
    frag: FragConfig = Field(default_factory=FragConfig)
    frag_inverse: FragInverseConfig = Field(default_factory=FragInverseConfig)
    measures: MeasuresConfig = Field(default_factory=MeasuresConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)

    def flatten(self) -> Dict[str, Any]:
        """Dotted key -> value view, e.g. {'frag.alpha': 1.0}"""
        return flatten_dict(self.model_dump(mode='json'))

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> 'ExperimentConfig':
        return build_config(unflatten_dict(flat))


def flatten_dict(data: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    flat = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            flat.update(flatten_dict(value, dotted + '.'))
        else:
            flat[dotted] = value
    return flat


def unflatten_dict(flat: Dict[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = str(key).split('.')
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValidationError(f"config key '{key}' conflicts with the value at '{part}'")
            node = child
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return nested


def build_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a nested mapping; errors name the dotted key path"""
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as e:
        problems = '; '.join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ValidationError(f"Invalid configuration: {problems}")


def _env_overrides() -> Dict[str, Any]:
    found = {}
    for var, key in ENV_OVERRIDES.items():
        value = os.getenv(var)
        if value is not None:
            found[key] = value
    return found


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a YAML scenario, then apply SHRINKAGE_* environment variables and ``overrides``.

    Keys may be nested mappings or dotted names ('frag.alpha: 2.0'); both forms can be mixed.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise InputError(f"Config file not found: {config_path}")
        try:
            with open(config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InputError(f"Could not read config file {config_path}: {e}")
        if not isinstance(loaded, dict):
            raise ValidationError(f"Config file {config_path} must hold a mapping")
        data = unflatten_dict(flatten_dict(loaded))
        logger.debug(f"Loaded config from {config_path}")

    merged = flatten_dict(data)
    merged.update(_env_overrides())
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(unflatten_dict(merged))
