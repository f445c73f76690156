"""
Experiment configuration: flat JSON files validated by pydantic, overridden by CLI flags.

Precedence: flags > file > defaults. Defaults reproduce the linear-demand
experiment (T = 2000, eta = 1/4, prices [0.5, 5], price coefficients (1, -0.5),
15 context coordinates).
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigurationError
from glm_core import LinkFunction, NoiseKind, NoiseModel
from perturbation import PerturbationDist, PerturbationKind
from revenue_optimizer import PriceBox
from simulator import SimulationConfig, default_noise

# Load environment variables
load_dotenv()

SUBCOMMANDS = ("simulate", "sweep", "verify", "baseline")
SUITES = ("prop4", "fp_lemma", "concentration", "isometry", "mqle_oracle")
OVERRIDE_KEYS = ("T", "eta", "seed", "reps", "link")


class ExperimentConfig(BaseModel):
    """Everything an experiment file may set. Unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    T: int = Field(2000, ge=1)
    eta: float = 0.25
    context_dim: int = Field(15, ge=0)
    price_beta: List[float] = Field(default_factory=lambda: [1.0, -0.5])
    context_coefficients: Optional[List[float]] = None
    link: Literal["identity", "logistic"] = "identity"
    noise: Optional[Literal["uniform", "bernoulli"]] = None
    noise_half_width: float = Field(0.5, ge=0.0)
    p_low: float = 0.5
    p_high: float = 5.0
    perturbation: Literal["uniform_cube", "unit_coordinate"] = "uniform_cube"
    u_max: float = Field(1.0, gt=0.0)
    beta_max: Optional[float] = Field(None, gt=0.0)
    beta_init: Optional[List[float]] = None
    seed: int = Field(0, ge=0)
    reps: int = Field(20, ge=1)
    estimator: Literal["mqle", "sherman_morrison"] = "mqle"
    ridge: float = Field(1.0, gt=0.0)
    tol: float = Field(1e-10, gt=0.0)
    max_iter: int = Field(100, ge=1)
    opt_tol: float = Field(1e-8, gt=0.0)
    context_clip: float = Field(6.0, gt=0.0)
    etas: List[float] = Field(default_factory=lambda: [0.125, 0.25, 0.375])
    trials: Optional[int] = Field(None, ge=1)

    @field_validator("eta")
    @classmethod
    def _eta_range(cls, value: float) -> float:
        if not 0.0 <= value < 0.5:
            raise ValueError(f"eta must lie in [0, 1/2), got {value}")
        return value

    @field_validator("etas")
    @classmethod
    def _etas_range(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("etas must not be empty")
        for value in values:
            if not 0.0 <= value < 0.5:
                raise ValueError(f"every eta must lie in [0, 1/2), got {value}")
        return values

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.p_low >= self.p_high:
            raise ValueError(f"p_low must be below p_high, got [{self.p_low}, {self.p_high}]")
        if len(self.price_beta) != 2:
            raise ValueError("price_beta is (intercept, price slope)")
        if self.context_coefficients is not None and len(self.context_coefficients) != self.context_dim:
            raise ValueError("context_coefficients must have context_dim entries")
        if self.noise == "bernoulli" and self.link != "logistic":
            raise ValueError("bernoulli noise requires the logistic link")
        if self.estimator == "sherman_morrison" and self.link != "identity":
            raise ValueError("the sherman_morrison estimator requires the identity link")
        return self

    def noise_model(self) -> NoiseModel:
        link = LinkFunction(self.link)
        if self.noise is None:
            return default_noise(link, self.noise_half_width)
        return NoiseModel(NoiseKind(self.noise), self.noise_half_width)

    def to_simulation(self, **changes: Any) -> SimulationConfig:
        cfg = self.model_copy(update=changes) if changes else self
        return SimulationConfig(
            T=cfg.T,
            eta=cfg.eta,
            context_dim=cfg.context_dim,
            price_beta=tuple(cfg.price_beta),
            context_coefficients=None if cfg.context_coefficients is None else tuple(cfg.context_coefficients),
            link=LinkFunction(cfg.link),
            noise=cfg.noise_model(),
            box=PriceBox(cfg.p_low, cfg.p_high),
            perturbation=PerturbationDist(PerturbationKind(cfg.perturbation), cfg.u_max, 1),
            beta_max=cfg.beta_max,
            beta_init=None if cfg.beta_init is None else tuple(cfg.beta_init),
            seed=cfg.seed,
            estimator=cfg.estimator,
            ridge=cfg.ridge,
            tol=cfg.tol,
            max_iter=cfg.max_iter,
            opt_tol=cfg.opt_tol,
            context_clip=cfg.context_clip,
        )


class ExperimentSpec(BaseModel):
    """One CLI invocation: subcommand, input file, output directory, flag overrides."""

    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["simulate", "sweep", "verify", "baseline"]
    config_path: Optional[str] = None
    out_dir: str = "results"
    overrides: Dict[str, Any] = Field(default_factory=dict)
    suite: Optional[Literal["prop4", "fp_lemma", "concentration", "isometry", "mqle_oracle"]] = None
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)

    @field_validator("overrides")
    @classmethod
    def _known_overrides(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        unknown = sorted(set(values) - set(OVERRIDE_KEYS))
        if unknown:
            raise ValueError(f"unknown override(s): {', '.join(unknown)}")
        return values


def _field_of(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first.get("loc", ())) or "config"


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    return str(first.get("msg", error))


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Raw key-value mapping from a JSON config file; an empty or missing path gives {}."""
    if not path:
        return {}
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read {file_path}: {e}", field="config") from e
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"malformed JSON in {file_path}: {e}", field="config") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{file_path} must hold a flat JSON object", field="config")
    return data


def build_config(data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    merged = dict(data)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(_describe(e), field=_field_of(e)) from e


def parse_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    subcommand: str = "simulate",
    out_dir: str = "results",
    suite: Optional[str] = None,
) -> Tuple[SimulationConfig, ExperimentSpec]:
    """
    Validated simulation config plus the run request.

    Raises ConfigurationError naming the offending field on any invalid input.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    config = build_config(load_config_file(path), overrides)
    try:
        spec = ExperimentSpec(
            subcommand=subcommand,
            config_path=path,
            out_dir=out_dir,
            overrides=overrides,
            suite=suite,
            config=config,
        )
    except ValidationError as e:
        raise ConfigurationError(_describe(e), field=_field_of(e)) from e
    return config.to_simulation(), spec


def dump_config(config: ExperimentConfig) -> str:
    """JSON text that parse_config reads back to an equal config."""
    return config.model_dump_json(indent=2)
