"""
Decreasing perturbation schedule alpha_t = t^-eta and the i.i.d. mean-zero perturbations u_t.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from errors import ConfigurationError, DimensionError, DomainError
from revenue_optimizer import PriceBox


# ===== SCHEDULE =====

@dataclass(frozen=True)
class PerturbationSchedule:
    eta: float = 0.25

    def __post_init__(self):
        if not (0.0 <= self.eta < 0.5):
            raise ConfigurationError(f"eta must lie in [0, 1/2), got {self.eta}", field="eta")

    def alpha(self, t: int) -> float:
        return alpha(self, t)

    def alphas(self, t_max: int) -> np.ndarray:
        """alpha_1 .. alpha_{t_max} as an array."""
        return np.arange(1, t_max + 1, dtype=float) ** (-self.eta)


def alpha(schedule: PerturbationSchedule, t: int) -> float:
    """alpha_t = t^-eta, in (0, 1]."""
    if t < 1:
        raise DomainError(f"schedule is defined for t >= 1, got {t}")
    return float(t) ** (-schedule.eta)


def alpha_sq_sum_bounds(schedule: PerturbationSchedule, t: int) -> Tuple[float, float]:
    """
    Integral-test bracket for sum_{s<=t} alpha_s^2 with gamma = 2 eta:

        (t^(1-gamma) - 1) / (1 - gamma)  <=  sum  <=  1 + (t^(1-gamma) - 1) / (1 - gamma)
    """
    if t < 1:
        raise DomainError(f"schedule is defined for t >= 1, got {t}")
    gamma = 2.0 * schedule.eta
    integral = (float(t) ** (1.0 - gamma) - 1.0) / (1.0 - gamma)
    return integral, 1.0 + integral


def alpha_sq_sum(schedule: PerturbationSchedule, t: int) -> float:
    """Exact sum_{s<=t} alpha_s^2 by direct summation."""
    if t < 1:
        return 0.0
    return float(np.sum(schedule.alphas(t) ** 2))


# ===== PERTURBATION DISTRIBUTIONS =====

class PerturbationKind(str, Enum):
    UNIFORM_CUBE = "uniform_cube"
    UNIT_COORDINATE = "unit_coordinate"


@dataclass(frozen=True)
class PerturbationDist:
    """
    - UNIFORM_CUBE: u ~ Uniform([-u_max, u_max]^m), covariance (u_max^2 / 3) I
    - UNIT_COORDINATE: u ~ Uniform({+-e_i}), covariance (1 / m) I
    """

    kind: PerturbationKind = PerturbationKind.UNIFORM_CUBE
    u_max: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.u_max > 0:
            raise ConfigurationError("u_max must be positive", field="u_max")
        if self.dim < 1:
            raise ConfigurationError("perturbation dimension must be positive", field="perturbation")

    @property
    def covariance(self) -> np.ndarray:
        if self.kind is PerturbationKind.UNIFORM_CUBE:
            return (self.u_max ** 2 / 3.0) * np.eye(self.dim)
        return np.eye(self.dim) / self.dim


def sample_perturbation(dist: PerturbationDist, rng: np.random.Generator) -> np.ndarray:
    if dist.kind is PerturbationKind.UNIFORM_CUBE:
        return rng.uniform(-dist.u_max, dist.u_max, dist.dim)
    u = np.zeros(dist.dim)
    u[rng.integers(dist.dim)] = 1.0 if rng.random() < 0.5 else -1.0
    return u


def perturbed_price(p_ce: float, alpha_t: float, u, box: PriceBox) -> float:
    """clamp(p_ce + alpha_t u, [p_l, p_h]) for the single free price."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != 1:
        raise DimensionError(f"one free price takes a scalar perturbation, got {u.size} coordinates")
    u = float(u[0])
    return box.clamp(p_ce + alpha_t * u)
