"""
Link functions, the demand response model y = mu(beta0' x) + eps, and feature assembly x = (p, c).
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from errors import ConfigurationError, DimensionError, DomainError

ArrayLike = Union[float, np.ndarray]


# ===== LINK FUNCTIONS =====

class LinkFunction(str, Enum):
    """GLM mean function mu. Both kinds are strictly increasing and Lipschitz on all reals."""

    IDENTITY = "identity"
    LOGISTIC = "logistic"

    @property
    def lipschitz(self) -> float:
        return 1.0 if self is LinkFunction.IDENTITY else 0.25

    def mean(self, z: ArrayLike) -> ArrayLike:
        z = _finite(z)
        if self is LinkFunction.IDENTITY:
            return z
        # tanh form stays accurate in both tails
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def derivative(self, z: ArrayLike) -> ArrayLike:
        z = _finite(z)
        if self is LinkFunction.IDENTITY:
            return np.ones_like(z) if isinstance(z, np.ndarray) else 1.0
        # mu(z)(1 - mu(z)) written in terms of exp(-|z|), no overflow
        e = np.exp(-np.abs(z))
        return e / (1.0 + e) ** 2


def _finite(z: ArrayLike) -> ArrayLike:
    if isinstance(z, np.ndarray):
        if not np.all(np.isfinite(z)):
            raise DomainError("link argument must be finite")
        return z.astype(float, copy=False)
    z = float(z)
    if not np.isfinite(z):
        raise DomainError(f"link argument must be finite, got {z}")
    return z


def link_eval(link: LinkFunction, z: ArrayLike) -> ArrayLike:
    """mu(z). Identity returns z, Logistic returns 1 / (1 + e^-z)."""
    return link.mean(z)


def link_derivative(link: LinkFunction, z: ArrayLike) -> ArrayLike:
    """mu'(z) > 0. Identity gives 1, Logistic gives mu(z)(1 - mu(z))."""
    return link.derivative(z)


def min_link_slope(
    link: LinkFunction,
    beta: np.ndarray,
    price_range: Tuple[float, float],
    c_max: float,
    grid_points: int = 1001,
) -> float:
    """
    Smallest mu'(beta' x) over x = (1, q, c) with q in price_range and |c_i| <= c_max.

    beta' x is affine in c, so for each price q the linear predictor sweeps
    [a_q - R, a_q + R] with R = c_max * ||beta_c||_1. mu' is unimodal with its
    peak at 0, so the minimum over that interval sits at an endpoint.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.size < 2:
        raise DimensionError("beta needs an intercept and a price coefficient")
    q = np.linspace(price_range[0], price_range[1], grid_points)
    a = beta[0] + beta[1] * q
    reach = c_max * float(np.sum(np.abs(beta[2:])))
    slopes = np.minimum(link.derivative(a - reach), link.derivative(a + reach))
    return float(np.min(slopes))


# ===== RESPONSE NOISE =====

class NoiseKind(str, Enum):
    UNIFORM = "uniform"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class NoiseModel:
    """
    Response noise.

    - UNIFORM: eps ~ Uniform[-half_width, half_width], additive and bounded.
    - BERNOULLI: y in {0, 1} with success probability mu(beta0' x); eps = y - mu lies in [-1, 1].
    """

    kind: NoiseKind = NoiseKind.UNIFORM
    half_width: float = 0.5
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind is NoiseKind.UNIFORM and not (self.half_width >= 0 and np.isfinite(self.half_width)):
            raise ConfigurationError("half_width must be a finite non-negative number", field="noise_half_width")

    @property
    def bound(self) -> float:
        return self.half_width if self.kind is NoiseKind.UNIFORM else 1.0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def check_link(self, link: LinkFunction) -> None:
        if self.kind is NoiseKind.BERNOULLI and link is not LinkFunction.LOGISTIC:
            raise ConfigurationError("Bernoulli responses require the logistic link", field="noise")


def sample_responses(
    link: LinkFunction,
    noise: NoiseModel,
    mean: ArrayLike,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> ArrayLike:
    """Draw y given the conditional mean mu(beta0' x) (scalar or array)."""
    noise.check_link(link)
    if noise.kind is NoiseKind.BERNOULLI:
        draws = rng.random(size if size is not None else np.shape(mean) or None)
        return (draws < mean).astype(float) if isinstance(draws, np.ndarray) else float(draws < mean)
    eps = rng.uniform(-noise.half_width, noise.half_width, size if size is not None else np.shape(mean) or None)
    return mean + eps


# ===== FEATURES =====

@dataclass(frozen=True)
class FeatureVector:
    """x = (p, c): price block (leading 1 when an intercept is used) followed by the context."""

    price: np.ndarray
    context: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def build(cls, price, context=()) -> "FeatureVector":
        return cls(np.atleast_1d(np.asarray(price, dtype=float)), np.asarray(context, dtype=float).reshape(-1))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.price, self.context])

    @property
    def dim(self) -> int:
        return self.price.size + self.context.size

    def within(self, p_max: float, c_max: float) -> bool:
        p_ok = self.price.size == 0 or float(np.max(np.abs(self.price))) <= p_max
        c_ok = self.context.size == 0 or float(np.max(np.abs(self.context))) <= c_max
        return p_ok and c_ok


def as_vector(x: Union[FeatureVector, np.ndarray, list]) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.x
    return np.asarray(x, dtype=float).reshape(-1)


def sample_response(
    link: LinkFunction,
    noise: NoiseModel,
    beta0: np.ndarray,
    x: Union[FeatureVector, np.ndarray],
    rng: np.random.Generator,
) -> float:
    """One response y = mu(beta0' x) + eps with conditional mean mu(beta0' x)."""
    noise.check_link(link)
    beta0 = np.asarray(beta0, dtype=float)
    xv = as_vector(x)
    if beta0.shape != xv.shape:
        raise DimensionError(f"beta0 has dimension {beta0.size}, x has dimension {xv.size}")
    mu = link.mean(float(beta0 @ xv))
    return float(sample_responses(link, noise, mu, rng))
