"""
Expected revenue r(q, c; beta) = q * mu(beta' (1, q, c)) and the certainty-equivalent price.

The optimizer is a coarse grid followed by golden-section refinement around the
best grid point. Ties are broken toward the smallest price.
"""

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from errors import ConfigurationError, DimensionError, DomainError
from glm_core import LinkFunction

INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2

COARSE_GRID_POINTS = 256
DEFAULT_OPT_TOL = 1e-8


# ===== MODEL =====

@dataclass(frozen=True)
class PriceBox:
    """Feasible sale prices [lower, upper] for the single free price."""

    lower: float = 0.5
    upper: float = 5.0

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)) or self.lower >= self.upper:
            raise ConfigurationError(
                f"price box needs p_l < p_h, got [{self.lower}, {self.upper}]", field="price_box"
            )

    def clamp(self, q: float) -> float:
        return float(min(max(q, self.lower), self.upper))

    def contains(self, q: float) -> bool:
        return self.lower <= q <= self.upper


@dataclass(frozen=True)
class RevenueModel:
    """
    Price-times-demand revenue with one free price q.

    The price block is p = (1, q) when intercept_in_price_block is set, otherwise p = (q,).
    """

    link: LinkFunction = LinkFunction.IDENTITY
    intercept_in_price_block: bool = True

    @property
    def price_block_size(self) -> int:
        return 2 if self.intercept_in_price_block else 1

    def features(self, q: float, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float).reshape(-1)
        head = [1.0, float(q)] if self.intercept_in_price_block else [float(q)]
        return np.concatenate([head, c])

    def split(self, beta: np.ndarray, c: np.ndarray) -> Tuple[float, float]:
        """Linear predictor written as a + b q for a fixed context."""
        beta = np.asarray(beta, dtype=float).reshape(-1)
        c = np.asarray(c, dtype=float).reshape(-1)
        if beta.size != self.price_block_size + c.size:
            raise DimensionError(
                f"beta has dimension {beta.size}, expected {self.price_block_size} + {c.size}"
            )
        context_part = float(beta[self.price_block_size:] @ c) if c.size else 0.0
        if self.intercept_in_price_block:
            return float(beta[0]) + context_part, float(beta[1])
        return context_part, float(beta[0])

    def curve(self, beta: np.ndarray, c: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Vectorized q -> r(q, c; beta) for a fixed context."""
        a, b = self.split(beta, c)
        link = self.link
        return lambda q: q * link.mean(a + b * np.asarray(q, dtype=float))


def expected_revenue(model: RevenueModel, q: float, c: np.ndarray, beta: np.ndarray) -> float:
    """r(q, c; beta) = q * mu(beta' (1, q, c))."""
    if not np.isfinite(q):
        raise DomainError(f"price must be finite, got {q}")
    return float(model.curve(beta, c)(float(q)))


# ===== OPTIMIZER =====

def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = DEFAULT_OPT_TOL) -> float:
    """
    Golden-section search for the maximum of a unimodal f on [a, b].

    Returns the midpoint of the final bracket, whose width is at most tol.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        return 0.5 * (a + b)

    # Required steps to achieve tolerance
    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))

    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = f(c)
    yd = f(d)

    for _ in range(n - 1):
        if yc >= yd:
            b = d
            d = c
            yd = yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = f(c)
        else:
            a = c
            c = d
            yc = yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = f(d)

    if yc >= yd:
        return 0.5 * (a + d)
    return 0.5 * (c + b)


def certainty_equivalent_price(
    model: RevenueModel,
    c: np.ndarray,
    beta: np.ndarray,
    box: PriceBox,
    opt_tol: float = DEFAULT_OPT_TOL,
) -> float:
    """
    argmax over [p_l, p_h] of r(q, c; beta).

    Logic:
    - 256-point grid, first maximizer wins (smallest price on ties)
    - golden section on the two grid cells around it
    - the refined point replaces the grid point only if it is strictly better
    """
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise DomainError("beta must be finite")
    r = model.curve(beta, c)

    grid = np.linspace(box.lower, box.upper, COARSE_GRID_POINTS)
    values = r(grid)
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, COARSE_GRID_POINTS - 1)]

    refined = golden_section_max(lambda q: float(r(q)), lo, hi, opt_tol)
    if float(r(refined)) > float(values[best]):
        return box.clamp(refined)
    return float(grid[best])


def oracle_optimal_price(
    model: RevenueModel,
    c: np.ndarray,
    beta0: np.ndarray,
    box: PriceBox,
    opt_tol: float = DEFAULT_OPT_TOL,
) -> float:
    """p*(c): the certainty-equivalent price evaluated at the true parameter."""
    return certainty_equivalent_price(model, c, beta0, box, opt_tol)
