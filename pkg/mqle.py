"""
Maximum quasi-likelihood estimation.

Solves the score equation  sum_s x_s (y_s - mu(beta' x_s)) = 0  by damped Newton
(IRLS for canonical links) with projection onto the ball ||beta|| <= beta_max,
plus the Sherman-Morrison online path for the identity link.
"""

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from errors import ConfigurationError, DimensionError, DomainError
from glm_core import FeatureVector, LinkFunction, as_vector

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
MAX_HALVINGS = 40
MAX_CONDITION = 1e13
# an unconstrained iterate this far outside the ball is treated as divergent
ESCAPE_FACTOR = 4.0


# ===== DATA =====

class Dataset:
    """Append-only (x_s, y_s) rows in time order, backed by a growing array."""

    def __init__(self, dim: int, capacity: int = 64):
        if dim < 1:
            raise DimensionError("dataset dimension must be positive")
        self.dim = dim
        self._X = np.empty((max(capacity, 1), dim))
        self._y = np.empty(max(capacity, 1))
        self._count = 0

    @classmethod
    def from_arrays(cls, X, y) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise DimensionError(f"{X.shape[0]} rows but {y.size} responses")
        data = cls(X.shape[1], capacity=X.shape[0])
        data._X[: y.size] = X
        data._y[: y.size] = y
        data._count = y.size
        return data

    @property
    def count(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    @property
    def X(self) -> np.ndarray:
        view = self._X[: self._count]
        view.flags.writeable = False
        return view

    @property
    def y(self) -> np.ndarray:
        view = self._y[: self._count]
        view.flags.writeable = False
        return view

    def append(self, x: Union[FeatureVector, np.ndarray], y: float) -> None:
        xv = as_vector(x)
        if xv.size != self.dim:
            raise DimensionError(f"row has dimension {xv.size}, dataset has {self.dim}")
        if self._count == self._X.shape[0]:
            self._X = np.vstack([self._X, np.empty_like(self._X)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._X[self._count] = xv
        self._y[self._count] = float(y)
        self._count += 1


@dataclass(frozen=True)
class BetaEstimate:
    """
    Result of one MQLE solve.

    `projected` is True whenever beta is not a converged interior solution; beta is
    then the Euclidean projection of the last Newton iterate onto the ball.
    """

    beta: np.ndarray
    score_norm: float
    iterations: int
    projected: bool
    beta_max: float

    @property
    def converged(self) -> bool:
        return not self.projected


# ===== SCORE & SOLVER =====

def score(beta: np.ndarray, data: Dataset, link: LinkFunction) -> np.ndarray:
    """G_t(beta) = sum_s x_s (y_s - mu(beta' x_s)); the zero vector for an empty dataset."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.dim,):
        raise DimensionError(f"beta has shape {beta.shape}, dataset dimension is {data.dim}")
    if data.count == 0:
        return np.zeros(data.dim)
    X = data.X
    return X.T @ (data.y - link.mean(X @ beta))


def project_to_ball(beta: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(beta))
    if norm <= radius:
        return beta
    return beta * (radius / norm)


def _newton_direction(jacobian: np.ndarray, g: np.ndarray) -> Optional[np.ndarray]:
    try:
        if np.linalg.cond(jacobian) > MAX_CONDITION:
            return None
        step = np.linalg.solve(jacobian, g)
    except np.linalg.LinAlgError:
        return None
    return step if np.all(np.isfinite(step)) else None


def solve_mqle(
    data: Dataset,
    link: LinkFunction,
    init: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    beta_max: float = np.inf,
) -> BetaEstimate:
    """
    Damped Newton on the score with Jacobian sum_s mu'(beta' x_s) x_s x_s'.

    Each step is halved until ||score|| decreases. A singular Newton system falls
    back to a scaled gradient step. Convergence means ||score|| <= tol at a point
    inside the ball; anything else (max_iter reached, no descent left at machine
    precision, divergence) returns the projection of the last iterate with
    projected=True. Never raises on non-convergence.
    """
    if data.count < 1:
        raise DomainError("the MQLE needs at least one observation")
    if tol <= 0 or max_iter < 1 or not beta_max > 0:
        raise DomainError("tol and beta_max must be positive, max_iter at least 1")

    beta = np.zeros(data.dim) if init is None else np.array(init, dtype=float).reshape(-1)
    if beta.size != data.dim:
        raise DimensionError(f"init has dimension {beta.size}, dataset has {data.dim}")
    if not np.all(np.isfinite(beta)):
        raise DomainError("init must be finite")

    X = data.X
    g = score(beta, data, link)
    g_norm = float(np.linalg.norm(g))
    iterations = 0

    while g_norm > tol and iterations < max_iter:
        iterations += 1
        weights = link.derivative(X @ beta)
        jacobian = X.T @ (weights[:, None] * X)
        step = _newton_direction(jacobian, g)
        if step is None:
            # singular system: gradient step on the quasi-likelihood, scaled by the curvature
            curvature = float(np.trace(jacobian))
            step = g / curvature if curvature > 0 else g

        size = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = beta + size * step
            g_candidate = score(candidate, data, link)
            candidate_norm = float(np.linalg.norm(g_candidate))
            if candidate_norm < g_norm:
                break
            size *= 0.5
        else:
            # no descent along this direction at machine precision
            break

        beta, g, g_norm = candidate, g_candidate, candidate_norm
        if float(np.linalg.norm(beta)) > ESCAPE_FACTOR * beta_max:
            break

    inside = float(np.linalg.norm(beta)) <= beta_max
    converged = g_norm <= tol and inside
    if not converged:
        beta = project_to_ball(beta, beta_max)
        g_norm = float(np.linalg.norm(score(beta, data, link)))
    return BetaEstimate(
        beta=beta,
        score_norm=g_norm,
        iterations=iterations,
        projected=not converged,
        beta_max=float(beta_max),
    )


def least_squares(data: Dataset) -> np.ndarray:
    """Normal-equations solution of sum_s x_s (y_s - beta' x_s) = 0."""
    X = data.X
    return np.linalg.solve(X.T @ X, X.T @ data.y)


# ===== ONLINE LINEAR REGRESSION =====

@dataclass(frozen=True)
class OnlineRegressionState:
    """(sum x x' + ridge I)^-1 and sum x y for the identity link, updated one row at a time."""

    inverse: np.ndarray
    xy: np.ndarray
    count: int
    ridge: float
    link: LinkFunction = LinkFunction.IDENTITY

    @classmethod
    def start(cls, dim: int, ridge: float = 1.0, link: LinkFunction = LinkFunction.IDENTITY) -> "OnlineRegressionState":
        if link is not LinkFunction.IDENTITY:
            raise ConfigurationError("Sherman-Morrison updates apply to the identity link only", field="estimator")
        if not ridge > 0:
            raise ConfigurationError("ridge must be positive", field="ridge")
        return cls(np.eye(dim) / ridge, np.zeros(dim), 0, float(ridge), link)

    @property
    def estimate(self) -> np.ndarray:
        return self.inverse @ self.xy


def sherman_morrison_update(
    state: OnlineRegressionState, x: Union[FeatureVector, np.ndarray], y: float
) -> OnlineRegressionState:
    """Rank-1 inverse update; the estimate stays equal to the batch ridge solution."""
    if state.link is not LinkFunction.IDENTITY:
        raise ConfigurationError("Sherman-Morrison updates apply to the identity link only", field="estimator")
    xv = as_vector(x)
    if xv.size != state.xy.size:
        raise DimensionError(f"row has dimension {xv.size}, state has {state.xy.size}")
    px = state.inverse @ xv
    inverse = state.inverse - np.outer(px, px) / (1.0 + float(xv @ px))
    inverse = 0.5 * (inverse + inverse.T)
    return replace(state, inverse=inverse, xy=state.xy + xv * float(y), count=state.count + 1)


def ridge_solution(data: Dataset, ridge: float) -> np.ndarray:
    """Batch counterpart of the online state: (X'X + ridge I)^-1 X'y."""
    X = data.X
    return np.linalg.solve(X.T @ X + ridge * np.eye(data.dim), X.T @ data.y)
