"""
Design-matrix accumulation and eigenvalue diagnostics.

Everything spectral in the package goes through `symmetric_eigenvalues`, a cyclic
Jacobi solver with round-robin (parallel) ordering: each round applies n/2
disjoint rotations at once, so a sweep is n-1 dense products instead of
n(n-1)/2 scalar rotations.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError, DomainError
from perturbation import PerturbationDist, PerturbationKind, PerturbationSchedule

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
EPS = float(np.finfo(float).eps)
CHECK_TOL = 1e-10

# λ_min is recorded every step up to this t, then every TRACE_STRIDE steps
TRACE_DENSE_UNTIL = 200
TRACE_STRIDE = 10


# ===== JACOBI EIGENSOLVER =====

@lru_cache(maxsize=64)
def _round_robin(n: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    """Disjoint (p, q) index pairs for each round of one cyclic sweep, p < q."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_diagonal(a: np.ndarray) -> float:
    """Frobenius norm of the strict off-diagonal part, summed directly."""
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _as_square(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix entries must be finite")
    return M


def jacobi_diagonalize(M, tol: float = JACOBI_TOL) -> Tuple[np.ndarray, int]:
    """
    Ascending eigenvalues of (M + M') / 2 and the number of sweeps used.

    Stops once the off-diagonal Frobenius mass drops below tol * max(1, ||M||_F).
    A pair is left alone when |a_pq| <= eps * sqrt(|a_pp a_qq|).
    """
    a = _as_square(M)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return a[0].copy(), 0

    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    rounds = _round_robin(n)
    sweeps = 0
    while sweeps < JACOBI_MAX_SWEEPS and _off_diagonal(a) >= threshold:
        sweeps += 1
        for p, q in rounds:
            apq = a[p, q]
            app, aqq = a[p, p], a[q, q]
            active = np.abs(apq) > EPS * np.sqrt(np.abs(app * aqq))
            if not np.any(active):
                continue
            # t = sgn(theta) / (|theta| + sqrt(theta^2 + 1)), theta = h / (2 a_pq), without forming theta
            h = aqq - app
            sign = np.where(h >= 0, 1.0, -1.0)
            denom = np.abs(h) + np.hypot(h, 2.0 * apq)
            t = np.where(active, 2.0 * apq * sign / np.where(active, denom, 1.0), 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            rotation = np.eye(n)
            rotation[p, p] = c
            rotation[q, q] = c
            rotation[p, q] = s
            rotation[q, p] = -s
            a = rotation.T @ a @ rotation
            a = 0.5 * (a + a.T)
    return np.sort(np.diag(a)), sweeps


def symmetric_eigenvalues(M, tol: float = JACOBI_TOL) -> np.ndarray:
    """Ascending eigenvalues of (M + M') / 2 by cyclic Jacobi."""
    return jacobi_diagonalize(M, tol)[0]


def lambda_min(M) -> float:
    return float(symmetric_eigenvalues(M)[0])


def lambda_max(M) -> float:
    return float(symmetric_eigenvalues(M)[-1])


def operator_norm(M) -> float:
    """Largest singular value, sqrt(lambda_max(M'M))."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    gram = M.T @ M
    return math.sqrt(max(lambda_max(gram), 0.0))


# ===== DESIGN MATRIX =====

def should_record(t: int) -> bool:
    return t <= TRACE_DENSE_UNTIL or t % TRACE_STRIDE == 0


@dataclass
class DesignAccumulator:
    """Running V_t = sum_{s<=t} x_s x_s' with a sparse lambda_min trace."""

    dim: int
    V: Optional[np.ndarray] = None
    t: int = 0
    trace: List[Tuple[int, float]] = field(default_factory=list)
    _nonsingular: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.V is None:
            self.V = np.zeros((self.dim, self.dim))

    def update(self, x) -> Optional[float]:
        """Rank-1 update; returns lambda_min(V_t) when this step is on the trace schedule."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DimensionError(f"row has dimension {x.size}, design has {self.dim}")
        self.V += np.outer(x, x)
        self.t += 1
        if should_record(self.t):
            value = lambda_min(self.V)
            self.trace.append((self.t, value))
            return value
        return None

    def lambda_min(self) -> float:
        if self.trace and self.trace[-1][0] == self.t:
            return self.trace[-1][1]
        return lambda_min(self.V)

    def lambda_max(self) -> float:
        return lambda_max(self.V)

    def is_nonsingular(self, rel_tol: float = CHECK_TOL) -> bool:
        """
        t >= d and lambda_min(V_t) above rel_tol * max(1, tr V_t).

        Tested by a Cholesky factorization of V_t - threshold * I. Once true it
        stays true, since lambda_min(V_t) never decreases.
        """
        if self._nonsingular:
            return True
        if self.t < self.dim:
            return False
        threshold = rel_tol * max(1.0, float(np.trace(self.V)))
        try:
            np.linalg.cholesky(self.V - threshold * np.eye(self.dim))
        except np.linalg.LinAlgError:
            return False
        self._nonsingular = True
        return True


def perturbation_block_covariance(dist: PerturbationDist, dim: int, offset: int = 0) -> np.ndarray:
    """Sigma^z for z = (0, u, 0): the perturbation covariance embedded at `offset` in a dim x dim matrix."""
    if offset + dist.dim > dim:
        raise DimensionError("perturbation block does not fit in the design dimension")
    sigma = np.zeros((dim, dim))
    sigma[offset:offset + dist.dim, offset:offset + dist.dim] = dist.covariance
    return sigma


def lambda_growth_ratio(
    trace: Sequence[Tuple[int, float]], schedule: PerturbationSchedule
) -> List[float]:
    """lambda_min(t) / sum_{s<=t} alpha_s^2 for every recorded t."""
    if not trace:
        return []
    t_max = max(t for t, _ in trace)
    cumulative = np.cumsum(schedule.alphas(t_max) ** 2)
    return [float(value / cumulative[t - 1]) for t, value in trace]


# ===== BLOCK MATRIX BOUNDS =====

@dataclass(frozen=True)
class BlockMatrix:
    """M = [[A, B], [B', C]] with A symmetric m x m, B m x k, C symmetric positive definite k x k."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        m, k = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (m, m) or self.C.shape != (k, k) or self.B.shape != (m, k):
            raise DimensionError(
                f"incompatible blocks A{self.A.shape} B{self.B.shape} C{self.C.shape}"
            )

    @classmethod
    def split(cls, M, m: int) -> "BlockMatrix":
        M = _as_square(M)
        return cls(M[:m, :m].copy(), M[:m, m:].copy(), M[m:, m:].copy())

    def assembled(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.B.T, self.C]])

    def schur_complement(self) -> np.ndarray:
        """A - B C^-1 B'."""
        return self.A - self.B @ np.linalg.solve(self.C, self.B.T)


def schur_lower_bound(blocks: BlockMatrix) -> float:
    """
    Lower bound on lambda_min(M) from its blocks:

        l_C^2 / ((||B|| + l_C)^2 + l_C^2) * min(lambda_min(A - B C^-1 B'), l_C)

    with l_C = lambda_min(C) > 0.
    """
    l_c = lambda_min(blocks.C)
    if l_c <= 0:
        raise DomainError(f"C must be positive definite, lambda_min(C) = {l_c}")
    b = operator_norm(blocks.B)
    l_schur = lambda_min(blocks.schur_complement())
    factor = l_c ** 2 / ((b + l_c) ** 2 + l_c ** 2)
    return factor * min(l_schur, l_c)


def f_p_bound(b: float) -> float:
    """1 / ((b + 1)^2 + 1), the lower bound on min_p f(p)."""
    if b < 0:
        raise DomainError(f"b must be non-negative, got {b}")
    return 1.0 / ((b + 1.0) ** 2 + 1.0)


def f_p_grid_min(b: float, grid_points: int = 1_000_000) -> float:
    """min over a uniform grid on [0, 1] of f(p) = p + ((sqrt(1-p) - b sqrt(p)) v 0)^2."""
    if b < 0:
        raise DomainError(f"b must be non-negative, got {b}")
    p = np.linspace(0.0, 1.0, grid_points)
    gap = np.maximum(np.sqrt(1.0 - p) - b * np.sqrt(p), 0.0)
    return float(np.min(p + gap ** 2))


def approx_isometry_check(A, B, tol: float = CHECK_TOL) -> bool:
    """lambda_min(A) >= lambda_min(B) - ||A - B||_op, within tol."""
    A = _as_square(A)
    B = _as_square(B)
    if A.shape != B.shape:
        raise DimensionError(f"shapes differ: {A.shape} vs {B.shape}")
    return lambda_min(A) >= lambda_min(B) - operator_norm(A - B) - tol


# ===== CONCENTRATION =====

def concentration_envelope(t: int, x_max: float, sigma_norm: float) -> float:
    """sqrt(16 t log t (x_max^2 + ||Sigma||)^2); zero at t = 1."""
    return math.sqrt(16.0 * t * math.log(t) * (x_max ** 2 + sigma_norm) ** 2)


def concentration_violation_rate(
    dim: int,
    t_max: int,
    trials: int,
    rng: np.random.Generator,
    u_max: float = 1.0,
) -> float:
    """
    Fraction of (trial, t), t in {t_max/4, t_max/2, t_max}, where
    ||sum_{s<=t} (x_s x_s' - Sigma)||_op exceeds the envelope.

    x_s ~ Uniform([-u_max, u_max]^dim); u_max = 0 gives constant zero vectors.
    Checkpoints below t = 2 are skipped (the envelope degenerates to 0).
    """
    if dim < 1 or trials < 1:
        raise DomainError("dim and trials must be positive")
    if u_max > 0:
        sigma = PerturbationDist(PerturbationKind.UNIFORM_CUBE, u_max, dim).covariance
    else:
        sigma = np.zeros((dim, dim))
    sigma_norm = operator_norm(sigma)
    x_max = u_max * math.sqrt(dim)
    checkpoints = sorted({t for t in (t_max // 4, t_max // 2, t_max) if t >= 2})
    if not checkpoints:
        return 0.0

    violations = 0
    for _ in range(trials):
        X = rng.uniform(-u_max, u_max, (t_max, dim)) if u_max > 0 else np.zeros((t_max, dim))
        for t in checkpoints:
            deviation = X[:t].T @ X[:t] - t * sigma
            if operator_norm(deviation) > concentration_envelope(t, x_max, sigma_norm):
                violations += 1
    return violations / (trials * len(checkpoints))
