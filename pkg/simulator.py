"""
Perturbed certainty-equivalent pricing, end to end.

Each step runs four phases: receive a context, choose the perturbed CE price,
receive the response, update the MQLE. Contexts, noise, perturbations and the
context coefficients draw from independent sub-streams of the master seed, so
a greedy run and a perturbed run with the same seed see the same contexts.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from console import log
from errors import ConfigurationError, DomainError
from glm_core import LinkFunction, NoiseKind, NoiseModel, sample_responses
from mqle import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Dataset,
    OnlineRegressionState,
    sherman_morrison_update,
    solve_mqle,
)
from perturbation import (
    PerturbationDist,
    PerturbationSchedule,
    alpha,
    perturbed_price,
    sample_perturbation,
)
from revenue_optimizer import (
    DEFAULT_OPT_TOL,
    PriceBox,
    RevenueModel,
    certainty_equivalent_price,
    expected_revenue,
    oracle_optimal_price,
)
from spectral import DesignAccumulator, lambda_growth_ratio

POLICIES = ("perturbed", "greedy")
ESTIMATORS = ("mqle", "sherman_morrison")

SOLVER_OK = "ok"
SOLVER_RETAINED = "retained"
SOLVER_PROJECTED = "projected"


# ===== CONFIGURATION =====

@dataclass(frozen=True)
class SimulationConfig:
    """
    One experiment. Defaults are the linear-demand setup: T = 2000, eta = 1/4,
    15 standard-normal context coordinates, price block (1, q) with true
    coefficients (1, -0.5), prices in [0.5, 5].
    """

    T: int = 2000
    eta: float = 0.25
    context_dim: int = 15
    price_beta: Tuple[float, ...] = (1.0, -0.5)
    context_coefficients: Optional[Tuple[float, ...]] = None
    link: LinkFunction = LinkFunction.IDENTITY
    noise: NoiseModel = NoiseModel()
    box: PriceBox = PriceBox()
    perturbation: PerturbationDist = PerturbationDist()
    beta_max: Optional[float] = None
    beta_init: Optional[Tuple[float, ...]] = None
    seed: int = 0
    policy: str = "perturbed"
    estimator: str = "mqle"
    ridge: float = 1.0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    opt_tol: float = DEFAULT_OPT_TOL
    context_clip: float = 6.0

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError("horizon must be at least 1", field="T")
        if self.context_dim < 0:
            raise ConfigurationError("context_dim must be non-negative", field="context_dim")
        if len(self.price_beta) != 2:
            raise ConfigurationError("price block is (intercept, price slope)", field="price_beta")
        if self.context_coefficients is not None and len(self.context_coefficients) != self.context_dim:
            raise ConfigurationError(
                f"expected {self.context_dim} context coefficients, got {len(self.context_coefficients)}",
                field="context_coefficients",
            )
        if self.beta_init is not None and len(self.beta_init) != self.dim:
            raise ConfigurationError(f"beta_init must have dimension {self.dim}", field="beta_init")
        if self.policy not in POLICIES:
            raise ConfigurationError(f"policy must be one of {POLICIES}", field="policy")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}", field="estimator")
        if self.estimator == "sherman_morrison" and self.link is not LinkFunction.IDENTITY:
            raise ConfigurationError("Sherman-Morrison updates need the identity link", field="estimator")
        if self.perturbation.dim != 1:
            raise ConfigurationError("the single free price takes a one-coordinate perturbation", field="perturbation")
        if self.beta_max is not None and not self.beta_max > 0:
            raise ConfigurationError("beta_max must be positive", field="beta_max")
        PerturbationSchedule(self.eta)
        self.noise.check_link(self.link)

    @property
    def dim(self) -> int:
        return len(self.price_beta) + self.context_dim

    @property
    def model(self) -> RevenueModel:
        return RevenueModel(link=self.link)

    @property
    def schedule(self) -> PerturbationSchedule:
        return PerturbationSchedule(self.eta)

    def beta0(self, rng: np.random.Generator) -> np.ndarray:
        """True parameter; context coefficients are drawn from N(0, I) unless fixed in the config."""
        if self.context_coefficients is not None:
            context = np.asarray(self.context_coefficients, dtype=float)
        else:
            context = rng.standard_normal(self.context_dim)
        return np.concatenate([np.asarray(self.price_beta, dtype=float), context])


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("contexts", "noise", "perturbations", "coefficients")
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


# ===== RESULTS =====

@dataclass
class SimulationResult:
    """Per-step traces of one episode (arrays indexed by t - 1)."""

    config: SimulationConfig
    beta0: np.ndarray
    contexts: np.ndarray
    price: np.ndarray
    price_opt: np.ndarray
    response: np.ndarray
    reward_realized: np.ndarray
    reward_expected: np.ndarray
    reward_opt: np.ndarray
    alpha: np.ndarray
    beta_err_sq: np.ndarray
    lambda_min: np.ndarray
    solver_flags: List[str] = field(default_factory=list)
    beta_hat: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return int(self.price.size)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    @property
    def regret_expected(self) -> np.ndarray:
        """Cumulative sum of r(x*_t; beta0) - r(x_t; beta0)."""
        return np.cumsum(self.reward_opt - self.reward_expected)

    @property
    def regret_realized(self) -> np.ndarray:
        """Cumulative sum of r(x*_t; beta0) - q_t y_t."""
        return np.cumsum(self.reward_opt - self.reward_realized)

    @property
    def regret_ratio(self) -> np.ndarray:
        """Rg(t) / (sqrt(t) log t); NaN at t = 1."""
        t = self.t.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = self.regret_expected / (np.sqrt(t) * np.log(t))
        ratio[0] = np.nan
        return ratio

    @property
    def growth_schedule(self) -> PerturbationSchedule:
        # the greedy policy is compared against sum of ones
        return self.config.schedule if self.config.policy == "perturbed" else PerturbationSchedule(0.0)

    @property
    def lambda_trace(self) -> List[Tuple[int, float]]:
        return [(int(t), float(v)) for t, v in zip(self.t, self.lambda_min) if np.isfinite(v)]

    @property
    def lambda_ratio(self) -> np.ndarray:
        """lambda_min(t) / sum_{s<=t} alpha_s^2 on recorded steps, NaN elsewhere."""
        out = np.full(self.T, np.nan)
        trace = self.lambda_trace
        for (t, _), ratio in zip(trace, lambda_growth_ratio(trace, self.growth_schedule)):
            out[t - 1] = ratio
        return out

    def solver_counts(self) -> Dict[str, int]:
        return {flag: self.solver_flags.count(flag) for flag in (SOLVER_OK, SOLVER_RETAINED, SOLVER_PROJECTED)}


def regret_ratio(result: SimulationResult, t: int) -> float:
    """Cumulative expected regret at t over sqrt(t) log t."""
    if t < 2:
        raise DomainError(f"regret ratio needs t >= 2 (log 1 = 0), got {t}")
    if t > result.T:
        raise DomainError(f"t = {t} is beyond the horizon {result.T}")
    return float(result.regret_expected[t - 1] / (math.sqrt(t) * math.log(t)))


# ===== EPISODE =====

def run_episode(config: SimulationConfig) -> SimulationResult:
    """Run the four-phase loop for t = 1..T. Deterministic given config.seed."""
    streams = make_streams(config.seed)
    link = config.link
    model = config.model
    box = config.box
    beta0 = config.beta0(streams["coefficients"])
    d = beta0.size
    T = config.T
    beta_max = config.beta_max if config.beta_max is not None else 2.0 * float(np.linalg.norm(beta0))
    beta_hat = np.zeros(d) if config.beta_init is None else np.asarray(config.beta_init, dtype=float)
    perturbed = config.policy == "perturbed"
    schedule = config.schedule

    data = Dataset(d, capacity=T)
    design = DesignAccumulator(d)
    online = OnlineRegressionState.start(d, config.ridge) if config.estimator == "sherman_morrison" else None

    contexts = np.empty((T, config.context_dim))
    columns = {name: np.empty(T) for name in (
        "price", "price_opt", "response", "reward_realized", "reward_expected",
        "reward_opt", "alpha", "beta_err_sq",
    )}
    lambda_trace = np.full(T, np.nan)
    flags: List[str] = []

    for t in range(1, T + 1):
        # context
        c = np.clip(streams["contexts"].standard_normal(config.context_dim), -config.context_clip, config.context_clip)

        # price
        p_ce = certainty_equivalent_price(model, c, beta_hat, box, config.opt_tol)
        q_opt = oracle_optimal_price(model, c, beta0, box, config.opt_tol)
        if perturbed:
            a_t = alpha(schedule, t)
            u = sample_perturbation(config.perturbation, streams["perturbations"])
        else:
            a_t, u = 0.0, np.zeros(1)
        q = perturbed_price(p_ce, a_t, u, box)

        # response
        x = model.features(q, c)
        mu = float(link.mean(float(beta0 @ x)))
        y = float(sample_responses(link, config.noise, mu, streams["noise"]))

        # estimate
        data.append(x, y)
        lam = design.update(x)
        if online is not None:
            online = sherman_morrison_update(online, x, y)
        flag = SOLVER_RETAINED
        if design.is_nonsingular():
            if online is not None:
                beta_hat, flag = online.estimate, SOLVER_OK
            else:
                estimate = solve_mqle(data, link, init=beta_hat, tol=config.tol,
                                      max_iter=config.max_iter, beta_max=beta_max)
                if np.all(np.isfinite(estimate.beta)):
                    beta_hat = estimate.beta
                    flag = SOLVER_PROJECTED if estimate.projected else SOLVER_OK

        i = t - 1
        contexts[i] = c
        columns["price"][i] = q
        columns["price_opt"][i] = q_opt
        columns["response"][i] = y
        columns["reward_realized"][i] = q * y
        columns["reward_expected"][i] = q * mu
        columns["reward_opt"][i] = expected_revenue(model, q_opt, c, beta0)
        columns["alpha"][i] = a_t
        columns["beta_err_sq"][i] = float(np.sum((beta_hat - beta0) ** 2))
        if lam is not None:
            lambda_trace[i] = lam
        flags.append(flag)

    return SimulationResult(
        config=config,
        beta0=beta0,
        contexts=contexts,
        lambda_min=lambda_trace,
        solver_flags=flags,
        beta_hat=beta_hat,
        **columns,
    )


def greedy_baseline(config: SimulationConfig) -> SimulationResult:
    """Same loop with alpha_t = 0: pure certainty-equivalent pricing."""
    return run_episode(replace(config, policy="greedy"))


# ===== REPLICATIONS =====

@dataclass
class ReplicationAggregate:
    """Per-t mean and standard error across independent episodes."""

    config: SimulationConfig
    seeds: List[int]
    results: List[SimulationResult]
    table: pd.DataFrame

    @property
    def T(self) -> int:
        return self.config.T

    def final(self, column: str) -> float:
        return float(self.table[column].iloc[-1])


AGGREGATED = {
    "beta_err_sq": lambda r: r.beta_err_sq,
    "lambda_min": lambda r: r.lambda_min,
    "regret_expected": lambda r: r.regret_expected,
    "regret_realized": lambda r: r.regret_realized,
    "regret_ratio": lambda r: r.regret_ratio,
    "lambda_ratio": lambda r: r.lambda_ratio,
}


def _replication_threads() -> int:
    try:
        return max(int(os.getenv("PP_THREADS", "0")), 0)
    except ValueError:
        log("PP_THREADS is not an integer, running sequentially", "warning")
        return 0


def aggregate(config: SimulationConfig, seeds: Sequence[int], results: List[SimulationResult]) -> ReplicationAggregate:
    n = len(results)
    first = results[0]
    table = pd.DataFrame({
        "t": first.t,
        "alpha": np.mean(np.stack([r.alpha for r in results]), axis=0),
        "price": np.mean(np.stack([r.price for r in results]), axis=0),
        "price_opt": np.mean(np.stack([r.price_opt for r in results]), axis=0),
    })
    for name, getter in AGGREGATED.items():
        stacked = np.stack([getter(r) for r in results])
        table[name] = np.mean(stacked, axis=0)
        if n > 1:
            table[f"{name}_se"] = np.std(stacked, axis=0, ddof=1) / math.sqrt(n)
        else:
            table[f"{name}_se"] = np.where(np.isfinite(stacked[0]), 0.0, np.nan)
    return ReplicationAggregate(config=config, seeds=list(seeds), results=results, table=table)


def run_replications(config: SimulationConfig, n_reps: int, base_seed: int, threads: Optional[int] = None) -> ReplicationAggregate:
    """
    Independent episodes with seeds base_seed + i.

    Episodes may run on a thread pool (PP_THREADS, 0 = sequential); the
    reduction always runs in replication order.
    """
    if n_reps < 1:
        raise DomainError(f"n_reps must be at least 1, got {n_reps}")
    seeds = [base_seed + i for i in range(n_reps)]
    configs = [replace(config, seed=s) for s in seeds]
    workers = _replication_threads() if threads is None else threads

    if workers > 0 and n_reps > 1:
        log(f"Running {n_reps} replications on {min(workers, n_reps)} threads", "debug")
        with ThreadPoolExecutor(max_workers=min(workers, n_reps)) as executor:
            results = list(executor.map(run_episode, configs))
    else:
        results = []
        for i, cfg in enumerate(configs, 1):
            results.append(run_episode(cfg))
            log(f"replication {i}/{n_reps} (seed {cfg.seed}) done", "debug")
    return aggregate(config, seeds, results)


# ===== DIAGNOSTICS =====

def azuma_bound(r_max: float, T: int) -> float:
    """4 sqrt(2 r_max T log T)."""
    return 4.0 * math.sqrt(2.0 * r_max * T * math.log(T))


def azuma_statistic(result: SimulationResult) -> Tuple[float, float]:
    """(|sum_t realized - expected reward|, bound) with r_max the largest optimal expected revenue seen."""
    deviation = abs(float(np.sum(result.reward_realized - result.reward_expected)))
    r_max = max(float(np.max(result.reward_opt)), np.finfo(float).tiny)
    return deviation, azuma_bound(r_max, result.T)


def azuma_pass_rate(results: Sequence[SimulationResult]) -> float:
    if not results:
        return 0.0
    passed = sum(1 for r in results if r.T >= 2 and azuma_statistic(r)[0] <= azuma_statistic(r)[1])
    return passed / len(results)


def default_noise(link: LinkFunction, half_width: float = 0.5) -> NoiseModel:
    """Bernoulli responses for the logistic link, uniform additive noise otherwise."""
    if link is LinkFunction.LOGISTIC:
        return NoiseModel(NoiseKind.BERNOULLI)
    return NoiseModel(NoiseKind.UNIFORM, half_width)
