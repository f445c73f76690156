"""
Perturbed certainty-equivalent pricing: command-line entry point.

Subcommands:
    simulate   run replications and write trace.csv / summary.json
    sweep      compare perturbation exponents, write sweep.csv
    verify     run a numerical soundness battery (exit 1 on any violation)
    baseline   greedy vs perturbed on identical seeds, write baseline.csv
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import SUITES, ExperimentConfig, parse_config
from console import log
from errors import ConfigurationError, PricingError
from glm_core import LinkFunction, min_link_slope
from mqle import Dataset, OnlineRegressionState, least_squares, ridge_solution, sherman_morrison_update, solve_mqle
from simulator import (
    ReplicationAggregate,
    SimulationConfig,
    SimulationResult,
    azuma_pass_rate,
    run_replications,
)
from spectral import (
    BlockMatrix,
    approx_isometry_check,
    concentration_violation_rate,
    f_p_bound,
    f_p_grid_min,
    lambda_min,
    operator_norm,
    schur_lower_bound,
)

TRACE_COLUMNS = [
    "t", "alpha", "price", "price_opt", "beta_err_sq", "lambda_min",
    "regret_expected", "regret_realized", "regret_ratio",
]
FLOAT_FORMAT = "%.17g"

DEFAULT_TRIALS = {
    "prop4": 1000,
    "fp_lemma": 100,
    "concentration": 200,
    "isometry": 1000,
    "mqle_oracle": 100,
}


# ===== OUTPUT =====

def _prepare_dir(out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"cannot create output directory {path}: {e}", field="out") from e
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="",
                     lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot write {path}: {e}", field="out") from e
    return path


def _json_safe(value: Any) -> Any:
    """NaN/inf become null; numpy scalars and arrays become plain Python."""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise ConfigurationError(f"cannot write {path}: {e}", field="out") from e
    return path


def last_finite(values: np.ndarray) -> float:
    finite = np.asarray(values, dtype=float)
    finite = finite[np.isfinite(finite)]
    return float(finite[-1]) if finite.size else float("nan")


def trace_frame(run: Union[SimulationResult, ReplicationAggregate]) -> pd.DataFrame:
    if isinstance(run, ReplicationAggregate):
        return run.table[TRACE_COLUMNS].copy()
    return pd.DataFrame({
        "t": run.t,
        "alpha": run.alpha,
        "price": run.price,
        "price_opt": run.price_opt,
        "beta_err_sq": run.beta_err_sq,
        "lambda_min": run.lambda_min,
        "regret_expected": run.regret_expected,
        "regret_realized": run.regret_realized,
        "regret_ratio": run.regret_ratio,
    })


def _episode_summary(result: SimulationResult) -> Dict[str, Any]:
    cfg = result.config
    kappa = min_link_slope(cfg.link, result.beta0, (cfg.box.lower, cfg.box.upper), cfg.context_clip)
    return {
        "seed": cfg.seed,
        "context_coefficients": result.beta0[len(cfg.price_beta):],
        "beta_hat": result.beta_hat,
        "link_slope_min": kappa,
        "solver_flags": result.solver_counts(),
    }


def summarize(run: Union[SimulationResult, ReplicationAggregate], config: Optional[ExperimentConfig] = None) -> Dict[str, Any]:
    frame = trace_frame(run)
    results = run.results if isinstance(run, ReplicationAggregate) else [run]
    lambda_ratio = run.table["lambda_ratio"].to_numpy() if isinstance(run, ReplicationAggregate) else run.lambda_ratio
    return {
        "T": int(frame["t"].iloc[-1]),
        "replications": len(results),
        "final": {
            "beta_err_sq": float(frame["beta_err_sq"].iloc[-1]),
            "regret_expected": float(frame["regret_expected"].iloc[-1]),
            "regret_realized": float(frame["regret_realized"].iloc[-1]),
            "regret_ratio": float(frame["regret_ratio"].iloc[-1]),
            "lambda_min": last_finite(frame["lambda_min"].to_numpy()),
            "lambda_ratio": last_finite(lambda_ratio),
        },
        "azuma_pass_rate": azuma_pass_rate(results),
        "episodes": [_episode_summary(r) for r in results],
        "config": config.model_dump() if config is not None else None,
    }


def emit_traces(
    run: Union[SimulationResult, ReplicationAggregate],
    out_dir: Union[str, Path],
    config: Optional[ExperimentConfig] = None,
) -> Dict[str, Path]:
    """
    Write trace.csv and summary.json.

    trace.csv holds one row per t (replication means for an aggregate), 17
    significant digits, empty fields where a value is undefined.
    """
    path = _prepare_dir(out_dir)
    trace = _write_csv(trace_frame(run), path / "trace.csv")
    summary = _write_json(summarize(run, config), path / "summary.json")
    log(f"Traces written to {path}", "success")
    return {"trace": trace, "summary": summary}


# ===== VERIFY SUITES =====

@dataclass
class VerifyReport:
    """
    Counts, worst margin and the first violating instance of one battery.

    `trials` is the requested battery size; `checks` counts the pass/fail
    decisions actually recorded (one for a battery judged by a single rate).
    """

    suite: str
    trials: int
    checks: int = 0
    violations: int = 0
    worst_margin: float = float("inf")
    violating_instance: Optional[Dict[str, Any]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, margin: float, violated: bool, instance: Dict[str, Any]) -> None:
        self.checks += 1
        self.worst_margin = min(self.worst_margin, margin)
        if violated:
            self.violations += 1
            if self.violating_instance is None:
                self.violating_instance = instance

    def as_dict(self) -> Dict[str, Any]:
        return {
            "suite": self.suite,
            "trials": self.trials,
            "checks": self.checks,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "violating_instance": self.violating_instance,
            "details": self.details,
        }


def random_psd(rng: np.random.Generator, n: int, jitter: float = 1e-3) -> np.ndarray:
    G = rng.uniform(-1.0, 1.0, (n, n))
    return G @ G.T / n + jitter * np.eye(n)


def _verify_schur_bound(report: VerifyReport, rng: np.random.Generator) -> None:
    for _ in range(report.trials):
        m, k = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        M = random_psd(rng, m + k)
        bound = schur_lower_bound(BlockMatrix.split(M, m))
        true_min = lambda_min(M)
        report.record(true_min - bound, bound > true_min + 1e-10, {"M": M, "m": m, "bound": bound, "lambda_min": true_min})


def _verify_fp_bound(report: VerifyReport, rng: np.random.Generator) -> None:
    for _ in range(report.trials):
        b = float(rng.uniform(0.0, 20.0))
        grid_min, bound = f_p_grid_min(b), f_p_bound(b)
        report.record(grid_min - bound, grid_min < bound - 1e-6, {"b": b, "grid_min": grid_min, "bound": bound})


def _verify_concentration(report: VerifyReport, rng: np.random.Generator) -> None:
    rate = concentration_violation_rate(dim=3, t_max=1000, trials=report.trials, rng=rng)
    report.details["violation_rate"] = rate
    report.record(0.01 - rate, rate > 0.01, {"violation_rate": rate, "dim": 3, "t_max": 1000})


def _verify_isometry(report: VerifyReport, rng: np.random.Generator) -> None:
    for _ in range(report.trials):
        n = int(rng.integers(1, 7))
        A, B = random_psd(rng, n, 0.0), random_psd(rng, n, 0.0)
        margin = lambda_min(A) - (lambda_min(B) - operator_norm(A - B))
        report.record(margin, not approx_isometry_check(A, B), {"A": A, "B": B})


def _well_conditioned_design(rng: np.random.Generator, t: int, d: int) -> np.ndarray:
    while True:
        X = rng.standard_normal((t, d))
        if np.linalg.cond(X.T @ X) < 1e6:
            return X


def _verify_mqle_oracle(report: VerifyReport, rng: np.random.Generator) -> None:
    worst_online = 0.0
    for _ in range(report.trials):
        X = _well_conditioned_design(rng, 50, 5)
        y = X @ rng.standard_normal(5) + rng.uniform(-0.5, 0.5, 50)
        data = Dataset.from_arrays(X, y)
        estimate = solve_mqle(data, LinkFunction.IDENTITY)
        deviation = float(np.max(np.abs(estimate.beta - least_squares(data))))

        state = OnlineRegressionState.start(5, ridge=1.0)
        for row, response in zip(X, y):
            state = sherman_morrison_update(state, row, response)
        online = float(np.max(np.abs(state.estimate - ridge_solution(data, 1.0))))
        worst_online = max(worst_online, online)

        worst = max(deviation, online)
        report.record(1e-8 - worst, worst > 1e-8, {"X": X, "y": y, "mqle_dev": deviation, "online_dev": online})
    report.details["max_online_deviation"] = worst_online


SUITE_RUNNERS = {
    "prop4": _verify_schur_bound,
    "fp_lemma": _verify_fp_bound,
    "concentration": _verify_concentration,
    "isometry": _verify_isometry,
    "mqle_oracle": _verify_mqle_oracle,
}


def verify_suite(name: str, trials: Optional[int] = None, seed: int = 0) -> VerifyReport:
    """Run one soundness battery; deterministic given (name, trials, seed)."""
    if name not in SUITE_RUNNERS:
        raise ConfigurationError(f"unknown suite '{name}', expected one of {', '.join(SUITES)}", field="suite")
    report = VerifyReport(suite=name, trials=trials or DEFAULT_TRIALS[name])
    SUITE_RUNNERS[name](report, np.random.default_rng(seed))
    return report


def print_report(report: VerifyReport) -> None:
    if report.passed:
        log(f"{report.suite}: 0/{report.checks} violations, worst margin {report.worst_margin:.3e}", "success")
    else:
        log(f"{report.suite}: {report.violations}/{report.checks} violations, worst margin {report.worst_margin:.3e}", "error")
        log(f"  First violating instance: {json.dumps(_json_safe(report.violating_instance))[:500]}", "error")
    log(f"FINAL RESULTS: {report.checks - report.violations}/{report.checks} checks passed", "header")


# ===== SWEEP & BASELINE =====

def _final_metrics(aggregate: ReplicationAggregate) -> Dict[str, float]:
    n = len(aggregate.results)
    rows = {}
    for name in ("regret_ratio", "beta_err_sq", "lambda_ratio", "regret_expected"):
        values = np.array([last_finite(getattr(r, name)) for r in aggregate.results])
        rows[f"{name}_mean"] = float(np.mean(values))
        rows[f"{name}_se"] = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return rows


def sweep_eta(etas: Sequence[float], config: SimulationConfig, reps: int, base_seed: Optional[int] = None) -> pd.DataFrame:
    """
    Final regret ratio, beta error and lambda growth ratio (mean, se) per eta.

    eta = 0 runs the greedy policy (no perturbation).
    """
    base_seed = config.seed if base_seed is None else base_seed
    rows = []
    for eta in etas:
        if not 0.0 <= eta < 0.5:
            raise ConfigurationError(f"eta must lie in [0, 1/2), got {eta}", field="etas")
        policy = "greedy" if eta == 0 else "perturbed"
        log(f"Sweep: eta = {eta} ({policy}), {reps} replications", "info")
        aggregate = run_replications(replace(config, eta=eta, policy=policy), reps, base_seed)
        rows.append({"eta": eta, "policy": policy, **_final_metrics(aggregate)})
    return pd.DataFrame(rows)


def baseline_table(perturbed: ReplicationAggregate, greedy: ReplicationAggregate) -> pd.DataFrame:
    rows = []
    for policy, aggregate in (("perturbed", perturbed), ("greedy", greedy)):
        for seed, result in zip(aggregate.seeds, aggregate.results):
            rows.append({
                "seed": seed,
                "policy": policy,
                "regret_expected": float(result.regret_expected[-1]),
                "beta_err_sq": float(result.beta_err_sq[-1]),
                "lambda_ratio": last_finite(result.lambda_ratio),
            })
    return pd.DataFrame(rows)


# ===== CLI =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perturbed-pricing", description=__doc__.strip().splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON experiment file")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--T", type=int, dest="T")
    common.add_argument("--eta", type=float)
    common.add_argument("--link", choices=["identity", "logistic"])

    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("simulate", parents=[common], help="run replications and emit traces")
    sub.add_parser("sweep", parents=[common], help="compare perturbation exponents")
    sub.add_parser("baseline", parents=[common], help="greedy vs perturbed on identical seeds")
    verify = sub.add_parser("verify", parents=[common], help="numerical soundness batteries")
    verify.add_argument("suite", choices=SUITES)
    verify.add_argument("--trials", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {"T": args.T, "eta": args.eta, "seed": args.seed, "reps": args.reps, "link": args.link}


def cmd_simulate(config: SimulationConfig, experiment: ExperimentConfig, out_dir: str) -> int:
    log(f"SIMULATE: link={config.link.value}, T={config.T}, eta={config.eta}, reps={experiment.reps}", "test")
    aggregate = run_replications(config, experiment.reps, config.seed)
    emit_traces(aggregate, out_dir, experiment)
    log(f"Final mean ||beta_hat - beta0||^2 = {aggregate.final('beta_err_sq'):.6g}", "info")
    log(f"Final mean Rg(T)/(sqrt(T) log T) = {aggregate.final('regret_ratio'):.6g}", "info")
    return 0


def cmd_sweep(config: SimulationConfig, experiment: ExperimentConfig, out_dir: str, overrides: Dict[str, Any]) -> int:
    # --eta narrows the sweep to that single exponent
    etas = [overrides["eta"]] if "eta" in overrides else experiment.etas
    log(f"SWEEP: etas={etas}, reps={experiment.reps}", "test")
    table = sweep_eta(etas, config, experiment.reps)
    path = _write_csv(table, _prepare_dir(out_dir) / "sweep.csv")
    log(f"Sweep table written to {path}", "success")
    return 0


def cmd_baseline(config: SimulationConfig, experiment: ExperimentConfig, out_dir: str) -> int:
    log(f"BASELINE: greedy vs perturbed, reps={experiment.reps}", "test")
    perturbed = run_replications(replace(config, policy="perturbed"), experiment.reps, config.seed)
    greedy = run_replications(replace(config, policy="greedy"), experiment.reps, config.seed)
    out = _prepare_dir(out_dir)
    emit_traces(perturbed, out / "perturbed", experiment)
    emit_traces(greedy, out / "greedy", experiment)
    path = _write_csv(baseline_table(perturbed, greedy), out / "baseline.csv")
    log(f"Baseline table written to {path}", "success")
    return 0


def cmd_verify(suite: str, trials: Optional[int], seed: int, out_dir: str) -> int:
    log(f"VERIFY: {suite}", "test")
    report = verify_suite(suite, trials, seed)
    print_report(report)
    _write_json(report.as_dict(), _prepare_dir(out_dir) / f"verify_{suite}.json")
    return 0 if report.passed else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, spec = parse_config(args.config, _overrides(args), args.subcommand, args.out,
                                    getattr(args, "suite", None))
        experiment = spec.config
        if args.subcommand == "simulate":
            return cmd_simulate(config, experiment, spec.out_dir)
        if args.subcommand == "sweep":
            return cmd_sweep(config, experiment, spec.out_dir, spec.overrides)
        if args.subcommand == "baseline":
            return cmd_baseline(config, experiment, spec.out_dir)
        return cmd_verify(args.suite, args.trials or experiment.trials, experiment.seed, spec.out_dir)
    except PricingError as e:
        log(str(e), "error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
