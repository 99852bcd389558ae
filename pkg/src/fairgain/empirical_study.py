"""Monte Carlo check of how fast the plug-in maximin-improvement point converges.

For each sample size, trials draw fresh data from the population spec, solve
the maximin relative-improvement problem on the empirical risks, and score the
resulting parameter under the population risks. The per-trial gap is the
population maximin value minus the achieved worst improvement; its median
should shrink like one over the square root of the sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fairgain.core import BargainingFrame
from fairgain.risk_models import ProblemSpec, minimize_quadratic_ball, population_frame
from fairgain.solvers import QuadraticGroupRisks, SolverConfig, solve_maximin_ri

_GAP_FLOOR = 1e-8  # keeps log-log slope fits finite when a trial lands exactly


@dataclass(frozen=True)
class ConvergenceResult:
    sample_sizes: tuple[int, ...]
    gaps: np.ndarray  # (len(sample_sizes), trials), clipped below at 0
    fitted_slope: float
    trials: int
    seed: int
    rejected: tuple[int, ...]
    population_value: float

    def __post_init__(self) -> None:
        gaps = np.array(self.gaps, dtype=float)
        if gaps.shape != (len(self.sample_sizes), self.trials):
            raise ValueError("gaps must be (len(sample_sizes), trials)")
        gaps.setflags(write=False)
        object.__setattr__(self, "gaps", gaps)
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "rejected", tuple(int(k) for k in self.rejected))


@dataclass(frozen=True)
class GapCertificate:
    delta: float
    quantiles: tuple[float, ...]
    non_increasing: bool


def fit_rate_slope(sample_sizes, gaps: np.ndarray) -> float:
    """Least-squares slope of log median gap against log sample size."""
    med = np.maximum(np.median(np.asarray(gaps, dtype=float), axis=1), _GAP_FLOOR)
    logn = np.log(np.asarray(sample_sizes, dtype=float))
    design = np.column_stack([logn, np.ones_like(logn)])
    coef, *_ = np.linalg.lstsq(design, np.log(med), rcond=None)
    return float(coef[0])


def _draw_group_stats(
    model, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float]:
    s, V = np.linalg.eigh(model.cov)
    factor = V * np.sqrt(np.clip(s, 0.0, None))
    X = rng.standard_normal((n, model.dim)) @ factor.T
    y = X @ model.beta + rng.normal(0.0, np.sqrt(model.sigma2), n)
    return X.T @ X / n, X.T @ y / n, float(np.mean(y**2))


def _trial_gap(
    spec: ProblemSpec,
    n: int,
    rng: np.random.Generator,
    cfg: SolverConfig,
    pop_model: QuadraticGroupRisks,
    pop_frame: BargainingFrame,
    pop_value: float,
    min_gap_required: float,
) -> float | None:
    """One empirical solve scored under the population; None when the draw is
    too degenerate to define a stable empirical frame (caller resamples)."""
    m = spec.num_groups
    A = np.empty((m, spec.dim, spec.dim))
    c = np.empty((m, spec.dim))
    k = np.empty(m)
    ideal = np.empty(m)
    for g, model in enumerate(spec.groups):
        A[g], c[g], k[g] = _draw_group_stats(model, n, rng)
        _, value = minimize_quadratic_ball(A[g], c[g], spec.radius)
        ideal[g] = value + k[g]
    emp_gaps = k - ideal
    if emp_gaps.min() <= min_gap_required:
        return None
    emp_frame = BargainingFrame(tuple(k), tuple(ideal))
    emp_model = QuadraticGroupRisks(A, c, k)
    report = solve_maximin_ri(emp_model, emp_frame, spec.radius, cfg)
    theta = np.asarray(report.parameter)
    pop_rho = (
        pop_frame.baseline_array() - pop_model.values(theta)
    ) / pop_frame.gap_array()
    raw = pop_value - float(pop_rho.min())
    if raw < -10.0 * cfg.tol:
        raise RuntimeError(
            f"empirical point beat the population optimum by {-raw:.3e}; "
            "the population solve is inconsistent"
        )
    return max(raw, 0.0)


def run_convergence(
    spec: ProblemSpec,
    sample_sizes,
    trials: int,
    seed: int,
    cfg: SolverConfig | None = None,
) -> ConvergenceResult:
    """Gap trials across sample sizes with per-trial splittable seeding.

    Each (size, trial, attempt) triple keys its own generator, so results are
    reproducible regardless of execution order. Draws whose empirical
    baseline-to-ideal gap falls below half the population gap are resampled
    and counted in `rejected`.
    """
    sizes = [int(n) for n in sample_sizes]
    if len(sizes) < 2 or any(n < 2 for n in sizes):
        raise ValueError("need at least two sample sizes of at least 2")
    if trials < 1:
        raise ValueError("trials must be positive")
    cfg = cfg or SolverConfig()
    pop_model = QuadraticGroupRisks.from_problem_spec(spec)
    pop_frame = population_frame(spec)
    pop_report = solve_maximin_ri(pop_model, pop_frame, spec.radius, cfg)
    pop_value = float(pop_report.objective_value)
    min_gap_required = 0.5 * float(pop_frame.gap_array().min())

    gaps = np.empty((len(sizes), trials))
    rejected = [0] * len(sizes)
    for i, n in enumerate(sizes):
        for trial in range(trials):
            for attempt in range(200):
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=seed, spawn_key=(n, trial, attempt))
                )
                gap = _trial_gap(
                    spec, n, rng, cfg, pop_model, pop_frame, pop_value, min_gap_required
                )
                if gap is not None:
                    gaps[i, trial] = gap
                    break
                rejected[i] += 1
            else:
                raise RuntimeError(
                    f"could not draw a usable sample of size {n} in 200 attempts"
                )
    slope = fit_rate_slope(sizes, gaps)
    return ConvergenceResult(
        sample_sizes=tuple(sizes),
        gaps=gaps,
        fitted_slope=slope,
        trials=trials,
        seed=seed,
        rejected=tuple(rejected),
        population_value=pop_value,
    )


def single_trial_gap(
    spec: ProblemSpec, n: int, seed: int, cfg: SolverConfig | None = None
) -> float:
    """One gap draw at one sample size; useful for large-n sanity checks."""
    cfg = cfg or SolverConfig()
    pop_model = QuadraticGroupRisks.from_problem_spec(spec)
    pop_frame = population_frame(spec)
    pop_value = float(solve_maximin_ri(pop_model, pop_frame, spec.radius, cfg).objective_value)
    min_gap_required = 0.5 * float(pop_frame.gap_array().min())
    for attempt in range(200):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(n, 0, attempt))
        )
        gap = _trial_gap(
            spec, n, rng, cfg, pop_model, pop_frame, pop_value, min_gap_required
        )
        if gap is not None:
            return gap
    raise RuntimeError(f"could not draw a usable sample of size {n} in 200 attempts")


def gap_certificate(result: ConvergenceResult, delta: float = 0.1) -> GapCertificate:
    """Per-size (1 - delta) gap quantiles and whether they shrink with n."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must sit strictly between 0 and 1")
    q = np.quantile(result.gaps, 1.0 - delta, axis=1)
    non_increasing = bool(np.all(np.diff(q) <= 1e-15))
    return GapCertificate(
        delta=delta, quantiles=tuple(float(v) for v in q), non_increasing=non_increasing
    )
