"""Continuous solvers over a Euclidean parameter ball.

The worst-group criteria (relative improvement, raw risk, absolute gain,
regret) all reduce to minimizing a max of shifted, scaled convex group risks.
That minimax is solved in primal-dual form. Every weighting of the normalized
group objectives on the simplex yields a one-shot weighted risk minimization
over the ball whose optimum is a certified lower bound on the minimax value;
cutting planes over the weightings push that bound up while the weighted
minimizers double as primal candidates. When weighted minimizers are
non-unique (flat directions) a smooth squared-hinge feasibility pass closes
the primal side at the proven bound. The reported certificate is the true
primal-dual gap, so it never understates the remaining error. The
product-of-gains criterion is smooth and concave where defined, so it runs
projected gradient ascent from the maximin-improvement point with an exact
linear optimality bound over the ball as its certificate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from fairgain.core import (
    BargainingFrame,
    DegenerateBargainError,
    ImprovementProfile,
    RiskProfile,
    SolverReport,
)
from fairgain.risk_models import GroupedDataset, ProblemSpec, minimize_quadratic_ball

METHODS = ("ri", "leximin", "gdro", "mmv", "mmr", "nash")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 100_000
    master_iters: int = 120
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.master_iters < 0:
            raise ValueError("iteration budgets must be at least 1")


class QuadraticGroupRisks:
    """Group risks of the form theta' A_g theta - 2 c_g' theta + k_g."""

    def __init__(self, A: np.ndarray, c: np.ndarray, k: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.k = np.asarray(k, dtype=float)
        if self.A.ndim != 3 or self.c.ndim != 2 or self.k.ndim != 1:
            raise ValueError("expected stacked per-group quadratic coefficients")
        self.num_groups, self.dim = self.c.shape

    @classmethod
    def from_problem_spec(cls, spec: ProblemSpec) -> "QuadraticGroupRisks":
        A = np.stack([g.cov for g in spec.groups])
        c = np.stack([g.cov @ g.beta for g in spec.groups])
        k = np.array([float(g.beta @ (g.cov @ g.beta)) + g.sigma2 for g in spec.groups])
        return cls(A, c, k)

    @classmethod
    def from_dataset(cls, ds: GroupedDataset) -> "QuadraticGroupRisks":
        if ds.loss != "squared" or ds.kernel is not None:
            raise ValueError("sufficient-statistic risks need plain squared loss")
        A = np.stack([X.T @ X / X.shape[0] for X in ds.features])
        c = np.stack([X.T @ y / X.shape[0] for X, y in zip(ds.features, ds.labels)])
        k = np.array([float(np.mean(y**2)) for y in ds.labels])
        return cls(A, c, k)

    def values(self, theta: np.ndarray) -> np.ndarray:
        At = self.A @ theta
        return theta @ At.T - 2.0 * self.c @ theta + self.k

    def gradients(self, theta: np.ndarray) -> np.ndarray:
        return 2.0 * (self.A @ theta - self.c)


class LogisticGroupRisks:
    """Per-group mean logistic loss of a linear score."""

    def __init__(self, features: Sequence[np.ndarray], labels: Sequence[np.ndarray]):
        self.features = [np.asarray(X, dtype=float) for X in features]
        self.labels = [np.asarray(y, dtype=float) for y in labels]
        self.num_groups = len(self.features)
        self.dim = self.features[0].shape[1]

    @classmethod
    def from_dataset(cls, ds: GroupedDataset) -> "LogisticGroupRisks":
        if ds.loss != "logistic":
            raise ValueError("expected a logistic-loss dataset")
        return cls(ds.features, ds.labels)

    def values(self, theta: np.ndarray) -> np.ndarray:
        out = np.empty(self.num_groups)
        for g, (X, y) in enumerate(zip(self.features, self.labels)):
            z = X @ theta
            out[g] = np.mean(np.logaddexp(0.0, z) - y * z)
        return out

    def gradients(self, theta: np.ndarray) -> np.ndarray:
        out = np.empty((self.num_groups, self.dim))
        for g, (X, y) in enumerate(zip(self.features, self.labels)):
            out[g] = X.T @ (expit(X @ theta) - y) / X.shape[0]
        return out


def group_risk_model(source: ProblemSpec | GroupedDataset):
    """Build the risk evaluator a continuous solver needs."""
    if isinstance(source, ProblemSpec):
        return QuadraticGroupRisks.from_problem_spec(source)
    if isinstance(source, GroupedDataset):
        if ds_kernel := source.kernel:
            raise ValueError(
                f"kernel datasets ({ds_kernel.name}) are fit per group; shared solves need a parametric class"
            )
        if source.loss == "squared":
            return QuadraticGroupRisks.from_dataset(source)
        return LogisticGroupRisks.from_dataset(source)
    raise TypeError(f"cannot build group risks from {type(source).__name__}")


def _project(theta: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(theta))
    return theta if nrm <= radius else theta * (radius / nrm)


def _initial_point(dim: int, radius: float, cfg: SolverConfig) -> np.ndarray:
    if cfg.seed is None:
        return np.zeros(dim)
    rng = np.random.default_rng(cfg.seed)
    return _project(rng.normal(0.0, radius / 2.0, dim), radius)


def _weighted_min(model, w: np.ndarray, ball: float) -> tuple[np.ndarray, float, float]:
    """Minimize sum_g w_g R_g(theta) over the ball, w >= 0.

    Returns (theta, value, lower) with lower a certified bound on the true
    minimum: exact for quadratic risks, a convexity linearization bound for
    smooth ones (tight when the minimizer sits strictly inside the ball).
    """
    if isinstance(model, QuadraticGroupRisks):
        A = np.tensordot(w, model.A, axes=1)
        c = w @ model.c
        theta, quad = minimize_quadratic_ball(A, c, ball)
        val = quad + float(w @ model.k)
        return theta, val, val
    theta = np.zeros(model.dim)
    val = float(w @ model.values(theta))
    step = 1.0
    for _ in range(200):
        grad = w @ model.gradients(theta)
        moved = False
        while step > 1e-18:
            cand = _project(theta - step * grad, ball)
            cand_val = float(w @ model.values(cand))
            if cand_val < val:
                theta, val = cand, cand_val
                step *= 1.6
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    grad = w @ model.gradients(theta)
    lower = val - ball * float(np.linalg.norm(grad)) - float(grad @ theta)
    return theta, val, lower


def _best_weights(
    cuts: list[np.ndarray], m_free: int, n_pin: int, mu_cap: float
) -> tuple[np.ndarray, np.ndarray, float] | None:
    """Multipliers maximizing the worst recorded cut.

    Solves max t over lam on the simplex and 0 <= mu <= mu_cap subject to
    t <= cut_i . (lam, mu) for every stored cut.
    """
    n = m_free + n_pin
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.empty((len(cuts), n + 1))
    A_ub[:, :n] = -np.asarray(cuts)
    A_ub[:, n] = 1.0
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :m_free] = 1.0
    bounds = [(0.0, 1.0)] * m_free + [(0.0, mu_cap)] * n_pin + [(None, None)]
    res = linprog(
        cost,
        A_ub=A_ub,
        b_ub=np.zeros(len(cuts)),
        A_eq=A_eq,
        b_eq=np.ones(1),
        bounds=bounds,
        method="highs",
    )
    if not res.success:
        return None
    lam = np.maximum(res.x[:m_free], 0.0)
    total = lam.sum()
    lam = lam / total if total > 0.0 else np.full(m_free, 1.0 / m_free)
    return lam, np.maximum(res.x[m_free:n], 0.0), float(-res.fun)


def _hinge_feasible(
    model,
    shifts: np.ndarray,
    scales: np.ndarray,
    caps: np.ndarray,
    theta0: np.ndarray,
    ball: float,
    budget: int,
) -> tuple[np.ndarray, int]:
    """Seek a ball point with (R_g - shifts_g)/scales_g <= caps_g for all g.

    Minimizes the smooth convex squared-hinge surplus by projected gradient
    with an adaptive step; the optimum value is zero exactly when the cap
    vector is attainable, so no kinked-max descent is involved.
    """
    theta = np.asarray(theta0, dtype=float)

    def hinges(th: np.ndarray) -> np.ndarray:
        return np.maximum((model.values(th) - shifts) / scales - caps, 0.0)

    h = hinges(theta)
    pen = float(h @ h)
    best_theta, best_pen = theta, pen
    step = 1.0
    it = 0
    while pen > 0.0 and it < budget:
        grad = 2.0 * ((h / scales) @ model.gradients(theta))
        gn2 = float(grad @ grad)
        if gn2 <= 1e-32:
            break
        moved = False
        while step > 1e-18:
            cand = _project(theta - step * grad, ball)
            hc = hinges(cand)
            pc = float(hc @ hc)
            if pc < pen - 1e-4 * step * gn2:
                theta, h, pen = cand, hc, pc
                step *= 1.6
                moved = True
                break
            step *= 0.5
        it += 1
        if not moved:
            break
        if pen < best_pen:
            best_theta, best_pen = theta, pen
    return (theta if pen <= best_pen else best_theta), it


_MU_CAP = 1e8
_FEAS_TOL = 1e-11


def _dual_minimax(
    model,
    shifts: np.ndarray,
    scales: np.ndarray,
    ball: float,
    cfg: SolverConfig,
    floor: float,
    warm: Sequence[np.ndarray] = (),
    pin_idx: np.ndarray | None = None,
    pin_caps: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float, int]:
    """Minimize F(theta) = max over free groups of (R_g - shifts_g)/scales_g.

    Pinned groups, when given, are hard constraints
    (R_j - shifts_j)/scales_j <= pin_caps_j; their multipliers live on
    [0, _MU_CAP] next to the simplex weights of the free groups. Returns
    (theta, upper, lower, evals) where upper - lower is a sound certificate
    by weak duality and floor is a caller-supplied a priori lower bound.
    """
    m = model.num_groups
    pin_idx = np.array([], dtype=int) if pin_idx is None else np.asarray(pin_idx, int)
    pin_caps = np.array([]) if pin_caps is None else np.asarray(pin_caps, float)
    free = np.setdiff1d(np.arange(m), pin_idx)
    inv_scales = 1.0 / scales

    def f_of(theta: np.ndarray) -> np.ndarray:
        return (model.values(theta) - shifts) * inv_scales

    best_upper = np.inf
    best_theta: np.ndarray | None = None
    fallback = (np.inf, np.inf, np.zeros(model.dim))
    cuts: list[np.ndarray] = []

    def track(theta: np.ndarray) -> None:
        nonlocal best_upper, best_theta, fallback
        f = f_of(theta)
        cuts.append(np.concatenate([f[free], f[pin_idx] - pin_caps]))
        value = float(f[free].max())
        viol = float(np.maximum(f[pin_idx] - pin_caps, 0.0).max()) if len(pin_idx) else 0.0
        if viol <= _FEAS_TOL:
            if value < best_upper:
                best_upper, best_theta = value, theta
        elif (viol, value) < fallback[:2]:
            fallback = (viol, value, theta)

    def dual_at(lam: np.ndarray, mu: np.ndarray) -> float:
        w = np.zeros(m)
        w[free] = lam * inv_scales[free]
        if len(pin_idx):
            w[pin_idx] = mu * inv_scales[pin_idx]
        theta_hat, _, low = _weighted_min(model, w, ball)
        const = -float(lam @ (shifts[free] * inv_scales[free]))
        if len(pin_idx):
            const -= float(mu @ (shifts[pin_idx] * inv_scales[pin_idx] + pin_caps))
        track(theta_hat)
        return low + const

    track(np.zeros(model.dim))
    for point in warm:
        track(np.asarray(point, dtype=float))
    evals = len(cuts)

    best_lower = floor
    zero_mu = np.zeros(len(pin_idx))
    seeds = [np.full(len(free), 1.0 / len(free))]
    seeds += [np.eye(len(free))[i] for i in range(len(free))] if len(free) > 1 else []
    for lam in seeds:
        best_lower = max(best_lower, dual_at(lam, zero_mu))
        evals += 1

    saturation = max(1e-12, 0.05 * cfg.tol)
    for _ in range(cfg.master_iters):
        if best_upper - best_lower <= 0.5 * cfg.tol or evals >= cfg.max_iters:
            break
        picked = _best_weights(cuts, len(free), len(pin_idx), _MU_CAP)
        if picked is None:
            break
        lam, mu, master_val = picked
        best_lower = max(best_lower, dual_at(lam, mu))
        evals += 1
        if master_val - best_lower <= saturation:
            break

    gap = best_upper - best_lower
    if gap > 0.5 * cfg.tol and evals < cfg.max_iters:
        caps = np.empty(m)
        caps[free] = best_lower + 0.25 * cfg.tol
        caps[pin_idx] = pin_caps
        start = best_theta if best_theta is not None else fallback[2]
        polished, used = _hinge_feasible(
            model, shifts, scales, caps, start, ball, min(4000, cfg.max_iters - evals)
        )
        evals += used
        track(polished)

    if best_theta is None:
        # no candidate met the pinned floors; report the least-violating point
        viol, value, theta = fallback
        return theta, value, best_lower - viol, evals
    return best_theta, best_upper, min(best_lower, best_upper), evals


def _report(
    model,
    frame: BargainingFrame,
    theta: np.ndarray,
    objective: float,
    iterations: int,
    certificate: float,
) -> SolverReport:
    risks = RiskProfile(tuple(np.maximum(model.values(theta), 0.0)))
    rhos = (frame.baseline_array() - risks.as_array()) / frame.gap_array()
    return SolverReport(
        parameter=tuple(theta),
        risk_profile=risks,
        improvement_profile=ImprovementProfile(tuple(rhos)),
        objective_value=float(objective),
        iterations=iterations,
        certificate_gap=float(certificate),
    )


def solve_maximin_ri(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Maximize the worst relative improvement over the parameter ball."""
    shifts = frame.baseline_array()
    scales = frame.gap_array()
    # F = -min_g rho_g; its minimum cannot go below -1 when ideals are true optima
    theta, hi, lo, iters = _dual_minimax(
        model, shifts, scales, ball, cfg, floor=-1.0,
        warm=(_initial_point(model.dim, ball, cfg),),
    )
    return _report(model, frame, theta, objective=-hi, iterations=iters, certificate=hi - lo)


def solve_gdro(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Minimize the worst per-group risk over the parameter ball."""
    m = frame.num_groups
    theta, hi, lo, iters = _dual_minimax(
        model,
        np.zeros(m),
        np.ones(m),
        ball,
        cfg,
        floor=float(frame.ideal_array().max()),
        warm=(_initial_point(model.dim, ball, cfg),),
    )
    return _report(model, frame, theta, objective=hi, iterations=iters, certificate=hi - lo)


def solve_mmv(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Maximize the worst absolute gain (baseline minus risk) over the ball."""
    base = frame.baseline_array()
    theta, hi, lo, iters = _dual_minimax(
        model,
        base,
        np.ones(frame.num_groups),
        ball,
        cfg,
        floor=float((frame.ideal_array() - base).max()),
        warm=(_initial_point(model.dim, ball, cfg),),
    )
    return _report(model, frame, theta, objective=-hi, iterations=iters, certificate=hi - lo)


def solve_mmr(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Minimize the worst regret against the ideal risks over the ball."""
    theta, hi, lo, iters = _dual_minimax(
        model,
        frame.ideal_array(),
        np.ones(frame.num_groups),
        ball,
        cfg,
        floor=0.0,
        warm=(_initial_point(model.dim, ball, cfg),),
    )
    return _report(model, frame, theta, objective=hi, iterations=iters, certificate=hi - lo)


def solve_nash(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Maximize the sum of log absolute gains over the ball.

    Started at the maximin-improvement point, which has strictly positive
    gains whenever any point does. The certificate is the exact maximum of
    the linearized objective over the ball.
    """
    seed = solve_maximin_ri(model, frame, ball, cfg)
    theta = np.asarray(seed.parameter)
    base = frame.baseline_array()
    gains = base - model.values(theta)
    if gains.min() <= 0.0:
        raise DegenerateBargainError(
            "no parameter with strictly positive gains for every group was found; "
            f"best worst-improvement is {seed.objective_value:.3e}"
        )

    def objective(g: np.ndarray) -> float:
        return float(np.log(g).sum())

    obj = objective(gains)
    iters = seed.iterations
    step = 1.0
    bound = np.inf
    while iters < max(cfg.max_iters, seed.iterations + 1000):
        grad = -(model.gradients(theta) / gains[:, None]).sum(axis=0)
        bound = ball * float(np.linalg.norm(grad)) - float(grad @ theta)
        if bound <= cfg.tol:
            break
        moved = False
        while step > 1e-18:
            cand = _project(theta + step * grad, ball)
            cand_gains = base - model.values(cand)
            if cand_gains.min() > 0.0:
                cand_obj = objective(cand_gains)
                if cand_obj > obj:
                    theta, gains, obj = cand, cand_gains, cand_obj
                    step *= 1.5
                    moved = True
                    break
            step *= 0.5
        iters += 1
        if not moved:
            break
    return _report(model, frame, theta, objective=obj, iterations=iters, certificate=bound)


def _improvements_at(model, frame: BargainingFrame, theta: np.ndarray) -> np.ndarray:
    return (frame.baseline_array() - model.values(theta)) / frame.gap_array()


def solve_leximin_ri(
    model, frame: BargainingFrame, ball: float, cfg: SolverConfig = SolverConfig()
) -> SolverReport:
    """Lexicographically maximize sorted relative improvements over the ball.

    Stage k fixes the groups that bound stage k-1 at its certified value (an
    equality band of width 10*tol) and re-maximizes the worst improvement of
    the rest, handing the pinned floors to the dual as hard constraints. The
    reported objective is the first-stage (worst-group) value.
    """
    first = solve_maximin_ri(model, frame, ball, cfg)
    m = frame.num_groups
    band = 10.0 * cfg.tol
    base = frame.baseline_array()
    gaps = frame.gap_array()
    theta = np.asarray(first.parameter)
    rho = _improvements_at(model, frame, theta)
    stage_val = float(first.objective_value)
    pins: dict[int, float] = {
        g: stage_val for g in range(m) if rho[g] <= stage_val + band
    }
    iters = first.iterations
    cert = first.certificate_gap
    while len(pins) < m:
        remaining = [g for g in range(m) if g not in pins]
        pin_idx = np.array(sorted(pins), dtype=int)
        # rho_j >= pin - band reads as f_j <= band - pin in normalized risk units
        caps = np.array([band - pins[g] for g in pin_idx])
        theta, hi, lo, used = _dual_minimax(
            model, base, gaps, ball, cfg, floor=-1.0, warm=(theta,),
            pin_idx=pin_idx, pin_caps=caps,
        )
        val = -hi
        iters += used
        cert = max(cert, hi - lo)
        rho = _improvements_at(model, frame, theta)
        newly = [g for g in remaining if rho[g] <= val + band]
        if not newly:
            # numerical guard: pin the worst remaining group to force progress
            newly = [remaining[int(np.argmin(rho[remaining]))]]
        for g in newly:
            pins[g] = val
    return _report(
        model, frame, theta, objective=stage_val, iterations=iters, certificate=cert
    )


_SOLVERS: dict[str, Callable] = {
    "ri": solve_maximin_ri,
    "leximin": solve_leximin_ri,
    "gdro": solve_gdro,
    "mmv": solve_mmv,
    "mmr": solve_mmr,
    "nash": solve_nash,
}


def solve(
    method: str,
    model,
    frame: BargainingFrame,
    ball: float,
    cfg: SolverConfig = SolverConfig(),
) -> SolverReport:
    """Dispatch one of the named criteria."""
    if method not in _SOLVERS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return _SOLVERS[method](model, frame, ball, cfg)


def objective_and_supergradient(
    method: str, model, frame: BargainingFrame, theta: np.ndarray
) -> tuple[float, np.ndarray]:
    """Objective value and one supergradient (or gradient) at theta.

    For the worst-group criteria the vector returned is the active group's
    gradient contribution, which is a valid supergradient wherever the active
    group is unique.
    """
    theta = np.asarray(theta, dtype=float)
    vals = model.values(theta)
    grads = model.gradients(theta)
    base = frame.baseline_array()
    gaps = frame.gap_array()
    if method == "ri":
        rho = (base - vals) / gaps
        a = int(rho.argmin())
        return float(rho[a]), -grads[a] / gaps[a]
    if method == "gdro":
        a = int(vals.argmax())
        return float(vals[a]), grads[a]
    if method == "mmv":
        gains = base - vals
        a = int(gains.argmin())
        return float(gains[a]), -grads[a]
    if method == "mmr":
        regrets = vals - frame.ideal_array()
        a = int(regrets.argmax())
        return float(regrets[a]), grads[a]
    if method == "nash":
        gains = base - vals
        if gains.min() <= 0.0:
            raise ValueError("the log-gains objective needs strictly positive gains")
        return float(np.log(gains).sum()), -(grads / gains[:, None]).sum(axis=0)
    raise ValueError(f"unknown objective {method!r}")
