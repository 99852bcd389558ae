"""Risk-set geometry: frontier traces, diagonal crossings, hull realizability.

Everything here works on population specs. The two-group frontier is traced
by scalarizing in improvement space (maximize lam*rho_1 + (1-lam)*rho_2),
which keeps the trace invariant under per-group affine risk rescaling; each
scalarized problem is a quadratic over the ball and is solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from fairgain.core import (
    BargainingFrame,
    UnsupportedDimensionError,
    nondominated_mask,
    relative_improvements,
)
from fairgain.risk_models import (
    ProblemSpec,
    minimize_quadratic_ball,
    population_frame,
    population_risks,
)


class DiagonalNotBracketedError(ValueError):
    """The traced frontier does not straddle the equal-improvement diagonal."""


@dataclass(frozen=True)
class FrontierTrace:
    """Strictly increasing rho_1 walk along the two-group improvement frontier."""

    lambdas: tuple[float, ...]
    points: np.ndarray  # (n, 2) improvement pairs
    risks: np.ndarray  # (n, 2) matching risk pairs

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        rks = np.array(self.risks, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape != rks.shape:
            raise ValueError("a frontier trace needs matching (n, 2) point and risk arrays")
        if len(self.lambdas) != pts.shape[0]:
            raise ValueError("one scalarization weight per trace point")
        if pts.shape[0] >= 2 and not np.all(np.diff(pts[:, 0]) > 0):
            raise ValueError("trace points must be strictly increasing in rho_1")
        pts.setflags(write=False)
        rks.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "risks", rks)
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RiskSetSample:
    """Parameters and their risk rows sampled from the feasible class."""

    thetas: np.ndarray
    risks: np.ndarray

    def __post_init__(self) -> None:
        th = np.array(self.thetas, dtype=float)
        rk = np.array(self.risks, dtype=float)
        if th.ndim != 2 or rk.ndim != 2 or th.shape[0] != rk.shape[0]:
            raise ValueError("thetas and risks must be matching 2-d arrays")
        th.setflags(write=False)
        rk.setflags(write=False)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "risks", rk)

    def __len__(self) -> int:
        return self.risks.shape[0]


@dataclass(frozen=True)
class HullParetoReport:
    """Worst distance from the hull's efficient boundary to a realized sample."""

    max_violation: float
    tolerance: float | None
    ok: bool | None
    n_faces: int
    n_checked: int


def weighted_improvement_argmax(
    spec: ProblemSpec, frame: BargainingFrame, lam: float
) -> np.ndarray:
    """Exact in-ball maximizer of lam*rho_1 + (1-lam)*rho_2."""
    if spec.num_groups != 2:
        raise UnsupportedDimensionError("scalarized tracing is defined for two groups")
    gaps = frame.gap_array()
    w = np.array([lam / gaps[0], (1.0 - lam) / gaps[1]])
    A = w[0] * spec.groups[0].cov + w[1] * spec.groups[1].cov
    c = w[0] * spec.groups[0].cov @ spec.groups[0].beta + w[1] * spec.groups[1].cov @ spec.groups[1].beta
    theta, _ = minimize_quadratic_ball(A, c, spec.radius)
    return theta


def _trace_point(
    spec: ProblemSpec, frame: BargainingFrame, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    theta = weighted_improvement_argmax(spec, frame, lam)
    risks = population_risks(spec, theta)
    return risks, relative_improvements(risks, frame)


def trace_frontier(spec: ProblemSpec, n_weights: int) -> FrontierTrace:
    """Walk the two-group improvement frontier on a uniform weight grid.

    After the grid pass the interval where rho_2 - rho_1 changes sign is
    refined by bisection on the weight so the trace carries points essentially
    on the equal-improvement diagonal; a uniform grid alone can step over it
    by far more than the tolerances downstream consumers use.
    """
    if spec.num_groups != 2:
        raise UnsupportedDimensionError(
            f"frontier tracing needs exactly two groups, got {spec.num_groups}"
        )
    if n_weights < 2:
        raise ValueError("n_weights must be at least 2")
    frame = population_frame(spec)
    entries: list[tuple[float, np.ndarray, np.ndarray]] = []
    for i in range(n_weights):
        lam = (i + 1) / (n_weights + 1)
        risks, rho = _trace_point(spec, frame, lam)
        entries.append((lam, risks, rho))

    # refine the diagonal crossing: rho_1 rises with lam, rho_2 falls
    gap_of = lambda rho: rho[1] - rho[0]
    for i in range(len(entries) - 1):
        lo, hi = entries[i], entries[i + 1]
        if gap_of(lo[2]) > 0.0 >= gap_of(hi[2]):
            for _ in range(60):
                if abs(lo[0] - hi[0]) < 1e-14 or (
                    np.abs(lo[2] - hi[2]).max() < 1e-5
                ):
                    break
                mid_lam = 0.5 * (lo[0] + hi[0])
                risks, rho = _trace_point(spec, frame, mid_lam)
                entry = (mid_lam, risks, rho)
                entries.append(entry)
                if gap_of(rho) > 0.0:
                    lo = entry
                else:
                    hi = entry
            break

    entries.sort(key=lambda e: e[2][0])
    lams: list[float] = []
    pts: list[np.ndarray] = []
    rks: list[np.ndarray] = []
    for lam, risks, rho in entries:
        if pts and rho[0] - pts[-1][0] <= 1e-12:
            continue
        lams.append(lam)
        pts.append(rho)
        rks.append(risks)
    return FrontierTrace(tuple(lams), np.array(pts), np.array(rks))


def count_diagonal_crossings(trace: FrontierTrace) -> int:
    """Sign changes of rho_2 - rho_1 along the trace (vertex hits count once)."""
    g = trace.points[:, 1] - trace.points[:, 0]
    signs = np.sign(g)
    crossings = int(np.sum(signs[:-1] * signs[1:] < 0))
    zeros = signs == 0
    # consecutive exact zeros are one touch
    crossings += int(np.sum(zeros & ~np.roll(zeros, 1))) if zeros.any() else 0
    return crossings


def diagonal_intersection(trace: FrontierTrace) -> tuple[float, tuple[float, float]]:
    """Equal-improvement level where the traced frontier crosses the diagonal.

    Bisects the piecewise-linear interpolant of the trace. Requires the trace
    to start above the diagonal and end below it.
    """
    pts = trace.points
    if pts.shape[0] < 2:
        raise DiagonalNotBracketedError("need at least two trace points")
    g_first = pts[0, 1] - pts[0, 0]
    g_last = pts[-1, 1] - pts[-1, 0]
    if not (g_first > 0.0 and g_last < 0.0):
        raise DiagonalNotBracketedError(
            f"frontier trace does not bracket the diagonal (endpoint gaps "
            f"{g_first:.3e}, {g_last:.3e})"
        )
    x = pts[:, 0]
    y = pts[:, 1]
    gaps = y - x
    idx = int(np.flatnonzero((gaps[:-1] > 0.0) & (gaps[1:] <= 0.0))[0])
    lo, hi = float(x[idx]), float(x[idx + 1])
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if float(np.interp(mid, x, y)) - mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, abs(hi)):
            break
    rho_star = 0.5 * (lo + hi)
    return rho_star, (rho_star, float(np.interp(rho_star, x, y)))


def sample_risk_set(
    spec: ProblemSpec,
    grid: int | None = None,
    count: int | None = None,
    seed: int | None = None,
) -> RiskSetSample:
    """Risk rows over a deterministic ball grid (d <= 3) or uniform draws.

    d = 1 uses a line grid, d = 2 a grid x grid polar grid (exactly grid**2
    rows), d = 3 a spherical grid; higher dimensions need `count` random
    points instead.
    """
    d = spec.dim
    r = spec.radius
    if count is not None:
        if count < 1:
            raise ValueError("count must be positive")
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((count, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = r * rng.random(count) ** (1.0 / d)
        thetas = dirs * radii[:, None]
    elif grid is None:
        raise ValueError("pass a grid size (d <= 3) or a sample count")
    elif d > 3:
        raise UnsupportedDimensionError(
            f"grid sampling covers d <= 3; pass count= for d = {d}"
        )
    elif grid < 2:
        raise ValueError("grid must be at least 2")
    elif d == 1:
        thetas = np.linspace(-r, r, grid)[:, None]
    elif d == 2:
        radii = np.linspace(0.0, r, grid)
        angles = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
        rr, aa = np.meshgrid(radii, angles, indexing="ij")
        thetas = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])
    else:
        radii = np.linspace(0.0, r, grid)
        polar = np.linspace(0.0, np.pi, grid)
        azim = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
        rr, pp, aa = np.meshgrid(radii, polar, azim, indexing="ij")
        thetas = np.column_stack(
            [
                (rr * np.sin(pp) * np.cos(aa)).ravel(),
                (rr * np.sin(pp) * np.sin(aa)).ravel(),
                (rr * np.cos(pp)).ravel(),
            ]
        )
    return RiskSetSample(thetas, population_risks(spec, thetas))


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Indices of hull vertices in counterclockwise order (monotone chain)."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 3:
        return np.arange(n)
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b) -> float:
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (
            pts[a, 1] - pts[o, 1]
        ) * (pts[b, 0] - pts[o, 0])

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1], dtype=int)


def _pareto_face_points_2d(risks: np.ndarray, per_face: int) -> tuple[np.ndarray, int]:
    hull_idx = convex_hull_2d(risks)
    verts = risks[hull_idx]
    if verts.shape[0] < 3:
        chain = verts[nondominated_mask(verts)]
        if chain.shape[0] < 2:
            return chain, 0
        w = np.linspace(0.0, 1.0, max(per_face, 2))[:, None]
        return chain[0] * (1.0 - w) + chain[1] * w, 1
    probes = []
    faces = 0
    m = verts.shape[0]
    for i in range(m):
        a, b = verts[i], verts[(i + 1) % m]
        d = b - a
        normal = np.array([d[1], -d[0]])
        scale = float(np.linalg.norm(normal))
        if scale <= 0.0:
            continue
        normal /= scale
        # CCW orientation makes this the outward normal; faces whose normal
        # points weakly down in every coordinate form the efficient boundary
        if normal.max() < 1e-10 and normal.min() < 0:
            w = np.linspace(0.0, 1.0, max(per_face, 2))[:, None]
            probes.append(a[None, :] * (1.0 - w) + b[None, :] * w)
            faces += 1
    if not probes:
        return np.empty((0, 2)), 0
    return np.concatenate(probes, axis=0), faces


def _pareto_face_points_3d(risks: np.ndarray, per_face: int) -> tuple[np.ndarray, int]:
    hull = ConvexHull(risks)
    probes = []
    faces = 0
    grid = max(2, int(np.sqrt(per_face)))
    bary = [
        (i / grid, j / grid, (grid - i - j) / grid)
        for i in range(grid + 1)
        for j in range(grid + 1 - i)
    ]
    bary = np.array(bary)
    for simplex, eq in zip(hull.simplices, hull.equations):
        normal = eq[:3]
        if normal.max() < 1e-10 and normal.min() < 0:
            tri = risks[simplex]
            probes.append(bary @ tri)
            faces += 1
    if not probes:
        return np.empty((0, 3)), 0
    return np.concatenate(probes, axis=0), faces


def hull_pareto_check(
    sample: RiskSetSample | np.ndarray,
    tolerance: float | None = None,
    samples_per_face: int = 32,
) -> HullParetoReport:
    """Distance from the convex hull's efficient boundary back to the sample.

    When the underlying risk set is convex along its efficient boundary, every
    efficient hull point is (up to discretization) realizable, so the worst
    probe-to-sample distance stays at the grid scale. A hollow frontier shows
    up as a large violation. Violations are reported, never raised.
    """
    risks = sample.risks if isinstance(sample, RiskSetSample) else np.asarray(sample, dtype=float)
    if risks.ndim != 2 or risks.shape[1] not in (2, 3):
        raise UnsupportedDimensionError("hull checks cover two or three groups")
    unique = np.unique(risks, axis=0)
    if risks.shape[1] == 2:
        probes, faces = _pareto_face_points_2d(unique, samples_per_face)
    else:
        probes, faces = _pareto_face_points_3d(unique, samples_per_face)
    if probes.shape[0] == 0:
        max_violation = 0.0
    else:
        tree = cKDTree(unique)
        dists, _ = tree.query(probes, k=1)
        max_violation = float(dists.max())
    ok = None if tolerance is None else bool(max_violation <= tolerance)
    return HullParetoReport(
        max_violation=max_violation,
        tolerance=tolerance,
        ok=ok,
        n_faces=faces,
        n_checked=int(probes.shape[0]),
    )


def risk_lipschitz_bound(spec: ProblemSpec) -> float:
    """Upper bound on any group's risk gradient norm over the ball."""
    worst = 0.0
    for g in spec.groups:
        spectral = float(np.abs(np.linalg.eigvalsh(g.cov)).max())
        reach = spec.radius + float(np.linalg.norm(g.beta))
        worst = max(worst, 2.0 * spectral * reach)
    return worst


def sample_grid_spacing(spec: ProblemSpec, grid: int) -> float:
    """Coarsest distance between adjacent grid points of sample_risk_set."""
    if grid < 2:
        raise ValueError("grid must be at least 2")
    r = spec.radius
    if spec.dim == 1:
        return 2.0 * r / (grid - 1)
    if spec.dim == 2:
        return max(r / (grid - 1), r * 2.0 * np.pi / grid)
    if spec.dim == 3:
        return max(r / (grid - 1), r * np.pi / (grid - 1), r * 2.0 * np.pi / grid)
    raise UnsupportedDimensionError("grid spacing is defined for d <= 3")
