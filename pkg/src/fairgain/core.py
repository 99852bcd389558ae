"""Shared value types: risk profiles, bargaining frames, improvement transforms.

Risks are per-group expected losses, lower is better. A bargaining frame fixes,
for every group, the risk of the status-quo predictor (baseline) and the best
risk the group could get if the model were fit for it alone (ideal). The
relative improvement of a candidate rescales its risk into [.., 1] units where
0 means "no better than the baseline" and 1 means "as good as the ideal".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

# A frame whose baseline and ideal coincide (within this gap) carries no
# improvement direction for that group; operations refuse it.
FRAME_GAP_FLOOR = 1e-10


class DegenerateFrameError(ValueError):
    """Some group's baseline and ideal risks coincide."""


class DegenerateBargainError(ValueError):
    """No candidate strictly improves on the baseline for every group."""


class UnsupportedDimensionError(ValueError):
    """Operation is only defined for a particular number of groups or features."""


class ConvergenceError(RuntimeError):
    """An iterative fit stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


def _as_float_tuple(values: Iterable[float], name: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) == 0:
        raise ValueError(f"{name} must contain at least one group")
    if not all(np.isfinite(v) for v in out):
        raise ValueError(f"{name} must be finite, got {out}")
    return out


@dataclass(frozen=True)
class RiskProfile:
    """Per-group risks (r_1, ..., r_m)."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = _as_float_tuple(self.values, "risk profile")
        if any(v < 0 for v in vals):
            raise ValueError(f"risks must be nonnegative, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class ImprovementProfile:
    """Per-group relative improvements (rho_1, ..., rho_m).

    rho_g = 1 at the group's ideal risk, 0 at its baseline risk, negative when
    the candidate is worse for the group than doing nothing.
    """

    rhos: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rhos", _as_float_tuple(self.rhos, "improvement profile"))

    def __len__(self) -> int:
        return len(self.rhos)

    def __getitem__(self, i: int) -> float:
        return self.rhos[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rhos, dtype=float)


@dataclass(frozen=True)
class BargainingFrame:
    """Baseline (status quo) and ideal (group-wise best) risks, per group."""

    baseline_risks: tuple[float, ...]
    ideal_risks: tuple[float, ...]

    def __post_init__(self) -> None:
        base = _as_float_tuple(self.baseline_risks, "baseline risks")
        ideal = _as_float_tuple(self.ideal_risks, "ideal risks")
        if len(base) != len(ideal):
            raise ValueError(
                f"baseline has {len(base)} groups but ideal has {len(ideal)}"
            )
        if any(v < 0 for v in base + ideal):
            raise ValueError("frame risks must be nonnegative")
        for g, (b, i) in enumerate(zip(base, ideal)):
            if b - i <= FRAME_GAP_FLOOR:
                raise DegenerateFrameError(
                    f"group {g}: baseline risk {b} does not exceed ideal risk {i} "
                    f"by more than {FRAME_GAP_FLOOR}; no improvement direction"
                )
        object.__setattr__(self, "baseline_risks", base)
        object.__setattr__(self, "ideal_risks", ideal)

    @property
    def num_groups(self) -> int:
        return len(self.baseline_risks)

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(b - i for b, i in zip(self.baseline_risks, self.ideal_risks))

    def baseline_array(self) -> np.ndarray:
        return np.asarray(self.baseline_risks, dtype=float)

    def ideal_array(self) -> np.ndarray:
        return np.asarray(self.ideal_risks, dtype=float)

    def gap_array(self) -> np.ndarray:
        return self.baseline_array() - self.ideal_array()


@dataclass(frozen=True)
class SolverReport:
    """Outcome of a continuous solve: the point, its profiles, and a certificate."""

    parameter: tuple[float, ...]
    risk_profile: RiskProfile
    improvement_profile: ImprovementProfile
    objective_value: float
    iterations: int
    certificate_gap: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameter", tuple(float(v) for v in self.parameter))
        if len(self.risk_profile) != len(self.improvement_profile):
            raise ValueError("risk and improvement profiles disagree on group count")

    def certified(self, tol: float) -> bool:
        return self.certificate_gap <= tol


def relative_improvements(risks: np.ndarray, frame: BargainingFrame) -> np.ndarray:
    """Vectorized risk -> improvement transform; last axis indexes groups."""
    risks = np.asarray(risks, dtype=float)
    if risks.shape[-1] != frame.num_groups:
        raise ValueError(
            f"risk rows have {risks.shape[-1]} groups, frame has {frame.num_groups}"
        )
    return (frame.baseline_array() - risks) / frame.gap_array()


def risks_from_improvements(rhos: np.ndarray, frame: BargainingFrame) -> np.ndarray:
    """Inverse of :func:`relative_improvements`; last axis indexes groups."""
    rhos = np.asarray(rhos, dtype=float)
    if rhos.shape[-1] != frame.num_groups:
        raise ValueError(
            f"improvement rows have {rhos.shape[-1]} groups, frame has {frame.num_groups}"
        )
    return frame.baseline_array() - rhos * frame.gap_array()


def to_improvement(profile: RiskProfile, frame: BargainingFrame) -> ImprovementProfile:
    """Map a risk profile into relative-improvement units under the frame."""
    return ImprovementProfile(tuple(relative_improvements(profile.as_array(), frame)))


def from_improvement(profile: ImprovementProfile, frame: BargainingFrame) -> RiskProfile:
    """Map an improvement profile back to risks under the frame."""
    risks = risks_from_improvements(profile.as_array(), frame)
    # the round trip can leave -1e-17 style dust on a zero risk
    tiny = (risks < 0) & (risks > -1e-9)
    risks[tiny] = 0.0
    return RiskProfile(tuple(risks))


def nondominated_mask(risks: np.ndarray) -> np.ndarray:
    """Boolean mask of rows not strictly dominated by any other row (minimization).

    A row p dominates q when p <= q everywhere and p < q somewhere. Duplicate
    rows do not dominate each other, so every copy of a nondominated row is kept.
    """
    risks = np.asarray(risks, dtype=float)
    if risks.ndim != 2:
        raise ValueError("expected a 2-d array of risk rows")
    n, m = risks.shape
    if m == 2:
        return _nondominated_mask_2d(risks)
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        leq = (risks <= risks[i]).all(axis=1)
        lt = (risks < risks[i]).any(axis=1)
        if np.any(leq & lt):
            mask[i] = False
    return mask


def _nondominated_mask_2d(risks: np.ndarray) -> np.ndarray:
    n = risks.shape[0]
    order = np.lexsort((risks[:, 1], risks[:, 0]))
    mask = np.ones(n, dtype=bool)
    best_before = np.inf  # min second coordinate over strictly smaller first coords
    i = 0
    while i < n:
        j = i
        while j < n and risks[order[j], 0] == risks[order[i], 0]:
            j += 1
        block = order[i:j]  # equal first coordinate, sorted by second
        block_min = risks[block[0], 1]
        for k in block:
            r2 = risks[k, 1]
            if best_before <= r2 or r2 > block_min:
                mask[k] = False
        best_before = min(best_before, block_min)
        i = j
    return mask


def pareto_filter(profiles: Iterable[RiskProfile]) -> list[RiskProfile]:
    """Drop strictly dominated profiles; exact duplicates are merged first.

    Returns survivors in first-appearance order.
    """
    items = list(profiles)
    if not items:
        raise ValueError("pareto_filter needs at least one risk profile")
    m = len(items[0])
    if any(len(p) != m for p in items):
        raise ValueError("all risk profiles must have the same number of groups")
    unique: dict[tuple[float, ...], None] = {}
    for p in items:
        unique.setdefault(p.values, None)
    arr = np.array(list(unique.keys()), dtype=float)
    mask = nondominated_mask(arr)
    return [RiskProfile(vals) for vals, keep in zip(unique.keys(), mask) if keep]
