from __future__ import annotations

import numpy as np
import pytest

from fairgain.risk_models import GroupLinearModel, ProblemSpec


def motivating_spec() -> ProblemSpec:
    # one-dimensional two-group instance with closed-form solutions
    return ProblemSpec(
        groups=(
            GroupLinearModel(beta=np.array([2.0]), sigma2=1.0, cov=np.array([[1.0]])),
            GroupLinearModel(beta=np.array([7.0]), sigma2=9.0, cov=np.array([[1.0]])),
        ),
        radius=10.0,
    )


def planar_spec() -> ProblemSpec:
    # two-dimensional instance with correlated features in group 1
    return ProblemSpec(
        groups=(
            GroupLinearModel(
                beta=np.array([0.4, 0.0]),
                sigma2=1.0,
                cov=np.array([[1.0, 0.5], [0.5, 1.0]]),
            ),
            GroupLinearModel(beta=np.array([0.4, 0.6]), sigma2=1.0, cov=np.eye(2)),
        ),
        radius=1.0,
    )


def three_group_spec() -> ProblemSpec:
    # groups 1,2 compete on coordinate 1; group 3 only cares about coordinate 2,
    # so maximin leaves it slack and leximin should lift it to ~1
    sub = np.array([[1.0, 0.0], [0.0, 0.0]])
    return ProblemSpec(
        groups=(
            GroupLinearModel(beta=np.array([2.0, 0.0]), sigma2=1.0, cov=sub),
            GroupLinearModel(beta=np.array([7.0, 0.0]), sigma2=9.0, cov=sub),
            GroupLinearModel(
                beta=np.array([0.0, 2.0]),
                sigma2=1.0,
                cov=np.array([[0.0, 0.0], [0.0, 1.0]]),
            ),
        ),
        radius=5.0,
    )


def _random_psd(rng: np.random.Generator, d: int) -> np.ndarray:
    f = rng.normal(size=(d, d))
    cov = f @ f.T / d + 0.05 * np.eye(d)
    return cov


def random_problem_spec(
    rng: np.random.Generator,
    m: int,
    d: int,
    radius: float = 3.0,
    separated: bool = False,
) -> ProblemSpec:
    """Draw a random non-degenerate instance.

    Betas are a mix of inside-ball and outside-ball vectors so some ideals are
    constrained. With separated=True the first two betas are kept at least 0.5
    apart, which forces a genuine trade-off between groups 1 and 2.
    """
    while True:
        groups = []
        for g in range(m):
            cov = _random_psd(rng, d)
            scale = rng.uniform(0.3, 1.4) * radius
            beta = rng.normal(size=d)
            beta *= scale / max(np.linalg.norm(beta), 1e-9)
            if float(beta @ cov @ beta) < 0.01:
                beta *= 0.15 / max(np.sqrt(float(beta @ cov @ beta)), 1e-9)
            sigma2 = rng.uniform(0.3, 12.0)
            groups.append(GroupLinearModel(beta=beta, sigma2=sigma2, cov=cov))
        if separated and np.linalg.norm(groups[0].beta - groups[1].beta) < 0.5:
            continue
        spec = ProblemSpec(groups=tuple(groups), radius=radius)
        from fairgain.core import DegenerateFrameError
        from fairgain.risk_models import population_frame

        try:
            population_frame(spec)
        except DegenerateFrameError:
            continue
        return spec


@pytest.fixture
def motivating():
    return motivating_spec()


@pytest.fixture
def planar():
    return planar_spec()


@pytest.fixture
def three_group():
    return three_group_spec()
